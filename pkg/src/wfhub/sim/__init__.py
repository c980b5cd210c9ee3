"""Simulated resources, synthetic apps and scenario runs on logical ticks."""

from .backend import SimBackend, SimProfile
from .scenario import Metrics, build_world, make_sim_resource, run_scenario
from .synthetic import make_synthetic_app

__all__ = [
    "Metrics",
    "SimBackend",
    "SimProfile",
    "build_world",
    "make_sim_resource",
    "make_synthetic_app",
    "run_scenario",
]
