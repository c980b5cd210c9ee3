"""Data-aware workflow orchestration over a typed data warehouse."""

from .apps import App, AppRegistry, DockingResult, Slot, check_docking
from .broker import Resource, ResourceBroker, ScoreBreakdown, score_resource, select_resource
from .core import Instance, Orchestrator, Task, Transition, dep_ref
from .errors import WfHubError
from .pipeline import PipelineEngine, PipelineRule
from .platform import Platform, PlatformConfig
from .provenance import ProvenanceStore
from .warehouse import DataObject, Datatype, Project, Warehouse

__version__ = "0.1.0"

__all__ = [
    "App",
    "AppRegistry",
    "DataObject",
    "Datatype",
    "DockingResult",
    "Instance",
    "Orchestrator",
    "PipelineEngine",
    "PipelineRule",
    "Platform",
    "PlatformConfig",
    "Project",
    "ProvenanceStore",
    "Resource",
    "ResourceBroker",
    "ScoreBreakdown",
    "Slot",
    "Task",
    "Transition",
    "Warehouse",
    "WfHubError",
    "check_docking",
    "dep_ref",
    "score_resource",
    "select_resource",
]
