"""Simulated compute backend driven by logical ticks."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

from ..backends import FAILED, RUNNING, STATUS_CODES, UNKNOWN, read_jobid, run_hook
from ..errors import ContractError


@dataclass
class SimProfile:
    latency_ticks: int = 0
    failure_prob: float = 0.0
    down: bool = False
    queue_length: int = 0
    geolocation: str = ""
    rng_seed: int = 0
    inprocess: bool = True
    # successive probe outcomes for a flapping resource; exhausted -> ``not down``
    probe_script: list[bool] = field(default_factory=list)

    def __post_init__(self):
        if self.latency_ticks < 0:
            raise ValueError("latency_ticks must be >= 0")
        if not 0.0 <= self.failure_prob <= 1.0:
            raise ValueError("failure_prob must be in [0, 1]")
        if self.queue_length < 0:
            raise ValueError("queue_length must be >= 0")


@dataclass
class _Job:
    dispatched: int
    fails: bool


class SimBackend:
    """Honors the hook protocol with a configurable latency and failure rate.

    Failure is drawn once per dispatch from the seeded RNG, so traces do not
    depend on how often ``status`` is polled.  A job reports running until
    ``latency_ticks`` full ticks have elapsed after dispatch.
    """

    kind = "sim"

    def __init__(self, profile: SimProfile | None = None):
        self.profile = profile or SimProfile()
        self.rng = random.Random(self.profile.rng_seed)
        self.jobs: dict[str, _Job] = {}
        self._probes = list(self.profile.probe_script)

    @property
    def queue_length(self) -> int:
        return self.profile.queue_length

    def set_down(self, down: bool) -> None:
        self.profile.down = down

    def probe(self) -> bool:
        if self._probes:
            self.profile.down = not self._probes.pop(0)
        return not self.profile.down

    def start(self, task_id: str, work_dir: Path, now: int) -> str:
        if self.profile.down:
            raise ContractError("resource is down")
        fails = self.rng.random() < self.profile.failure_prob
        result = run_hook(work_dir, "start", inprocess=self.profile.inprocess)
        if result.returncode != 0:
            raise ContractError(f"start exited {result.returncode}")
        self.jobs[task_id] = _Job(now, fails)
        return read_jobid(Path(work_dir), f"sim-{task_id}")

    def status(self, task_id: str, work_dir: Path, now: int) -> int:
        job = self.jobs.get(task_id)
        if job is None:
            return UNKNOWN
        if now - job.dispatched <= self.profile.latency_ticks:
            return RUNNING
        if job.fails:
            return FAILED
        code = run_hook(work_dir, "status", inprocess=self.profile.inprocess).returncode
        return code if code in STATUS_CODES else UNKNOWN

    def stop(self, task_id: str, work_dir: Path, now: int) -> None:
        run_hook(work_dir, "stop", inprocess=self.profile.inprocess)
        self.jobs.pop(task_id, None)
