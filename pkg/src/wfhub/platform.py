"""One object wiring every component over a single on-disk root."""

from __future__ import annotations

import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ._util import LogicalClock, atomic_write_json, read_json
from .apps import AppRegistry
from .broker import SELECTORS, ResourceBroker, ScoringOptions
from .core import Orchestrator
from .pipeline import PipelineEngine
from .provenance import ProvenanceStore
from .warehouse import DEFAULT_BUCKET, Warehouse

ROOT_ENV = "WFHUB_ROOT"


@dataclass
class PlatformConfig:
    bucket: str = DEFAULT_BUCKET
    digest: str = "sha256"
    tick_seconds: float = 1.0
    selector: str = "heuristic"
    max_unknown_polls: int = 5
    scoring: dict = field(default_factory=lambda: {"per_dependency": True, "queue_penalty_q": None})

    @classmethod
    def load(cls, path: str | os.PathLike | None) -> "PlatformConfig":
        data = read_json(path, {}) if path else {}
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


class Platform:
    def __init__(self, root: str | os.PathLike | None = None, config: PlatformConfig | dict | None = None):
        if root is None:
            root = os.environ.get(ROOT_ENV) or tempfile.mkdtemp(prefix="wfhub-")
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        if config is None:
            config = PlatformConfig.load(self.root / "config.json")
        elif isinstance(config, dict):
            config = PlatformConfig(**config)
        self.config = config
        state = read_json(self.root / "clock.json", {"now": 0})
        self.clock = LogicalClock(state["now"])
        self.warehouse = Warehouse(self.root / "store", bucket=config.bucket, digest=config.digest, clock=self.clock)
        self.registry = AppRegistry(self.root / "registry", self.warehouse)
        self.broker = ResourceBroker(self.root / "resources")
        self.provenance = ProvenanceStore(self.root / "provenance", self.warehouse, self.registry)
        self.orchestrator = Orchestrator(
            self.root / "orchestrator",
            self.warehouse,
            self.registry,
            self.broker,
            self.provenance,
            clock=self.clock,
            selector=SELECTORS[config.selector](),
            scoring=ScoringOptions(**config.scoring),
            max_unknown_polls=config.max_unknown_polls,
        )
        self.pipelines = PipelineEngine(self.root / "pipelines", self.orchestrator)
        self.clock.set(max([self.clock.now()] + [t.tick for t in self.orchestrator.trace[-1:]]))

    def save_config(self) -> None:
        atomic_write_json(self.root / "config.json", asdict(self.config))

    def tick(self, count: int = 1) -> list:
        out = []
        for _ in range(count):
            out.extend(self.orchestrator.scheduler_tick(self.clock.now() + 1))
        self.checkpoint()
        return out

    def checkpoint(self) -> None:
        atomic_write_json(self.root / "clock.json", {"now": self.clock.now()})
