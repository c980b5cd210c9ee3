"""Scenario runner: build a simulated world, drive it for a tick budget, report metrics.

Scenario file (JSON)::

    {
      "seed": 0,
      "ticks": 50,
      "subjects": 20,
      "workflow": "rules" | "dag" | "independent",
      "chain": 3,                       # apps in the linear chain (rules / dag)
      "tasks": 5000,                    # single tasks (independent)
      "feature_measures": {"structures": [...], "measures": [...]},  # optional:
                                        # last chain app emits a statistical feature
      "selector": "heuristic" | "round_robin",
      "per_dependency": true,
      "resources": [
        {"id": "r1", "kind": "shared", "owner": null, "score": 5,
         "latency_ticks": 1, "failure_prob": 0.0, "down": false}
      ]
    }
"""

from __future__ import annotations

import os
import tempfile
from collections import Counter
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..broker import SELECTORS, Resource, ResourceBroker, ScoringOptions
from ..core import FAILED_STATE, FINISHED_STATE, TERMINAL, dep_ref
from ..platform import Platform, PlatformConfig
from .backend import SimBackend, SimProfile
from .synthetic import make_synthetic_app

RAW = "sim/raw"
OWNER = "sim-user"


def make_sim_resource(
    broker: ResourceBroker,
    resource_id: str,
    profile: SimProfile | Mapping | None = None,
    services: Mapping[str, int] | None = None,
    kind: str = "shared",
    owner: str | None = None,
    name: str | None = None,
) -> Resource:
    if profile is None:
        profile = SimProfile()
    elif isinstance(profile, Mapping):
        profile = SimProfile(**profile)
    spec = {"type": "sim", **asdict(profile)}
    resource = Resource(
        id=resource_id,
        name=name or resource_id,
        kind=kind,
        owner=owner,
        enabled_services={k: int(v) for k, v in (services or {}).items()},
        geolocation=profile.geolocation or None,
        queue_length=profile.queue_length,
        backend=spec,
    )
    return broker.register_resource(resource, backend=SimBackend(profile))


@dataclass
class Metrics:
    tasks: int = 0
    finished: int = 0
    failed: int = 0
    unfinished: int = 0
    success_rate: float = 0.0
    transfers: int = 0
    transfers_by_stage: dict[str, int] = field(default_factory=dict)
    per_resource: dict[str, int] = field(default_factory=dict)
    fail_reasons: dict[str, int] = field(default_factory=dict)
    output_hashes: dict[str, str] = field(default_factory=dict)
    trace: list[dict] = field(default_factory=list)
    ticks: int = 0

    def to_dict(self, with_trace: bool = True) -> dict:
        d = asdict(self)
        if not with_trace:
            d.pop("trace")
        return d


def _resources(spec: Mapping, seed: int) -> list[dict]:
    resources = spec.get("resources") or [{"id": "r1"}]
    out = []
    for i, r in enumerate(resources):
        r = dict(r)
        r.setdefault("score", 5)
        r.setdefault("kind", "shared")
        r.setdefault("rng_seed", seed * 1000 + i)
        out.append(r)
    return out


def build_world(spec: Mapping, root: str | os.PathLike | None = None) -> tuple[Platform, dict]:
    """Create the platform, datatypes, apps, resources and imported data for ``spec``."""
    seed = int(spec.get("seed", 0))
    root = Path(root or tempfile.mkdtemp(prefix="wfhub-sim-"))
    config = PlatformConfig(
        selector=spec.get("selector", "heuristic"),
        scoring={"per_dependency": bool(spec.get("per_dependency", True)), "queue_penalty_q": spec.get("queue_penalty_q")},
        max_unknown_polls=int(spec.get("max_unknown_polls", 5)),
    )
    plat = Platform(root / "platform", config)
    wh = plat.warehouse
    project = wh.create_project(OWNER, spec.get("project", "scenario"))
    workflow = spec.get("workflow", "rules")
    features = spec.get("feature_measures")
    apps = []
    if workflow == "independent":
        wh.register_datatype("sim/out", [("out.dat", True)])
        apps.append(make_synthetic_app(plat.registry, "source", [], ["sim/out"], service_root=root / "services"))
    else:
        n = int(spec.get("chain", 3))
        wh.register_datatype(RAW, [("data.bin", True)])
        for i in range(1, n + 1):
            if i == n and features:
                wh.register_datatype(f"sim/stage{i}", [("stats.tsv", True)], is_statistical_feature=True)
            else:
                wh.register_datatype(f"sim/stage{i}", [(f"stage{i}.dat", True)])
        for i in range(1, n + 1):
            src = RAW if i == 1 else f"sim/stage{i - 1}"
            apps.append(
                make_synthetic_app(
                    plat.registry,
                    f"stage{i}",
                    [{"id": "in", "datatype": src}],
                    [{"id": "out", "datatype": f"sim/stage{i}"}],
                    service_root=root / "services",
                    features=features,
                )
            )
    for r in _resources(spec, seed):
        profile = SimProfile(
            latency_ticks=int(r.get("latency_ticks", 0)),
            failure_prob=float(r.get("failure_prob", spec.get("failure_prob", 0.0))),
            down=bool(r.get("down", False)),
            queue_length=int(r.get("queue_length", 0)),
            geolocation=r.get("geolocation", ""),
            rng_seed=int(r["rng_seed"]),
        )
        services = {a.id: int(r["score"]) for a in apps}
        make_sim_resource(plat.broker, r["id"], profile, services, r["kind"], r.get("owner"))
    subjects = [f"sub-{i:03d}" for i in range(1, int(spec.get("subjects", 0)) + 1)]
    if workflow != "independent":
        for s in subjects:
            wh.archive_object(project.id, RAW, {"data.bin": f"{s}:{seed}\n"}, subject=s, tags=["raw"])
    return plat, {"project": project.id, "apps": [a.id for a in apps], "subjects": subjects}


def submit_workload(plat: Platform, spec: Mapping, world: dict) -> None:
    workflow = spec.get("workflow", "rules")
    project, apps = world["project"], world["apps"]
    orch = plat.orchestrator
    if workflow == "independent":
        inst = orch.create_instance(project, "independent")
        for _ in range(int(spec.get("tasks", 1))):
            orch.submit_task(inst.id, apps[0])
    elif workflow == "dag":
        for s in world["subjects"]:
            inst = orch.create_instance(project, s)
            raw = plat.warehouse.query_objects(project, RAW, subject=s)[0]
            prev = None
            for app in apps:
                binding = {"in": raw.id} if prev is None else {"in": dep_ref(prev.id, "out")}
                prev = orch.submit_task(inst.id, app, bindings=binding, subject=s)
    elif workflow == "rules":
        for i, app in enumerate(apps):
            src = RAW if i == 0 else f"sim/stage{i}"
            plat.pipelines.define_rule(project, app, {"in": {"datatype": src}}, output_tags=[f"stage{i + 1}"])
    else:
        raise ValueError(f"unknown workflow {workflow!r}")


def collect_metrics(plat: Platform, ticks: int) -> Metrics:
    orch = plat.orchestrator
    tasks = list(orch.tasks.values())
    m = Metrics(tasks=len(tasks), ticks=ticks)
    m.finished = sum(t.state == FINISHED_STATE for t in tasks)
    m.failed = sum(t.state == FAILED_STATE for t in tasks)
    m.unfinished = sum(t.state not in TERMINAL for t in tasks)
    ended = sum(t.state in TERMINAL for t in tasks)
    m.success_rate = m.finished / ended if ended else 0.0
    stage_of = {a.id: a.name for a in plat.registry.list_apps()}
    by_stage: Counter = Counter()
    for tid, report in orch.staging_log.items():
        by_stage[stage_of[orch.tasks[tid].app]] += report.transfers
    m.transfers = sum(by_stage.values())
    m.transfers_by_stage = dict(sorted(by_stage.items()))
    m.per_resource = dict(sorted(Counter(t.resource for t in tasks if t.resource).items()))
    m.fail_reasons = dict(sorted(Counter(t.fail_reason for t in tasks if t.state == FAILED_STATE).items()))
    m.output_hashes = {o.id: o.content_hash for o in sorted(plat.warehouse.objects.values(), key=lambda o: o.id) if o.provenance_task}
    m.trace = [t.to_dict() for t in orch.trace]
    return m


def run_scenario(spec: Mapping, root: str | os.PathLike | None = None) -> Metrics:
    """Build the world described by ``spec`` and drive it for ``spec['ticks']`` ticks."""
    plat, world = build_world(spec, root)
    submit_workload(plat, spec, world)
    ticks = int(spec.get("ticks", 20))
    if spec.get("workflow", "rules") == "rules":
        plat.pipelines.run_rules(world["project"], ticks)
    else:
        for _ in range(ticks):
            plat.orchestrator.scheduler_tick(plat.clock.now() + 1)
            if all(t.state in TERMINAL for t in plat.orchestrator.tasks.values()):
                break
    plat.checkpoint()
    metrics = collect_metrics(plat, ticks)
    metrics.ticks = plat.clock.now()
    return metrics
