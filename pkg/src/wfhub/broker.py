"""Resource registry, liveness monitoring and heuristic resource selection.

Scoring rules, applied per candidate resource:

* the service must be enabled on the resource; its default score is the base
* +5 for each data dependency produced on the resource (or a flat +5 when
  ``per_dependency`` is off)
* +10 when the resource is private and owned by the submitting user
* +15 when the resource is the task's preferred resource
* public resources are excluded for projects that avoid them
* resources whose monitor reports a failure are excluded

The highest total wins; ties go to the smallest resource id.
"""

from __future__ import annotations

import os
import threading
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ._util import atomic_write_json, read_json
from .errors import ConflictError, NoResourceError, NotFoundError, ValidationError

DEP_INCREMENT = 5
EXCLUSIVE_INCREMENT = 10
PREFERRED_INCREMENT = 15

KINDS = ("public", "shared", "private")


def _score(service: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ValidationError(f"default score for {service} must be an integer")
    try:
        score = int(value)
    except ValueError:
        raise ValidationError(f"default score for {service} must be an integer") from None
    if score != float(value):
        raise ValidationError(f"default score for {service} must be an integer")
    return score


@dataclass
class Resource:
    id: str
    name: str
    kind: str = "shared"
    owner: str | None = None
    enabled_services: dict[str, int] = field(default_factory=dict)
    status: str = "ok"
    geolocation: str | None = None
    queue_length: int = 0
    backend: dict = field(default_factory=lambda: {"type": "local"})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Resource":
        return cls(
            id=d["id"],
            name=d.get("name") or d["id"],
            kind=d.get("kind", "shared"),
            owner=d.get("owner"),
            enabled_services={k: _score(k, v) for k, v in d.get("enabled_services", {}).items()},
            status=d.get("status", "ok"),
            geolocation=d.get("geolocation"),
            queue_length=int(d.get("queue_length", 0)),
            backend=dict(d.get("backend") or {"type": "local"}),
        )

    def check(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"resource kind must be one of {KINDS}")
        if self.kind == "private" and not self.owner:
            raise ValidationError(f"private resource {self.id} needs an owner")
        if self.kind != "private" and self.owner:
            raise ValidationError(f"{self.kind} resource {self.id} cannot have an owner")
        for sid, score in self.enabled_services.items():
            if not isinstance(score, int) or isinstance(score, bool):
                raise ValidationError(f"default score for {sid} must be an integer")
        if self.queue_length < 0:
            raise ValidationError("queue_length must be >= 0")


@dataclass
class ScoringOptions:
    per_dependency: bool = True
    # extension beyond the rule list: -floor(queue_length / q), disabled when None
    queue_penalty_q: int | None = None


@dataclass
class ScoringContext:
    """What scoring needs to know beyond the task and the resource."""

    user: str | None = None
    avoid_public: bool = False
    # dependency task id -> resource id it ran on
    residency: Mapping[str, str | None] = field(default_factory=dict)
    options: ScoringOptions = field(default_factory=ScoringOptions)


@dataclass
class ScoringRequest:
    task: str
    service: str
    data_deps: list[str] = field(default_factory=list)
    preferred_resource: str | None = None


@dataclass
class ScoreBreakdown:
    resource: str
    base: int = 0
    dep_bonus: int = 0
    exclusive_bonus: int = 0
    preferred_bonus: int = 0
    total: int = 0
    disqualified: bool = False
    disqualify_reason: str | None = None
    queue_penalty: int = 0

    def report_line(self) -> str:
        line = (
            f"resource={self.resource} base={self.base} dep={self.dep_bonus} "
            f"excl={self.exclusive_bonus} pref={self.preferred_bonus}"
        )
        if self.queue_penalty:
            line += f" queue={self.queue_penalty}"
        line += f" total={self.total}"
        if self.disqualified:
            line += f" DISQUALIFIED:{self.disqualify_reason}"
        return line


def score_resource(request: ScoringRequest, resource: Resource, context: ScoringContext) -> ScoreBreakdown:
    sb = ScoreBreakdown(resource=resource.id)
    if request.service not in resource.enabled_services:
        sb.disqualified, sb.disqualify_reason = True, "not_enabled"
        return sb
    sb.base = resource.enabled_services[request.service]
    if resource.kind == "public" and context.avoid_public:
        sb.disqualified, sb.disqualify_reason = True, "public_avoided"
    elif resource.status != "ok":
        sb.disqualified, sb.disqualify_reason = True, "down"
    resident = sum(1 for dep in dict.fromkeys(request.data_deps) if context.residency.get(dep) == resource.id)
    if context.options.per_dependency:
        sb.dep_bonus = DEP_INCREMENT * resident
    else:
        sb.dep_bonus = DEP_INCREMENT if resident else 0
    if resource.kind == "private" and context.user is not None and resource.owner == context.user:
        sb.exclusive_bonus = EXCLUSIVE_INCREMENT
    if request.preferred_resource == resource.id:
        sb.preferred_bonus = PREFERRED_INCREMENT
    q = context.options.queue_penalty_q
    if q:
        sb.queue_penalty = -(resource.queue_length // q)
    sb.total = sb.base + sb.dep_bonus + sb.exclusive_bonus + sb.preferred_bonus + sb.queue_penalty
    return sb


def _report(task: str, breakdowns: list[ScoreBreakdown], selected: str | None) -> str:
    lines = [f"task={task}"] + [b.report_line() for b in breakdowns]
    lines.append(f"selected={selected if selected is not None else 'none'}")
    return "\n".join(lines) + "\n"


def select_resource(
    request: ScoringRequest, resources: Iterable[Resource], context: ScoringContext
) -> tuple[Resource, str]:
    """Argmax of total score over qualified resources, ties to the smallest id."""
    resources = sorted(resources, key=lambda r: r.id)
    if not resources:
        raise NoResourceError("no resources registered")
    breakdowns = [score_resource(request, r, context) for r in resources]
    best = None
    for r, b in zip(resources, breakdowns):
        if not b.disqualified and (best is None or b.total > best[1].total):
            best = (r, b)
    if best is None:
        report = _report(request.task, breakdowns, None)
        raise NoResourceError(f"no qualified resource for task {request.task}", report)
    return best[0], _report(request.task, breakdowns, best[0].id)


class HeuristicSelector:
    name = "heuristic"

    def select(self, request, resources, context):
        return select_resource(request, resources, context)


class RoundRobinSelector:
    """Baseline that ignores scores: cycles through qualified resources by id."""

    name = "round_robin"

    def __init__(self):
        self._next = 0

    def select(self, request, resources, context):
        resources = sorted(resources, key=lambda r: r.id)
        breakdowns = [score_resource(request, r, context) for r in resources]
        qualified = [r for r, b in zip(resources, breakdowns) if not b.disqualified]
        if not qualified:
            raise NoResourceError(f"no qualified resource for task {request.task}", _report(request.task, breakdowns, None))
        choice = qualified[self._next % len(qualified)]
        self._next += 1
        return choice, _report(request.task, breakdowns, choice.id)


SELECTORS = {"heuristic": HeuristicSelector, "round_robin": RoundRobinSelector}


class ResourceBroker:
    """Registry of compute resources plus their live execution backends."""

    def __init__(self, root: str | os.PathLike, backend_factory=None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        if backend_factory is None:
            from .backends import make_backend as backend_factory
        self._backend_factory = backend_factory
        self.resources: dict[str, Resource] = {}
        self.backends: dict[str, object] = {}
        for d in read_json(self.root / "resources.json", []):
            r = Resource.from_dict(d)
            self.resources[r.id] = r
            self.backends[r.id] = self._backend_factory(r.backend)

    def _save(self) -> None:
        atomic_write_json(self.root / "resources.json", [r.to_dict() for r in self.list_resources()])

    def register_resource(self, descriptor: Mapping | Resource, backend=None) -> Resource:
        r = descriptor if isinstance(descriptor, Resource) else Resource.from_dict(descriptor)
        r.status = "ok"
        r.check()
        with self._lock:
            if r.id in self.resources:
                raise ConflictError(f"resource {r.id} already registered")
            self.backends[r.id] = backend if backend is not None else self._backend_factory(r.backend)
            self.resources[r.id] = r
            self._save()
        return r

    def get_resource(self, resource_id: str) -> Resource:
        try:
            return self.resources[resource_id]
        except KeyError:
            raise NotFoundError(f"resource {resource_id} not found") from None

    def backend(self, resource_id: str):
        self.get_resource(resource_id)
        return self.backends[resource_id]

    def list_resources(self) -> list[Resource]:
        return sorted(self.resources.values(), key=lambda r: r.id)

    def enable_service(self, resource_id: str, service_id: str, default_score: int) -> Resource:
        if not isinstance(default_score, int) or isinstance(default_score, bool):
            raise ValidationError("default score must be an integer")
        with self._lock:
            r = self.get_resource(resource_id)
            r.enabled_services[service_id] = default_score
            self._save()
        return r

    def disable_service(self, resource_id: str, service_id: str) -> Resource:
        with self._lock:
            r = self.get_resource(resource_id)
            r.enabled_services.pop(service_id, None)
            self._save()
        return r

    def monitor_resource(self, resource_id: str) -> str:
        r = self.get_resource(resource_id)
        try:
            healthy = bool(self.backends[resource_id].probe())
        except Exception:
            healthy = False
        status = "ok" if healthy else "down"
        with self._lock:
            if status != r.status:
                r.status = status
                self._save()
            backend = self.backends[resource_id]
            r.queue_length = int(getattr(backend, "queue_length", r.queue_length))
        return status

    def monitor_all(self) -> dict[str, str]:
        return {r.id: self.monitor_resource(r.id) for r in self.list_resources()}
