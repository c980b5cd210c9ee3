"""Workflow instances, the task state machine and the scheduler loop.

Task work directory::

    config.json
    inputs/<slot>/...
    outputs/<slot>/...
    jobid
    _resource_selection.txt
    start.log, status.log, ...   (hook output when run as subprocesses)
"""

from __future__ import annotations

import os
import threading
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ._util import JsonlLog, LogicalClock, Sequence, atomic_write_text, canonical_json
from .apps import App, AppRegistry, check_bindings
from .backends import FAILED, FINISHED, RUNNING
from .broker import HeuristicSelector, ResourceBroker, ScoringContext, ScoringOptions, ScoringRequest
from .errors import (
    CycleError,
    DockingError,
    InvalidTransitionError,
    NoResourceError,
    NotFoundError,
    StagingError,
    ValidationError,
    WfHubError,
)
from .warehouse import DataObject, Warehouse, validate_files

REQUESTED, RUNNING_STATE, FINISHED_STATE = "requested", "running", "finished"
FAILED_STATE, STOPPED, REMOVED = "failed", "stopped", "removed"
STATES = (REQUESTED, RUNNING_STATE, FINISHED_STATE, FAILED_STATE, STOPPED, REMOVED)
TERMINAL = frozenset({FINISHED_STATE, FAILED_STATE, STOPPED, REMOVED})
DEAD = frozenset({FAILED_STATE, STOPPED, REMOVED})

ALLOWED = {
    REQUESTED: {RUNNING_STATE, FAILED_STATE, STOPPED, REMOVED},
    RUNNING_STATE: {FINISHED_STATE, FAILED_STATE, STOPPED},
}


def dep_ref(task_id: str, slot_id: str) -> str:
    """Binding value naming a dependency's (future) output."""
    return f"@{task_id}/{slot_id}"


def parse_ref(value: str) -> tuple[str, str] | None:
    if isinstance(value, str) and value.startswith("@") and "/" in value:
        tid, slot = value[1:].split("/", 1)
        return tid, slot
    return None


@dataclass
class Instance:
    id: str
    project: str
    tasks: list[str] = field(default_factory=list)
    created_at: int = 0
    label: str = ""


@dataclass
class JobHandle:
    task: str
    resource: str
    backend_job_id: str


@dataclass
class Task:
    id: str
    instance: str
    project: str
    app: str
    config: dict
    bindings: dict[str, str]
    deps: list[str]
    user: str
    state: str = REQUESTED
    service_digest: str = ""
    inputs: dict[str, str] = field(default_factory=dict)
    resource: str | None = None
    preferred_resource: str | None = None
    work_dir: str = ""
    fail_reason: str | None = None
    timestamps: dict[str, int] = field(default_factory=dict)
    job: JobHandle | None = None
    outputs: dict[str, str] = field(default_factory=dict)
    annotation: str | None = None
    unknown_polls: int = 0
    rule: str | None = None
    subject: str | None = None
    output_tags: list[str] = field(default_factory=list)
    rearmed: bool = False

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        for k in ("config", "bindings", "inputs", "timestamps", "outputs"):
            d[k] = dict(d[k])
        d["deps"], d["output_tags"] = list(self.deps), list(self.output_tags)
        d["job"] = asdict(self.job) if self.job else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Task":
        d = dict(d)
        job = d.pop("job", None)
        t = cls(**d)
        t.job = JobHandle(**job) if job else None
        return t


@dataclass
class Transition:
    seq: int
    tick: int
    task: str
    src: str | None
    dst: str
    reason: str | None = None
    resource: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StagingReport:
    transfers: int = 0
    bytes: int = 0


class Orchestrator:
    """Single logical scheduler; every state transition is serialized here."""

    def __init__(
        self,
        root: str | os.PathLike,
        warehouse: Warehouse,
        registry: AppRegistry,
        broker: ResourceBroker,
        provenance=None,
        *,
        clock: LogicalClock | None = None,
        selector=None,
        scoring: ScoringOptions | None = None,
        max_unknown_polls: int = 5,
    ):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.work_root = self.root / "work"
        self.warehouse = warehouse
        self.registry = registry
        self.broker = broker
        self.provenance = provenance
        self.clock = clock or warehouse.clock
        self.selector = selector or HeuristicSelector()
        self.scoring = scoring or ScoringOptions()
        self.max_unknown_polls = max_unknown_polls
        self.staging_log: dict[str, StagingReport] = {}
        self._lock = threading.RLock()
        self._instances_log = JsonlLog(self.root / "instances.jsonl")
        self._tasks_log = JsonlLog(self.root / "tasks.jsonl")
        self._trace_log = JsonlLog(self.root / "transitions.jsonl")
        self._instance_ids = Sequence("i")
        self._task_ids = Sequence("t")
        self.instances: dict[str, Instance] = {}
        self.tasks: dict[str, Task] = {}
        self.trace: list[Transition] = []
        self._children: dict[str, list[str]] = {}
        self._load()

    # -- persistence -------------------------------------------------------

    def _load(self) -> None:
        for d in self._instances_log.read():
            inst = Instance(**d)
            self.instances[inst.id] = inst
            self._instance_ids.observe(inst.id)
        for d in self._tasks_log.read():
            t = Task.from_dict(d)
            self.tasks[t.id] = t
            self._task_ids.observe(t.id)
        for t in sorted(self.tasks.values(), key=lambda t: t.id):
            if t.instance in self.instances:
                self.instances[t.instance].tasks.append(t.id)
            for dep in t.deps:
                self._children.setdefault(dep, []).append(t.id)
        self.trace = [Transition(**d) for d in self._trace_log.read()]

    def _persist(self, task: Task) -> None:
        self._tasks_log.append(task.to_dict())

    def _transition(self, task: Task, dst: str, reason: str | None = None) -> Transition:
        if dst not in ALLOWED.get(task.state, ()):
            raise InvalidTransitionError(f"task {task.id}: {task.state} -> {dst} is not allowed")
        now = self.clock.now()
        tr = Transition(len(self.trace) + 1, now, task.id, task.state, dst, reason, task.resource)
        task.state = dst
        task.timestamps[dst] = now
        if reason is not None and dst == FAILED_STATE:
            task.fail_reason = reason
        # durable before observable
        self._persist(task)
        self._trace_log.append(tr.to_dict())
        self.trace.append(tr)
        return tr

    # -- instances and submission -----------------------------------------

    def create_instance(self, project: str, label: str = "") -> Instance:
        self.warehouse.get_project(project)
        with self._lock:
            inst = Instance(self._instance_ids.next(), project, [], self.clock.now(), label)
            self.instances[inst.id] = inst
            self._instances_log.append(asdict(inst))
        return inst

    def get_instance(self, instance_id: str) -> Instance:
        try:
            return self.instances[instance_id]
        except KeyError:
            raise NotFoundError(f"instance {instance_id} not found") from None

    def get_task(self, task_id: str) -> Task:
        try:
            return self.tasks[task_id]
        except KeyError:
            raise NotFoundError(f"task {task_id} not found") from None

    def submit_task(
        self,
        instance: str,
        app: str,
        config: Mapping | None = None,
        bindings: Mapping[str, str] | None = None,
        deps: Iterable[str] = (),
        preferred_resource: str | None = None,
        *,
        user: str | None = None,
        rule: str | None = None,
        subject: str | None = None,
        output_tags: Iterable[str] = (),
    ) -> Task:
        with self._lock:
            inst = self.get_instance(instance)
            the_app = self.registry.get_app(app)
            cfg = the_app.apply_config(config)
            bindings = dict(bindings or {})
            deps = list(dict.fromkeys(deps))
            if preferred_resource is not None:
                self.broker.get_resource(preferred_resource)
            targets: dict[str, object] = {}
            for value in bindings.values():
                ref = parse_ref(value)
                if ref is None:
                    try:
                        obj = self.warehouse.get_object(value)
                    except NotFoundError:
                        continue
                    if obj.project != inst.project:
                        raise ValidationError(f"object {value} belongs to another project")
                    targets[value] = obj
                else:
                    parent = self.get_task(ref[0])
                    if ref[0] not in deps:
                        deps.append(ref[0])
                    try:
                        targets[value] = self.registry.get_app(parent.app).output_slot(ref[1])
                    except ValidationError:
                        pass
            for dep in deps:
                if self.get_task(dep).instance != inst.id:
                    raise ValidationError(f"dependency {dep} is not in instance {inst.id}")
            docking = check_bindings(the_app, bindings, targets)
            if docking.verdict != "accepted":
                raise DockingError("docking rejected: " + "; ".join(docking.reasons), docking.reasons)
            project = self.warehouse.get_project(inst.project)
            task = Task(
                id=self._task_ids.next(),
                instance=inst.id,
                project=inst.project,
                app=the_app.id,
                config=cfg,
                bindings=bindings,
                deps=deps,
                user=user or project.owner,
                preferred_resource=preferred_resource,
                rule=rule,
                subject=subject,
                output_tags=list(output_tags),
            )
            task.work_dir = str(self.work_root / task.id)
            task.timestamps[REQUESTED] = self.clock.now()
            self.tasks[task.id] = task
            for dep in deps:
                self._children.setdefault(dep, []).append(task.id)
            inst.tasks.append(task.id)
            self._persist(task)
            tr = Transition(len(self.trace) + 1, self.clock.now(), task.id, None, REQUESTED, None, None)
            self._trace_log.append(tr.to_dict())
            self.trace.append(tr)
        return task

    def add_dependency(self, task_id: str, dep_id: str) -> Task:
        """Make a requested task wait on another task of the same instance."""
        with self._lock:
            task, dep = self.get_task(task_id), self.get_task(dep_id)
            if task.state != REQUESTED:
                raise InvalidTransitionError(f"task {task_id} is {task.state}; dependencies are fixed")
            if dep.instance != task.instance:
                raise ValidationError(f"dependency {dep_id} is not in instance {task.instance}")
            if dep_id == task_id or task_id in self.ancestors(dep_id):
                raise CycleError(f"{task_id} -> {dep_id} would create a cycle")
            if dep_id not in task.deps:
                task.deps.append(dep_id)
                self._children.setdefault(dep_id, []).append(task_id)
                self._persist(task)
        return task

    def ancestors(self, task_id: str) -> set[str]:
        seen: set[str] = set()
        stack = list(self.get_task(task_id).deps)
        while stack:
            t = stack.pop()
            if t not in seen:
                seen.add(t)
                stack.extend(self.tasks[t].deps)
        return seen

    def descendants(self, task_id: str) -> list[str]:
        seen: dict[str, None] = {}
        stack = list(self._children.get(task_id, ()))
        while stack:
            t = stack.pop()
            if t not in seen:
                seen[t] = None
                stack.extend(self._children.get(t, ()))
        return sorted(seen)

    # -- resolution helpers ------------------------------------------------

    def _resolve_binding(self, value: str) -> str:
        ref = parse_ref(value)
        if ref is None:
            return value
        parent = self.get_task(ref[0])
        try:
            return parent.outputs[ref[1]]
        except KeyError:
            raise StagingError(f"{value}: dependency produced no {ref[1]} output") from None

    def object_residency(self, object_id: str) -> str | None:
        """Resource holding an object's payload outside the warehouse, if any."""
        obj = self.warehouse.get_object(object_id)
        if obj.provenance_task and obj.provenance_task in self.tasks:
            return self.tasks[obj.provenance_task].resource
        return None

    def data_dependencies(self, task: Task) -> list[str]:
        """Explicit deps plus the producer task of every bound object."""
        deps = list(task.deps)
        for value in task.bindings.values():
            if parse_ref(value) is None:
                obj = self.warehouse.objects.get(value)
                if obj is not None and obj.provenance_task:
                    deps.append(obj.provenance_task)
        return list(dict.fromkeys(deps))

    def scoring_context(self, task: Task) -> tuple[ScoringRequest, ScoringContext]:
        project = self.warehouse.get_project(task.project)
        data_deps = self.data_dependencies(task)
        residency = {d: self.tasks[d].resource for d in data_deps if d in self.tasks}
        request = ScoringRequest(task.id, task.app, data_deps, task.preferred_resource)
        context = ScoringContext(
            user=task.user,
            avoid_public=project.avoid_public_resources,
            residency=residency,
            options=self.scoring,
        )
        return request, context

    # -- execution steps ---------------------------------------------------

    def stage_inputs(self, task: Task, resource: str) -> StagingReport:
        report = StagingReport()
        work = Path(task.work_dir)
        try:
            for slot_id, value in sorted(task.bindings.items()):
                oid = self._resolve_binding(value)
                task.inputs[slot_id] = oid
                payload_size = len(self.warehouse.read_archive(oid))
                self.warehouse.fetch_object(oid, work / "inputs" / slot_id)
                if self.object_residency(oid) != resource:
                    report.transfers += 1
                    report.bytes += payload_size
        except WfHubError as exc:
            raise StagingError(f"staging failed for {task.id}: {exc}") from exc
        except OSError as exc:
            raise StagingError(f"staging failed for {task.id}: {exc}") from exc
        self.staging_log[task.id] = report
        return report

    def write_config(self, task: Task, app: App) -> dict:
        doc = dict(task.config)
        doc["_app"] = app.id
        doc["_task"] = task.id
        doc["_inputs"] = [
            {"id": s.slot_id, "datatype": s.datatype, "path": f"inputs/{s.slot_id}"}
            for s in app.input_slots
            if s.slot_id in task.bindings
        ]
        doc["_outputs"] = [
            {"id": s.slot_id, "datatype": s.datatype, "path": f"outputs/{s.slot_id}"} for s in app.output_slots
        ]
        atomic_write_text(Path(task.work_dir) / "config.json", canonical_json(doc) + "\n", durable=False)
        return doc

    def _dispatch(self, task: Task) -> list[Transition]:
        request, context = self.scoring_context(task)
        try:
            resource, report = self.selector.select(request, self.broker.list_resources(), context)
        except NoResourceError as exc:
            if task.annotation != "no_resource":
                task.annotation = "no_resource"
                self._persist(task)
            if exc.report:
                work = Path(task.work_dir)
                work.mkdir(parents=True, exist_ok=True)
                atomic_write_text(work / "_resource_selection.txt", exc.report, durable=False)
            return []
        task.annotation = None
        app = self.registry.get_app(task.app)
        work = Path(task.work_dir)
        work.mkdir(parents=True, exist_ok=True)
        atomic_write_text(work / "_resource_selection.txt", report, durable=False)
        task.resource = resource.id
        try:
            self.stage_inputs(task, resource.id)
        except StagingError as exc:
            task.annotation = str(exc)
            return [self._transition(task, FAILED_STATE, "staging_failed")]
        try:
            _, task.service_digest = self.registry.resolve_service(app, work)
            self.write_config(task, app)
            job_id = self.broker.backend(resource.id).start(task.id, work, self.clock.now())
        except (WfHubError, OSError) as exc:
            task.annotation = str(exc)
            return [self._transition(task, FAILED_STATE, "start_failed")]
        task.job = JobHandle(task.id, resource.id, job_id)
        return [self._transition(task, RUNNING_STATE)]

    def poll_task(self, task_id: str | Task) -> str:
        task = task_id if isinstance(task_id, Task) else self.get_task(task_id)
        if task.job is None:
            raise InvalidTransitionError(f"task {task.id} has no job handle")
        if task.state != RUNNING_STATE:
            return task.state
        backend = self.broker.backend(task.resource)
        code = backend.status(task.id, Path(task.work_dir), self.clock.now())
        if code == RUNNING:
            return RUNNING_STATE
        if code == FINISHED:
            violations = self._check_outputs(task)
            if violations:
                task.annotation = "; ".join(violations)
                self._transition(task, FAILED_STATE, "invalid_output")
                return task.state
            self._transition(task, FINISHED_STATE)
            self.finalize_task(task)
            return task.state
        if code == FAILED:
            self._transition(task, FAILED_STATE, "app_failed")
            return task.state
        task.unknown_polls += 1
        self._persist(task)
        if task.unknown_polls > self.max_unknown_polls:
            self._transition(task, FAILED_STATE, "status_unknown")
        return task.state

    def _check_outputs(self, task: Task) -> list[str]:
        app = self.registry.get_app(task.app)
        violations = []
        for slot in app.output_slots:
            out = Path(task.work_dir) / "outputs" / slot.slot_id
            if not out.is_dir():
                if not slot.optional:
                    violations.append(f"outputs/{slot.slot_id} missing")
                continue
            result = validate_files(out, self.warehouse.get_datatype(slot.datatype))
            violations.extend(f"outputs/{slot.slot_id}: {v}" for v in result.violations)
        return violations

    def finalize_task(self, task_id: str | Task) -> list[DataObject]:
        task = task_id if isinstance(task_id, Task) else self.get_task(task_id)
        if task.state != FINISHED_STATE:
            raise InvalidTransitionError(f"task {task.id} is {task.state}, not finished")
        if task.outputs:
            return [self.warehouse.get_object(o) for o in task.outputs.values()]
        violations = self._check_outputs(task)
        if violations:
            raise ValidationError(f"task {task.id} produced invalid outputs", violations)
        app = self.registry.get_app(task.app)
        first_input = next((self.warehouse.get_object(task.inputs[s.slot_id]) for s in app.input_slots if s.slot_id in task.inputs), None)
        subject = task.subject or (first_input.subject if first_input else "")
        session = first_input.session if first_input else None
        produced = []
        for slot in app.output_slots:
            out = Path(task.work_dir) / "outputs" / slot.slot_id
            if not out.is_dir():
                continue
            obj = self.warehouse.archive_object(
                task.project,
                slot.datatype,
                out,
                tags=task.output_tags,
                datatype_tags=slot.required_datatype_tags,
                subject=subject,
                session=session,
                provenance_task=task.id,
            )
            produced.append(obj)
            task.outputs[slot.slot_id] = obj.id
        self._persist(task)
        if self.provenance is not None:
            self.provenance.record_task_provenance(task, produced)
        return produced

    def _fail_descendants(self, task_id: str) -> list[Transition]:
        out = []
        for child_id in self.descendants(task_id):
            child = self.tasks[child_id]
            if child.state == REQUESTED:
                out.append(self._transition(child, FAILED_STATE, "parent_failed"))
        return out

    def _propagate_failures(self) -> list[Transition]:
        out = []
        changed = True
        while changed:
            changed = False
            for task in sorted(self.tasks.values(), key=lambda t: t.id):
                if task.state == REQUESTED and any(self.tasks[d].state in DEAD for d in task.deps):
                    out.append(self._transition(task, FAILED_STATE, "parent_failed"))
                    changed = True
        return out

    def scheduler_tick(self, now: int | None = None, *, monitor: bool = True) -> list[Transition]:
        """One serialized pass: poll running tasks, propagate failures, dispatch."""
        with self._lock:
            if now is not None:
                self.clock.set(now)
            if monitor:
                self.broker.monitor_all()
            transitions: list[Transition] = []
            start_len = len(self.trace)
            for task in sorted(self.tasks.values(), key=lambda t: t.id):
                if task.state == RUNNING_STATE:
                    self.poll_task(task)
            transitions.extend(self._propagate_failures())
            for task in sorted(self.tasks.values(), key=lambda t: t.id):
                if task.state == REQUESTED and all(self.tasks[d].state == FINISHED_STATE for d in task.deps):
                    self._dispatch(task)
            return self.trace[start_len:]

    def stop_task(self, task_id: str) -> Task:
        with self._lock:
            task = self.get_task(task_id)
            if task.state not in (REQUESTED, RUNNING_STATE):
                raise InvalidTransitionError(f"cannot stop task {task_id} in state {task.state}")
            if task.state == RUNNING_STATE:
                self.broker.backend(task.resource).stop(task.id, Path(task.work_dir), self.clock.now())
            self._transition(task, STOPPED, "stopped")
            self._fail_descendants(task.id)
        return task

    def remove_task(self, task_id: str) -> Task:
        with self._lock:
            task = self.get_task(task_id)
            if task.state != REQUESTED:
                raise InvalidTransitionError(f"cannot remove task {task_id} in state {task.state}")
            self._transition(task, REMOVED, "removed")
            self._fail_descendants(task.id)
        return task

    def rearm(self, task_id: str) -> Task:
        """Mark a failed task as superseded so batch rules may resubmit its work."""
        with self._lock:
            task = self.get_task(task_id)
            if task.state not in DEAD:
                raise InvalidTransitionError(f"task {task_id} is {task.state}; only failed work can be re-armed")
            task.rearmed = True
            self._persist(task)
        return task

    def task_events(self, task_id: str) -> list[Transition]:
        self.get_task(task_id)
        return [t for t in self.trace if t.task == task_id]
