"""Declarative batch rules: per-subject input matching and idempotent submission.

A rule is evaluated once per subject of its project.  Each input selector is
resolved with a warehouse query restricted to that subject; when several
objects match, the newest one (by ``created_at``, then id) is used and the
choice is noted in the evaluation record.  A subject is skipped when inputs
are missing, when an output of the rule's app with the rule's output tags
already exists for it, when a task for the same (rule, subject) is still
queued or running, or when such a task failed and has not been re-armed.
"""

from __future__ import annotations

import os
import threading
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ._util import JsonlLog, Sequence, atomic_write_json, read_json
from .core import DEAD, FAILED_STATE, FINISHED_STATE, TERMINAL, Orchestrator
from .errors import NotFoundError, ValidationError

SKIP_REASONS = ("output_exists", "task_in_flight", "inputs_missing", "task_failed")


@dataclass
class Selector:
    datatype: str
    include_tags: list[str] = field(default_factory=list)
    exclude_tags: list[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Selector":
        return cls(d["datatype"], list(d.get("include_tags", [])), list(d.get("exclude_tags", [])))


@dataclass
class PipelineRule:
    id: str
    project: str
    app: str
    input_selectors: dict[str, Selector]
    config: dict = field(default_factory=dict)
    output_tags: list[str] = field(default_factory=list)
    active: bool = True
    instance: str = ""
    name: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineRule":
        d = dict(d)
        d["input_selectors"] = {k: Selector.from_dict(v) for k, v in d["input_selectors"].items()}
        return cls(**d)


@dataclass
class RuleEvaluation:
    rule: str
    tick: int
    submissions: list[dict] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)
    notes: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


class PipelineEngine:
    def __init__(self, root: str | os.PathLike, orchestrator: Orchestrator):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.orch = orchestrator
        self.warehouse = orchestrator.warehouse
        self.registry = orchestrator.registry
        self._lock = threading.RLock()
        self._ids = Sequence("r")
        self._audit = JsonlLog(self.root / "evaluations.jsonl")
        self.rules: dict[str, PipelineRule] = {}
        for d in read_json(self.root / "rules.json", []):
            rule = PipelineRule.from_dict(d)
            self.rules[rule.id] = rule
            self._ids.observe(rule.id)

    def _save(self) -> None:
        atomic_write_json(self.root / "rules.json", [r.to_dict() for r in self.list_rules()])

    def list_rules(self, project: str | None = None) -> list[PipelineRule]:
        return sorted((r for r in self.rules.values() if project is None or r.project == project), key=lambda r: r.id)

    def get_rule(self, rule_id: str) -> PipelineRule:
        try:
            return self.rules[rule_id]
        except KeyError:
            raise NotFoundError(f"rule {rule_id} not found") from None

    def define_rule(
        self,
        project: str,
        app: str,
        selectors: Mapping[str, Mapping | Selector],
        config: Mapping | None = None,
        output_tags=(),
        name: str = "",
    ) -> PipelineRule:
        self.warehouse.get_project(project)
        the_app = self.registry.get_app(app)
        sels = {k: v if isinstance(v, Selector) else Selector.from_dict(v) for k, v in selectors.items()}
        for slot_id, sel in sels.items():
            slot = the_app.input_slot(slot_id)
            if sel.datatype != slot.datatype:
                raise ValidationError(f"selector {slot_id} selects {sel.datatype}, slot needs {slot.datatype}")
        missing = [s.slot_id for s in the_app.input_slots if not s.optional and s.slot_id not in sels]
        if missing:
            raise ValidationError(f"no selector for required slots {missing}")
        cfg = the_app.apply_config(config)
        with self._lock:
            rule_id = self._ids.next()
            inst = self.orch.create_instance(project, label=f"rule {rule_id}")
            rule = PipelineRule(rule_id, project, the_app.id, sels, cfg, list(output_tags), True, inst.id, name)
            self.rules[rule.id] = rule
            self._save()
        return rule

    def set_active(self, rule_id: str, active: bool) -> PipelineRule:
        with self._lock:
            rule = self.get_rule(rule_id)
            rule.active = active
            self._save()
        return rule

    def _output_exists(self, rule: PipelineRule, subject: str) -> bool:
        want = set(rule.output_tags)
        for obj in self.warehouse.query_objects(rule.project, subject=subject, include_tags=rule.output_tags):
            task = self.orch.tasks.get(obj.provenance_task or "")
            if task is not None and task.app == rule.app and want <= set(obj.tags):
                return True
        return False

    def _rule_tasks(self, rule: PipelineRule, subject: str):
        return [t for t in self.orch.tasks.values() if t.rule == rule.id and t.subject == subject]

    def rearm(self, rule_id: str, subject: str) -> list[str]:
        """Allow a rule to resubmit a subject whose previous task failed."""
        rule = self.get_rule(rule_id)
        rearmed = []
        for task in self._rule_tasks(rule, subject):
            if task.state in DEAD and not task.rearmed:
                self.orch.rearm(task.id)
                rearmed.append(task.id)
        return rearmed

    def evaluate_rule(self, rule_id: str, now: int | None = None) -> RuleEvaluation:
        with self._lock:
            rule = self.get_rule(rule_id)
            if not rule.active:
                raise ValidationError(f"rule {rule_id} is not active")
            if now is not None:
                self.orch.clock.set(now)
            app = self.registry.get_app(rule.app)
            ev = RuleEvaluation(rule.id, self.orch.clock.now())
            by_subject: dict[str, list] = {}
            for t in self.orch.tasks.values():
                if t.rule == rule.id:
                    by_subject.setdefault(t.subject, []).append(t)
            for subject in self.warehouse.subjects(rule.project):
                bindings, missing = {}, []
                for slot in app.input_slots:
                    sel = rule.input_selectors.get(slot.slot_id)
                    if sel is None:
                        continue
                    hits = [
                        o
                        for o in self.warehouse.query_objects(
                            rule.project, sel.datatype, sel.include_tags, sel.exclude_tags, subject
                        )
                        if slot.accepts(o)
                    ]
                    if not hits:
                        if not slot.optional:
                            missing.append(slot.slot_id)
                        continue
                    if len(hits) > 1:
                        ev.notes.append({"subject": subject, "slot": slot.slot_id, "note": "ambiguous_resolved", "chosen": hits[0].id})
                    bindings[slot.slot_id] = hits[0].id  # newest first
                if missing:
                    ev.skipped.append({"subject": subject, "reason": "inputs_missing", "slots": missing})
                    continue
                if self._output_exists(rule, subject):
                    ev.skipped.append({"subject": subject, "reason": "output_exists"})
                    continue
                tasks = by_subject.get(subject, [])
                live = [t for t in tasks if t.state not in TERMINAL]
                if live:
                    ev.skipped.append({"subject": subject, "reason": "task_in_flight", "task": live[0].id})
                    continue
                failed = [t for t in tasks if t.state in DEAD and not t.rearmed]
                if failed:
                    ev.skipped.append({"subject": subject, "reason": "task_failed", "task": failed[0].id})
                    continue
                task = self.orch.submit_task(
                    rule.instance,
                    rule.app,
                    rule.config,
                    bindings,
                    rule=rule.id,
                    subject=subject,
                    output_tags=rule.output_tags,
                )
                ev.submissions.append({"subject": subject, "bindings": bindings, "task": task.id})
            self._audit.append(ev.to_dict())
        return ev

    def summary(self, project: str | None = None) -> dict:
        out = {}
        for rule in self.list_rules(project):
            tasks = [t for t in self.orch.tasks.values() if t.rule == rule.id]
            out[rule.id] = {
                "app": rule.app,
                "submissions": len(tasks),
                "completions": sum(t.state == FINISHED_STATE for t in tasks),
                "failures": sum(t.state == FAILED_STATE for t in tasks),
                "in_flight": sum(t.state not in TERMINAL for t in tasks),
                "failed_subjects": sorted({t.subject for t in tasks if t.state == FAILED_STATE}),
            }
        return out

    def run_rules(self, project: str, ticks: int, start: int | None = None) -> dict:
        """Alternate rule evaluation and scheduler ticks for ``ticks`` rounds."""
        now = self.orch.clock.now() if start is None else start
        evaluations = []
        for _ in range(ticks):
            now += 1
            for rule in self.list_rules(project):
                if rule.active:
                    evaluations.append(self.evaluate_rule(rule.id, now))
            self.orch.scheduler_tick(now)
        return {"ticks": ticks, "now": self.orch.clock.now(), "rules": self.summary(project), "evaluations": len(evaluations)}
