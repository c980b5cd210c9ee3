import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wfhub.errors import ValidationError
from wfhub.pipeline import PipelineEngine
from wfhub.platform import Platform

from helpers import World


@pytest.fixture
def rules(world):
    mask = world.app("mask", [{"id": "t1", "datatype": "raw/t1"}], [{"id": "mask", "datatype": "neuro/mask"}])
    seg = world.app("seg", [{"id": "mask", "datatype": "neuro/mask"}], [{"id": "seg", "datatype": "neuro/seg"}])
    world.resource("r1", [mask, seg])
    pipes = world.plat.pipelines
    r1 = pipes.define_rule(world.project, mask.id, {"t1": {"datatype": "raw/t1"}}, output_tags=["masked"])
    r2 = pipes.define_rule(world.project, seg.id, {"mask": {"datatype": "neuro/mask", "include_tags": ["masked"]}}, output_tags=["seg"])
    return world, r1, r2


def test_double_evaluation_submits_once(rules):
    world, r1, _ = rules
    for s in ("s01", "s02"):
        world.raw(s)
    pipes = world.plat.pipelines
    first = pipes.evaluate_rule(r1.id)
    second = pipes.evaluate_rule(r1.id)
    assert [s["subject"] for s in first.submissions] == ["s01", "s02"]
    assert second.submissions == []
    assert {s["reason"] for s in second.skipped} == {"task_in_flight"}


def test_finished_output_is_not_resubmitted(rules):
    world, r1, _ = rules
    world.raw("s01")
    pipes = world.plat.pipelines
    pipes.evaluate_rule(r1.id)
    world.run(3)
    ev = pipes.evaluate_rule(r1.id)
    assert ev.submissions == [] and ev.skipped == [{"subject": "s01", "reason": "output_exists"}]


def test_inputs_missing_is_reported(rules):
    world, _, r2 = rules
    world.raw("s01")
    ev = world.plat.pipelines.evaluate_rule(r2.id)
    assert ev.skipped == [{"subject": "s01", "reason": "inputs_missing", "slots": ["mask"]}]


def test_chaining_fires_for_archived_subjects_only(rules):
    world, r1, r2 = rules
    for s in ("s01", "s02", "s03"):
        world.raw(s)
    pipes = world.plat.pipelines
    pipes.evaluate_rule(r1.id)
    failing = next(t for t in world.plat.orchestrator.tasks.values() if t.subject == "s02")
    failing.config["synthetic_fail"] = True
    world.run(3)
    ev = pipes.evaluate_rule(r2.id)
    assert sorted(s["subject"] for s in ev.submissions) == ["s01", "s03"]
    summary = pipes.summary(world.project)
    assert summary[r1.id]["failed_subjects"] == ["s02"]


def test_failed_subject_waits_for_rearm(rules):
    world, r1, _ = rules
    world.raw("s01")
    pipes = world.plat.pipelines
    pipes.evaluate_rule(r1.id)
    task = next(iter(world.plat.orchestrator.tasks.values()))
    task.config["synthetic_fail"] = True
    world.run(3)
    assert pipes.evaluate_rule(r1.id).skipped[0]["reason"] == "task_failed"
    assert pipes.rearm(r1.id, "s01") == [task.id]
    again = pipes.evaluate_rule(r1.id)
    assert len(again.submissions) == 1


def test_newest_input_wins_and_is_noted(rules):
    world, r1, _ = rules
    old = world.raw("s01", payload="old")
    world.plat.clock.advance()
    new = world.raw("s01", payload="new")
    ev = world.plat.pipelines.evaluate_rule(r1.id)
    assert ev.submissions[0]["bindings"] == {"t1": new.id}
    assert ev.notes == [{"subject": "s01", "slot": "t1", "note": "ambiguous_resolved", "chosen": new.id}]
    assert old.id != new.id


def test_selector_must_match_slot_datatype(rules):
    world, r1, _ = rules
    app = world.plat.registry.get_app(r1.app)
    with pytest.raises(ValidationError):
        world.plat.pipelines.define_rule(world.project, app.id, {"t1": {"datatype": "neuro/mask"}})
    with pytest.raises(ValidationError):
        world.plat.pipelines.define_rule(world.project, app.id, {})


def test_inactive_rule_cannot_be_evaluated(rules):
    world, r1, _ = rules
    world.plat.pipelines.set_active(r1.id, False)
    with pytest.raises(ValidationError):
        world.plat.pipelines.evaluate_rule(r1.id)


def test_rules_persist(rules):
    world, r1, r2 = rules
    again = PipelineEngine(world.plat.pipelines.root, world.plat.orchestrator)
    assert again.list_rules() == world.plat.pipelines.list_rules()


def test_run_rules_chains_to_completion(rules):
    world, r1, r2 = rules
    for s in ("s01", "s02"):
        world.raw(s)
    out = world.plat.pipelines.run_rules(world.project, 8)
    assert out["rules"][r1.id]["completions"] == 2 and out["rules"][r2.id]["completions"] == 2
    law = re.compile(rf"^warehouse/{world.project}/d\d{{6}}\.tar$")
    assert all(law.match(o.archive_path) for o in world.plat.warehouse.objects.values())


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4))
def test_repeated_evaluation_never_duplicates(tmp_path_factory, subjects, evaluations):
    root = tmp_path_factory.mktemp("pipe")
    world = World(Platform(root / "p"), root / "svc")
    mask = world.app("mask", ["raw/t1"], ["neuro/mask"])
    world.resource("r1", [mask])
    rule = world.plat.pipelines.define_rule(world.project, mask.id, {"t1": {"datatype": "raw/t1"}})
    for i in range(subjects):
        world.raw(f"s{i:02d}")
    for _ in range(evaluations):
        world.plat.pipelines.evaluate_rule(rule.id)
        world.run(1)
    per_subject = [t.subject for t in world.plat.orchestrator.tasks.values()]
    assert sorted(per_subject) == sorted(set(per_subject)) and len(per_subject) == subjects
