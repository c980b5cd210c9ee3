import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wfhub.broker import (
    Resource,
    ResourceBroker,
    RoundRobinSelector,
    ScoringContext,
    ScoringOptions,
    ScoringRequest,
    score_resource,
    select_resource,
)
from wfhub.errors import NoResourceError, ValidationError
from wfhub.sim import SimBackend, SimProfile

from helpers import check_case, random_case


def test_oracle_agreement_on_seeded_cases():
    rnd = random.Random(11)
    assert all(check_case(random_case(rnd)) for _ in range(300))


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_oracle_agreement_property(seed):
    assert check_case(random_case(random.Random(seed)))


def _res(rid, score=5, **kw):
    return Resource(id=rid, name=rid, enabled_services={"svc": score}, **kw)


def test_base_only_worked_case():
    winner, report = select_resource(ScoringRequest("t1", "svc"), [_res("r1")], ScoringContext(user="alice"))
    assert winner.id == "r1"
    assert report == "task=t1\nresource=r1 base=5 dep=0 excl=0 pref=0 total=5\nselected=r1\n"


def test_all_increments_worked_case():
    r = _res("r1", kind="private", owner="alice")
    req = ScoringRequest("t1", "svc", ["t0", "tx"], preferred_resource="r1")
    ctx = ScoringContext("alice", False, {"t0": "r1", "tx": "r1"})
    b = score_resource(req, r, ctx)
    assert (b.base, b.dep_bonus, b.exclusive_bonus, b.preferred_bonus, b.total) == (5, 10, 10, 15, 40)


@pytest.mark.parametrize(
    "resource,ctx,reason",
    [
        (Resource("r1", "r1", enabled_services={}), ScoringContext(), "not_enabled"),
        (_res("r1", kind="public"), ScoringContext(avoid_public=True), "public_avoided"),
        (_res("r1", status="down"), ScoringContext(), "down"),
    ],
)
def test_disqualification_reasons(resource, ctx, reason):
    b = score_resource(ScoringRequest("t1", "svc"), resource, ctx)
    assert b.disqualified and b.disqualify_reason == reason
    with pytest.raises(NoResourceError) as exc:
        select_resource(ScoringRequest("t1", "svc"), [resource], ctx)
    assert f"DISQUALIFIED:{reason}" in exc.value.report
    assert exc.value.report.endswith("selected=none\n")


def test_tie_goes_to_smallest_id():
    winner, _ = select_resource(ScoringRequest("t", "svc"), [_res("b"), _res("a"), _res("c")], ScoringContext())
    assert winner.id == "a"


def test_flat_dependency_mode():
    req = ScoringRequest("t", "svc", ["t1", "t2", "t3"])
    ctx = ScoringContext(residency={"t1": "r1", "t2": "r1", "t3": "r1"}, options=ScoringOptions(per_dependency=False))
    assert score_resource(req, _res("r1"), ctx).dep_bonus == 5


def test_exclusive_bonus_only_for_owner_of_private():
    req = ScoringRequest("t", "svc")
    assert score_resource(req, _res("r", kind="private", owner="bob"), ScoringContext("alice")).exclusive_bonus == 0
    assert score_resource(req, _res("r", kind="shared"), ScoringContext("alice")).exclusive_bonus == 0


def test_queue_penalty_extension_off_by_default():
    req = ScoringRequest("t", "svc")
    r = _res("r", queue_length=7)
    assert score_resource(req, r, ScoringContext()).total == 5
    b = score_resource(req, r, ScoringContext(options=ScoringOptions(queue_penalty_q=3)))
    assert b.queue_penalty == -2 and b.total == 3 and "queue=-2" in b.report_line()


def test_round_robin_cycles_qualified_only():
    rr = RoundRobinSelector()
    pool = [_res("a"), _res("b", status="down"), _res("c")]
    picks = [rr.select(ScoringRequest("t", "svc"), pool, ScoringContext())[0].id for _ in range(4)]
    assert picks == ["a", "c", "a", "c"]


def test_resource_validation(tmp_path):
    broker = ResourceBroker(tmp_path)
    with pytest.raises(ValidationError):
        broker.register_resource({"id": "r", "kind": "private"})
    with pytest.raises(ValidationError):
        broker.register_resource({"id": "r", "kind": "shared", "owner": "bob"})
    with pytest.raises(ValidationError):
        broker.register_resource({"id": "r", "enabled_services": {"a": "high"}})


def test_enable_disable_and_persistence(tmp_path):
    broker = ResourceBroker(tmp_path)
    broker.register_resource({"id": "r1", "kind": "shared"})
    broker.enable_service("r1", "a000001", 7)
    again = ResourceBroker(tmp_path)
    assert again.get_resource("r1").enabled_services == {"a000001": 7}
    again.disable_service("r1", "a000001")
    assert again.get_resource("r1").enabled_services == {}


def test_monitor_tracks_flapping_resource(tmp_path):
    broker = ResourceBroker(tmp_path)
    backend = SimBackend(SimProfile(probe_script=[True, False, True]))
    broker.register_resource({"id": "r1"}, backend=backend)
    assert [broker.monitor_resource("r1") for _ in range(4)] == ["ok", "down", "ok", "ok"]
