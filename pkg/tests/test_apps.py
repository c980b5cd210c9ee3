import os

import pytest

from wfhub.apps import DOI_PREFIX, AppRegistry, Slot, check_bindings, check_docking
from wfhub.errors import ContractError, NotFoundError, SourceError, ValidationError
from wfhub.sim.synthetic import write_service


def _obj(wh, project, datatype, subject="s01", **kw):
    name = wh.get_datatype(datatype).file_spec[0].pattern
    return wh.archive_object(project, datatype, {name: subject}, subject=subject, **kw)


def test_register_from_service_dir_mints_sequential_dois(world):
    a = world.app("one", ["raw/t1"], ["neuro/mask"])
    b = world.app("two", ["neuro/mask"], ["neuro/seg"])
    assert a.doi == f"{DOI_PREFIX}1" and b.doi == f"{DOI_PREFIX}2"
    assert a.input_slots == [Slot("t1", "raw/t1")]
    assert len(a.service_digest) == 64


def test_registry_persists(world):
    a = world.app("one", ["raw/t1"], ["neuro/mask"])
    again = AppRegistry(world.plat.registry.root, world.plat.warehouse)
    assert again.get_app(a.id) == a
    with pytest.raises(NotFoundError):
        again.get_app("a999999")


def test_unregistered_datatype_rejected(world, tmp_path):
    svc = tmp_path / "svc"
    write_service(svc, {"name": "x", "version": "1", "inputs": [], "outputs": [{"id": "o", "datatype": "raw/t1"}], "config": []}, world.plat.warehouse)
    desc = {"name": "x", "service_ref": str(svc), "inputs": [{"id": "in", "datatype": "nope"}], "outputs": []}
    with pytest.raises(ValidationError):
        world.plat.registry.register_app(desc)


def test_hook_contract_checked(world, tmp_path):
    svc = tmp_path / "svc"
    write_service(svc, {"name": "x", "version": "1", "inputs": [], "outputs": [{"id": "o", "datatype": "raw/t1"}], "config": []}, world.plat.warehouse)
    os.chmod(svc / "status", 0o644)
    with pytest.raises(ContractError, match="status not executable"):
        world.plat.registry.register_app(svc)
    (svc / "start").unlink()
    with pytest.raises(ContractError, match="start missing"):
        world.plat.registry.register_app(svc)


def test_remote_service_ref_is_a_source_error(world):
    with pytest.raises(SourceError):
        world.plat.registry.register_app({"name": "x", "service_ref": "https://github.com/x/y"})


def test_docking_accepts_rejects_and_flags_ambiguity(world):
    wh = world.plat.warehouse
    app = world.app("masker", [{"id": "t1", "datatype": "raw/t1", "required_datatype_tags": ["acpc"]}], ["neuro/mask"])
    plain = _obj(wh, world.project, "raw/t1")
    tagged = _obj(wh, world.project, "raw/t1", datatype_tags=["acpc"])
    assert check_docking(app, [plain]).reasons == ["slot t1: no compatible object"]
    ok = check_docking(app, [plain, tagged])
    assert ok.verdict == "accepted" and ok.bindings == {"t1": tagged.id}
    second = _obj(wh, world.project, "raw/t1", "s02", datatype_tags=["acpc"])
    amb = check_docking(app, [tagged, second])
    assert amb.verdict == "ambiguous"
    assert amb.reasons == [f"slot t1: 2 compatible objects ({tagged.id}, {second.id})"]


def test_compatible_apps(world):
    wh = world.plat.warehouse
    a = world.app("masker", ["raw/t1"], ["neuro/mask"])
    world.app("seg", ["neuro/mask"], ["neuro/seg"])
    assert [x.id for x in world.plat.registry.compatible_apps([_obj(wh, world.project, "raw/t1")])] == [a.id]


def test_check_bindings_against_future_outputs(world):
    app = world.app("seg", ["neuro/mask"], ["neuro/seg"])
    good = check_bindings(app, {"mask": "@t1/out"}, {"@t1/out": Slot("out", "neuro/mask")})
    assert good.verdict == "accepted"
    bad = check_bindings(app, {"mask": "@t1/out"}, {"@t1/out": Slot("out", "raw/t1")})
    assert bad.reasons == ["slot mask: @t1/out produces raw/t1, needs neuro/mask"]
    extra = check_bindings(app, {"mask": "@t1/out", "zzz": "d1"}, {"@t1/out": Slot("out", "neuro/mask")})
    assert extra.verdict == "rejected"


def test_apply_config_defaults_types_and_reserved_keys(world):
    app = world.app("cfg", [], ["neuro/out"], config_schema=[{"key": "lmax", "type": "integer", "default": 8}, {"key": "mode", "type": "string", "required": True}])
    assert app.apply_config({"mode": "fast"}) == {"synthetic_polls": 0, "synthetic_fail": False, "lmax": 8, "mode": "fast"}
    with pytest.raises(ValidationError, match="required"):
        app.apply_config({})
    with pytest.raises(ValidationError, match="integer"):
        app.apply_config({"mode": "x", "lmax": True})
    with pytest.raises(ValidationError, match="'_'"):
        app.apply_config({"mode": "x", "_secret": 1})


def test_resolve_service_copies_hooks(world, tmp_path):
    app = world.app("one", ["raw/t1"], ["neuro/mask"])
    dest, digest = world.plat.registry.resolve_service(app.id, tmp_path / "wd")
    assert (dest / "start").is_file() and os.access(dest / "start", os.X_OK)
    assert digest == app.service_digest
