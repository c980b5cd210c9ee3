import json

import pytest

from wfhub.cli import main
from wfhub.platform import Platform
from wfhub.sim.synthetic import write_service


def run(capsys, root, *argv):
    code = main(["--root", str(root), *argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def store(tmp_path, capsys):
    root = tmp_path / "root"
    assert run(capsys, root, "project", "create", "--name", "s1", "--owner", "alice")[0] == 0
    run(capsys, root, "datatype", "register", "raw/t1", "--required", "t1.nii.gz")
    run(capsys, root, "datatype", "register", "neuro/mask", "--required", "mask.nii.gz")
    write_service(
        tmp_path / "svc",
        {"name": "mask", "version": "1", "inputs": [{"id": "t1", "datatype": "raw/t1"}], "outputs": [{"id": "mask", "datatype": "neuro/mask"}], "config": []},
        Platform(root).warehouse,
    )
    run(capsys, root, "app", "register", str(tmp_path / "svc"))
    run(capsys, root, "resource", "register", "r1")
    run(capsys, root, "resource", "enable", "r1", "a000001", "--score", "5")
    up = tmp_path / "up"
    up.mkdir()
    (up / "t1.nii.gz").write_text("img")
    run(capsys, root, "data", "upload", "--project", "p000001", "--datatype", "raw/t1", "--subject", "s01", str(up))
    return root


def test_project_create_json(tmp_path, capsys):
    code, out, _ = run(capsys, tmp_path / "r", "--json", "project", "create", "--name", "s1", "--owner", "alice")
    assert code == 0
    body = json.loads(out)
    assert body["ok"] and body["data"]["id"] == "p000001"


def test_unknown_subcommand_exits_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--root", str(tmp_path), "frobnicate"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_operation_error_exits_1(tmp_path, capsys):
    code, _, err = run(capsys, tmp_path / "r", "project", "create", "--name", "", "--owner", "alice")
    assert code == 1 and "error:" in err


def test_docking_rejection_reports_slots(store, capsys):
    code, _, err = run(capsys, store, "task", "submit", "--project", "p000001", "--app", "a000001")
    assert code == 1
    assert "slot t1: no compatible object" in err


def test_submit_tick_status_and_reproduce(store, capsys):
    code, out, _ = run(capsys, store, "--json", "task", "submit", "--project", "p000001", "--app", "a000001", "--bind", "t1=d000001")
    assert code == 0 and json.loads(out)["data"]["state"] == "requested"
    run(capsys, store, "tick", "--count", "3")
    _, out, _ = run(capsys, store, "--json", "task", "status", "t000001")
    task = json.loads(out)["data"]
    assert task["state"] == "finished" and task["outputs"] == {"mask": "d000002"}
    _, out, _ = run(capsys, store, "--json", "task", "events", "t000001")
    assert [e["dst"] for e in json.loads(out)["data"]] == ["requested", "running", "finished"]
    _, script, _ = run(capsys, store, "reproduce", "d000002")
    assert script == Platform(store).provenance.emit_reproduce_script("d000002")


def test_rule_define_and_run(store, capsys):
    code, out, _ = run(capsys, store, "--json", "rule", "define", "--project", "p000001", "--app", "a000001", "--select", "t1=raw/t1", "--output-tag", "masked")
    assert code == 0 and json.loads(out)["data"]["id"] == "r000001"
    _, out, _ = run(capsys, store, "--json", "rule", "run", "--project", "p000001", "--ticks", "4")
    assert json.loads(out)["data"]["rules"]["r000001"]["completions"] == 1
    _, out, _ = run(capsys, store, "--json", "data", "query", "--project", "p000001", "--tag", "masked")
    assert [o["id"] for o in json.loads(out)["data"]] == ["d000002"]


def test_lists_and_fetch(store, capsys, tmp_path):
    _, out, _ = run(capsys, store, "--json", "resource", "list")
    assert json.loads(out)["data"][0]["enabled_services"] == {"a000001": 5}
    _, out, _ = run(capsys, store, "app", "list")
    assert out.startswith("a000001\tname=mask")
    assert run(capsys, store, "data", "fetch", "d000001", str(tmp_path / "f"))[0] == 0
    assert (tmp_path / "f" / "t1.nii.gz").read_text() == "img"


def test_reference_and_collate(tmp_path, capsys):
    root = tmp_path / "r"
    run(capsys, root, "project", "create", "--name", "s", "--owner", "a")
    run(capsys, root, "datatype", "register", "stats", "--required", "stats.tsv", "--statistical-feature")
    for i in range(6):
        d = tmp_path / f"u{i}"
        d.mkdir()
        (d / "stats.tsv").write_text(f"structure\tmeasure\tvalue\nlh\tvol\t{10 + i}\n")
        run(capsys, root, "data", "upload", "--project", "p000001", "--datatype", "stats", "--subject", f"s{i}", str(d))
    code, out, _ = run(capsys, root, "--json", "collate", "--project", "p000001", "--out-dir", str(tmp_path / "c"))
    assert code == 0 and json.loads(out)["data"]["rows"] == 6
    ref = tmp_path / "ref.json"
    code, _, _ = run(capsys, root, "reference", "build", "--table", str(tmp_path / "c" / "features.tsv"), "--source", "pop", "--out", str(ref))
    assert code == 0 and ref.exists()
    _, out, _ = run(capsys, root, "--json", "reference", "classify", "--reference", str(ref), "--structure", "lh", "--measure", "vol", "12.5")
    assert json.loads(out)["data"]["band"] == "within1"


def test_pub_create(store, capsys):
    code, out, _ = run(capsys, store, "--json", "pub", "create", "--project", "p000001", "--object", "d000001", "--title", "t")
    assert code == 0 and json.loads(out)["data"]["doi"] == "10.25663/sim.pub.1"


def test_sim_run(tmp_path, capsys):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"seed": 1, "workflow": "independent", "tasks": 10, "ticks": 5, "resources": [{"id": "r1"}]}))
    code, out, _ = run(capsys, tmp_path / "r", "--json", "sim", "run", str(spec), "--sim-root", str(tmp_path / "w"))
    assert code == 0 and json.loads(out)["data"]["finished"] == 10


def test_root_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("WFHUB_ROOT", str(tmp_path / "env"))
    assert main(["project", "create", "--name", "x", "--owner", "a"]) == 0
    assert (tmp_path / "env" / "store" / "projects.json").exists()
