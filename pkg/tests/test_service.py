import json
import threading
import urllib.error
import urllib.request

import pytest

from wfhub.cli import main
from wfhub.platform import Platform
from wfhub.service import Service, make_server
from wfhub.sim.synthetic import write_service


def call(svc, method, path, body=None, **headers):
    raw = json.dumps(body).encode() if body is not None else b""
    status, resp = svc.handle(method, "/api/v1" + path, raw, headers)
    return status, resp


def _service_dir(root, dest):
    write_service(
        dest,
        {"name": "mask", "version": "1", "inputs": [{"id": "t1", "datatype": "raw/t1"}], "outputs": [{"id": "mask", "datatype": "neuro/mask"}], "config": []},
        Platform(root).warehouse,
    )
    return str(dest)


@pytest.fixture
def svc(tmp_path):
    plat = Platform(tmp_path / "root")
    s = Service(plat)
    call(s, "POST", "/project", {"name": "s1", "owner": "alice"})
    call(s, "POST", "/datatype", {"name": "raw/t1", "file_spec": ["t1.nii.gz"]})
    call(s, "POST", "/datatype", {"name": "neuro/mask", "file_spec": ["mask.nii.gz"]})
    call(s, "POST", "/app", {"service_dir": _service_dir(plat.root, tmp_path / "svc")})
    call(s, "POST", "/resource", {"id": "r1"})
    call(s, "POST", "/resource/r1/enable", {"service": "a000001", "score": 5})
    call(s, "POST", "/data", {"project": "p000001", "datatype": "raw/t1", "subject": "s01", "files": {"t1.nii.gz": "img"}})
    return s


def test_project_create_ok(tmp_path):
    status, resp = call(Service(Platform(tmp_path)), "POST", "/project", {"name": "s", "owner": "a"})
    assert status == 200 and resp["ok"] and resp["data"]["id"] == "p000001"


def test_unknown_object_is_404(svc):
    status, resp = call(svc, "GET", "/object/d999999")
    assert status == 404 and resp["ok"] is False and resp["error"]["kind"] == "not_found"
    assert call(svc, "GET", "/nope")[0] == 404


def test_malformed_json_is_400(svc):
    status, resp = svc.handle("POST", "/api/v1/project", b"{not json", {})
    assert status == 400 and "malformed JSON" in resp["error"]["message"]
    assert svc.handle("POST", "/api/v1/project", b"[1]", {})[0] == 400


def test_docking_error_is_422_with_reasons(svc):
    status, resp = call(svc, "POST", "/task", {"project": "p000001", "app": "a000001"})
    assert status == 422 and resp["error"]["reasons"] == ["slot t1: no compatible object"]


def test_task_events_follow_scheduler(svc):
    status, resp = call(svc, "POST", "/task", {"project": "p000001", "app": "a000001", "bindings": {"t1": "d000001"}}, **{"X-User-Id": "bob"})
    assert status == 200 and resp["data"]["user"] == "bob"
    call(svc, "POST", "/tick", {"count": 3})
    events = call(svc, "GET", "/task/t000001/events")[1]["data"]
    assert [(e["src"], e["dst"]) for e in events] == [(None, "requested"), ("requested", "running"), ("running", "finished")]
    ticks = [e["tick"] for e in events]
    assert ticks == sorted(ticks)
    assert call(svc, "GET", "/task/t000001")[1]["data"]["state"] == "finished"


def test_query_string_parameters(svc):
    status, resp = call(svc, "GET", "/data?project=p000001&datatype=raw/t1")
    assert status == 200 and [o["id"] for o in resp["data"]] == ["d000001"]


def test_idempotency_key_replays_and_detects_conflicts(svc):
    body = {"name": "again", "owner": "alice"}
    first = call(svc, "POST", "/project", body, **{"Idempotency-Key": "k1"})
    second = call(svc, "POST", "/project", body, **{"Idempotency-Key": "k1"})
    assert first == second
    assert len(svc.platform.warehouse.projects) == 2
    status, resp = call(svc, "POST", "/project", {"name": "other", "owner": "alice"}, **{"Idempotency-Key": "k1"})
    assert status == 409
    # keys survive a restart
    again = Service(Platform(svc.platform.root))
    assert call(again, "POST", "/project", body, **{"Idempotency-Key": "k1"}) == first


def test_restart_reproduces_queries(svc):
    call(svc, "POST", "/task", {"project": "p000001", "app": "a000001", "bindings": {"t1": "d000001"}})
    call(svc, "POST", "/tick", {"count": 3})
    before = [call(svc, "GET", p)[1] for p in ("/project", "/data?project=p000001", "/task/t000001", "/resource")]
    again = Service(Platform(svc.platform.root))
    after = [call(again, "GET", p)[1] for p in ("/project", "/data?project=p000001", "/task/t000001", "/resource")]
    assert before == after


def test_reproduce_endpoint_matches_library(svc):
    call(svc, "POST", "/task", {"project": "p000001", "app": "a000001", "bindings": {"t1": "d000001"}})
    call(svc, "POST", "/tick", {"count": 3})
    assert call(svc, "GET", "/reproduce/d000002")[1]["data"] == svc.platform.provenance.emit_reproduce_script("d000002")


def test_cli_and_api_have_identical_effects(tmp_path, capsys):
    cli_root, api_root = tmp_path / "cli", tmp_path / "api"
    main(["--root", str(cli_root), "project", "create", "--name", "s1", "--owner", "alice"])
    main(["--root", str(cli_root), "datatype", "register", "raw/t1", "--required", "t1.nii.gz"])
    main(["--root", str(cli_root), "datatype", "register", "neuro/mask", "--required", "mask.nii.gz"])
    svc_dir = _service_dir(cli_root, tmp_path / "svc")
    main(["--root", str(cli_root), "app", "register", svc_dir])
    main(["--root", str(cli_root), "resource", "register", "r1"])
    main(["--root", str(cli_root), "resource", "enable", "r1", "a000001", "--score", "5"])
    up = tmp_path / "up"
    up.mkdir()
    (up / "t1.nii.gz").write_text("img")
    main(["--root", str(cli_root), "data", "upload", "--project", "p000001", "--datatype", "raw/t1", "--subject", "s01", str(up)])
    main(["--root", str(cli_root), "task", "submit", "--project", "p000001", "--app", "a000001", "--bind", "t1=d000001"])
    main(["--root", str(cli_root), "tick", "--count", "3"])
    capsys.readouterr()

    api = Service(Platform(api_root))
    call(api, "POST", "/project", {"name": "s1", "owner": "alice"})
    call(api, "POST", "/datatype", {"name": "raw/t1", "file_spec": [{"pattern": "t1.nii.gz", "required": True}]})
    call(api, "POST", "/datatype", {"name": "neuro/mask", "file_spec": [{"pattern": "mask.nii.gz", "required": True}]})
    call(api, "POST", "/app", {"service_dir": svc_dir})
    call(api, "POST", "/resource", {"id": "r1", "name": "r1", "kind": "shared", "backend": {"type": "local"}})
    call(api, "POST", "/resource/r1/enable", {"service": "a000001", "score": 5})
    call(api, "POST", "/data", {"project": "p000001", "datatype": "raw/t1", "subject": "s01", "path": str(up)})
    call(api, "POST", "/task", {"project": "p000001", "app": "a000001", "bindings": {"t1": "d000001"}})
    call(api, "POST", "/tick", {"count": 3})

    cli = Platform(cli_root)
    api_plat = Platform(api_root)
    strip = lambda d: {k: v for k, v in d.items() if k != "work_dir"}
    assert [p.to_dict() for p in cli.warehouse.list_projects()] == [p.to_dict() for p in api_plat.warehouse.list_projects()]
    assert {k: o.to_dict() for k, o in cli.warehouse.objects.items()} == {k: o.to_dict() for k, o in api_plat.warehouse.objects.items()}
    assert [strip(t.to_dict()) for t in cli.orchestrator.tasks.values()] == [strip(t.to_dict()) for t in api_plat.orchestrator.tasks.values()]
    assert [t.to_dict() for t in cli.orchestrator.trace] == [t.to_dict() for t in api_plat.orchestrator.trace]


def test_http_transport_round_trip(tmp_path):
    server, service = make_server(Platform(tmp_path / "root"), "127.0.0.1", 0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}/api/v1"
    try:
        req = urllib.request.Request(base + "/project", data=b'{"name": "s", "owner": "a"}', method="POST", headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req) as resp:
            assert resp.status == 200 and json.loads(resp.read())["data"]["id"] == "p000001"
        with pytest.raises(urllib.error.HTTPError) as exc:
            urllib.request.urlopen(base + "/object/d000404")
        assert exc.value.code == 404 and json.loads(exc.value.read())["ok"] is False
    finally:
        server.shutdown()
        server.server_close()


def test_scheduler_loop_advances_clock(tmp_path):
    service = Service(Platform(tmp_path / "root"))
    service.start_scheduler(0.01)
    try:
        import time

        deadline = time.time() + 5
        while service.platform.clock.now() < 3 and time.time() < deadline:
            time.sleep(0.01)
    finally:
        service.stop_scheduler()
    assert service.platform.clock.now() >= 3
