"""Builders shared across the test modules."""

from __future__ import annotations

import random

from pathlib import Path

from wfhub.broker import Resource, ScoringContext, ScoringOptions, ScoringRequest, score_resource, select_resource
from wfhub.errors import NoResourceError
from wfhub.platform import Platform
from wfhub.sim import SimProfile, make_sim_resource, make_synthetic_app

from oracles import brute_force_select


class World:
    """A project with a raw datatype and helpers for apps, resources and data."""

    def __init__(self, plat: Platform, service_root: Path, owner: str = "alice", **project_opts):
        self.plat = plat
        self.service_root = Path(service_root)
        self.owner = owner
        self.project = plat.warehouse.create_project(owner, "test", **project_opts).id
        plat.warehouse.register_datatype("raw/t1", [("t1.nii.gz", True)])

    def datatype(self, name, files=None, **kw):
        return self.plat.warehouse.register_datatype(name, files or [(f"{name.rsplit('/', 1)[-1]}.dat", True)], **kw)

    def app(self, name, inputs=(), outputs=(), **kw):
        for entry in list(inputs) + list(outputs):
            dt = entry["datatype"] if isinstance(entry, dict) else entry
            if dt not in self.plat.warehouse.datatypes:
                self.datatype(dt)
        return make_synthetic_app(self.plat.registry, name, inputs, outputs, service_root=self.service_root, **kw)

    def resource(self, rid, apps=(), score=5, kind="shared", owner=None, **profile):
        return make_sim_resource(
            self.plat.broker, rid, SimProfile(**profile), {a.id if hasattr(a, "id") else a: score for a in apps}, kind, owner
        )

    def raw(self, subject, payload=None, **kw):
        return self.plat.warehouse.archive_object(
            self.project, "raw/t1", {"t1.nii.gz": payload or f"{subject}\n"}, subject=subject, **kw
        )

    def instance(self, label=""):
        return self.plat.orchestrator.create_instance(self.project, label).id

    def run(self, ticks=10):
        for _ in range(ticks):
            self.plat.orchestrator.scheduler_tick(self.plat.clock.now() + 1)


def replay(plat: Platform, object_id: str, workdir: Path) -> dict[str, dict[str, str]]:
    """Run the reproduce script for ``object_id`` in a clean ``workdir``.

    Imported archives are copied from the warehouse into ``$IMPORT_DIR``; returns
    the per-file digests of every reproduced object, keyed by object id.
    """
    import os
    import shutil
    import subprocess

    from wfhub._util import tree_digests

    workdir = Path(workdir)
    workdir.mkdir(parents=True)
    imports = workdir.parent / f"{workdir.name}-imports"
    imports.mkdir()
    prov = plat.provenance
    graph = prov.provenance_graph(object_id)
    objects = [n["id"] for n in graph.nodes if n["kind"] == "object"]
    for oid in objects:
        if prov.is_root(oid):
            obj = plat.warehouse.get_object(oid)
            shutil.copy(plat.warehouse.root / obj.archive_path, imports / f"{oid}.tar")
    script = workdir / "reproduce.sh"
    script.write_text(prov.emit_reproduce_script(object_id))
    env = {**os.environ, "IMPORT_DIR": str(imports), "POLL_INTERVAL": "0"}
    proc = subprocess.run(["sh", str(script)], cwd=workdir, env=env, capture_output=True, text=True, timeout=60)
    if proc.returncode != 0:
        raise AssertionError(f"replay failed: {proc.stderr}")
    out = {}
    for oid in objects:
        rec = prov.records.get(oid)
        if rec is not None:
            out[oid] = tree_digests(workdir / rec.task / "outputs" / rec.output_slot)
    return out


def random_case(rnd: random.Random):
    n = rnd.randint(1, 6)
    users = ["alice", "bob"]
    resources = []
    for i in range(n):
        kind = rnd.choice(["public", "shared", "private"])
        scores = {"svc": rnd.randint(0, 20)} if rnd.random() < 0.8 else {}
        if rnd.random() < 0.3:
            scores["other"] = 3
        resources.append(
            {
                "id": f"r{rnd.randint(0, 9)}{i}",
                "kind": kind,
                "owner": rnd.choice(users) if kind == "private" else None,
                "status": "ok" if rnd.random() < 0.85 else "down",
                "scores": scores,
            }
        )
    deps = [f"t{j}" for j in range(rnd.randint(0, 4))]
    residency = {d: rnd.choice([r["id"] for r in resources] + [None]) for d in deps}
    return {
        "resources": resources,
        "deps": deps,
        "residency": residency,
        "user": rnd.choice(users + [None]),
        "preferred": rnd.choice([r["id"] for r in resources] + [None]),
        "avoid_public": rnd.random() < 0.4,
        "per_dependency": rnd.random() < 0.8,
    }


def run_case(case):
    resources = [
        Resource(id=r["id"], name=r["id"], kind=r["kind"], owner=r["owner"], status=r["status"], enabled_services=dict(r["scores"]))
        for r in case["resources"]
    ]
    request = ScoringRequest("t99", "svc", list(case["deps"]), case["preferred"])
    ctx = ScoringContext(case["user"], case["avoid_public"], case["residency"], ScoringOptions(per_dependency=case["per_dependency"]))
    try:
        winner, report = select_resource(request, resources, ctx)
    except NoResourceError:
        return None, {r.id: score_resource(request, r, ctx) for r in resources}
    return winner.id, {r.id: score_resource(request, r, ctx) for r in resources}


def check_case(case):
    expected, outcome = brute_force_select(
        "svc",
        case["resources"],
        deps=case["deps"],
        residency=case["residency"],
        user=case["user"],
        preferred=case["preferred"],
        avoid_public=case["avoid_public"],
        per_dependency=case["per_dependency"],
    )
    got, breakdowns = run_case(case)
    if got != expected:
        return False
    for rid, want in outcome.items():
        b = breakdowns[rid]
        if isinstance(want, str):
            if not b.disqualified or b.disqualify_reason != want:
                return False
        elif b.disqualified or b.total != want:
            return False
    return True
