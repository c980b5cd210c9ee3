"""Lineage capture, provenance graphs, reproduce scripts and publication records."""

from __future__ import annotations

import os
import shlex
import threading
from collections.abc import Iterable
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ._util import JsonlLog, Sequence, atomic_write_json, canonical_json, read_json
from .apps import AppRegistry
from .errors import ConflictError, NotFoundError, ValidationError
from .warehouse import Warehouse

PUB_DOI_PREFIX = "10.25663/sim.pub."
HEREDOC_MARK = "WFHUB_CONFIG_EOF"


@dataclass
class ProvenanceRecord:
    object: str
    task: str
    app: str
    app_version: str
    service_ref: str
    service_digest: str
    config: dict
    config_json: dict
    inputs: dict[str, str]
    output_slot: str
    resource: str | None
    instance: str
    timestamps: dict[str, int] = field(default_factory=dict)

    @property
    def input_objects(self) -> list[str]:
        return sorted(set(self.inputs.values()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_objects"] = self.input_objects
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProvenanceRecord":
        d = {k: v for k, v in d.items() if k != "input_objects"}
        return cls(**d)


@dataclass
class PublicationRecord:
    doi: str
    project: str
    objects: list[str]
    apps: list[str]
    notebooks: list[str]
    created_at: int
    title: str = ""
    manifest_path: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Graph:
    nodes: list[dict]
    edges: list[dict]

    def to_dict(self) -> dict:
        return {"nodes": self.nodes, "edges": self.edges}

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def to_dot(self) -> str:
        lines = ["digraph provenance {", "  rankdir=LR;"]
        for n in self.nodes:
            shape = "box" if n["kind"] == "task" else "ellipse"
            lines.append(f'  "{n["id"]}" [shape={shape}];')
        for e in self.edges:
            lines.append(f'  "{e["from"]}" -> "{e["to"]}" [label="{e["label"]}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def task_ids(self) -> list[str]:
        return [n["id"] for n in self.nodes if n["kind"] == "task"]


class ProvenanceStore:
    def __init__(self, root: str | os.PathLike, warehouse: Warehouse, registry: AppRegistry):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.warehouse = warehouse
        self.registry = registry
        self._lock = threading.Lock()
        self._log = JsonlLog(self.root / "provenance.jsonl")
        self.records: dict[str, ProvenanceRecord] = {}
        for d in self._log.read():
            rec = ProvenanceRecord.from_dict(d)
            self.records[rec.object] = rec
        state = read_json(self.root / "publications.json", {"counter": 0, "publications": []})
        self._pub_counter = state["counter"]
        self.publications: dict[str, PublicationRecord] = {
            p["doi"]: PublicationRecord(**p) for p in state["publications"]
        }

    # -- capture -----------------------------------------------------------

    def record_task_provenance(self, task, produced: Iterable) -> list[ProvenanceRecord]:
        app = self.registry.get_app(task.app)
        slot_of = {oid: slot for slot, oid in task.outputs.items()}
        config_path = Path(task.work_dir) / "config.json"
        config_json = read_json(config_path, {})
        out = []
        with self._lock:
            for obj in produced:
                if obj.id in self.records:
                    raise ConflictError(f"object {obj.id} already has a provenance record")
                rec = ProvenanceRecord(
                    object=obj.id,
                    task=task.id,
                    app=app.id,
                    app_version=app.version,
                    service_ref=app.service_ref,
                    service_digest=task.service_digest or app.service_digest,
                    config=dict(task.config),
                    config_json=config_json,
                    inputs=dict(task.inputs),
                    output_slot=slot_of.get(obj.id, ""),
                    resource=task.resource,
                    instance=task.instance,
                    timestamps=dict(task.timestamps),
                )
                self._log.append(rec.to_dict())
                self.records[obj.id] = rec
                out.append(rec)
        return out

    def is_root(self, object_id: str) -> bool:
        self.warehouse.get_object(object_id)
        return object_id not in self.records

    # -- graph -------------------------------------------------------------

    def provenance_graph(self, object_id: str) -> Graph:
        self.warehouse.get_object(object_id)
        nodes: dict[str, str] = {}
        edges: set[tuple[str, str, str]] = set()
        stack = [object_id]
        while stack:
            oid = stack.pop()
            if oid in nodes:
                continue
            nodes[oid] = "object"
            rec = self.records.get(oid)
            if rec is None:
                continue
            nodes[rec.task] = "task"
            edges.add((oid, rec.task, "produced_by"))
            for iid in rec.input_objects:
                edges.add((iid, rec.task, "input_to"))
                stack.append(iid)
        return Graph(
            nodes=[{"id": n, "kind": nodes[n]} for n in sorted(nodes)],
            edges=[{"from": a, "to": b, "label": lbl} for a, b, lbl in sorted(edges)],
        )

    def _task_records(self, graph: Graph) -> dict[str, ProvenanceRecord]:
        """One representative record per task (records of one task share task fields)."""
        out: dict[str, ProvenanceRecord] = {}
        for rec in sorted(self.records.values(), key=lambda r: r.object):
            out.setdefault(rec.task, rec)
        return {t: out[t] for t in graph.task_ids()}

    def task_order(self, object_id: str) -> list[str]:
        """Ancestor tasks in topological order, ties broken by task id."""
        graph = self.provenance_graph(object_id)
        recs = self._task_records(graph)
        parents = {
            t: {self.records[i].task for i in rec.input_objects if i in self.records} for t, rec in recs.items()
        }
        order, done = [], set()
        while len(order) < len(recs):
            ready = sorted(t for t in recs if t not in done and parents[t] <= done)
            if not ready:
                raise ValidationError("provenance graph contains a cycle")
            order.append(ready[0])
            done.add(ready[0])
        return order

    # -- reproduce script --------------------------------------------------

    def emit_reproduce_script(self, object_id: str) -> str:
        target = self.warehouse.get_object(object_id)
        graph = self.provenance_graph(object_id)
        order = self.task_order(object_id)
        recs = self._task_records(graph)
        object_ids = [n["id"] for n in graph.nodes if n["kind"] == "object"]
        roots = [o for o in object_ids if o not in self.records]
        app_ids = sorted({recs[t].app for t in order})

        q = shlex.quote
        out = ["#!/bin/sh", f"# Reproduce data object {target.id} ({target.datatype}, subject {target.subject})", "#"]
        out.append("# Objects:")
        for oid in object_ids:
            obj = self.warehouse.get_object(oid)
            origin = f"produced by {self.records[oid].task}" if oid in self.records else "imported"
            out.append(f"#   {oid} {obj.datatype} {origin} {obj.content_hash}")
        out.append("# Apps:")
        for aid in app_ids:
            rec = next(recs[t] for t in order if recs[t].app == aid)
            app = self.registry.apps.get(aid)
            name = app.name if app else aid
            out.append(f"#   {aid} {name} version={rec.app_version} service_digest={rec.service_digest}")
        out += [
            "#",
            "# Resource choices are not pinned: every task is re-run in this directory.",
            "# Imported objects cannot be fetched automatically; place each archive at",
            "# $IMPORT_DIR/<objectID>.tar before running.  SERVICE_<appID> overrides where",
            "# an app's service source is copied from.",
            "",
            "set -u",
            'ROOT=$(pwd)',
            'IMPORT_DIR=${IMPORT_DIR:-"$ROOT/import"}',
            "POLL_INTERVAL=${POLL_INTERVAL:-1}",
        ]
        for aid in app_ids:
            rec = next(recs[t] for t in order if recs[t].app == aid)
            out.append(f"SERVICE_{aid}=${{SERVICE_{aid}:-{q(rec.service_ref)}}}")
        out += [
            "",
            'die() { echo "reproduce: $*" >&2; exit 1; }',
            "",
            "sha256_of() {",
            "  if command -v sha256sum >/dev/null 2>&1; then sha256sum \"$1\" | cut -d ' ' -f 1",
            "  else shasum -a 256 \"$1\" | cut -d ' ' -f 1; fi",
            "}",
            "",
            "import_object() {",
            '  tarball="$IMPORT_DIR/$1.tar"',
            '  [ -f "$tarball" ] || die "place imported object $1 at $tarball"',
            '  [ "$(sha256_of "$tarball")" = "$2" ] || die "imported object $1 does not match hash $2"',
            '  mkdir -p "$ROOT/import_data/$1" && tar -xf "$tarball" -C "$ROOT/import_data/$1" || die "cannot unpack $1"',
            "}",
            "",
            "run_task() {",
            '  cd "$1" || die "missing task directory $1"',
            '  ./start || die "$1: start failed"',
            "  while :; do",
            "    rc=0",
            "    ./status >/dev/null 2>&1 || rc=$?",
            "    case $rc in",
            '      1) break ;;',
            '      0|3) sleep "$POLL_INTERVAL" ;;',
            '      *) die "$1: status reported failure ($rc)" ;;',
            "    esac",
            "  done",
            '  cd "$ROOT" || exit 1',
            "}",
        ]
        for oid in roots:
            obj = self.warehouse.get_object(oid)
            out += ["", f"# --- imported {oid} ({obj.datatype}, subject {obj.subject}): manual placement"]
            if self.warehouse.digest == "sha256":
                out.append(f"import_object {oid} {obj.content_hash}")
            else:
                out.append(f"# recorded {self.warehouse.digest} digest: {obj.content_hash}")
                out.append(f"import_object {oid} \"$(sha256_of \"$IMPORT_DIR/{oid}.tar\")\"")
        for tid in order:
            rec = recs[tid]
            d = f'"$ROOT/{tid}"'
            out += [
                "",
                f"# --- task {tid}: app {rec.app} version {rec.app_version}",
                f'mkdir -p {d} || die "cannot create {tid}"',
                f'cp -R "$SERVICE_{rec.app}/." {d}/ || die "cannot copy service for {tid}"',
                f"cat > {d}/config.json <<'{HEREDOC_MARK}'",
                canonical_json(rec.config_json),
                HEREDOC_MARK,
            ]
            for slot, iid in sorted(rec.inputs.items()):
                src = f'"$ROOT/{self.records[iid].task}/outputs/{self.records[iid].output_slot}/."' if iid in self.records else f'"$ROOT/import_data/{iid}/."'
                out.append(f'mkdir -p {d}/inputs/{slot} && cp -R {src} {d}/inputs/{slot}/ || die "cannot stage {iid}"')
            out.append(f"run_task {d}")
        if target.id in self.records:
            rec = self.records[target.id]
            out += ["", f'echo "reproduced {target.id} in $ROOT/{rec.task}/outputs/{rec.output_slot}"']
        else:
            out += ["", f'echo "{target.id} is imported data; nothing to run"']
        return "\n".join(out) + "\n"

    # -- publications ------------------------------------------------------

    def _save_publications(self) -> None:
        atomic_write_json(
            self.root / "publications.json",
            {"counter": self._pub_counter, "publications": [p.to_dict() for p in self.publications.values()]},
        )

    def provenance_summary(self, object_id: str) -> dict:
        rec = self.records.get(object_id)
        if rec is None:
            return {"imported": True}
        return {
            "imported": False,
            "task": rec.task,
            "app": rec.app,
            "app_version": rec.app_version,
            "service_digest": rec.service_digest,
            "input_objects": rec.input_objects,
        }

    def create_publication(
        self,
        project: str,
        objects: Iterable[str],
        apps: Iterable[str] = (),
        notebooks: Iterable[str] = (),
        title: str = "",
    ) -> PublicationRecord:
        self.warehouse.get_project(project)
        objects, apps = list(dict.fromkeys(objects)), list(dict.fromkeys(apps))
        if not objects:
            raise ValidationError("a publication needs at least one object")
        for oid in objects:
            if self.warehouse.get_object(oid).project != project:
                raise ValidationError(f"object {oid} does not belong to project {project}")
        app_records = [self.registry.get_app(a) for a in apps]
        with self._lock:
            self._pub_counter += 1
            doi = f"{PUB_DOI_PREFIX}{self._pub_counter}"
            manifest_path = self.root / "publications" / f"pub.{self._pub_counter}.json"
            manifest = {
                "doi": doi,
                "project": project,
                "title": title,
                "created_at": self.warehouse.clock.now(),
                "objects": [
                    {**self.warehouse.get_object(o).to_dict(), "provenance": self.provenance_summary(o)} for o in objects
                ],
                "apps": [
                    {"id": a.id, "name": a.name, "version": a.version, "doi": a.doi, "service_digest": a.service_digest}
                    for a in app_records
                ],
                "notebooks": list(notebooks),
            }
            atomic_write_json(manifest_path, manifest)
            pub = PublicationRecord(
                doi=doi,
                project=project,
                objects=objects,
                apps=apps,
                notebooks=list(notebooks),
                created_at=manifest["created_at"],
                title=title,
                manifest_path=str(manifest_path),
            )
            self.publications[doi] = pub
            self._save_publications()
        return pub

    def get_publication(self, doi: str) -> PublicationRecord:
        try:
            return self.publications[doi]
        except KeyError:
            raise NotFoundError(f"publication {doi} not found") from None
