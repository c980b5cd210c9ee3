"""Operations shared by the command line and the HTTP service.

Every operation takes the platform and a parameter mapping and returns
JSON-serializable data, so both transports have identical effects.
"""

from __future__ import annotations

import json
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Any, Callable

from .analytics import ReferenceRange, TidyTable, build_reference, classify_band, collate_features
from .errors import ValidationError
from .platform import Platform

OPERATIONS: dict[str, Callable[[Platform, dict], Any]] = {}
MUTATING: set[str] = set()


def operation(name: str, mutating: bool = True):
    def wrap(fn):
        OPERATIONS[name] = fn
        if mutating:
            MUTATING.add(name)
        return fn

    return wrap


def to_jsonable(obj):
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if is_dataclass(obj):
        return to_jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {k: to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def run(platform: Platform, name: str, params: dict | None = None):
    try:
        fn = OPERATIONS[name]
    except KeyError:
        raise ValidationError(f"unknown operation {name!r}") from None
    result = to_jsonable(fn(platform, dict(params or {})))
    if name in MUTATING:
        platform.checkpoint()
    return result


def _req(params: dict, key: str):
    value = params.get(key)
    if value is None or value == "":
        raise ValidationError(f"missing parameter {key!r}")
    return value


def _list(value) -> list:
    if value is None:
        return []
    if isinstance(value, str):
        return [v for v in value.split(",") if v]
    return list(value)


def _mapping(value) -> dict:
    if value is None:
        return {}
    if isinstance(value, str):
        return json.loads(value)
    return dict(value)


# -- warehouse ---------------------------------------------------------------


@operation("project.create")
def project_create(p: Platform, a: dict):
    return p.warehouse.create_project(
        a.get("owner", ""),
        a.get("name", ""),
        avoid_public_resources=bool(a.get("avoid_public_resources", False)),
        dua_text=a.get("dua_text"),
    )


@operation("project.list", mutating=False)
def project_list(p: Platform, a: dict):
    return p.warehouse.list_projects()


@operation("datatype.register")
def datatype_register(p: Platform, a: dict):
    spec = a.get("file_spec") or []
    if isinstance(spec, str):
        spec = json.loads(spec) if spec.startswith("[") else _list(spec)
    return p.warehouse.register_datatype(
        _req(a, "name"),
        spec,
        is_statistical_feature=bool(a.get("is_statistical_feature", False)),
        bids_compatible=bool(a.get("bids_compatible", False)),
        features=_mapping(a.get("features")) or None,
    )


@operation("datatype.list", mutating=False)
def datatype_list(p: Platform, a: dict):
    return [d for _, d in sorted(p.warehouse.datatypes.items())]


@operation("data.upload")
def data_upload(p: Platform, a: dict):
    files = a.get("files") or _req(a, "path")
    return p.warehouse.archive_object(
        _req(a, "project"),
        _req(a, "datatype"),
        files,
        tags=_list(a.get("tags")),
        datatype_tags=_list(a.get("datatype_tags")),
        subject=_req(a, "subject"),
        session=a.get("session"),
    )


@operation("data.query", mutating=False)
def data_query(p: Platform, a: dict):
    return p.warehouse.query_objects(
        _req(a, "project"),
        a.get("datatype"),
        _list(a.get("include_tags")),
        _list(a.get("exclude_tags")),
        a.get("subject"),
    )


@operation("data.get", mutating=False)
def data_get(p: Platform, a: dict):
    return p.warehouse.get_object(_req(a, "id"))


@operation("data.fetch", mutating=False)
def data_fetch(p: Platform, a: dict):
    dest = p.warehouse.fetch_object(_req(a, "id"), _req(a, "dest"))
    return {"id": a["id"], "dest": str(dest)}


# -- apps and resources ------------------------------------------------------


@operation("app.register")
def app_register(p: Platform, a: dict):
    if a.get("service_dir"):
        return p.registry.register_app(a["service_dir"])
    return p.registry.register_app(_mapping(a.get("descriptor")) or a)


@operation("app.list", mutating=False)
def app_list(p: Platform, a: dict):
    return p.registry.list_apps()


@operation("resource.register")
def resource_register(p: Platform, a: dict):
    desc = {k: v for k, v in a.items() if v is not None}
    if "backend" in desc:
        desc["backend"] = _mapping(desc["backend"])
    if "enabled_services" in desc:
        desc["enabled_services"] = _mapping(desc["enabled_services"])
    return p.broker.register_resource(desc)


@operation("resource.enable")
def resource_enable(p: Platform, a: dict):
    return p.broker.enable_service(_req(a, "id"), _req(a, "service"), int(_req(a, "score")))


@operation("resource.list", mutating=False)
def resource_list(p: Platform, a: dict):
    return p.broker.list_resources()


@operation("resource.monitor")
def resource_monitor(p: Platform, a: dict):
    return {"id": a["id"], "status": p.broker.monitor_resource(_req(a, "id"))}


# -- tasks -------------------------------------------------------------------


@operation("instance.create")
def instance_create(p: Platform, a: dict):
    return p.orchestrator.create_instance(_req(a, "project"), a.get("label", ""))


@operation("task.submit")
def task_submit(p: Platform, a: dict):
    instance = a.get("instance")
    if not instance:
        instance = p.orchestrator.create_instance(_req(a, "project")).id
    return p.orchestrator.submit_task(
        instance,
        _req(a, "app"),
        _mapping(a.get("config")),
        _mapping(a.get("bindings")),
        _list(a.get("deps")),
        a.get("preferred_resource"),
        user=a.get("user"),
    )


@operation("task.status", mutating=False)
def task_status(p: Platform, a: dict):
    return p.orchestrator.get_task(_req(a, "id"))


@operation("task.stop")
def task_stop(p: Platform, a: dict):
    return p.orchestrator.stop_task(_req(a, "id"))


@operation("task.events", mutating=False)
def task_events(p: Platform, a: dict):
    return p.orchestrator.task_events(_req(a, "id"))


@operation("tick")
def tick(p: Platform, a: dict):
    transitions = p.tick(int(a.get("count", 1)))
    return {"now": p.clock.now(), "transitions": transitions}


# -- pipelines ---------------------------------------------------------------


@operation("rule.define")
def rule_define(p: Platform, a: dict):
    return p.pipelines.define_rule(
        _req(a, "project"),
        _req(a, "app"),
        _mapping(_req(a, "selectors")),
        _mapping(a.get("config")),
        _list(a.get("output_tags")),
        a.get("name", ""),
    )


@operation("rule.run")
def rule_run(p: Platform, a: dict):
    return p.pipelines.run_rules(_req(a, "project"), int(a.get("ticks", 1)))


@operation("rule.rearm")
def rule_rearm(p: Platform, a: dict):
    return {"rearmed": p.pipelines.rearm(_req(a, "rule"), _req(a, "subject"))}


@operation("rule.list", mutating=False)
def rule_list(p: Platform, a: dict):
    return p.pipelines.list_rules(a.get("project"))


# -- provenance --------------------------------------------------------------


@operation("reproduce", mutating=False)
def reproduce(p: Platform, a: dict):
    return p.provenance.emit_reproduce_script(_req(a, "object"))


@operation("provenance.graph", mutating=False)
def provenance_graph(p: Platform, a: dict):
    graph = p.provenance.provenance_graph(_req(a, "object"))
    return graph.to_dot() if a.get("format") == "dot" else graph.to_dict()


@operation("pub.create")
def pub_create(p: Platform, a: dict):
    return p.provenance.create_publication(
        _req(a, "project"), _list(a.get("objects")), _list(a.get("apps")), _list(a.get("notebooks")), a.get("title", "")
    )


# -- reduce ------------------------------------------------------------------


@operation("collate")
def collate(p: Platform, a: dict):
    out_dir = a.get("out_dir") or str(p.root / "reduce" / _req(a, "project"))
    table = collate_features(
        p.warehouse,
        _req(a, "project"),
        _list(a.get("datatypes")) or None,
        provenance=p.provenance,
        out_dir=out_dir,
        stem=a.get("stem", "features"),
        strict=bool(a.get("strict", False)),
    )
    stem = a.get("stem", "features")
    return {
        "rows": len(table),
        "tsv": str(Path(out_dir) / f"{stem}.tsv"),
        "sidecar": str(Path(out_dir) / f"{stem}.json"),
        "sources": len(table.sources),
        "diagnostics": table.diagnostics,
    }


@operation("reference.build")
def reference_build(p: Platform, a: dict):
    if a.get("table"):
        table = TidyTable.from_tsv(Path(a["table"]).read_text())
    else:
        table = collate_features(p.warehouse, _req(a, "project"), _list(a.get("datatypes")) or None, provenance=p.provenance)
    out = a.get("out") or str(p.root / "reference" / f"{a.get('source', 'reference')}.json")
    ref = build_reference(table, a.get("source", ""), float(a.get("k", 2.0)), out)
    return {"path": out, "reference": ref.to_dict()}


@operation("reference.classify", mutating=False)
def reference_classify(p: Platform, a: dict):
    ref = ReferenceRange.load(_req(a, "reference"))
    entry = ref.entry(_req(a, "structure"), _req(a, "measure"))
    value = float(_req(a, "value"))
    return {"value": value, "mean": entry.mean, "sd": entry.sd, "band": classify_band(value, entry.mean, entry.sd).value}


# -- simulation --------------------------------------------------------------


@operation("sim.run", mutating=False)
def sim_run(p: Platform, a: dict):
    from .sim import run_scenario

    spec = a.get("scenario")
    if isinstance(spec, str):
        spec = json.loads(Path(spec).read_text())
    metrics = run_scenario(spec, a.get("root"))
    return metrics.to_dict(with_trace=bool(a.get("trace", False)))
