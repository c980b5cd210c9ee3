"""Command-line interface: ``wfhub <group> <action> [options]``."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import ops
from .errors import WfHubError
from .platform import Platform, PlatformConfig


def _json_arg(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"invalid JSON: {exc}") from None


def _kv(items: list[str] | None) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wfhub", description="Data-aware workflow orchestration.")
    parser.add_argument("--root", default=None, help="platform state directory (default: $WFHUB_ROOT or ./wfhub-data)")
    parser.add_argument("--config", default=None, help="platform config JSON")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    groups = parser.add_subparsers(dest="group", required=True)

    def group(name, help_text):
        sub = groups.add_parser(name, help=help_text).add_subparsers(dest="action", required=True)
        return sub

    g = group("project", "manage projects")
    p = g.add_parser("create")
    p.add_argument("--name", required=True)
    p.add_argument("--owner", required=True)
    p.add_argument("--avoid-public-resources", action="store_true")
    p.add_argument("--dua-text")
    g.add_parser("list")

    g = group("datatype", "manage datatypes")
    p = g.add_parser("register")
    p.add_argument("name")
    p.add_argument("--required", action="append", default=[], metavar="PATTERN")
    p.add_argument("--optional", action="append", default=[], metavar="PATTERN")
    p.add_argument("--statistical-feature", action="store_true")
    p.add_argument("--bids", action="store_true")
    p.add_argument("--features", type=_json_arg, help="feature layout JSON")
    g.add_parser("list")

    g = group("data", "upload and query data objects")
    p = g.add_parser("upload")
    p.add_argument("--project", required=True)
    p.add_argument("--datatype", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--session")
    p.add_argument("--tag", action="append", default=[])
    p.add_argument("--datatype-tag", action="append", default=[])
    p.add_argument("path")
    p = g.add_parser("query")
    p.add_argument("--project", required=True)
    p.add_argument("--datatype")
    p.add_argument("--subject")
    p.add_argument("--tag", action="append", default=[])
    p.add_argument("--exclude-tag", action="append", default=[])
    p = g.add_parser("get")
    p.add_argument("id")
    p = g.add_parser("fetch")
    p.add_argument("id")
    p.add_argument("dest")

    g = group("app", "register and list apps")
    p = g.add_parser("register")
    p.add_argument("service_dir", help="directory holding app.json and the hooks")
    g.add_parser("list")

    g = group("resource", "manage compute resources")
    p = g.add_parser("register")
    p.add_argument("id")
    p.add_argument("--name")
    p.add_argument("--kind", default="shared", choices=["shared", "private", "public"])
    p.add_argument("--owner")
    p.add_argument("--backend", type=_json_arg, default={"type": "local"})
    p = g.add_parser("enable")
    p.add_argument("id")
    p.add_argument("service")
    p.add_argument("--score", type=int, required=True)
    g.add_parser("list")
    p = g.add_parser("monitor")
    p.add_argument("id")

    g = group("task", "submit and control tasks")
    p = g.add_parser("submit")
    p.add_argument("--project")
    p.add_argument("--instance")
    p.add_argument("--app", required=True)
    p.add_argument("--bind", action="append", default=[], metavar="SLOT=OBJECT")
    p.add_argument("--config", dest="task_config", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--dep", action="append", default=[])
    p.add_argument("--prefer", dest="preferred_resource")
    p.add_argument("--user")
    p = g.add_parser("status")
    p.add_argument("id")
    p = g.add_parser("stop")
    p.add_argument("id")
    p = g.add_parser("events")
    p.add_argument("id")

    p = groups.add_parser("tick", help="advance the scheduler")
    p.add_argument("--count", type=int, default=1)

    g = group("rule", "pipeline rules")
    p = g.add_parser("define")
    p.add_argument("--project", required=True)
    p.add_argument("--app", required=True)
    p.add_argument("--select", action="append", required=True, metavar="SLOT=DATATYPE[:tag,tag]")
    p.add_argument("--config", dest="task_config", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--output-tag", action="append", default=[])
    p.add_argument("--name", default="")
    p = g.add_parser("run")
    p.add_argument("--project", required=True)
    p.add_argument("--ticks", type=int, default=1)
    p = g.add_parser("rearm")
    p.add_argument("rule")
    p.add_argument("subject")
    p = g.add_parser("list")
    p.add_argument("--project")

    g = group("reference", "reference ranges")
    p = g.add_parser("build")
    p.add_argument("--project")
    p.add_argument("--table", help="tidy TSV; collated from the project when omitted")
    p.add_argument("--source", required=True)
    p.add_argument("--k", type=float, default=2.0)
    p.add_argument("--out")
    p = g.add_parser("classify")
    p.add_argument("--reference", required=True)
    p.add_argument("--structure", required=True)
    p.add_argument("--measure", required=True)
    p.add_argument("value", type=float)

    p = groups.add_parser("collate", help="collate statistical features into a tidy table")
    p.add_argument("--project", required=True)
    p.add_argument("--datatype", action="append", default=[])
    p.add_argument("--out-dir")
    p.add_argument("--strict", action="store_true")

    p = groups.add_parser("reproduce", help="print a replay script for an object")
    p.add_argument("object")

    p = groups.add_parser("provenance", help="print the provenance graph of an object")
    p.add_argument("object")
    p.add_argument("--format", choices=["json", "dot"], default="json")

    g = group("pub", "publications")
    p = g.add_parser("create")
    p.add_argument("--project", required=True)
    p.add_argument("--object", action="append", required=True)
    p.add_argument("--app", action="append", default=[])
    p.add_argument("--notebook", action="append", default=[])
    p.add_argument("--title", default="")

    g = group("sim", "simulation")
    p = g.add_parser("run")
    p.add_argument("scenario")
    p.add_argument("--sim-root", help="directory for the simulated world")
    p.add_argument("--trace", action="store_true")

    p = groups.add_parser("serve", help="run the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    return parser


def _selectors(items: list[str]) -> dict:
    out = {}
    for item in items:
        slot, sep, rest = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected SLOT=DATATYPE, got {item!r}")
        datatype, _, tags = rest.partition(":")
        out[slot] = {"datatype": datatype, "include_tags": [t for t in tags.split(",") if t]}
    return out


def to_operation(args: argparse.Namespace) -> tuple[str, dict]:
    """Map parsed arguments onto an operation name and parameters."""
    g, a = args.group, getattr(args, "action", None)
    if g == "project" and a == "create":
        return "project.create", {
            "name": args.name,
            "owner": args.owner,
            "avoid_public_resources": args.avoid_public_resources,
            "dua_text": args.dua_text,
        }
    if g == "datatype" and a == "register":
        spec = [{"pattern": x, "required": True} for x in args.required]
        spec += [{"pattern": x, "required": False} for x in args.optional]
        return "datatype.register", {
            "name": args.name,
            "file_spec": spec,
            "is_statistical_feature": args.statistical_feature,
            "bids_compatible": args.bids,
            "features": args.features,
        }
    if g == "data" and a == "upload":
        return "data.upload", {
            "project": args.project,
            "datatype": args.datatype,
            "subject": args.subject,
            "session": args.session,
            "tags": args.tag,
            "datatype_tags": args.datatype_tag,
            "path": args.path,
        }
    if g == "data" and a == "query":
        return "data.query", {
            "project": args.project,
            "datatype": args.datatype,
            "subject": args.subject,
            "include_tags": args.tag,
            "exclude_tags": args.exclude_tag,
        }
    if g == "data" and a == "fetch":
        return "data.fetch", {"id": args.id, "dest": args.dest}
    if g == "app" and a == "register":
        return "app.register", {"service_dir": args.service_dir}
    if g == "resource" and a == "register":
        return "resource.register", {
            "id": args.id,
            "name": args.name or args.id,
            "kind": args.kind,
            "owner": args.owner,
            "backend": args.backend,
        }
    if g == "resource" and a == "enable":
        return "resource.enable", {"id": args.id, "service": args.service, "score": args.score}
    if g == "task" and a == "submit":
        return "task.submit", {
            "project": args.project,
            "instance": args.instance,
            "app": args.app,
            "bindings": _kv(args.bind),
            "config": _kv(args.task_config),
            "deps": args.dep,
            "preferred_resource": args.preferred_resource,
            "user": args.user,
        }
    if g == "tick":
        return "tick", {"count": args.count}
    if g == "rule" and a == "define":
        return "rule.define", {
            "project": args.project,
            "app": args.app,
            "selectors": _selectors(args.select),
            "config": _kv(args.task_config),
            "output_tags": args.output_tag,
            "name": args.name,
        }
    if g == "rule" and a == "run":
        return "rule.run", {"project": args.project, "ticks": args.ticks}
    if g == "rule" and a == "rearm":
        return "rule.rearm", {"rule": args.rule, "subject": args.subject}
    if g == "rule" and a == "list":
        return "rule.list", {"project": args.project}
    if g == "reference" and a == "build":
        return "reference.build", {
            "project": args.project,
            "table": args.table,
            "source": args.source,
            "k": args.k,
            "out": args.out,
        }
    if g == "reference" and a == "classify":
        return "reference.classify", {
            "reference": args.reference,
            "structure": args.structure,
            "measure": args.measure,
            "value": args.value,
        }
    if g == "collate":
        return "collate", {
            "project": args.project,
            "datatypes": args.datatype,
            "out_dir": args.out_dir,
            "strict": args.strict,
        }
    if g == "reproduce":
        return "reproduce", {"object": args.object}
    if g == "provenance":
        return "provenance.graph", {"object": args.object, "format": args.format}
    if g == "pub" and a == "create":
        return "pub.create", {
            "project": args.project,
            "objects": args.object,
            "apps": args.app,
            "notebooks": args.notebook,
            "title": args.title,
        }
    if g == "sim" and a == "run":
        return "sim.run", {"scenario": args.scenario, "root": args.sim_root, "trace": args.trace}
    # plain lookups: list / get / status / stop / events / monitor
    params = {"id": args.id} if hasattr(args, "id") else {}
    return f"{g}.{a}", params


def _human(data) -> str:
    if isinstance(data, str):
        return data if data.endswith("\n") else data + "\n"
    if isinstance(data, list):
        lines = []
        for item in data:
            if isinstance(item, dict):
                key = item.get("id") or item.get("name") or item.get("doi")
                rest = {k: v for k, v in item.items() if k in ("name", "state", "datatype", "subject", "kind", "status")}
                lines.append(f"{key}\t" + "\t".join(f"{k}={v}" for k, v in rest.items() if v != key))
            else:
                lines.append(str(item))
        return "\n".join(lines) + ("\n" if lines else "")
    if isinstance(data, dict):
        return "".join(f"{k}: {json.dumps(v) if isinstance(v, (dict, list)) else v}\n" for k, v in data.items())
    return f"{data}\n"


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    root = args.root or os.environ.get("WFHUB_ROOT") or "wfhub-data"
    config = PlatformConfig.load(args.config) if args.config else None
    try:
        platform = Platform(root, config)
        if args.group == "serve":
            from .service import serve

            serve(platform, args.host, args.port)
            return 0
        name, params = to_operation(args)
        data = ops.run(platform, name, params)
    except WfHubError as exc:
        if args.json:
            print(json.dumps({"ok": False, "error": exc.to_dict()}, sort_keys=True), file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
            for reason in getattr(exc, "reasons", None) or getattr(exc, "violations", None) or []:
                print(f"  {reason}", file=sys.stderr)
        return 1
    except (OSError, ValueError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if name == "reproduce" and not args.json:
        sys.stdout.write(data)
    elif args.json:
        print(json.dumps({"ok": True, "data": data}, indent=2, sort_keys=True))
    else:
        sys.stdout.write(_human(data))
    return 0


if __name__ == "__main__":
    sys.exit(main())
