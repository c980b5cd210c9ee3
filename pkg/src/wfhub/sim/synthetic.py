"""Deterministic synthetic apps for tests and scenarios."""

from __future__ import annotations

import os
import shutil
from collections.abc import Mapping, Sequence
from pathlib import Path

from .._util import atomic_write_json
from ..apps import HOOKS, App, AppRegistry
from ..warehouse import Warehouse
from . import hook as _hook

HOOK_SOURCE = Path(_hook.__file__)
DEFAULT_STRUCTURES = ("left_cortex", "right_cortex")
DEFAULT_MEASURES = ("volume",)


def _slot(entry, used: set[str]) -> dict:
    if isinstance(entry, Mapping):
        d = dict(entry)
        d.setdefault("id", d.get("slot_id") or d["datatype"].rsplit("/", 1)[-1])
    else:
        d = {"id": entry.rsplit("/", 1)[-1], "datatype": entry}
    base, n = d["id"], 1
    while d["id"] in used:
        n += 1
        d["id"] = f"{base}{n}"
    used.add(d["id"])
    return d


def _literal(pattern: str) -> str:
    return pattern.rstrip("/").replace("**", "x").replace("*", "x").replace("?", "x")


def write_service(
    service_dir: str | os.PathLike,
    descriptor: dict,
    warehouse: Warehouse,
    features: Mapping | None = None,
) -> Path:
    """Lay out a service directory: three hooks, ``synthetic.json`` and ``app.json``."""
    service_dir = Path(service_dir)
    service_dir.mkdir(parents=True, exist_ok=True)
    source = HOOK_SOURCE.read_bytes()
    for name in HOOKS:
        path = service_dir / name
        path.write_bytes(source)
        path.chmod(0o755)
    outputs = []
    for slot in descriptor["outputs"]:
        dt = warehouse.get_datatype(slot["datatype"])
        files = [_literal(s.pattern) for s in dt.file_spec if s.required]
        entry = {"slot": slot["id"], "files": files}
        if dt.is_statistical_feature:
            layout = dict(dt.features or {})
            layout.setdefault("file", files[0])
            layout.setdefault("structures", list((features or {}).get("structures", DEFAULT_STRUCTURES)))
            layout.setdefault("measures", list((features or {}).get("measures", DEFAULT_MEASURES)))
            entry["features"] = layout
        outputs.append(entry)
    atomic_write_json(service_dir / "synthetic.json", {"app": descriptor["name"], "version": descriptor["version"], "outputs": outputs})
    atomic_write_json(service_dir / "app.json", descriptor)
    return service_dir


def make_synthetic_app(
    registry: AppRegistry,
    name: str,
    inputs: Sequence = (),
    outputs: Sequence = (),
    *,
    service_root: str | os.PathLike,
    version: str = "1.0",
    config_schema: Sequence = (),
    features: Mapping | None = None,
) -> App:
    """Create a service directory under ``service_root`` and register it."""
    used: set[str] = set()
    ins = [_slot(e, used) for e in inputs]
    used = set()
    outs = [_slot(e, used) for e in outputs]
    service_dir = Path(service_root) / name
    if service_dir.exists():
        shutil.rmtree(service_dir)
    descriptor = {
        "name": name,
        "version": version,
        "inputs": ins,
        "outputs": outs,
        "config": [
            {"key": "synthetic_polls", "type": "integer", "default": 0},
            {"key": "synthetic_fail", "type": "boolean", "default": False},
            *config_schema,
        ],
    }
    write_service(service_dir, descriptor, registry.warehouse, features)
    return registry.register_app(service_dir)
