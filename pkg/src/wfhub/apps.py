"""App registry: ABCD services with typed slots, DOI minting and smart docking."""

from __future__ import annotations

import os
import shutil
import threading
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ._util import Sequence, atomic_write_json, read_json, tree_digest
from .errors import ContractError, NotFoundError, SourceError, ValidationError
from .warehouse import DataObject, Warehouse

HOOKS = ("start", "status", "stop")
DOI_PREFIX = "10.25663/sim.app."
CONFIG_TYPES = {
    "string": str,
    "number": (int, float),
    "integer": int,
    "boolean": bool,
    "object": dict,
    "array": list,
}


@dataclass
class Slot:
    slot_id: str
    datatype: str
    required_datatype_tags: list[str] = field(default_factory=list)
    optional: bool = False

    @classmethod
    def from_dict(cls, d: Mapping) -> "Slot":
        return cls(
            slot_id=d.get("slot_id") or d["id"],
            datatype=d["datatype"],
            required_datatype_tags=list(d.get("required_datatype_tags", d.get("datatype_tags", []))),
            optional=bool(d.get("optional", False)),
        )

    def accepts(self, obj: DataObject) -> bool:
        return obj.datatype == self.datatype and set(self.required_datatype_tags) <= set(obj.datatype_tags)


@dataclass
class ConfigParam:
    key: str
    type: str = "string"
    default: object = None
    required: bool = False

    @classmethod
    def from_dict(cls, d) -> "ConfigParam":
        if not isinstance(d, Mapping):
            key, typ, *rest = d
            return cls(key, typ, rest[0] if rest else None, required=not rest)
        return cls(d["key"], d.get("type", "string"), d.get("default"), bool(d.get("required", False)))


@dataclass
class App:
    id: str
    name: str
    service_ref: str
    version: str
    input_slots: list[Slot]
    output_slots: list[Slot]
    config_schema: list[ConfigParam]
    doi: str
    service_digest: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "App":
        return cls(
            id=d["id"],
            name=d["name"],
            service_ref=d["service_ref"],
            version=d.get("version", "main"),
            input_slots=[Slot.from_dict(s) for s in d.get("input_slots", [])],
            output_slots=[Slot.from_dict(s) for s in d.get("output_slots", [])],
            config_schema=[ConfigParam.from_dict(c) for c in d.get("config_schema", [])],
            doi=d["doi"],
            service_digest=d.get("service_digest", ""),
        )

    def input_slot(self, slot_id: str) -> Slot:
        for s in self.input_slots:
            if s.slot_id == slot_id:
                return s
        raise ValidationError(f"app {self.id} has no input slot {slot_id!r}")

    def output_slot(self, slot_id: str) -> Slot:
        for s in self.output_slots:
            if s.slot_id == slot_id:
                return s
        raise ValidationError(f"app {self.id} has no output slot {slot_id!r}")

    def apply_config(self, config: Mapping | None) -> dict:
        """Fill defaults and type-check against the config schema."""
        out = dict(config or {})
        for param in self.config_schema:
            if param.key not in out:
                if param.default is None and param.required:
                    raise ValidationError(f"config key {param.key!r} is required")
                if param.default is not None:
                    out[param.key] = param.default
                continue
            want = CONFIG_TYPES.get(param.type)
            value = out[param.key]
            bad_type = want is not None and not isinstance(value, want)
            # bool is an int subclass
            if bad_type or (param.type in ("number", "integer") and isinstance(value, bool)):
                raise ValidationError(f"config key {param.key!r} must be {param.type}")
        bad = [k for k in out if k.startswith("_")]
        if bad:
            raise ValidationError(f"config keys may not start with '_': {bad}")
        return out


@dataclass
class DockingResult:
    verdict: str  # accepted | rejected | ambiguous
    bindings: dict[str, str] = field(default_factory=dict)
    reasons: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def check_docking(app: App, staged: Iterable[DataObject]) -> DockingResult:
    staged = sorted(staged, key=lambda o: o.id)
    if len({o.project for o in staged}) > 1:
        raise ValidationError("staged objects must belong to one project")
    bindings: dict[str, str] = {}
    reasons: list[str] = []
    rejected = ambiguous = False
    for slot in app.input_slots:
        hits = [o.id for o in staged if slot.accepts(o)]
        if len(hits) == 1:
            bindings[slot.slot_id] = hits[0]
        elif not hits:
            if not slot.optional:
                rejected = True
                reasons.append(f"slot {slot.slot_id}: no compatible object")
        else:
            reasons.append(f"slot {slot.slot_id}: {len(hits)} compatible objects ({', '.join(hits)})")
            if not slot.optional:
                ambiguous = True
    verdict = "rejected" if rejected else "ambiguous" if ambiguous else "accepted"
    return DockingResult(verdict, bindings, reasons)


def check_bindings(app: App, bindings: Mapping[str, str], objects: Mapping[str, DataObject | Slot]) -> DockingResult:
    """Docking for explicit bindings.

    ``objects`` maps each bound value to the object it names, or to the
    producing output slot when the value is a reference to a dependency's
    future output.
    """
    reasons = []
    known = {s.slot_id for s in app.input_slots}
    for slot_id in bindings:
        if slot_id not in known:
            reasons.append(f"slot {slot_id}: not an input of {app.id}")
    for slot in app.input_slots:
        value = bindings.get(slot.slot_id)
        if value is None:
            if not slot.optional:
                reasons.append(f"slot {slot.slot_id}: no compatible object")
            continue
        target = objects.get(value)
        if target is None:
            reasons.append(f"slot {slot.slot_id}: {value} not found")
        elif isinstance(target, Slot):
            if target.datatype != slot.datatype or not set(slot.required_datatype_tags) <= set(target.required_datatype_tags):
                reasons.append(f"slot {slot.slot_id}: {value} produces {target.datatype}, needs {slot.datatype}")
        elif not slot.accepts(target):
            reasons.append(f"slot {slot.slot_id}: {value} is {target.datatype}{target.datatype_tags}, needs {slot.datatype}{slot.required_datatype_tags}")
    verdict = "rejected" if reasons else "accepted"
    return DockingResult(verdict, dict(bindings) if not reasons else {}, reasons)


def _check_hooks(service_dir: Path) -> None:
    for hook in HOOKS:
        path = service_dir / hook
        if not path.is_file():
            raise ContractError(f"{hook} missing")
        if not os.access(path, os.X_OK):
            raise ContractError(f"{hook} not executable")


class AppRegistry:
    def __init__(self, root: str | os.PathLike, warehouse: Warehouse):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.warehouse = warehouse
        self._lock = threading.Lock()
        self._ids = Sequence("a")
        self.apps: dict[str, App] = {}
        state = read_json(self.root / "apps.json", {"doi_counter": 0, "apps": []})
        self._doi_counter = state["doi_counter"]
        for d in state["apps"]:
            app = App.from_dict(d)
            self.apps[app.id] = app
            self._ids.observe(app.id)

    def _save(self) -> None:
        atomic_write_json(
            self.root / "apps.json",
            {"doi_counter": self._doi_counter, "apps": [a.to_dict() for a in self.apps.values()]},
        )

    def _service_path(self, service_ref: str) -> Path:
        path = Path(service_ref)
        if "://" in service_ref or not path.is_dir():
            raise SourceError(f"service {service_ref} cannot be resolved to a local directory")
        return path

    def register_app(self, descriptor: Mapping | str | os.PathLike) -> App:
        """Register from a descriptor mapping or a service directory holding ``app.json``."""
        if not isinstance(descriptor, Mapping):
            service_dir = Path(descriptor)
            d = read_json(service_dir / "app.json")
            if d is None:
                raise SourceError(f"{service_dir} has no app.json")
            descriptor = {**d, "service_ref": d.get("service_ref") or str(service_dir)}
        if not descriptor.get("name"):
            raise ValidationError("app name must be non-empty")
        inputs = [Slot.from_dict(s) for s in descriptor.get("input_slots", descriptor.get("inputs", []))]
        outputs = [Slot.from_dict(s) for s in descriptor.get("output_slots", descriptor.get("outputs", []))]
        for group in (inputs, outputs):
            ids = [s.slot_id for s in group]
            if len(ids) != len(set(ids)):
                raise ValidationError(f"duplicate slot ids in {ids}")
        for slot in inputs + outputs:
            if slot.datatype not in self.warehouse.datatypes:
                raise ValidationError(f"slot {slot.slot_id} references unregistered datatype {slot.datatype}")
        service_ref = str(descriptor.get("service_ref", ""))
        path = self._service_path(service_ref)
        _check_hooks(path)
        with self._lock:
            self._doi_counter += 1
            app = App(
                id=self._ids.next(),
                name=descriptor["name"],
                service_ref=str(path.resolve()),
                version=str(descriptor.get("version", "main")),
                input_slots=inputs,
                output_slots=outputs,
                config_schema=[ConfigParam.from_dict(c) for c in descriptor.get("config_schema", descriptor.get("config", []))],
                doi=f"{DOI_PREFIX}{self._doi_counter}",
                service_digest=tree_digest(path),
            )
            self.apps[app.id] = app
            self._save()
        return app

    def get_app(self, app_id: str) -> App:
        try:
            return self.apps[app_id]
        except KeyError:
            raise NotFoundError(f"app {app_id} not found") from None

    def list_apps(self) -> list[App]:
        return sorted(self.apps.values(), key=lambda a: a.id)

    def check_docking(self, app: App | str, staged: Iterable[DataObject]) -> DockingResult:
        if isinstance(app, str):
            app = self.get_app(app)
        return check_docking(app, staged)

    def compatible_apps(self, staged: Iterable[DataObject]) -> list[App]:
        staged = list(staged)
        return [a for a in self.list_apps() if check_docking(a, staged).verdict != "rejected"]

    def resolve_service(self, app: App | str, work_dir: str | os.PathLike) -> tuple[Path, str]:
        """Copy the service source into ``work_dir``; returns the dir and its digest."""
        if isinstance(app, str):
            app = self.get_app(app)
        src = self._service_path(app.service_ref)
        _check_hooks(src)
        dest = Path(work_dir)
        dest.mkdir(parents=True, exist_ok=True)
        shutil.copytree(src, dest, dirs_exist_ok=True)
        return dest, tree_digest(src)
