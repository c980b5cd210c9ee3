"""Typed data warehouse: projects, datatypes and tar-archived data objects.

On disk::

    <root>/projects.json
    <root>/datatypes.json
    <root>/<bucket>/<projectID>/<objectID>.tar
    <root>/<bucket>/<projectID>/index.jsonl

``archive_path`` is always ``<bucket>/<projectID>/<objectID>.tar`` relative to
the storage root.
"""

from __future__ import annotations

import fnmatch
import io
import os
import tarfile
import threading
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Union

from ._util import (
    DEFAULT_DIGEST,
    JsonlLog,
    LogicalClock,
    Sequence,
    atomic_write_bytes,
    atomic_write_json,
    digest_bytes,
    read_json,
    walk_files,
)
from .errors import (
    ConflictError,
    IntegrityError,
    NotFoundError,
    StorageError,
    ValidationError,
)

DEFAULT_BUCKET = "warehouse"

StagedFiles = Union[str, os.PathLike, Mapping[str, Union[bytes, str, os.PathLike]]]


@dataclass
class Project:
    id: str
    name: str
    owner: str
    admins: list[str]
    members: list[str]
    visibility: str = "private"
    avoid_public_resources: bool = False
    dua_text: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FileSpec:
    pattern: str
    required: bool = True


@dataclass
class Datatype:
    name: str
    file_spec: list[FileSpec]
    is_statistical_feature: bool = False
    bids_compatible: bool = False
    # column mapping for statistical-feature payloads, see analytics.tidy
    features: dict | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["file_spec"] = [{"pattern": f.pattern, "required": f.required} for f in self.file_spec]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Datatype":
        return cls(
            name=d["name"],
            file_spec=[FileSpec(f["pattern"], bool(f.get("required", True))) for f in d["file_spec"]],
            is_statistical_feature=bool(d.get("is_statistical_feature", False)),
            bids_compatible=bool(d.get("bids_compatible", False)),
            features=d.get("features"),
        )


@dataclass
class DataObject:
    id: str
    project: str
    datatype: str
    datatype_tags: list[str]
    tags: list[str]
    subject: str
    session: str | None
    archive_path: str
    content_hash: str
    provenance_task: str | None
    created_at: int
    file_digests: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DataObject":
        return cls(**d)


@dataclass
class ValidationResult:
    ok: bool
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def _matches(pattern: str, rel: str) -> bool:
    pattern = pattern.rstrip("/")
    if fnmatch.fnmatchcase(rel, pattern):
        return True
    # a pattern naming a folder matches every file under it
    parts = rel.split("/")
    return any(fnmatch.fnmatchcase("/".join(parts[:i]), pattern) for i in range(1, len(parts)))


def _normalize_files(files: StagedFiles) -> dict[str, bytes | Path]:
    if isinstance(files, (str, os.PathLike)):
        root = Path(files)
        if not root.is_dir():
            raise ValidationError(f"staged directory {root} does not exist", [f"{root} missing"])
        return {rel: p for rel, p in walk_files(root)}
    out: dict[str, bytes | Path] = {}
    for rel, src in files.items():
        rel = Path(rel).as_posix().lstrip("/")
        if rel.startswith("..") or "/../" in rel:
            raise ValidationError(f"illegal path {rel!r}", [f"{rel} escapes the object root"])
        if isinstance(src, str):
            src = src.encode("utf-8")
        elif isinstance(src, os.PathLike):
            src = Path(src)
        out[rel] = src
    return dict(sorted(out.items()))


def _read(src: bytes | Path) -> bytes:
    return src if isinstance(src, bytes) else Path(src).read_bytes()


def _is_exec(src: bytes | Path) -> bool:
    return isinstance(src, Path) and os.access(src, os.X_OK)


def build_tar(files: Mapping[str, bytes | Path]) -> bytes:
    """Deterministic uncompressed ustar archive: sorted entries, zeroed metadata."""
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w", format=tarfile.USTAR_FORMAT) as tar:
        for rel in sorted(files):
            data = _read(files[rel])
            info = tarfile.TarInfo(rel)
            info.size = len(data)
            info.mtime = 0
            info.mode = 0o755 if _is_exec(files[rel]) else 0o644
            info.uid = info.gid = 0
            info.uname = info.gname = ""
            tar.addfile(info, io.BytesIO(data))
    return buf.getvalue()


def validate_files(files: StagedFiles, datatype: Datatype) -> ValidationResult:
    staged = _normalize_files(files)
    violations = []
    matched: set[str] = set()
    for spec in datatype.file_spec:
        hits = [rel for rel in staged if _matches(spec.pattern, rel)]
        matched.update(hits)
        if spec.required and not hits:
            violations.append(f"{spec.pattern} missing")
    warnings = [f"{rel} not described by {datatype.name}" for rel in staged if rel not in matched]
    return ValidationResult(ok=not violations, violations=violations, warnings=warnings)


class Warehouse:
    """Projects, datatype registry and the object store rooted at ``root``."""

    def __init__(
        self,
        root: str | os.PathLike,
        bucket: str = DEFAULT_BUCKET,
        digest: str = DEFAULT_DIGEST,
        clock: LogicalClock | None = None,
    ):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.bucket = bucket
        self.digest = digest
        self.clock = clock or LogicalClock()
        self._lock = threading.RLock()
        self._project_locks: dict[str, threading.Lock] = {}
        self._project_ids = Sequence("p")
        self._object_ids = Sequence("d")
        self.projects: dict[str, Project] = {}
        self.datatypes: dict[str, Datatype] = {}
        self.objects: dict[str, DataObject] = {}
        self._load()

    # -- persistence -------------------------------------------------------

    def _load(self) -> None:
        for d in read_json(self.root / "projects.json", []):
            p = Project(**d)
            self.projects[p.id] = p
            self._project_ids.observe(p.id)
        for d in read_json(self.root / "datatypes.json", []):
            dt = Datatype.from_dict(d)
            self.datatypes[dt.name] = dt
        for pid in self.projects:
            for rec in JsonlLog(self._index_path(pid)).read():
                obj = DataObject.from_dict(rec)
                self.objects[obj.id] = obj
                self._object_ids.observe(obj.id)

    def _save_projects(self) -> None:
        atomic_write_json(self.root / "projects.json", [p.to_dict() for p in self.projects.values()])

    def _save_datatypes(self) -> None:
        atomic_write_json(self.root / "datatypes.json", [d.to_dict() for d in self.datatypes.values()])

    def _index_path(self, project_id: str) -> Path:
        return self.root / self.bucket / project_id / "index.jsonl"

    def _plock(self, project_id: str) -> threading.Lock:
        with self._lock:
            return self._project_locks.setdefault(project_id, threading.Lock())

    # -- projects ----------------------------------------------------------

    def create_project(
        self,
        owner: str,
        name: str,
        *,
        avoid_public_resources: bool = False,
        dua_text: str | None = None,
    ) -> Project:
        if not name or not name.strip():
            raise ValidationError("project name must be non-empty")
        if not owner or not owner.strip():
            raise ValidationError("project owner must be a user id")
        with self._lock:
            project = Project(
                id=self._project_ids.next(),
                name=name,
                owner=owner,
                admins=[owner],
                members=[owner],
                avoid_public_resources=avoid_public_resources,
                dua_text=dua_text,
            )
            self.projects[project.id] = project
            self._save_projects()
        return project

    def get_project(self, project_id: str) -> Project:
        try:
            return self.projects[project_id]
        except KeyError:
            raise NotFoundError(f"project {project_id} not found") from None

    def update_project(self, project_id: str, **changes) -> Project:
        allowed = {"name", "visibility", "avoid_public_resources", "dua_text", "admins", "members"}
        with self._lock:
            project = self.get_project(project_id)
            for key, value in changes.items():
                if key not in allowed:
                    raise ValidationError(f"cannot update project field {key!r}")
                setattr(project, key, value)
            if project.visibility not in ("private", "public"):
                raise ValidationError(f"bad visibility {project.visibility!r}")
            if project.owner not in project.admins:
                project.admins.insert(0, project.owner)
            self._save_projects()
        return project

    def list_projects(self) -> list[Project]:
        return sorted(self.projects.values(), key=lambda p: p.id)

    # -- datatypes ---------------------------------------------------------

    def register_datatype(
        self,
        name: str,
        file_spec,
        *,
        is_statistical_feature: bool = False,
        bids_compatible: bool = False,
        features: dict | None = None,
    ) -> Datatype:
        specs = []
        for entry in file_spec or []:
            if isinstance(entry, FileSpec):
                specs.append(entry)
            elif isinstance(entry, Mapping):
                specs.append(FileSpec(entry["pattern"], bool(entry.get("required", True))))
            elif isinstance(entry, str):
                specs.append(FileSpec(entry, True))
            else:
                pattern, required = entry
                specs.append(FileSpec(pattern, required in (True, "required")))
        if not name:
            raise ValidationError("datatype name must be non-empty")
        if not any(s.required for s in specs):
            raise ValidationError(f"datatype {name} needs at least one required file pattern")
        with self._lock:
            if name in self.datatypes:
                raise ConflictError(f"datatype {name} already registered")
            dt = Datatype(name, specs, is_statistical_feature, bids_compatible, features)
            self.datatypes[name] = dt
            self._save_datatypes()
        return dt

    def get_datatype(self, name: str) -> Datatype:
        try:
            return self.datatypes[name]
        except KeyError:
            raise NotFoundError(f"datatype {name} not registered") from None

    # -- objects -----------------------------------------------------------

    def validate_object(self, files: StagedFiles, datatype: Datatype | str) -> ValidationResult:
        if isinstance(datatype, str):
            datatype = self.get_datatype(datatype)
        return validate_files(files, datatype)

    def archive_object(
        self,
        project: str,
        datatype: str,
        files: StagedFiles,
        *,
        tags=(),
        datatype_tags=(),
        subject: str,
        session: str | None = None,
        provenance_task: str | None = None,
    ) -> DataObject:
        proj = self.get_project(project)
        dt = self.get_datatype(datatype)
        staged = _normalize_files(files)
        result = validate_files(staged, dt)
        if not result.ok:
            raise ValidationError(
                f"files do not satisfy datatype {dt.name}: " + "; ".join(result.violations),
                result.violations,
            )
        payload = build_tar(staged)
        with self._plock(proj.id):
            oid = self._object_ids.next()
            archive_path = f"{self.bucket}/{proj.id}/{oid}.tar"
            try:
                atomic_write_bytes(self.root / archive_path, payload)
            except OSError as exc:
                raise StorageError(f"could not write {archive_path}: {exc}") from exc
            obj = DataObject(
                id=oid,
                project=proj.id,
                datatype=dt.name,
                datatype_tags=list(datatype_tags),
                tags=list(tags),
                subject=subject,
                session=session,
                archive_path=archive_path,
                content_hash=digest_bytes(payload, self.digest),
                provenance_task=provenance_task,
                created_at=self.clock.now(),
                file_digests={rel: digest_bytes(_read(src), self.digest) for rel, src in staged.items()},
            )
            JsonlLog(self._index_path(proj.id)).append(obj.to_dict())
            # visible only once tar and index entry are committed
            self.objects[oid] = obj
        return obj

    def get_object(self, object_id: str) -> DataObject:
        try:
            return self.objects[object_id]
        except KeyError:
            raise NotFoundError(f"object {object_id} not found") from None

    def query_objects(
        self,
        project: str,
        datatype: str | None = None,
        include_tags=(),
        exclude_tags=(),
        subject: str | None = None,
    ) -> list[DataObject]:
        self.get_project(project)
        include, exclude = set(include_tags), set(exclude_tags)
        hits = [
            o
            for o in list(self.objects.values())
            if o.project == project
            and (datatype is None or o.datatype == datatype)
            and (subject is None or o.subject == subject)
            and include <= set(o.tags)
            and not exclude & set(o.tags)
        ]
        hits.sort(key=lambda o: (o.created_at, o.id), reverse=True)
        return hits

    def subjects(self, project: str) -> list[str]:
        self.get_project(project)
        return sorted({o.subject for o in list(self.objects.values()) if o.project == project})

    def read_archive(self, object_id: str) -> bytes:
        obj = self.get_object(object_id)
        path = self.root / obj.archive_path
        try:
            payload = path.read_bytes()
        except FileNotFoundError:
            raise IntegrityError(f"archive {obj.archive_path} is missing") from None
        if digest_bytes(payload, self.digest) != obj.content_hash:
            raise IntegrityError(f"archive {obj.archive_path} does not match its content hash")
        return payload

    def fetch_object(self, object_id: str, destination: str | os.PathLike) -> Path:
        payload = self.read_archive(object_id)
        dest = Path(destination)
        dest.mkdir(parents=True, exist_ok=True)
        with tarfile.open(fileobj=io.BytesIO(payload), mode="r") as tar:
            for member in tar.getmembers():
                target = (dest / member.name).resolve()
                if not str(target).startswith(str(dest.resolve())) or not member.isfile():
                    raise IntegrityError(f"unsafe archive member {member.name!r}")
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(tar.extractfile(member).read())
                os.chmod(target, member.mode)
        return dest
