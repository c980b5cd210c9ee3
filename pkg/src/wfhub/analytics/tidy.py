"""Collation of statistical-feature objects into a long-format tidy table.

Feature payloads are described per datatype by its ``features`` mapping::

    {"file": "stats.tsv",          # payload file inside the object
     "format": "long" | "wide",
     "structure": "structure",     # column names in the payload
     "measure": "measure",         # long format only
     "value": "value"}             # long format only

In wide format every column other than the structure column is a measure.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tarfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

from .._util import atomic_write_json, atomic_write_text
from ..errors import ValidationError, WfHubError

log = logging.getLogger(__name__)

COLUMNS = ("subject", "session", "datatype", "structure", "measure", "value", "source_object")
HEADER = "\t".join(COLUMNS)


class TidyRow(NamedTuple):
    subject: str
    session: str
    datatype: str
    structure: str
    measure: str
    value: float
    source_object: str


@dataclass
class TidyTable:
    rows: list[TidyRow] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)
    sources: list[dict] = field(default_factory=list)

    columns = COLUMNS

    def __len__(self) -> int:
        return len(self.rows)

    def groups(self) -> dict[tuple[str, str], list[float]]:
        out: dict[tuple[str, str], list[float]] = {}
        for r in self.rows:
            out.setdefault((r.structure, r.measure), []).append(r.value)
        return out

    def to_tsv(self) -> str:
        buf = io.StringIO()
        buf.write(HEADER + "\n")
        for r in self.rows:
            buf.write("\t".join([r.subject, r.session, r.datatype, r.structure, r.measure, repr(float(r.value)), r.source_object]) + "\n")
        return buf.getvalue()

    @classmethod
    def from_tsv(cls, text: str) -> "TidyTable":
        lines = text.splitlines()
        if not lines or lines[0] != HEADER:
            raise ValidationError("not a tidy table: header mismatch")
        rows = []
        for line in lines[1:]:
            if not line:
                continue
            f = line.split("\t")
            rows.append(TidyRow(f[0], f[1], f[2], f[3], f[4], float(f[5]), f[6]))
        return cls(rows)

    def write(self, out_dir: str | os.PathLike, stem: str = "features", generated_at: int | None = None) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        tsv, sidecar = out_dir / f"{stem}.tsv", out_dir / f"{stem}.json"
        atomic_write_text(tsv, self.to_tsv())
        atomic_write_json(sidecar, {"sources": self.sources, "generated_at": generated_at, "diagnostics": self.diagnostics})
        return tsv, sidecar


def feature_layout(datatype) -> dict:
    layout = dict(datatype.features or {})
    if "file" not in layout:
        layout["file"] = next(s.pattern for s in datatype.file_spec if s.required)
    layout.setdefault("format", "long")
    layout.setdefault("structure", "structure")
    layout.setdefault("measure", "measure")
    layout.setdefault("value", "value")
    return layout


def parse_payload(text: str, layout: dict) -> list[tuple[str, str, float]]:
    """``(structure, measure, value)`` triples from one feature payload."""
    reader = csv.DictReader(io.StringIO(text), delimiter="\t")
    if reader.fieldnames is None:
        raise ValidationError("empty payload")
    s_col = layout["structure"]
    if s_col not in reader.fieldnames:
        raise ValidationError(f"payload lacks column {s_col!r}")
    out = []
    if layout["format"] == "wide":
        measures = [c for c in reader.fieldnames if c != s_col]
        for row in reader:
            for m in measures:
                out.append((row[s_col], m, _finite(row[m])))
    else:
        m_col, v_col = layout["measure"], layout["value"]
        missing = [c for c in (m_col, v_col) if c not in reader.fieldnames]
        if missing:
            raise ValidationError(f"payload lacks columns {missing}")
        for row in reader:
            out.append((row[s_col], row[m_col], _finite(row[v_col])))
    return out


def _finite(text) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ValidationError(f"non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise ValidationError(f"non-finite value {text!r}")
    return value


def _member(payload: bytes, name: str) -> str:
    with tarfile.open(fileobj=io.BytesIO(payload), mode="r") as tar:
        try:
            member = tar.getmember(name)
        except KeyError:
            raise ValidationError(f"object has no {name}") from None
        return tar.extractfile(member).read().decode("utf-8")


def collate_features(
    warehouse,
    project: str,
    datatypes=None,
    *,
    provenance=None,
    out_dir: str | os.PathLike | None = None,
    stem: str = "features",
    strict: bool = False,
) -> TidyTable:
    """Reduce every statistical-feature object of a project into one tidy table."""
    if datatypes is None:
        names = sorted(n for n, d in warehouse.datatypes.items() if d.is_statistical_feature)
    else:
        names = [datatypes] if isinstance(datatypes, str) else list(datatypes)
    for name in names:
        if not warehouse.get_datatype(name).is_statistical_feature:
            raise ValidationError(f"{name} is not a statistical-feature datatype")
    objects = []
    for name in names:
        objects.extend(warehouse.query_objects(project, datatype=name))
    objects.sort(key=lambda o: o.id)
    table = TidyTable()
    for obj in objects:
        layout = feature_layout(warehouse.get_datatype(obj.datatype))
        try:
            triples = parse_payload(_member(warehouse.read_archive(obj.id), layout["file"]), layout)
        except (WfHubError, UnicodeDecodeError, csv.Error) as exc:
            if strict:
                raise
            msg = f"{obj.id}: skipped ({exc})"
            log.warning(msg)
            table.diagnostics.append(msg)
            continue
        session = obj.session or ""
        table.rows.extend(
            TidyRow(obj.subject, session, obj.datatype, s, m, v, obj.id) for s, m, v in triples
        )
        rec = provenance.records.get(obj.id) if provenance is not None else None
        table.sources.append(
            {
                "object": obj.id,
                "task": rec.task if rec else None,
                "app": rec.app if rec else None,
                "app_version": rec.app_version if rec else None,
            }
        )
    if out_dir is not None:
        table.write(out_dir, stem, generated_at=warehouse.clock.now())
    return table


def read_sidecar(path: str | os.PathLike) -> dict:
    return json.loads(Path(path).read_text())
