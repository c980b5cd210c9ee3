"""Reference ranges (outlier-cleaned mean and SD per structure/measure) and QA banding."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .._util import atomic_write_text, canonical_json
from ..errors import InsufficientDataError, ValidationError
from .stats import Band, PolyFit, classify_band, detect_outliers, fit_polynomial, z_score
from .tidy import TidyRow, TidyTable

log = logging.getLogger(__name__)


@dataclass
class ReferenceEntry:
    structure: str
    measure: str
    mean: float
    sd: float
    n: int

    def band_edges(self) -> dict[str, tuple[float, float]]:
        return {f"{k}sd": (self.mean - k * self.sd, self.mean + k * self.sd) for k in (1, 2)}


@dataclass
class ReferenceRange:
    datatype: str
    source: str
    entries: list[ReferenceEntry] = field(default_factory=list)

    def __post_init__(self):
        keys = [(e.structure, e.measure) for e in self.entries]
        if len(keys) != len(set(keys)):
            raise ValidationError("reference entries must be unique per (structure, measure)")
        for e in self.entries:
            if e.sd < 0 or e.n < 2:
                raise ValidationError(f"bad reference entry {e}")

    def entry(self, structure: str, measure: str) -> ReferenceEntry:
        for e in self.entries:
            if e.structure == structure and e.measure == measure:
                return e
        raise KeyError((structure, measure))

    def to_dict(self) -> dict:
        return {"datatype": self.datatype, "source": self.source, "entries": [asdict(e) for e in self.entries]}

    def to_json(self) -> str:
        return canonical_json(self.to_dict()) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceRange":
        return cls(
            d["datatype"],
            d["source"],
            [ReferenceEntry(e["structure"], e["measure"], float(e["mean"]), float(e["sd"]), int(e["n"])) for e in d["entries"]],
        )

    @classmethod
    def from_json(cls, text: str) -> "ReferenceRange":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | os.PathLike) -> Path:
        atomic_write_text(path, self.to_json())
        return Path(path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ReferenceRange":
        return cls.from_json(Path(path).read_text())


def _rows(table) -> list[TidyRow]:
    if isinstance(table, TidyTable):
        return table.rows
    if hasattr(table, "itertuples"):
        return [TidyRow(*(getattr(r, c) for c in TidyRow._fields)) for r in table.itertuples(index=False)]
    return [r if isinstance(r, TidyRow) else TidyRow(**r) for r in table]


class ReferenceRangeEstimator(BaseEstimator):
    """Fit per (structure, measure) reference statistics on a tidy table.

    ``predict`` returns the QA band of each row, ``transform`` its |z|.

    Parameters
    ----------
    k : float
        Outlier threshold in sample SDs applied once before the final fit.
    source : str
        Label of the reference population.
    datatype : str
        Datatype the reference describes; inferred from the table when empty.
    """

    def __init__(self, k: float = 2.0, source: str = "", datatype: str = ""):
        self.k = k
        self.source = source
        self.datatype = datatype

    def fit(self, X, y=None):
        rows = _rows(X)
        if not rows:
            raise InsufficientDataError("cannot build a reference from an empty table")
        groups: dict[tuple[str, str], list[float]] = {}
        for r in rows:
            groups.setdefault((r.structure, r.measure), []).append(float(r.value))
        entries, self.diagnostics_ = [], []
        for (structure, measure), values in sorted(groups.items()):
            if len(values) < 2:
                self.diagnostics_.append(f"{structure}/{measure}: n={len(values)} < 2, omitted")
                continue
            values = np.asarray(values)
            kept = values[~detect_outliers(values, self.k)]
            if kept.size < 2:
                self.diagnostics_.append(f"{structure}/{measure}: {kept.size} values after outlier removal, omitted")
                continue
            entries.append(ReferenceEntry(structure, measure, float(kept.mean()), float(kept.std(ddof=1)), int(kept.size)))
        for msg in self.diagnostics_:
            log.info(msg)
        datatype = self.datatype or ",".join(sorted({r.datatype for r in rows}))
        self.reference_ = ReferenceRange(datatype, self.source, entries)
        self._index = {(e.structure, e.measure): e for e in entries}
        return self

    def _entry(self, row: TidyRow) -> ReferenceEntry:
        check_is_fitted(self, "reference_")
        try:
            return self._index[(row.structure, row.measure)]
        except KeyError:
            raise ValidationError(f"no reference for {row.structure}/{row.measure}") from None

    def transform(self, X) -> np.ndarray:
        return np.array([z_score(r.value, (e := self._entry(r)).mean, e.sd) for r in _rows(X)])

    def predict(self, X) -> list[Band]:
        out = []
        for r in _rows(X):
            e = self._entry(r)
            out.append(classify_band(r.value, e.mean, e.sd))
        return out


def build_reference(table, source: str, k: float = 2.0, path: str | os.PathLike | None = None) -> ReferenceRange:
    ref = ReferenceRangeEstimator(k=k, source=source).fit(table).reference_
    if path is not None:
        ref.save(path)
    return ref


class PolynomialTrend(RegressorMixin, BaseEstimator):
    """Least-squares polynomial of degree 1 or 2 in a single feature."""

    def __init__(self, degree: int = 2):
        self.degree = degree

    def fit(self, X, y):
        x = np.asarray(X, dtype=float).reshape(-1)
        self.fit_: PolyFit = fit_polynomial(x, y, self.degree)
        self.coef_ = np.array(self.fit_.coefficients)
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        return self.fit_.predict(np.asarray(X, dtype=float).reshape(-1))
