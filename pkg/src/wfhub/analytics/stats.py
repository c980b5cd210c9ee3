"""Comparison statistics and z-score banding.

Standard deviations are sample (n - 1) estimates throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import DegenerateFitError, InsufficientDataError, UndefinedCorrelationError, ValidationError


class Band(str, Enum):
    WITHIN1 = "within1"
    WITHIN2 = "within2"
    OUTSIDE2 = "outside2"

    @property
    def rank(self) -> int:
        return _BAND_RANK[self]


_BAND_RANK = {Band.WITHIN1: 0, Band.WITHIN2: 1, Band.OUTSIDE2: 2}


def _vector(values, name: str = "values") -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    return arr


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x, y = _vector(x, "x"), _vector(y, "y")
    if x.shape != y.shape:
        raise ValidationError(f"length mismatch: {x.size} vs {y.size}")
    return x, y


def mean_sd(values) -> tuple[float, float]:
    v = _vector(values)
    if v.size < 2:
        raise InsufficientDataError("need at least 2 values")
    return float(v.mean()), float(v.std(ddof=1))


def detect_outliers(values, k: float = 2.0) -> np.ndarray:
    """Boolean mask of values farther than ``k`` sample SDs from the mean.

    Single pass; a constant vector has no outliers.
    """
    if not k > 0:
        raise ValidationError("k must be positive")
    v = _vector(values)
    mean, sd = mean_sd(v)
    if sd == 0:
        return np.zeros(v.size, dtype=bool)
    return np.abs(v - mean) > k * sd


def z_score(value: float, mean: float, sd: float) -> float:
    if sd < 0:
        raise ValidationError("sd must be >= 0")
    dev = abs(value - mean)
    if sd == 0:
        return 0.0 if dev == 0 else math.inf
    return dev / sd


def classify_band(value: float, mean: float, sd: float) -> Band:
    """Band edges are inclusive inward: z == 1 is within1, z == 2 is within2."""
    z = z_score(value, mean, sd)
    if z <= 1:
        return Band.WITHIN1
    if z <= 2:
        return Band.WITHIN2
    return Band.OUTSIDE2


def pearson_r(x, y) -> float:
    x, y = _pair(x, y)
    if x.size < 2:
        raise InsufficientDataError("need at least 2 pairs")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant input")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    # sqrt(s * s) == s exactly, which keeps r(x, x) at 1.0; split the roots
    # only when the product over- or underflows
    prod = sxx * syy
    if prod == 0 or math.isinf(prod):
        denom = math.sqrt(sxx) * math.sqrt(syy)
    else:
        denom = math.sqrt(prod)
    if denom == 0:
        raise UndefinedCorrelationError("correlation is undefined: variance underflows")
    r = float(dx @ dy) / denom
    return max(-1.0, min(1.0, r))


def rmse(x, y) -> float:
    x, y = _pair(x, y)
    if x.size < 1:
        raise InsufficientDataError("need at least 1 pair")
    d = x - y
    return math.sqrt(float(d @ d) / d.size)


@dataclass(frozen=True)
class PolyFit:
    """``y = a x^2 + b x + c``; ``a`` is 0 for a linear fit."""

    a: float
    b: float
    c: float
    r2: float
    degree: int

    @property
    def coefficients(self) -> tuple[float, float, float]:
        return self.a, self.b, self.c

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.a * x**2 + self.b * x + self.c


def design_matrix(x: np.ndarray, degree: int) -> np.ndarray:
    return np.vander(x, degree + 1)


def fit_polynomial(x, y, degree: int = 2) -> PolyFit:
    if degree not in (1, 2):
        raise ValidationError("degree must be 1 or 2")
    x, y = _pair(x, y)
    if np.unique(x).size < degree + 1:
        raise DegenerateFitError(f"need at least {degree + 1} distinct x values")
    X = design_matrix(x, degree)
    coef, _res, rank, _sv = np.linalg.lstsq(X, y, rcond=None)
    if rank < degree + 1:
        raise DegenerateFitError("design matrix is rank deficient")
    resid = y - X @ coef
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    if degree == 1:
        return PolyFit(0.0, float(coef[0]), float(coef[1]), r2, 1)
    return PolyFit(float(coef[0]), float(coef[1]), float(coef[2]), r2, 2)
