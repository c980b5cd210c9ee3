"""Reduce step: tidy collation, reference ranges and comparison statistics."""

from .reference import (
    PolynomialTrend,
    ReferenceEntry,
    ReferenceRange,
    ReferenceRangeEstimator,
    build_reference,
)
from .stats import (
    Band,
    PolyFit,
    classify_band,
    detect_outliers,
    fit_polynomial,
    mean_sd,
    pearson_r,
    rmse,
    z_score,
)
from .tidy import COLUMNS, HEADER, TidyRow, TidyTable, collate_features, read_sidecar

__all__ = [
    "Band",
    "COLUMNS",
    "HEADER",
    "PolyFit",
    "PolynomialTrend",
    "ReferenceEntry",
    "ReferenceRange",
    "ReferenceRangeEstimator",
    "TidyRow",
    "TidyTable",
    "build_reference",
    "classify_band",
    "collate_features",
    "detect_outliers",
    "fit_polynomial",
    "mean_sd",
    "pearson_r",
    "read_sidecar",
    "rmse",
    "z_score",
]
