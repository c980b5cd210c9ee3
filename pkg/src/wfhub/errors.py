"""Exception hierarchy shared by every wfhub component."""

from __future__ import annotations


class WfHubError(Exception):
    """Base class. ``kind`` is the stable, machine-readable error category."""

    kind = "error"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "message": str(self)}


class ValidationError(WfHubError):
    kind = "validation"

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = list(violations or [])

    def to_dict(self) -> dict:
        d = super().to_dict()
        if self.violations:
            d["violations"] = self.violations
        return d


class ConflictError(WfHubError):
    kind = "conflict"


class NotFoundError(WfHubError):
    kind = "not_found"


class IntegrityError(WfHubError):
    kind = "integrity"


class StorageError(WfHubError):
    kind = "storage"


class SourceError(WfHubError):
    kind = "source"


class ContractError(WfHubError):
    kind = "contract"


class DockingError(WfHubError):
    kind = "docking"

    def __init__(self, message: str, reasons: list[str]):
        super().__init__(message)
        self.reasons = list(reasons)

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["reasons"] = self.reasons
        return d


class CycleError(WfHubError):
    kind = "cycle"


class InvalidTransitionError(WfHubError):
    kind = "invalid_transition"


class NoResourceError(WfHubError):
    kind = "no_resource"

    def __init__(self, message: str, report: str = ""):
        super().__init__(message)
        self.report = report


class StagingError(WfHubError):
    kind = "staging"


class InsufficientDataError(WfHubError):
    kind = "insufficient_data"


class UndefinedCorrelationError(WfHubError):
    kind = "undefined_correlation"


class DegenerateFitError(WfHubError):
    kind = "degenerate_fit"
