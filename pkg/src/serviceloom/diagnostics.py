"""Diagnostics shared across the engine.

A Diagnostic never aborts an operation: the engine is expected to keep
working with partial or even inconsistent annotations, surfacing problems
to the user instead of rejecting input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


class Kind(str, Enum):
    # Verification kinds surfaced by the assist layer.
    TYPE_MISMATCH = "TypeMismatch"
    UNBOUND_INPUT = "UnboundInput"
    UNSATISFIED_PRECONDITION = "UnsatisfiedPrecondition"
    MUTEX_CONFLICT = "MutexConflict"
    DANGLING_STEP = "DanglingStep"
    WEAK_MATCH = "WeakMatch"
    # Engine-level annotation quality warnings.
    UNRESOLVED_REF = "UnresolvedRef"
    INERT_CONSTRUCT = "InertConstruct"
    SUBSUMPTION_CYCLE = "SubsumptionCycle"
    HORIZON_EXCEEDED = "HorizonExceeded"


@dataclass(frozen=True)
class Diagnostic:
    severity: Severity
    kind: Kind
    location: str
    explanation: str
    extra: tuple[tuple[str, str], ...] = field(default=())

    def to_dict(self) -> dict:
        d = {
            "severity": self.severity.value,
            "kind": self.kind.value,
            "location": self.location,
            "explanation": self.explanation,
        }
        if self.extra:
            d["extra"] = dict(self.extra)
        return d

    @staticmethod
    def from_dict(d: dict) -> "Diagnostic":
        return Diagnostic(
            severity=Severity(d["severity"]),
            kind=Kind(d["kind"]),
            location=d["location"],
            explanation=d["explanation"],
            extra=tuple(sorted((d.get("extra") or {}).items())),
        )


def error(kind: Kind, location: str, explanation: str, **extra: str) -> Diagnostic:
    return Diagnostic(Severity.ERROR, kind, location, explanation,
                      tuple(sorted(extra.items())))


def warning(kind: Kind, location: str, explanation: str, **extra: str) -> Diagnostic:
    return Diagnostic(Severity.WARNING, kind, location, explanation,
                      tuple(sorted(extra.items())))


def has_errors(diags: list[Diagnostic]) -> bool:
    return any(d.severity is Severity.ERROR for d in diags)
