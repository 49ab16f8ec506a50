"""Test result containers shared by the regression and categorical tests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DataError, DiagnosticError

# replicate sets losing more than this fraction are unusable
MAX_DROP_FRACTION = 0.05


@dataclass(frozen=True)
class Reference:
    """Reference distribution a statistic was compared against."""

    kind: str                      # "chisq" | "f" | "normal" | "bootstrap"
    params: Mapping[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **{k: v for k, v in self.params.items()}}


@dataclass(frozen=True)
class BootstrapStatistics:
    """Replicate statistic values with drop accounting.

    values keeps replicate order; dropped counts replicates discarded for
    non-convergence or degeneracy.  More than MAX_DROP_FRACTION dropped
    raises DiagnosticError at construction.
    """

    values: np.ndarray
    dropped: int
    total: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if self.total != len(vals) + self.dropped:
            raise DataError("replicate bookkeeping mismatch")
        if self.total > 0 and self.dropped > MAX_DROP_FRACTION * self.total:
            raise DiagnosticError(
                f"{self.dropped} of {self.total} bootstrap replicates dropped "
                f"(more than {MAX_DROP_FRACTION:.0%})"
            )

    @property
    def used(self) -> int:
        return len(self.values)


def empirical_p(statistic: float, replicate_values: np.ndarray) -> float:
    """(1 + #{b : stat*_b >= stat}) / (B_eff + 1); ties count as extreme."""
    vals = np.asarray(replicate_values, dtype=float)
    if vals.size == 0:
        raise DataError("empirical p-value needs at least one replicate")
    exceed = int(np.count_nonzero(vals >= statistic))
    return (1.0 + exceed) / (vals.size + 1.0)


@dataclass(frozen=True)
class TestResult:
    """Outcome of one hypothesis test."""

    method: str
    statistic: float
    p_value: float
    reference: Reference
    replicates_used: int = 0
    replicates_dropped: int = 0
    bootstrap_statistics: np.ndarray | None = None
    details: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise DataError("p-value outside [0, 1]")
        if self.bootstrap_statistics is not None:
            vals = np.sort(np.asarray(self.bootstrap_statistics, dtype=float))
            object.__setattr__(self, "bootstrap_statistics", vals)

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "reference": self.reference.to_dict(),
            "replicates_used": self.replicates_used,
            "replicates_dropped": self.replicates_dropped,
        }
        extras = {}
        for key, val in self.details.items():
            if isinstance(val, np.ndarray):
                extras[key] = [float(v) for v in val]
            elif isinstance(val, (np.floating, np.integer)):
                extras[key] = float(val)
            else:
                extras[key] = val
        if extras:
            out["details"] = extras
        return out
