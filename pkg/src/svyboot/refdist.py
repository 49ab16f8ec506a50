"""Reference distributions for design-based test statistics.

Under complex sampling the statistics converge to weighted sums of
independent chi-square(1) variables, sum_i c_i Z_i^2, with c the
eigenvalues of a design-effect matrix Sigma * I.  This module extracts
those eigenvalues, samples and inverts the mixture by Monte Carlo, and
wraps the chi-square and F survival functions (regularized incomplete
gamma/beta) used by the naive and corrected tests.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import chdtrc, fdtrc

from .errors import DataError
from .rng import substream


def chisq_sf(x: float, df: int) -> float:
    """P(chi2_df > x) via the regularized upper incomplete gamma."""
    if df < 1:
        raise DataError("chi-square df must be >= 1")
    if x <= 0:
        return 1.0
    return float(chdtrc(df, x))


def f_sf(x: float, df1: int, df2: float) -> float:
    """P(F_{df1, df2} > x) via the regularized incomplete beta."""
    if df1 < 1 or df2 < 1:
        raise DataError("F degrees of freedom must be >= 1")
    if x <= 0:
        return 1.0
    return float(fdtrc(df1, df2, x))


def mixture_eigenvalues(sigma: np.ndarray, info: np.ndarray) -> np.ndarray:
    """Eigenvalues of Sigma @ I, computed on the similar symmetric form.

    I must be symmetric positive definite; the product's eigenvalues are
    those of I^{1/2} Sigma I^{1/2}, which is symmetric, so eigh applies.
    Small negative eigenvalues (Sigma estimated, possibly indefinite)
    are clamped to zero with a warning.  Returned in descending order.
    """
    sigma = np.asarray(sigma, dtype=float)
    info = np.asarray(info, dtype=float)
    if sigma.shape != info.shape or sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DataError("sigma and info must be square matrices of equal shape")
    if np.max(np.abs(info - info.T)) > 1e-8 * max(1.0, np.max(np.abs(info))):
        raise DataError("information matrix must be symmetric")
    vals, vecs = np.linalg.eigh((info + info.T) / 2.0)
    if np.min(vals) <= 0:
        raise DataError("information matrix must be positive definite")
    root = (vecs * np.sqrt(vals)) @ vecs.T
    sym = root @ ((sigma + sigma.T) / 2.0) @ root
    c = np.linalg.eigvalsh((sym + sym.T) / 2.0)[::-1]
    if np.any(c < 0):
        if np.any(c < -1e-8 * max(1.0, abs(c[0]))):
            warnings.warn("negative mixture eigenvalues clamped to zero")
        c = np.clip(c, 0.0, None)
    return c


def mixture_sample(c: np.ndarray, m: int, seed: int) -> np.ndarray:
    """m Monte Carlo draws of sum_i c_i Z_i^2, Z_i iid standard normal."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if np.any(c < 0):
        raise DataError("mixture coefficients must be nonnegative")
    if m < 1:
        raise DataError("sample size must be positive")
    rng = substream(seed, "mixture-sample")
    z = rng.standard_normal((m, c.size))
    return (z * z) @ c


def mixture_quantile(c: np.ndarray, prob: float, m: int = 100_000,
                     seed: int = 0) -> float:
    """Monte Carlo quantile of the chi-square mixture."""
    if not 0.0 < prob < 1.0:
        raise DataError("quantile probability must lie in (0, 1)")
    draws = mixture_sample(c, m, seed)
    return float(np.quantile(draws, prob))


@dataclass(frozen=True)
class ChiSqMixture:
    """Weighted chi-square(1) mixture sum_i c_i Z_i^2."""

    eigenvalues: np.ndarray
    sample_count: int = 100_000

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.eigenvalues, dtype=float))
        if np.any(c < 0):
            raise DataError("mixture coefficients must be nonnegative")
        object.__setattr__(self, "eigenvalues", c)

    @classmethod
    def from_matrices(cls, sigma: np.ndarray, info: np.ndarray,
                      sample_count: int = 100_000) -> "ChiSqMixture":
        return cls(mixture_eigenvalues(sigma, info), sample_count)

    def sample(self, seed: int, m: int | None = None) -> np.ndarray:
        return mixture_sample(self.eigenvalues, m or self.sample_count, seed)

    def quantile(self, prob: float, seed: int = 0) -> float:
        return mixture_quantile(self.eigenvalues, prob, self.sample_count, seed)

    def sf(self, x: float, seed: int = 0) -> float:
        """Monte Carlo survival probability P(mixture > x)."""
        draws = self.sample(seed)
        return float(np.mean(draws > x))
