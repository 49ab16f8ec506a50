"""Goodness-of-fit and independence tests for weighted category tables.

Statistics use the survey-weighted proportions p_hat and the number of
unit records n:

  GOF        X2 = n sum_k (p_hat_k - p0_k)^2 / p0_k
             W  = 2 n sum_k p_hat_k log(p_hat_k / p0_k)      (0 log 0 = 0)
  bootstrap  X2*_b = n sum_k (p*_k - p_hat_k)^2 / p_hat_k
             W*_b  = 2 n sum_k p*_k log(p*_k / p_hat_k)

  independence (R x C, margins p_hat_{i+}, p_hat_{+j})
     X2_I = n sum_ij (p_ij - p_i+ p_+j)^2 / (p_i+ p_+j)
     W_I  = 2 n sum_ij p_ij log{ p_ij / (p_i+ p_+j) }
  bootstrap, centered at the sample table (Delta_ij = p_ij / (p_i+ p_+j)):
     X2*_I = n sum_ij {(p*_ij - p*_i+ p*_+j) - (p_ij - p_i+ p_+j)}^2 / (p_i+ p_+j)
     W*_I  = 2 n sum_ij [ p*_ij log{ p*_ij / (p*_i+ p*_+j Delta_ij) }
                          - (p*_ij - p*_i+ p*_+j Delta_ij) ]
  (each W*_I term is of the form a log(a/c) - a + c >= 0).

Corrections divide by an estimated mean design effect: for GOF the
Rao-Scott style lambda_hat_+ built from per-cell effects
d_hat_k = n v_hat(p_hat_k) / {p_hat_k (1 - p_hat_k)}, and for
independence delta_hat_+ = trace(D_hat_h)/d with
D_hat_h = (P_R+^{-1} kron P_+C^{-1}) (H Sigma_p H'), d = (R-1)(C-1).
Replicate-weight variances supply v_hat and Sigma_p.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CellTable
from .errors import DataError, DiagnosticError
from .refdist import chisq_sf, mixture_eigenvalues
from .results import (BootstrapStatistics, Reference, TestResult,
                      empirical_p)

_NEG_TOL = -1e-10


def _check_probs(p: np.ndarray, name: str, strict: bool = False) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise DataError(f"{name} must be a vector with at least two categories")
    if np.any(p < 0) or (strict and np.any(p <= 0)):
        raise DataError(f"{name} entries must be {'positive' if strict else 'nonnegative'}")
    if abs(p.sum() - 1.0) > 1e-9:
        raise DataError(f"{name} must sum to 1")
    return p


def _xlogy(a: np.ndarray, ratio_num: np.ndarray, ratio_den: np.ndarray) -> np.ndarray:
    """a * log(num/den) with the 0 log 0 = 0 convention for a = num = 0."""
    out = np.zeros(np.broadcast(a, ratio_num, ratio_den).shape)
    pos = a > 0
    num = np.broadcast_to(ratio_num, out.shape)
    den = np.broadcast_to(ratio_den, out.shape)
    av = np.broadcast_to(a, out.shape)
    out[pos] = av[pos] * np.log(num[pos] / den[pos])
    return out


@dataclass(frozen=True)
class GofInput:
    """Validated inputs for a goodness-of-fit run."""

    p_hat: np.ndarray
    p0: np.ndarray
    n: int
    replicates: np.ndarray | None = None      # (K, B) replicate proportions

    def __post_init__(self):
        p_hat = _check_probs(self.p_hat, "estimated proportions")
        p0 = _check_probs(self.p0, "null proportions", strict=True)
        if p_hat.shape != p0.shape:
            raise DataError("estimated and null proportions must align")
        if self.n < 1:
            raise DataError("sample size must be positive")
        object.__setattr__(self, "p_hat", p_hat)
        object.__setattr__(self, "p0", p0)
        if self.replicates is not None:
            reps = np.asarray(self.replicates, dtype=float)
            if reps.ndim != 2 or reps.shape[0] != p_hat.size:
                raise DataError("replicate proportions must be (K, B)")
            object.__setattr__(self, "replicates", reps)


def gof_pearson(p_hat: np.ndarray, p0: np.ndarray, n: int) -> float:
    p_hat = _check_probs(p_hat, "estimated proportions")
    p0 = _check_probs(p0, "null proportions", strict=True)
    return float(n * np.sum((p_hat - p0) ** 2 / p0))


def gof_lrt(p_hat: np.ndarray, p0: np.ndarray, n: int) -> float:
    p_hat = _check_probs(p_hat, "estimated proportions")
    p0 = _check_probs(p0, "null proportions", strict=True)
    return float(2.0 * n * np.sum(_xlogy(p_hat, p_hat, p0)))


def _drop_bad_columns(reps: np.ndarray) -> tuple[np.ndarray, int]:
    good = np.all(np.isfinite(reps), axis=0)
    return reps[:, good], int(np.count_nonzero(~good))


def gof_bootstrap(p_hat: np.ndarray, replicates: np.ndarray, n: int):
    """Replicate statistic pairs (X2*, W*), centered at p_hat.

    Categories with p_hat_k = 0 are a hard error: the replicate Pearson
    denominator is p_hat.
    """
    p_hat = _check_probs(p_hat, "estimated proportions")
    if np.any(p_hat <= 0):
        raise DataError("bootstrap GOF needs strictly positive estimated proportions")
    reps, dropped = _drop_bad_columns(np.asarray(replicates, dtype=float))
    x2 = n * np.sum((reps - p_hat[:, None]) ** 2 / p_hat[:, None], axis=0)
    w = 2.0 * n * np.sum(_xlogy(reps, reps, p_hat[:, None]), axis=0)
    if np.any(w < _NEG_TOL):
        raise DataError("negative bootstrap GOF deviance beyond tolerance")
    w = np.clip(w, 0.0, None)
    B = reps.shape[1] + dropped
    return (BootstrapStatistics(values=x2, dropped=dropped, total=B),
            BootstrapStatistics(values=w, dropped=dropped, total=B))


def gof_design_effects(p_hat: np.ndarray, replicates: np.ndarray, n: int) -> np.ndarray:
    """Per-category d_hat_k = n v_hat(p_hat_k) / {p_hat_k (1 - p_hat_k)}."""
    p_hat = _check_probs(p_hat, "estimated proportions")
    reps, _ = _drop_bad_columns(np.asarray(replicates, dtype=float))
    if reps.shape[1] < 2:
        raise DiagnosticError("design effects need at least two usable replicates")
    v = np.var(reps, axis=1, ddof=1)
    denom = p_hat * (1.0 - p_hat)
    if np.any(denom <= 0):
        raise DataError("design effects undefined for degenerate cells")
    return n * v / denom


def gof_rao_scott(p_hat: np.ndarray, p0: np.ndarray, n: int,
                  replicates: np.ndarray) -> TestResult:
    """First-order corrected Pearson test X2 / lambda_hat_+ vs chi2(K-1).

    lambda_hat_+ = (K-1)^{-1} sum_{k=1}^{K} (p_hat_k / p0_k)(1 - p_hat_k) d_hat_k.
    """
    p_hat = _check_probs(p_hat, "estimated proportions")
    p0 = _check_probs(p0, "null proportions", strict=True)
    K = p_hat.size
    x2 = gof_pearson(p_hat, p0, n)
    d_hat = gof_design_effects(p_hat, replicates, n)
    lam = float(np.sum((p_hat / p0) * (1.0 - p_hat) * d_hat) / (K - 1))
    if lam <= 0:
        raise DiagnosticError("nonpositive mean design effect")
    stat = x2 / lam
    return TestResult(
        method="gof-rao-scott", statistic=stat,
        p_value=chisq_sf(stat, K - 1),
        reference=Reference("chisq", {"df": K - 1}),
        details={"pearson": x2, "lambda_plus": lam, "design_effects": d_hat,
                 "mixture_eigenvalues": gof_mixture_eigenvalues(p_hat, replicates, n)},
    )


def gof_mixture_eigenvalues(p_hat: np.ndarray, replicates: np.ndarray,
                            n: int) -> np.ndarray:
    """Eigenvalues of P0_hat^{-1} Sigma_p_hat on the first K-1 coordinates.

    Sigma_p_hat is n times the replicate covariance; P0_hat is the
    multinomial covariance diag(p) - p p' at p_hat.
    """
    p_hat = _check_probs(p_hat, "estimated proportions")
    reps, _ = _drop_bad_columns(np.asarray(replicates, dtype=float))
    if reps.shape[1] < 2:
        raise DiagnosticError("mixture estimation needs at least two replicates")
    pk = p_hat[:-1]
    sigma = n * np.cov(reps[:-1, :], ddof=1).reshape(pk.size, pk.size)
    p0mat = np.diag(pk) - np.outer(pk, pk)
    # eigenvalues of P0^{-1} Sigma = eigenvalues of Sigma P0^{-1}
    return mixture_eigenvalues(sigma, np.linalg.inv(p0mat))


def gof_bootstrap_test(p_hat, p0, n, replicates, statistic: str = "pearson") -> TestResult:
    """Bootstrap-calibrated GOF test (Pearson or deviance flavor)."""
    x2_boot, w_boot = gof_bootstrap(p_hat, replicates, n)
    if statistic == "pearson":
        stat = gof_pearson(p_hat, p0, n)
        boot = x2_boot
        method = "gof-bootstrap-pearson"
    elif statistic == "lrt":
        stat = gof_lrt(p_hat, p0, n)
        boot = w_boot
        method = "gof-bootstrap-lrt"
    else:
        raise DataError(f"unknown GOF statistic {statistic!r}")
    return TestResult(
        method=method, statistic=stat,
        p_value=empirical_p(stat, boot.values),
        reference=Reference("bootstrap", {"replicates": boot.used}),
        replicates_used=boot.used, replicates_dropped=boot.dropped,
        bootstrap_statistics=boot.values,
    )


# ---------------------------------------------------------------------------
# independence in a two-way table

def independence_stats(table: CellTable) -> tuple[float, float]:
    """(X2_I, W_I) for the hypothesis p_ij = p_i+ p_+j."""
    p = table.proportions
    rm = table.row_margins
    cm = table.col_margins
    if np.any(rm <= 0) or np.any(cm <= 0):
        raise DataError("independence test needs positive margins")
    prod = np.outer(rm, cm)
    x2 = float(table.n * np.sum((p - prod) ** 2 / prod))
    w = float(2.0 * table.n * np.sum(_xlogy(p, p, prod)))
    return x2, w


def independence_bootstrap(table: CellTable, replicate_tables: np.ndarray):
    """Replicate statistic pairs (X2*_I, W*_I), centered at the sample table."""
    p = table.proportions
    rm = table.row_margins
    cm = table.col_margins
    if np.any(rm <= 0) or np.any(cm <= 0):
        raise DataError("independence test needs positive margins")
    prod = np.outer(rm, cm)
    delta = p / prod
    reps = np.asarray(replicate_tables, dtype=float)
    if reps.ndim != 3 or reps.shape[1:] != p.shape:
        raise DataError("replicate tables must be (B, R, C)")
    good = np.all(np.isfinite(reps), axis=(1, 2))
    dropped = int(np.count_nonzero(~good))
    reps = reps[good]
    n = table.n

    rm_star = reps.sum(axis=2)                                   # (B, R)
    cm_star = reps.sum(axis=1)                                   # (B, C)
    prod_star = rm_star[:, :, None] * cm_star[:, None, :]
    resid = (reps - prod_star) - (p - prod)[None, :, :]
    x2 = n * np.sum(resid ** 2 / prod[None, :, :], axis=(1, 2))

    anchor = prod_star * delta[None, :, :]
    terms = _xlogy(reps, reps, anchor) - (reps - anchor)
    if np.any(terms < _NEG_TOL):
        raise DataError("negative deviance term beyond tolerance")
    w = 2.0 * n * np.sum(np.clip(terms, 0.0, None), axis=(1, 2))
    B = len(reps) + dropped
    return (BootstrapStatistics(values=x2, dropped=dropped, total=B),
            BootstrapStatistics(values=w, dropped=dropped, total=B))


def _margin_jacobian(table: CellTable) -> np.ndarray:
    """Jacobian H of h_ij(p) = p_ij - p_i+ p_+j, i<R, j<C, over the free cells.

    Cells are row-major with the last cell (R-1, C-1) dropped; h rows are
    (i, j) for i = 0..R-2, j = 0..C-2.
    """
    p = table.proportions
    R, C = p.shape
    rm = table.row_margins
    cm = table.col_margins
    d = (R - 1) * (C - 1)
    H = np.zeros((d, R * C - 1))
    for i in range(R - 1):
        for j in range(C - 1):
            row = i * (C - 1) + j
            for k in range(R):
                for ell in range(C):
                    if k == R - 1 and ell == C - 1:
                        continue
                    col = k * C + ell
                    val = 0.0
                    if k == i and ell == j:
                        val += 1.0
                    if k == i:
                        val -= cm[j]
                    if ell == j:
                        val -= rm[i]
                    H[row, col] = val
    return H


def _replicate_sigma(table: CellTable, replicate_tables: np.ndarray) -> np.ndarray:
    """n times the replicate covariance of the free cell proportions.

    Cells are row-major with the last cell dropped; non-finite replicate
    tables are excluded.
    """
    p = table.proportions
    R, C = p.shape
    reps = np.asarray(replicate_tables, dtype=float)
    good = np.all(np.isfinite(reps), axis=(1, 2))
    reps = reps[good]
    if reps.shape[0] < 2:
        raise DiagnosticError("design-effect estimation needs at least two replicates")
    flat = reps.reshape(len(reps), R * C)[:, :-1]
    return table.n * np.cov(flat, rowvar=False, ddof=1)


def _interaction_design_matrix(table: CellTable, sigma: np.ndarray) -> np.ndarray:
    H = _margin_jacobian(table)
    hsh = H @ sigma @ H.T
    rm = table.row_margins[:-1]
    cm = table.col_margins[:-1]
    p_r = np.diag(rm) - np.outer(rm, rm)
    p_c = np.diag(cm) - np.outer(cm, cm)
    kron_inv = np.kron(np.linalg.inv(p_r), np.linalg.inv(p_c))
    return kron_inv @ hsh


def independence_design_matrix(table: CellTable,
                               replicate_tables: np.ndarray) -> np.ndarray:
    """D_hat_h = (P_R+^{-1} kron P_+C^{-1}) (H Sigma_p H').

    Sigma_p is n times the replicate covariance of the (RC-1)-vector of
    cell proportions (row-major, last cell dropped).
    """
    sigma = _replicate_sigma(table, replicate_tables)
    return _interaction_design_matrix(table, sigma)


def independence_rao_scott(table: CellTable,
                           replicate_tables: np.ndarray) -> TestResult:
    """Corrected Pearson independence test X2_I / delta_hat_+ vs chi2(d).

    delta_hat_+ is the total design effect of the RC - 1 free cells,
    measured against the multinomial covariance of the fitted independent
    table and spread over the d = (R-1)(C-1) degrees of freedom of the
    test.  With multinomial-like replicates it equals (RC-1)/d, so the
    corrected test errs on the conservative side.
    """
    R, C = table.shape
    d = (R - 1) * (C - 1)
    x2, _ = independence_stats(table)
    sigma = _replicate_sigma(table, replicate_tables)
    fitted = np.outer(table.row_margins, table.col_margins).reshape(-1)[:-1]
    p0 = np.diag(fitted) - np.outer(fitted, fitted)
    delta_plus = float(np.trace(np.linalg.solve(p0, sigma)) / d)
    if delta_plus <= 0:
        raise DiagnosticError("nonpositive mean design effect")
    stat = x2 / delta_plus
    D = _interaction_design_matrix(table, sigma)
    vals = np.clip(np.sort(np.real(np.linalg.eigvals(D)))[::-1], 0.0, None)
    return TestResult(
        method="independence-rao-scott", statistic=stat,
        p_value=chisq_sf(stat, d),
        reference=Reference("chisq", {"df": d}),
        details={"pearson": x2, "delta_plus": delta_plus,
                 "mixture_eigenvalues": vals},
    )


def independence_mixture_eigenvalues(table: CellTable,
                                     replicate_tables: np.ndarray) -> np.ndarray:
    """Eigenvalues of D_hat_h (clamped nonnegative, descending)."""
    D = independence_design_matrix(table, replicate_tables)
    vals = np.sort(np.real(np.linalg.eigvals(D)))[::-1]
    return np.clip(vals, 0.0, None)


def independence_bootstrap_test(table, replicate_tables,
                                statistic: str = "pearson") -> TestResult:
    x2_boot, w_boot = independence_bootstrap(table, replicate_tables)
    x2, w = independence_stats(table)
    if statistic == "pearson":
        stat, boot, method = x2, x2_boot, "independence-bootstrap-pearson"
    elif statistic == "lrt":
        stat, boot, method = w, w_boot, "independence-bootstrap-lrt"
    else:
        raise DataError(f"unknown independence statistic {statistic!r}")
    return TestResult(
        method=method, statistic=stat,
        p_value=empirical_p(stat, boot.values),
        reference=Reference("bootstrap", {"replicates": boot.used}),
        replicates_used=boot.used, replicates_dropped=boot.dropped,
        bootstrap_statistics=boot.values,
    )


def independence_naive_test(table: CellTable, statistic: str = "pearson") -> TestResult:
    R, C = table.shape
    d = (R - 1) * (C - 1)
    x2, w = independence_stats(table)
    stat = x2 if statistic == "pearson" else w
    method = "independence-naive-" + ("pearson" if statistic == "pearson" else "lrt")
    return TestResult(method=method, statistic=stat, p_value=chisq_sf(stat, d),
                      reference=Reference("chisq", {"df": d}))


def gof_naive_test(p_hat, p0, n, statistic: str = "pearson") -> TestResult:
    K = len(np.asarray(p_hat))
    if statistic == "pearson":
        stat, method = gof_pearson(p_hat, p0, n), "gof-naive-pearson"
    elif statistic == "lrt":
        stat, method = gof_lrt(p_hat, p0, n), "gof-naive-lrt"
    else:
        raise DataError(f"unknown GOF statistic {statistic!r}")
    return TestResult(method=method, statistic=stat, p_value=chisq_sf(stat, K - 1),
                      reference=Reference("chisq", {"df": K - 1}))
