"""Hypothesis tests on regression coefficients under complex sampling.

For theta = (theta1, theta2) and H0: theta2 = theta2^0 the module
provides

  * the weighted likelihood-ratio statistic
        W(theta2^0) = -2 n { l_w(theta_hat^0) - l_w(theta_hat) },
  * the weighted quasi-score statistic, in its reduced form
        X2_QS = S_w2' I_w22.1^{-1} S_w2   at  theta_hat^0,
    whose null limit applies to n * X2_QS,
  * Wald statistics with linearized (sandwich) or bootstrap variance,
  * a scaled-F correction (Lumley-Scott style) of the LRT, and
  * bootstrap calibration of LRT and quasi-score references.

The bootstrap replicates refit under replicate weights with the nuisance
block free and theta2 pinned at its *full-sample* estimate, so the
replicate statistics estimate the null distribution regardless of
whether H0 holds.  Non-converged or singular replicates are dropped and
counted; losing more than 5% is a diagnostic error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import BootstrapWeightMatrix, DesignKind, SurveyDataset
from .errors import DataError, DiagnosticError
from .models import (Model, ModelFit, design_matrix, fit, fit_profile,
                     fit_batch, info_batch, loglik_batch, score_batch,
                     _response, _resolve_weights)
from .refdist import chisq_sf, f_sf
from .results import BootstrapStatistics, Reference, TestResult, empirical_p

_W_FLOOR = -1e-10


@dataclass(frozen=True)
class NullSpec:
    """H0: theta[indices] = values (0 = intercept, covariates follow)."""

    indices: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        vals = tuple(float(v) for v in self.values)
        if len(idx) != len(vals) or not idx:
            raise DataError("null specification must pin at least one coordinate")
        if len(set(idx)) != len(idx):
            raise DataError("duplicate coordinate in null specification")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)

    @property
    def q(self) -> int:
        return len(self.indices)


def _clamp_nonneg(value: float, what: str) -> float:
    if value < _W_FLOOR:
        raise DataError(f"{what} is negative beyond numerical tolerance: {value}")
    return max(value, 0.0)


def _require_converged(mfit: ModelFit, what: str) -> ModelFit:
    if not mfit.converged:
        raise DiagnosticError(f"{what} did not converge")
    return mfit


def _partition(null: NullSpec, p: int):
    idx2 = np.asarray(null.indices, dtype=np.intp)
    if np.any(idx2 >= p) or np.any(idx2 < 0):
        raise DataError("null coordinate out of range")
    idx1 = np.array([i for i in range(p) if i not in null.indices], dtype=np.intp)
    return idx1, idx2


def _block_22_1(info: np.ndarray, idx1: np.ndarray, idx2: np.ndarray) -> np.ndarray:
    """I_22.1 = I_22 - I_21 I_11^{-1} I_12 (ndim 2 or stacked)."""
    i22 = info[..., idx2[:, None], idx2[None, :]]
    if idx1.size == 0:
        return i22
    i11 = info[..., idx1[:, None], idx1[None, :]]
    i12 = info[..., idx1[:, None], idx2[None, :]]
    i21 = info[..., idx2[:, None], idx1[None, :]]
    return i22 - i21 @ np.linalg.solve(i11, i12)


# ---------------------------------------------------------------------------
# likelihood ratio

def lrt(model: Model, data: SurveyDataset, null: NullSpec,
        *, full_fit: ModelFit | None = None,
        null_fit: ModelFit | None = None) -> float:
    """W(theta2^0) = -2 n { l_w(theta_hat^0) - l_w(theta_hat) }."""
    if not model.parametric:
        raise DataError("likelihood-ratio test needs a parametric model")
    full = full_fit or fit(model, data)
    _require_converged(full, "full fit")
    prof = null_fit or fit_profile(model, data, null.indices, null.values)
    _require_converged(prof, "null profile fit")
    w_stat = -2.0 * data.n * (prof.loglik - full.loglik)
    return _clamp_nonneg(w_stat, "likelihood-ratio statistic")


def lrt_bootstrap(model: Model, data: SurveyDataset,
                  matrix: BootstrapWeightMatrix, null: NullSpec,
                  *, full_fit: ModelFit | None = None) -> BootstrapStatistics:
    """Replicate statistics W*_b = -2 n { l*_w(theta1*_b, theta2_hat) - l*_w(theta*_b) }.

    theta2_hat is the full-sample estimate; each replicate refits the
    full model and the profile with theta2 pinned there, both under the
    replicate weights.
    """
    if not model.parametric:
        raise DataError("likelihood-ratio test needs a parametric model")
    full = full_fit or fit(model, data)
    _require_converged(full, "full fit")
    Z = design_matrix(data.x)
    y = _response(data)
    N = data.population_size
    W = matrix.weights
    B = matrix.n_replicates
    p = Z.shape[1]
    idx1, idx2 = _partition(null, p)
    pinned = full.theta[idx2]

    free_fit = fit_batch(model, Z, y, W, N, init=np.tile(full.theta, (B, 1)))
    theta_prof0 = np.tile(full.theta, (B, 1))
    theta_prof0[:, idx2] = pinned
    prof_fit = fit_batch(model, Z, y, W, N, free=idx1, init=theta_prof0)

    keep = (free_fit.converged & ~free_fit.singular
            & prof_fit.converged & ~prof_fit.singular)
    ll_full = loglik_batch(model, Z, y, W[:, keep], free_fit.thetas[keep], N)
    ll_prof = loglik_batch(model, Z, y, W[:, keep], prof_fit.thetas[keep], N)
    w_star = -2.0 * data.n * (ll_prof - ll_full)
    if np.any(w_star < _W_FLOOR):
        raise DataError("negative bootstrap LRT statistic beyond tolerance")
    w_star = np.clip(w_star, 0.0, None)
    return BootstrapStatistics(values=w_star, dropped=int(B - keep.sum()), total=B)


# ---------------------------------------------------------------------------
# quasi-score

def _quasi_score_from_parts(S: np.ndarray, info: np.ndarray,
                            idx1: np.ndarray, idx2: np.ndarray) -> np.ndarray:
    """Reduced-form statistic S_2' I_22.1^{-1} S_2 for stacked inputs."""
    s2 = S[..., idx2]
    i221 = _block_22_1(info, idx1, idx2)
    sol = np.linalg.solve(i221, s2[..., None])[..., 0]
    return np.einsum("...k,...k->...", s2, sol)


def quasi_score(model: Model, data: SurveyDataset, null: NullSpec,
                *, null_fit: ModelFit | None = None) -> float:
    """Reduced-form X2_QS at the profile solution (unscaled).

    The chi-square approximation applies to n * X2_QS.
    """
    prof = null_fit or fit_profile(model, data, null.indices, null.values)
    _require_converged(prof, "null profile fit")
    Z = design_matrix(data.x)
    y = _response(data)
    w = data.weights
    N = data.population_size
    idx1, idx2 = _partition(null, Z.shape[1])
    S = score_batch(model, Z, y, w[:, None], prof.theta[None, :], N)[0]
    info = info_batch(model, Z, y, w[:, None], prof.theta[None, :], N)[0]
    val = float(_quasi_score_from_parts(S[None, :], info[None, :, :], idx1, idx2)[0])
    return _clamp_nonneg(val, "quasi-score statistic")


def quasi_score_full_form(model: Model, data: SurveyDataset, null: NullSpec,
                          *, null_fit: ModelFit | None = None) -> float:
    """Full-form S_w' I_w^{-1} S_w at the profile solution.

    Equals the reduced form because the nuisance score block vanishes
    there; kept as an independent computation for cross-checks.
    """
    prof = null_fit or fit_profile(model, data, null.indices, null.values)
    _require_converged(prof, "null profile fit")
    Z = design_matrix(data.x)
    y = _response(data)
    w = data.weights
    N = data.population_size
    S = score_batch(model, Z, y, w[:, None], prof.theta[None, :], N)[0]
    info = info_batch(model, Z, y, w[:, None], prof.theta[None, :], N)[0]
    return float(S @ np.linalg.solve(info, S))


def quasi_score_bootstrap(model: Model, data: SurveyDataset,
                          matrix: BootstrapWeightMatrix, null: NullSpec,
                          *, full_fit: ModelFit | None = None) -> BootstrapStatistics:
    """Replicate statistics X2*_QS(theta2_hat), unscaled like quasi_score.

    Each replicate solves the nuisance score equations under replicate
    weights with theta2 pinned at the full-sample estimate, then forms
    the reduced-form quadratic with replicate-weight score and
    information.
    """
    full = full_fit or fit(model, data)
    _require_converged(full, "full fit")
    Z = design_matrix(data.x)
    y = _response(data)
    N = data.population_size
    W = matrix.weights
    B = matrix.n_replicates
    p = Z.shape[1]
    idx1, idx2 = _partition(null, p)

    theta0 = np.tile(full.theta, (B, 1))
    prof = fit_batch(model, Z, y, W, N, free=idx1, init=theta0)
    keep = prof.converged & ~prof.singular
    thetas = prof.thetas[keep]
    Wk = W[:, keep]
    S = score_batch(model, Z, y, Wk, thetas, N)
    info = info_batch(model, Z, y, Wk, thetas, N)
    with np.errstate(all="ignore"):
        vals = _quasi_score_from_parts(S, info, idx1, idx2)
    good = np.isfinite(vals)
    vals = vals[good]
    if np.any(vals < _W_FLOOR):
        raise DataError("negative bootstrap quasi-score statistic beyond tolerance")
    vals = np.clip(vals, 0.0, None)
    dropped = int(B - len(vals))
    return BootstrapStatistics(values=vals, dropped=dropped, total=B)


# ---------------------------------------------------------------------------
# variance estimators and Wald

def sandwich_covariance(model: Model, data: SurveyDataset,
                        mfit: ModelFit | None = None) -> np.ndarray:
    """Linearized variance of theta_hat:
    I_w^{-1} [ N^{-2} sum_i w_i^2 u_i u_i' ] I_w^{-1}.
    """
    mfit = mfit or fit(model, data)
    _require_converged(mfit, "full fit")
    Z = design_matrix(data.x)
    y = _response(data)
    w = data.weights
    N = data.population_size
    eta = Z @ mfit.theta
    mu = model.mean(eta)
    g = (y - mu) * model.score_factor(eta, mu)
    U = Z * (w * g)[:, None]                     # rows w_i u_i
    meat = (U.T @ U) / (N * N)
    bread = np.linalg.inv(mfit.info)
    return bread @ meat @ bread.T


def bootstrap_theta(model: Model, data: SurveyDataset,
                    matrix: BootstrapWeightMatrix,
                    *, full_fit: ModelFit | None = None):
    """Full refits under every replicate weight column.

    Returns (thetas (B_eff, p), dropped count).
    """
    full = full_fit or fit(model, data)
    _require_converged(full, "full fit")
    Z = design_matrix(data.x)
    y = _response(data)
    N = data.population_size
    W = matrix.weights
    B = matrix.n_replicates
    batch = fit_batch(model, Z, y, W, N, init=np.tile(full.theta, (B, 1)))
    keep = batch.converged & ~batch.singular
    return batch.thetas[keep], int(B - keep.sum())


def bootstrap_covariance(thetas: np.ndarray) -> np.ndarray:
    """Empirical covariance of replicate estimates (rows)."""
    if thetas.shape[0] < 2:
        raise DiagnosticError("bootstrap covariance needs at least two replicates")
    return np.cov(thetas, rowvar=False, ddof=1).reshape(
        thetas.shape[1], thetas.shape[1]
    )


def wald(model: Model, data: SurveyDataset, null: NullSpec,
         variance: str = "sandwich",
         matrix: BootstrapWeightMatrix | None = None,
         *, full_fit: ModelFit | None = None) -> TestResult:
    """Wald test of H0: theta2 = theta2^0.

    Scalar nulls report the z statistic against the standard normal;
    vector nulls report the quadratic form against chi-square(q).
    """
    full = full_fit or fit(model, data)
    _require_converged(full, "full fit")
    dropped = 0
    used = 0
    if variance == "sandwich":
        V = sandwich_covariance(model, data, full)
    elif variance == "bootstrap":
        if matrix is None:
            raise DataError("bootstrap variance needs replicate weights")
        thetas, dropped = bootstrap_theta(model, data, matrix, full_fit=full)
        BootstrapStatistics(values=np.zeros(len(thetas)), dropped=dropped,
                            total=matrix.n_replicates)  # drop-rate check
        used = len(thetas)
        V = bootstrap_covariance(thetas)
    else:
        raise DataError(f"unknown variance estimator {variance!r}")
    idx2 = np.asarray(null.indices, dtype=np.intp)
    diff = full.theta[idx2] - np.asarray(null.values)
    V22 = V[idx2[:, None], idx2[None, :]]
    if null.q == 1:
        se = float(np.sqrt(V22[0, 0]))
        if se == 0:
            raise DataError("Wald standard error is zero")
        z = float(diff[0] / se)
        p = float(chisq_sf(z * z, 1))
        ref = Reference("normal", {"mean": 0.0, "sd": 1.0})
        return TestResult(method=f"wald-{variance}", statistic=z, p_value=p,
                          reference=ref, replicates_used=used,
                          replicates_dropped=dropped,
                          details={"se": se, "estimate": float(full.theta[idx2][0])})
    stat = float(diff @ np.linalg.solve(V22, diff))
    p = chisq_sf(stat, null.q)
    return TestResult(method=f"wald-{variance}", statistic=stat, p_value=p,
                      reference=Reference("chisq", {"df": null.q}),
                      replicates_used=used, replicates_dropped=dropped)


# ---------------------------------------------------------------------------
# Lumley-Scott scaled-F correction of the LRT

def design_df(data: SurveyDataset) -> int:
    """Design degrees of freedom entering the F reference.

    Poisson / PPSWR: n; stratified: sum_h (n_h - 1); two-stage: number
    of first-stage draws.  The model parameter count is subtracted by
    the caller.
    """
    if data.design == DesignKind.STRATIFIED_SRS:
        labels = data.stratum.tolist()
        uniq = sorted(set(labels))
        return int(sum(labels.count(u) - 1 for u in uniq))
    if data.design == DesignKind.TWO_STAGE_CLUSTER:
        return len(set(data.cluster.tolist()))
    return data.n


def lumley_scott_p(w_stat: float, delta: float, k: int) -> float:
    """p-value of the scaled statistic (W / delta) against F_{1,k}."""
    if delta <= 0:
        raise DataError("scale estimate must be positive")
    if k < 1:
        raise DiagnosticError("no design degrees of freedom left for the F reference")
    return f_sf(w_stat / delta, 1, k)


def lumley_scott(model: Model, data: SurveyDataset, null: NullSpec,
                 matrix: BootstrapWeightMatrix | None = None,
                 variance: str = "bootstrap",
                 *, full_fit: ModelFit | None = None,
                 boot_thetas: np.ndarray | None = None,
                 dropped: int = 0) -> TestResult:
    """LRT with a first-order scale correction against F_{1,k}.

    delta_hat = n * V_hat(theta2_hat) * I_w22.1(theta_hat); V_hat comes
    from bootstrap refits (default) or the sandwich.  Only scalar nulls
    are supported; the F_{1,k} reference has no q > 1 analogue here.
    """
    if null.q != 1:
        raise DataError("scaled-F correction supports scalar nulls only")
    full = full_fit or fit(model, data)
    _require_converged(full, "full fit")
    w_stat = lrt(model, data, null, full_fit=full)
    idx1, idx2 = _partition(null, len(full.theta))
    i221 = float(_block_22_1(full.info, idx1, idx2)[0, 0])
    used = 0
    if variance == "bootstrap":
        if boot_thetas is None:
            if matrix is None:
                raise DataError("bootstrap variance needs replicate weights")
            boot_thetas, dropped = bootstrap_theta(model, data, matrix, full_fit=full)
            BootstrapStatistics(values=np.zeros(len(boot_thetas)), dropped=dropped,
                                total=dropped + len(boot_thetas))
        used = len(boot_thetas)
        v22 = float(np.var(boot_thetas[:, idx2[0]], ddof=1))
    elif variance == "sandwich":
        V = sandwich_covariance(model, data, full)
        v22 = float(V[idx2[0], idx2[0]])
    else:
        raise DataError(f"unknown variance estimator {variance!r}")
    delta = data.n * v22 * i221
    k = design_df(data) - len(full.theta)
    p = lumley_scott_p(w_stat, delta, k)
    return TestResult(
        method="lumley-scott", statistic=w_stat / delta, p_value=p,
        reference=Reference("f", {"df1": 1, "df2": k}),
        replicates_used=used, replicates_dropped=dropped,
        details={"w": w_stat, "delta": delta},
    )


# ---------------------------------------------------------------------------
# assembled tests

def naive_lrt_test(model, data, null, *, full_fit=None, null_fit=None) -> TestResult:
    w_stat = lrt(model, data, null, full_fit=full_fit, null_fit=null_fit)
    return TestResult(method="nlr", statistic=w_stat,
                      p_value=chisq_sf(w_stat, null.q),
                      reference=Reference("chisq", {"df": null.q}))


def naive_quasi_score_test(model, data, null, *, null_fit=None) -> TestResult:
    raw = quasi_score(model, data, null, null_fit=null_fit)
    stat = data.n * raw
    return TestResult(method="nqs", statistic=stat,
                      p_value=chisq_sf(stat, null.q),
                      reference=Reference("chisq", {"df": null.q}),
                      details={"unscaled": raw})


def bootstrap_lrt_test(model, data, null, matrix, *, full_fit=None,
                       boot: BootstrapStatistics | None = None) -> TestResult:
    w_stat = lrt(model, data, null, full_fit=full_fit)
    boot = boot or lrt_bootstrap(model, data, matrix, null, full_fit=full_fit)
    return TestResult(method="blr", statistic=w_stat,
                      p_value=empirical_p(w_stat, boot.values),
                      reference=Reference("bootstrap", {"replicates": boot.used}),
                      replicates_used=boot.used, replicates_dropped=boot.dropped,
                      bootstrap_statistics=boot.values)


def bootstrap_quasi_score_test(model, data, null, matrix, *, full_fit=None,
                               boot: BootstrapStatistics | None = None) -> TestResult:
    raw = quasi_score(model, data, null)
    stat = data.n * raw
    boot = boot or quasi_score_bootstrap(model, data, matrix, null, full_fit=full_fit)
    scaled = data.n * boot.values
    return TestResult(method="bqs", statistic=stat,
                      p_value=empirical_p(stat, scaled),
                      reference=Reference("bootstrap", {"replicates": boot.used}),
                      replicates_used=boot.used, replicates_dropped=boot.dropped,
                      bootstrap_statistics=scaled)


def run_regression_test(method: str, model: Model, data: SurveyDataset,
                        null: NullSpec,
                        matrix: BootstrapWeightMatrix | None = None) -> TestResult:
    """Dispatch a named test; bootstrap-backed methods need replicate weights."""
    method = method.lower()
    needs_matrix = {"blr", "bqs", "ls", "wald-bootstrap"}
    if method in needs_matrix and matrix is None:
        raise DataError(f"method {method!r} needs bootstrap replicate weights")
    if method == "nlr":
        return naive_lrt_test(model, data, null)
    if method == "nqs":
        return naive_quasi_score_test(model, data, null)
    if method == "blr":
        return bootstrap_lrt_test(model, data, null, matrix)
    if method == "bqs":
        return bootstrap_quasi_score_test(model, data, null, matrix)
    if method == "ls":
        return lumley_scott(model, data, null, matrix)
    if method == "wald":
        return wald(model, data, null, "sandwich")
    if method == "wald-bootstrap":
        return wald(model, data, null, "bootstrap", matrix)
    raise DataError(f"unknown test method {method!r}")
