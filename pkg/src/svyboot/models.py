"""Survey-weighted model fitting.

Estimation targets the census estimating equation: with base or
replicate weights w_i and a model with linear predictor
eta_i = z_i' theta, z_i = (1, x_i), the weighted score

    S_w(theta) = N^{-1} sum_i w_i (y_i - mu_i) V0(mu_i)^{-1} mu'(eta_i) z_i

is driven to zero by Newton-Raphson with step halving.  The weighted
information is

    I_w(theta) = N^{-1} sum_i w_i [mu'(eta_i)^2 / V0(mu_i)] z_i z_i',

the observed form -d S_w / d theta' for the canonical-link models
shipped here (identity/Gaussian, logit/Bernoulli, identity/quasi).
For parametric models the weighted log-likelihood
l_w(theta) = N^{-1} sum_i w_i log f(y_i; theta) is also available.

Everything is written against a weight *matrix* so that bootstrap
replicates are fitted as one vectorized batch; a single fit is a batch
of one column and follows the identical code path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .data import SurveyDataset
from .errors import DataError, SingularInformationError

_LOG_2PI = float(np.log(2.0 * np.pi))
_COND_MAX = 1e12


def design_matrix(x: np.ndarray) -> np.ndarray:
    """Prepend an intercept column: z_i = (1, x_i)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.column_stack([np.ones(x.shape[0]), x])


def _softplus(t: np.ndarray) -> np.ndarray:
    # log(1 + exp(t)) without overflow
    return np.logaddexp(0.0, t)


class Model:
    """Mean/variance descriptor with linear predictor.

    Subclasses provide the inverse link, the weight functions entering
    score and information, and (when parametric) the log density.
    """

    name: str = "model"
    parametric: bool = False

    def mean(self, eta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def score_factor(self, eta: np.ndarray, mu: np.ndarray) -> np.ndarray:
        """mu'(eta) / V0(mu); multiplies the raw residual (y - mu)."""
        raise NotImplementedError

    def info_factor(self, eta: np.ndarray, mu: np.ndarray, y: np.ndarray) -> np.ndarray:
        """mu'(eta)^2 / V0(mu) (canonical links: no residual correction)."""
        raise NotImplementedError

    def log_density(self, y: np.ndarray, eta: np.ndarray, mu: np.ndarray) -> np.ndarray:
        raise DataError(f"model {self.name!r} has no log density (quasi-likelihood only)")

    def init_theta(self, Z: np.ndarray, y: np.ndarray, W: np.ndarray) -> np.ndarray:
        """Starting values, one row per weight column."""
        return np.zeros((W.shape[1], Z.shape[1]))


def _wls_init(Z: np.ndarray, y: np.ndarray, W: np.ndarray) -> np.ndarray:
    B = W.shape[1]
    p = Z.shape[1]
    A = np.einsum("np,nb,nq->bpq", Z, W, Z)
    rhs = np.einsum("np,nb->bp", Z, W * y[:, None])
    out = np.zeros((B, p))
    for b in range(B):
        try:
            out[b] = np.linalg.solve(A[b], rhs[b])
        except np.linalg.LinAlgError:
            pass  # keep zeros; Newton will flag the singularity
    return out


class GaussianModel(Model):
    """Linear model y | x ~ N(z'theta, 1); the pseudo-MLE is weighted LS."""

    name = "gaussian"
    parametric = True

    def mean(self, eta):
        return eta

    def score_factor(self, eta, mu):
        return np.ones_like(eta)

    def info_factor(self, eta, mu, y):
        return np.ones_like(eta)

    def log_density(self, y, eta, mu):
        r = y - eta
        return -0.5 * (_LOG_2PI + r * r)

    def init_theta(self, Z, y, W):
        return _wls_init(Z, y, W)


class LogisticModel(Model):
    """Bernoulli response with logit link."""

    name = "logistic"
    parametric = True

    def mean(self, eta):
        return expit(eta)

    def score_factor(self, eta, mu):
        return np.ones_like(eta)

    def info_factor(self, eta, mu, y):
        return mu * (1.0 - mu)

    def log_density(self, y, eta, mu):
        # y log mu + (1-y) log(1-mu) = y*eta - log(1+exp(eta)), stabilized
        return y * eta - _softplus(eta)


class QuasiModel(Model):
    """Quasi-likelihood model given by mean and working variance only.

    inverse_link, dmu_deta are functions of eta; variance is a function
    of mu.  Canonical pairs (dmu_deta == variance(mean)) give the exact
    observed information; others get the expected-information form.
    """

    parametric = False

    def __init__(self, name: str,
                 inverse_link: Callable[[np.ndarray], np.ndarray],
                 dmu_deta: Callable[[np.ndarray], np.ndarray],
                 variance: Callable[[np.ndarray], np.ndarray],
                 wls_init: bool = False):
        self.name = name
        self._inv = inverse_link
        self._dmu = dmu_deta
        self._var = variance
        self._wls_init = wls_init

    def mean(self, eta):
        return self._inv(eta)

    def score_factor(self, eta, mu):
        return self._dmu(eta) / self._var(mu)

    def info_factor(self, eta, mu, y):
        d = self._dmu(eta)
        return d * d / self._var(mu)

    def init_theta(self, Z, y, W):
        if self._wls_init:
            return _wls_init(Z, y, W)
        return super().init_theta(Z, y, W)


GAUSSIAN = GaussianModel()
LOGISTIC = LogisticModel()
# mean z'theta with unit working variance; the engine behind the
# cluster-sample quasi-score analyses
QUASI_GAUSSIAN = QuasiModel(
    "quasi-gaussian",
    inverse_link=lambda eta: eta,
    dmu_deta=np.ones_like,
    variance=np.ones_like,
    wls_init=True,
)

MODELS = {m.name: m for m in (GAUSSIAN, LOGISTIC, QUASI_GAUSSIAN)}


# ---------------------------------------------------------------------------
# batch evaluation: thetas (B, p), weight matrix W (n, B)

def score_batch(model: Model, Z: np.ndarray, y: np.ndarray, W: np.ndarray,
                thetas: np.ndarray, N: int) -> np.ndarray:
    eta = Z @ thetas.T
    mu = model.mean(eta)
    g = (y[:, None] - mu) * model.score_factor(eta, mu)
    return np.einsum("np,nb->bp", Z, W * g) / N


def info_batch(model: Model, Z: np.ndarray, y: np.ndarray, W: np.ndarray,
               thetas: np.ndarray, N: int) -> np.ndarray:
    eta = Z @ thetas.T
    mu = model.mean(eta)
    h = model.info_factor(eta, mu, y[:, None])
    return np.einsum("np,nb,nq->bpq", Z, W * h, Z) / N


def loglik_batch(model: Model, Z: np.ndarray, y: np.ndarray, W: np.ndarray,
                 thetas: np.ndarray, N: int) -> np.ndarray:
    if not model.parametric:
        raise DataError(f"model {model.name!r} has no log-likelihood")
    eta = Z @ thetas.T
    mu = model.mean(eta)
    return np.einsum("nb,nb->b", W, model.log_density(y[:, None], eta, mu)) / N


@dataclass(frozen=True)
class BatchFit:
    """Result of fitting one weight column per row of thetas."""

    thetas: np.ndarray
    converged: np.ndarray
    singular: np.ndarray
    iterations: np.ndarray
    score_norms: np.ndarray


def fit_batch(model: Model, Z: np.ndarray, y: np.ndarray, W: np.ndarray, N: int,
              *, free: np.ndarray | None = None,
              init: np.ndarray | None = None,
              tol: float = 1e-10, max_iter: int = 50,
              max_halvings: int = 30) -> BatchFit:
    """Newton-Raphson with step halving on every weight column at once.

    free lists the coordinates being solved for; the rest stay at their
    initial values (profile fitting).  A column is converged when
    sup|S_w,free| < tol.  Steps are halved until the score norm strictly
    decreases; a column that cannot improve within max_halvings, exceeds
    max_iter, or hits a singular information block (condition > 1e12)
    comes back flagged rather than raising.
    """
    n, p = Z.shape
    B = W.shape[1]
    if free is None:
        free = np.arange(p)
    free = np.asarray(free, dtype=np.intp)
    if init is None:
        if free.size == p:
            thetas = model.init_theta(Z, y, W)
        else:
            raise DataError("profile fitting requires explicit initial values")
    else:
        thetas = np.array(init, dtype=float)
        if thetas.ndim == 1:
            thetas = np.tile(thetas, (B, 1))
        else:
            thetas = thetas.copy()
    nan_init = ~np.all(np.isfinite(thetas), axis=1)
    thetas[nan_init] = 0.0

    if free.size == 0:
        # everything pinned: nothing to solve
        return BatchFit(thetas=thetas, converged=np.ones(B, dtype=bool),
                        singular=np.zeros(B, dtype=bool),
                        iterations=np.zeros(B, dtype=int),
                        score_norms=np.zeros(B))

    S = score_batch(model, Z, y, W, thetas, N)
    norms = np.max(np.abs(S[:, free]), axis=1)
    norms = np.where(np.isfinite(norms), norms, np.inf)
    converged = norms < tol
    singular = np.zeros(B, dtype=bool)
    stalled = np.zeros(B, dtype=bool)
    iters = np.zeros(B, dtype=int)

    while True:
        runnable = ~(converged | singular | stalled) & (iters < max_iter)
        idx = np.flatnonzero(runnable)
        if idx.size == 0:
            break
        info = info_batch(model, Z, y, W[:, idx], thetas[idx], N)
        info_ff = info[:, free[:, None], free[None, :]]
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(info_ff)
        bad = ~np.isfinite(cond) | (cond > _COND_MAX)
        singular[idx[bad]] = True
        good = idx[~bad]
        if good.size == 0:
            continue
        delta = np.linalg.solve(info_ff[~bad], S[good][:, free, None])[..., 0]

        remaining = np.arange(good.size)
        step = 1.0
        for _ in range(max_halvings + 1):
            if remaining.size == 0:
                break
            rows = good[remaining]
            cand = thetas[rows].copy()
            cand[:, free] += step * delta[remaining]
            S_c = score_batch(model, Z, y, W[:, rows], cand, N)
            cand_norms = np.max(np.abs(S_c[:, free]), axis=1)
            cand_norms = np.where(np.isfinite(cand_norms), cand_norms, np.inf)
            ok = cand_norms < norms[rows]
            acc = rows[ok]
            thetas[acc] = cand[ok]
            S[acc] = S_c[ok]
            norms[acc] = cand_norms[ok]
            iters[acc] += 1
            remaining = remaining[~ok]
            step *= 0.5
        stalled[good[remaining]] = True
        converged = converged | (norms < tol)

    return BatchFit(thetas=thetas, converged=converged, singular=singular,
                    iterations=iters, score_norms=norms)


# ---------------------------------------------------------------------------
# dataset-level operations

@dataclass(frozen=True)
class ModelFit:
    """Fitted (possibly profile-constrained) pseudo-maximum estimate."""

    model: Model
    theta: np.ndarray
    converged: bool
    iterations: int
    score_norm: float
    info: np.ndarray
    loglik: float | None
    fixed_indices: tuple[int, ...] = ()


def _resolve_weights(data: SurveyDataset, weights) -> np.ndarray:
    if weights is None:
        return data.weights
    w = np.asarray(weights, dtype=float)
    if w.shape != (data.n,):
        raise DataError("weights must have one entry per unit record")
    return w


def _response(data: SurveyDataset) -> np.ndarray:
    y = np.asarray(data.y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DataError("model fitting needs a finite numeric response")
    return y


def weighted_loglik(model: Model, data: SurveyDataset, theta: np.ndarray,
                    weights: np.ndarray | None = None) -> float:
    Z = design_matrix(data.x)
    y = _response(data)
    w = _resolve_weights(data, weights)
    theta = np.asarray(theta, dtype=float)
    return float(loglik_batch(model, Z, y, w[:, None], theta[None, :],
                              data.population_size)[0])


def weighted_score(model: Model, data: SurveyDataset, theta: np.ndarray,
                   weights: np.ndarray | None = None) -> np.ndarray:
    Z = design_matrix(data.x)
    y = _response(data)
    w = _resolve_weights(data, weights)
    theta = np.asarray(theta, dtype=float)
    return score_batch(model, Z, y, w[:, None], theta[None, :],
                       data.population_size)[0]


def weighted_info(model: Model, data: SurveyDataset, theta: np.ndarray,
                  weights: np.ndarray | None = None) -> np.ndarray:
    Z = design_matrix(data.x)
    y = _response(data)
    w = _resolve_weights(data, weights)
    theta = np.asarray(theta, dtype=float)
    return info_batch(model, Z, y, w[:, None], theta[None, :],
                      data.population_size)[0]


def _finish_fit(model: Model, data: SurveyDataset, Z, y, w, batch: BatchFit,
                fixed_indices: tuple[int, ...]) -> ModelFit:
    if batch.singular[0]:
        raise SingularInformationError(
            "weighted information is numerically singular (condition > 1e12)"
        )
    theta = batch.thetas[0]
    N = data.population_size
    info = info_batch(model, Z, y, w[:, None], theta[None, :], N)[0]
    ll = None
    if model.parametric:
        ll = float(loglik_batch(model, Z, y, w[:, None], theta[None, :], N)[0])
    return ModelFit(
        model=model,
        theta=theta,
        converged=bool(batch.converged[0]),
        iterations=int(batch.iterations[0]),
        score_norm=float(batch.score_norms[0]),
        info=info,
        loglik=ll,
        fixed_indices=fixed_indices,
    )


def fit(model: Model, data: SurveyDataset,
        weights: np.ndarray | None = None,
        init: np.ndarray | None = None) -> ModelFit:
    """Solve S_w(theta) = 0 for all coordinates."""
    Z = design_matrix(data.x)
    y = _response(data)
    w = _resolve_weights(data, weights)
    batch = fit_batch(model, Z, y, w[:, None], data.population_size,
                      init=None if init is None else np.asarray(init, float))
    return _finish_fit(model, data, Z, y, w, batch, ())


def fit_profile(model: Model, data: SurveyDataset,
                fixed_indices, fixed_values,
                weights: np.ndarray | None = None,
                init: np.ndarray | None = None) -> ModelFit:
    """Solve the score equations for the free coordinates only.

    fixed_indices / fixed_values pin a subset of theta (0 = intercept,
    then covariates in design order).
    """
    Z = design_matrix(data.x)
    y = _response(data)
    w = _resolve_weights(data, weights)
    p = Z.shape[1]
    fixed_indices = tuple(int(i) for i in fixed_indices)
    fixed_values = np.asarray(fixed_values, dtype=float)
    if len(fixed_indices) != len(fixed_values):
        raise DataError("fixed_indices and fixed_values must align")
    if any(i < 0 or i >= p for i in fixed_indices):
        raise DataError("fixed index out of range")
    if len(set(fixed_indices)) != len(fixed_indices):
        raise DataError("duplicate fixed index")
    free = np.array([i for i in range(p) if i not in fixed_indices], dtype=np.intp)
    use_wls = isinstance(model, GaussianModel) or getattr(model, "_wls_init", False)
    if init is None:
        theta0 = np.zeros(p)
        theta0[list(fixed_indices)] = fixed_values
        if use_wls and free.size:
            # one weighted LS solve on the free block, response offset by
            # the pinned part of the linear predictor
            offset = Z[:, list(fixed_indices)] @ fixed_values if fixed_indices else 0.0
            Zf = Z[:, free]
            A = Zf.T @ (w[:, None] * Zf)
            try:
                theta0[free] = np.linalg.solve(A, Zf.T @ (w * (y - offset)))
            except np.linalg.LinAlgError:
                theta0[free] = 0.0
    else:
        theta0 = np.asarray(init, dtype=float).copy()
        theta0[list(fixed_indices)] = fixed_values
    batch = fit_batch(model, Z, y, w[:, None], data.population_size,
                      free=free, init=theta0)
    return _finish_fit(model, data, Z, y, w, batch, fixed_indices)
