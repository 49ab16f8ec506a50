"""Monte Carlo power studies for the bootstrap-calibrated tests.

Four scenarios, each regenerating its finite population every Monte
Carlo repetition (use fixed_population to freeze it):

  table1  linear model, informative PPSWR sampling
          N units with x ~ U(0,5), y|x ~ N(1 + x, 1); selection
          probabilities proportional to 1 + |y + eps|/2, eps ~ N(0,1);
          n draws; H0: slope = theta2^0; methods nlr nqs ls blr bqs
  table2  logistic model, stratified case-control-type sampling
          5 groups of N/5 with x ~ N(-1 + 0.5 i, 1),
          logit P(y=1) = -1 + 0.5 x; strata = group x y (10), SRS of
          n_h per stratum; methods nlr nqs ls blr bqs
  table3  cluster quasi-Gaussian, two-stage sampling
          G clusters, sizes M_i ~ Po(25 |a_i|) + C0 with a_i ~ N(0,1);
          x ~ N(0, 2^2), y = 1 + x + a_i/2 + N(0,1); n1 PPS-by-size
          cluster draws, SRS of n2 within; methods nqs bqs
  table4  3 x 3 contingency table, PPSWR sampling proportional to
          x_i = beta' y_i, beta_j = 1 + Exp(1); cases I (independence
          holds), II, III; methods np nlr rs bp blr

Rejection rates use alpha = 0.05 with p < alpha.  Reps whose full fit
fails or whose bootstrap loses more than 5% of replicates are excluded
and counted; more than 2% exclusions is a scenario-level error.
"""

from __future__ import annotations

import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from . import __version__
from .bootstrap import (bootstrap_ppswr, bootstrap_stratified,
                        bootstrap_two_stage)
from .data import DesignKind, SurveyDataset, weighted_two_way_table, \
    replicate_two_way_tables
from .designs import (FinitePopulation, draw_ppswr, draw_stratified_srs,
                      draw_two_stage)
from .errors import DataError, DiagnosticError, SvybootError
from .models import (GAUSSIAN, LOGISTIC, QUASI_GAUSSIAN, design_matrix,
                     fit, fit_batch, fit_profile, info_batch, loglik_batch,
                     score_batch)
from .regression import NullSpec, _block_22_1, _partition, \
    _quasi_score_from_parts, design_df, lumley_scott_p
from .categorical import (independence_bootstrap, independence_rao_scott,
                          independence_stats)
from .refdist import chisq_sf
from .results import MAX_DROP_FRACTION, empirical_p
from .rng import substream

_SCENARIOS = ("table1", "table2", "table3", "table4")

_DEFAULTS = {
    "table1": dict(population_size=500, sample_size=20,
                   null_values=(1.0, 1.1, 1.2),
                   methods=("nlr", "nqs", "ls", "blr", "bqs")),
    "table2": dict(population_size=3000, stratum_sample_size=10,
                   null_values=(0.5, 0.4, 0.3),
                   methods=("nlr", "nqs", "ls", "blr", "bqs")),
    "table3": dict(n_clusters=30, min_cluster_size=30, n1=5, n2=5,
                   null_values=(1.0, 1.5), methods=("nqs", "bqs")),
    "table4": dict(population_size=2000, sample_size=100,
                   cases=("I", "II", "III"),
                   methods=("np", "nlr", "rs", "bp", "blr")),
}

_CASE_PROBS = {
    "I": np.array([4, 2, 2, 2, 1, 1, 2, 1, 1], dtype=float) / 16.0,
    "II": np.array([0.25, 0.175, 0.175, 0.075, 0.0625, 0.0875,
                    0.075, 0.0375, 0.0625]),
    "III": np.array([2, 1, 1, 1, 1, 2, 1, 2, 1], dtype=float) / 12.0,
}


def case_gamma(case: str) -> float:
    """Departure from independence sum_ij (p_ij - p_i+ p_+j)^2 / (p_i+ p_+j)."""
    p = _CASE_PROBS[case].reshape(3, 3)
    rm = p.sum(axis=1)
    cm = p.sum(axis=0)
    prod = np.outer(rm, cm)
    return float(np.sum((p - prod) ** 2 / prod))


@dataclass(frozen=True)
class ScenarioConfig:
    """Resolved configuration of one power study."""

    scenario: str
    mc_reps: int = 500
    boot_reps: int = 500
    alpha: float = 0.05
    master_seed: int = 0
    threads: int = 1
    fixed_population: bool = False
    population_size: int | None = None
    sample_size: int | None = None
    stratum_sample_size: int | None = None
    n_clusters: int | None = None
    min_cluster_size: int | None = None
    n1: int | None = None
    n2: int | None = None
    null_values: tuple[float, ...] | None = None
    cases: tuple[str, ...] | None = None
    methods: tuple[str, ...] | None = None

    def resolved(self) -> "ScenarioConfig":
        if self.scenario not in _SCENARIOS:
            raise DataError(f"unknown scenario {self.scenario!r}")
        out = {}
        for key, val in _DEFAULTS[self.scenario].items():
            if getattr(self, key) is None:
                out[key] = val
        cfg = replace(self, **out) if out else self
        if cfg.mc_reps < 1 or cfg.boot_reps < 1:
            raise DataError("mc_reps and boot_reps must be positive")
        if not 0.0 < cfg.alpha < 1.0:
            raise DataError("alpha must be strictly between 0 and 1")
        allowed = set(_DEFAULTS[self.scenario]["methods"])
        bad = [m for m in cfg.methods if m not in allowed]
        if bad:
            raise DataError(
                f"method(s) {bad} not available for {self.scenario}"
            )
        if cfg.cases is not None:
            bad = [c for c in cfg.cases if c not in _CASE_PROBS]
            if bad:
                raise DataError(f"unknown table4 case(s): {bad}")
        return cfg


@dataclass(frozen=True)
class PowerRow:
    method: str
    label: str
    rejections: int
    reps: int

    @property
    def rate(self) -> float:
        return self.rejections / self.reps if self.reps else float("nan")

    @property
    def mc_se(self) -> float:
        if not self.reps:
            return float("nan")
        r = self.rate
        return float(np.sqrt(r * (1.0 - r) / self.reps))


@dataclass(frozen=True)
class PowerTable:
    config: ScenarioConfig
    rows: tuple[PowerRow, ...]
    excluded_reps: int
    replicate_drop_rate: float
    wall_seconds: float = field(default=0.0, compare=False)

    def rate(self, method: str, label: str) -> float:
        for row in self.rows:
            if row.method == method and row.label == label:
                return row.rate
        raise KeyError((method, label))

    def to_dict(self) -> dict:
        cfg = {k: v for k, v in asdict(self.config).items() if v is not None}
        cfg.pop("master_seed", None)
        cfg.pop("threads", None)
        return {
            "artifact": "svyboot",
            "version": __version__,
            "report": "power-table",
            "scenario": self.config.scenario,
            "master_seed": self.config.master_seed,
            "config": cfg,
            "excluded_reps": self.excluded_reps,
            "replicate_drop_rate": self.replicate_drop_rate,
            "rows": [
                {
                    "method": r.method,
                    "label": r.label,
                    "rejections": r.rejections,
                    "reps": r.reps,
                    "rate": r.rate,
                    "mc_se": r.mc_se,
                }
                for r in self.rows
            ],
        }


# ---------------------------------------------------------------------------
# population generators

def gen_population(cfg: ScenarioConfig, rep: int, case: str | None = None) -> FinitePopulation:
    """Population for one Monte Carlo repetition (rep 0 when frozen)."""
    rep_key = 0 if cfg.fixed_population else rep
    tag = case or "-"
    rng = substream(cfg.master_seed, cfg.scenario, "population", rep_key, tag)
    if cfg.scenario == "table1":
        N = cfg.population_size
        x = rng.uniform(0.0, 5.0, N)
        y = 1.0 + x + rng.standard_normal(N)
        eps = rng.standard_normal(N)
        size = 1.0 + np.abs(y + eps) / 2.0
        return FinitePopulation(y=y, x=x, selection_prob=size / size.sum())
    if cfg.scenario == "table2":
        N = cfg.population_size
        if N % 5:
            raise DataError("table2 population size must be divisible by 5")
        per = N // 5
        group = np.repeat(np.arange(1, 6), per)
        x = rng.standard_normal(N) + (-1.0 + 0.5 * group)
        pr = expit(-1.0 + 0.5 * x)
        y = (rng.random(N) < pr).astype(float)
        stratum = np.array([f"{g}:{int(v)}" for g, v in zip(group, y)], dtype=object)
        return FinitePopulation(y=y, x=x, stratum=stratum)
    if cfg.scenario == "table3":
        G = cfg.n_clusters
        a = rng.standard_normal(G)
        sizes = rng.poisson(25.0 * np.abs(a)) + cfg.min_cluster_size
        cluster_id = np.repeat(np.arange(G), sizes)
        total = int(sizes.sum())
        x = 2.0 * rng.standard_normal(total)
        y = 1.0 + x + a[cluster_id] / 2.0 + rng.standard_normal(total)
        return FinitePopulation(y=y, x=x, cluster_id=cluster_id,
                                cluster_sizes=sizes)
    if cfg.scenario == "table4":
        N = cfg.population_size
        probs = _CASE_PROBS[case]
        beta = 1.0 + rng.exponential(1.0, probs.size)
        cells = rng.choice(probs.size, size=N, p=probs)
        x = beta[cells]
        return FinitePopulation(y=cells.astype(float), x=x,
                                selection_prob=x / x.sum())
    raise DataError(f"unknown scenario {cfg.scenario!r}")


# ---------------------------------------------------------------------------
# per-rep batteries

def _regression_rep(cfg: ScenarioConfig, rep: int) -> tuple[list, float]:
    """One repetition of table1/table2/table3; returns (outcomes, drop rate)."""
    scen = cfg.scenario
    pop = gen_population(cfg, rep)
    seed_sample = substream(cfg.master_seed, scen, "sample-seed", rep).integers(2**63)
    seed_boot = substream(cfg.master_seed, scen, "boot-seed", rep).integers(2**63)

    if scen == "table1":
        model = GAUSSIAN
        data = draw_ppswr(pop, pop.selection_prob, cfg.sample_size, seed_sample)
        matrix = bootstrap_ppswr(data, cfg.boot_reps, seed_boot)
    elif scen == "table2":
        model = LOGISTIC
        data = draw_stratified_srs(pop, cfg.stratum_sample_size, seed_sample)
        matrix = bootstrap_stratified(data, cfg.boot_reps, seed_boot)
    else:
        model = QUASI_GAUSSIAN
        data = draw_two_stage(pop, cfg.n1, cfg.n2, seed_sample)
        matrix = bootstrap_two_stage(data, cfg.boot_reps, seed_boot)

    methods = cfg.methods
    slope = 1  # theta2 is the slope coordinate
    n = data.n
    N = data.population_size
    Z = design_matrix(data.x)
    y = np.asarray(data.y, dtype=float)
    W = matrix.weights
    B = matrix.n_replicates

    full = fit(model, data)
    if not full.converged:
        raise DiagnosticError("full fit did not converge")
    idx1, idx2 = _partition(NullSpec((slope,), (0.0,)), Z.shape[1])

    need_full_boot = any(m in methods for m in ("blr", "ls"))
    need_prof_boot = any(m in methods for m in ("blr", "bqs"))

    w_star = x2_star = None
    var_slope = None
    drop_counts = []
    full_batch = prof_batch = None
    if need_full_boot:
        full_batch = fit_batch(model, Z, y, W, N, init=np.tile(full.theta, (B, 1)))
    if need_prof_boot:
        theta0 = np.tile(full.theta, (B, 1))
        prof_batch = fit_batch(model, Z, y, W, N, free=idx1, init=theta0)

    if "blr" in methods:
        keep = (full_batch.converged & ~full_batch.singular
                & prof_batch.converged & ~prof_batch.singular)
        drop_counts.append(B - int(keep.sum()))
        ll_full = loglik_batch(model, Z, y, W[:, keep], full_batch.thetas[keep], N)
        ll_prof = loglik_batch(model, Z, y, W[:, keep], prof_batch.thetas[keep], N)
        w_star = np.clip(-2.0 * n * (ll_prof - ll_full), 0.0, None)
    if "bqs" in methods:
        keep = prof_batch.converged & ~prof_batch.singular
        drop_counts.append(B - int(keep.sum()))
        S = score_batch(model, Z, y, W[:, keep], prof_batch.thetas[keep], N)
        info = info_batch(model, Z, y, W[:, keep], prof_batch.thetas[keep], N)
        with np.errstate(all="ignore"):
            vals = _quasi_score_from_parts(S, info, idx1, idx2)
        x2_star = n * vals[np.isfinite(vals)]
    if "ls" in methods:
        keep = full_batch.converged & ~full_batch.singular
        drop_counts.append(B - int(keep.sum()))
        var_slope = float(np.var(full_batch.thetas[keep, slope], ddof=1))

    worst_drop = max(drop_counts, default=0)
    if worst_drop > MAX_DROP_FRACTION * B:
        raise DiagnosticError("too many bootstrap replicates dropped")

    i221 = float(_block_22_1(full.info, idx1, idx2)[0, 0])
    k_df = design_df(data) - Z.shape[1]

    outcomes = []
    for theta0_val in cfg.null_values:
        label = f"theta2={theta0_val:g}"
        prof = fit_profile(model, data, (slope,), (theta0_val,), init=full.theta)
        if not prof.converged:
            raise DiagnosticError("profile fit did not converge")
        pvals = {}
        if model.parametric:
            w_obs = max(-2.0 * n * (prof.loglik - full.loglik), 0.0)
        S0 = score_batch(model, Z, y, data.weights[:, None], prof.theta[None, :], N)
        I0 = info_batch(model, Z, y, data.weights[:, None], prof.theta[None, :], N)
        x2_obs = n * float(_quasi_score_from_parts(S0, I0, idx1, idx2)[0])
        if "nlr" in methods:
            pvals["nlr"] = chisq_sf(w_obs, 1)
        if "nqs" in methods:
            pvals["nqs"] = chisq_sf(x2_obs, 1)
        if "ls" in methods:
            delta = n * var_slope * i221
            pvals["ls"] = lumley_scott_p(w_obs, delta, k_df)
        if "blr" in methods:
            pvals["blr"] = empirical_p(w_obs, w_star)
        if "bqs" in methods:
            pvals["bqs"] = empirical_p(x2_obs, x2_star)
        for method in methods:
            outcomes.append((method, label, bool(pvals[method] < cfg.alpha)))
    drop_rate = worst_drop / B if B else 0.0
    return outcomes, drop_rate


def _table4_rep(cfg: ScenarioConfig, rep: int) -> tuple[list, float]:
    outcomes = []
    worst_drop_rate = 0.0
    for case in cfg.cases:
        pop = gen_population(cfg, rep, case)
        seed_sample = substream(cfg.master_seed, "table4", "sample-seed", rep, case).integers(2**63)
        seed_boot = substream(cfg.master_seed, "table4", "boot-seed", rep, case).integers(2**63)
        data = draw_ppswr(pop, pop.selection_prob, cfg.sample_size, seed_sample)
        matrix = bootstrap_ppswr(data, cfg.boot_reps, seed_boot)
        cells = np.asarray(data.y, dtype=int)
        rows = cells // 3
        cols = cells % 3
        table = weighted_two_way_table(data, rows, cols,
                                       row_categories=(0, 1, 2),
                                       col_categories=(0, 1, 2))
        rep_tables = replicate_two_way_tables(data, rows, cols,
                                              row_categories=(0, 1, 2),
                                              col_categories=(0, 1, 2),
                                              matrix=matrix)
        x2, w = independence_stats(table)
        label = f"case={case}"
        pvals = {}
        if "np" in cfg.methods:
            pvals["np"] = chisq_sf(x2, 4)
        if "nlr" in cfg.methods:
            pvals["nlr"] = chisq_sf(w, 4)
        if "rs" in cfg.methods:
            pvals["rs"] = independence_rao_scott(table, rep_tables).p_value
        if "bp" in cfg.methods or "blr" in cfg.methods:
            x2_boot, w_boot = independence_bootstrap(table, rep_tables)
            worst_drop_rate = max(worst_drop_rate,
                                  x2_boot.dropped / matrix.n_replicates)
            if "bp" in cfg.methods:
                pvals["bp"] = empirical_p(x2, x2_boot.values)
            if "blr" in cfg.methods:
                pvals["blr"] = empirical_p(w, w_boot.values)
        for method in cfg.methods:
            outcomes.append((method, label, bool(pvals[method] < cfg.alpha)))
    return outcomes, worst_drop_rate


def _run_rep(args) -> tuple[int, list | None, float]:
    cfg, rep = args
    try:
        if cfg.scenario == "table4":
            outcomes, drop = _table4_rep(cfg, rep)
        else:
            outcomes, drop = _regression_rep(cfg, rep)
        return rep, outcomes, drop
    except (SvybootError, np.linalg.LinAlgError):
        return rep, None, 0.0


# ---------------------------------------------------------------------------
# driver

def run_scenario(config: ScenarioConfig) -> PowerTable:
    """Run one Monte Carlo power study.

    Deterministic in (config, master_seed): per-rep substreams make the
    result independent of the thread count.
    """
    cfg = config.resolved()
    start = time.perf_counter()
    jobs = [(cfg, rep) for rep in range(cfg.mc_reps)]
    if cfg.threads > 1:
        chunk = max(1, cfg.mc_reps // (cfg.threads * 8))
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_run_rep, jobs, chunksize=chunk))
    else:
        results = [_run_rep(job) for job in jobs]
    results.sort(key=lambda t: t[0])

    labels = ([f"theta2={v:g}" for v in cfg.null_values]
              if cfg.scenario != "table4" else [f"case={c}" for c in cfg.cases])
    counts = {(m, lab): 0 for m in cfg.methods for lab in labels}
    excluded = 0
    drop_rates = []
    for _, outcomes, drop in results:
        if outcomes is None:
            excluded += 1
            continue
        drop_rates.append(drop)
        for method, label, reject in outcomes:
            counts[(method, label)] += int(reject)
    used = cfg.mc_reps - excluded
    if excluded > 0.02 * cfg.mc_reps:
        raise DiagnosticError(
            f"{excluded} of {cfg.mc_reps} Monte Carlo reps were not estimable"
        )
    rows = tuple(
        PowerRow(method=m, label=lab, rejections=counts[(m, lab)], reps=used)
        for m in cfg.methods for lab in labels
    )
    wall = time.perf_counter() - start
    return PowerTable(
        config=cfg, rows=rows, excluded_reps=excluded,
        replicate_drop_rate=float(np.mean(drop_rates)) if drop_rates else 0.0,
        wall_seconds=wall,
    )


def emit_report(table: PowerTable, fmt: str = "json") -> str:
    """Render a power table as json, text, or csv (identical numbers)."""
    if fmt == "json":
        return json.dumps(table.to_dict(), indent=2) + "\n"
    if fmt == "csv":
        lines = ["method,label,rejections,reps,rate,mc_se"]
        for r in table.rows:
            lines.append(f"{r.method},{r.label},{r.rejections},{r.reps},"
                         f"{r.rate!r},{r.mc_se!r}")
        return "\n".join(lines) + "\n"
    if fmt == "text":
        labels = []
        for r in table.rows:
            if r.label not in labels:
                labels.append(r.label)
        methods = []
        for r in table.rows:
            if r.method not in methods:
                methods.append(r.method)
        width = max(18, *(len(lab) + 2 for lab in labels))
        head = f"scenario {table.config.scenario}  (mc={table.config.mc_reps}, " \
               f"B={table.config.boot_reps}, seed={table.config.master_seed})"
        lines = [head, ""]
        lines.append("method".ljust(10) + "".join(lab.rjust(width) for lab in labels))
        by_key = {(r.method, r.label): r for r in table.rows}
        for m in methods:
            cells = [repr(by_key[(m, lab)].rate).rjust(width) for lab in labels]
            lines.append(m.ljust(10) + "".join(cells))
        lines.append("")
        lines.append(f"excluded reps: {table.excluded_reps}; "
                     f"mean replicate drop rate: {table.replicate_drop_rate!r}")
        return "\n".join(lines) + "\n"
    raise DataError(f"unknown report format {fmt!r}")


def print_wall_time(table: PowerTable, stream=sys.stderr) -> None:
    print(f"[svyboot] scenario {table.config.scenario} wall time: "
          f"{table.wall_seconds:.1f}s", file=stream)
