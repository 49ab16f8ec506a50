"""Design-consistent bootstrap replicate weights.

Each generator mimics the original two phases of sampling: first rebuild
a pseudo-population from the sample (multinomial replication of sampled
units, proportional to their weights), then redraw the original design
from that pseudo-population.  The replicate weight of a unit record is
its base weight times the number of times it is redrawn, rescaled by the
replicate design weight ratio.  Replicate b depends only on
(master_seed, design tag, b), so columns can be generated in any order
or in parallel without changing values.

Poisson design
  1. (N_1*,...,N_n*) ~ MN(N; p) with p_i = w_i / sum_j w_j
  2. m_i* ~ Bin(N_i*, pi_i) independently, pi_i = 1/w_i
  3. w_i* = w_i m_i*

PPSWR design (n draws with per-draw probabilities p_i)
  1. (N_1*,...,N_n*) ~ MN(N; rho) with rho_i propto 1/p_i
  2. n PPSWR draws over the sampled slots with probabilities
     N_i* p_i / C*, C* = sum_j N_j* p_j; each draw carries weight
     C* / (n p_i).  The size-N pseudo-population is never materialized:
     drawing a slot with the probability above is distributionally
     identical to drawing one of its N_i* copies.
  3. w_i* = (draws of slot i) * C* / (n p_i)

Stratified SRS (per stratum, independently)
  1. (N_1*,...,N_{n_h}*) ~ MN(N_h; uniform), the pseudo-stratum
  2. SRS of n_h from the N_h pseudo-units: counts are multivariate
     hypergeometric with colors N*
  3. w_i* = w_i m_i*

Two-stage cluster (n1 PPS-by-size cluster draws, SRS of n2 within)
  1a. cluster-level multinomial: (N_1*,...,N_{n1}*) ~ MN(N_I; rho) with
      rho_i propto 1/q_i, q_i = M_i / N: the pseudo-population holds
      N_i* copies of sampled cluster draw i
  1b. each pseudo-cluster copy gets a unit composition of size M_i drawn
      as MN(M_i; uniform over the m_i sampled units of that cluster)
  2.  redraw the design: n1 PPS-by-size picks over pseudo-clusters, SRS
      of n2 (multivariate hypergeometric over the copy's composition);
      every drawn unit carries weight M* / (n1 n2), M* = sum_i N_i* M_i
  3.  w_ij* = (appearances of record ij) * M* / (n1 n2)

Compositions are generated lazily for the copies actually picked; picks
of the same copy share one composition.
"""

from __future__ import annotations

import numpy as np

from .data import BootstrapWeightMatrix, DesignKind, SurveyDataset, write_csv
from .errors import DataError
from .rng import substream

_TAGS = {
    DesignKind.POISSON: "boot-poisson",
    DesignKind.PPSWR: "boot-ppswr",
    DesignKind.STRATIFIED_SRS: "boot-stratified",
    DesignKind.TWO_STAGE_CLUSTER: "boot-two-stage",
}


def _check_reps(n_reps: int) -> None:
    if n_reps < 0:
        raise DataError("number of replicates must be nonnegative")


def bootstrap_poisson(data: SurveyDataset, n_reps: int, seed: int) -> BootstrapWeightMatrix:
    """Replicate weights for a Poisson sample with known population size."""
    _check_reps(n_reps)
    N = data.population_size
    n = data.n
    if N < n:
        raise DataError("population_size smaller than the sample")
    w = data.weights
    pi = 1.0 / w
    p = w / w.sum()
    out = np.empty((n, n_reps))
    for b in range(n_reps):
        rng = substream(seed, _TAGS[DesignKind.POISSON], b)
        n_star = rng.multinomial(N, p)
        m_star = rng.binomial(n_star, pi)
        out[:, b] = w * m_star
    return BootstrapWeightMatrix(out, master_seed=seed, design=DesignKind.POISSON)


def _ppswr_draw_probs(data: SurveyDataset) -> np.ndarray:
    if data.draw_prob is not None:
        return np.asarray(data.draw_prob, dtype=float)
    # recoverable from the weights: w = 1/(n p)
    return 1.0 / (data.n * data.weights)


def ppswr_population_counts(data: SurveyDataset, n_reps: int, seed: int) -> np.ndarray:
    """Pseudo-population copy counts behind each PPSWR replicate.

    Column b replays the first phase of replicate b of
    bootstrap_ppswr(data, ..., seed): same substream, same multinomial
    draw, so the counts are exactly the ones the weights were built
    from.  Every column sums to the population size.
    """
    _check_reps(n_reps)
    N = data.population_size
    p = _ppswr_draw_probs(data)
    if np.any(p <= 0) or np.any(p > 1):
        raise DataError("PPSWR draw probabilities must lie in (0, 1]")
    inv = 1.0 / p
    rho = inv / inv.sum()
    out = np.empty((data.n, n_reps), dtype=np.int64)
    for b in range(n_reps):
        rng = substream(seed, _TAGS[DesignKind.PPSWR], b)
        out[:, b] = rng.multinomial(N, rho)
    return out


def bootstrap_ppswr(data: SurveyDataset, n_reps: int, seed: int) -> BootstrapWeightMatrix:
    """Replicate weights for a PPS with-replacement sample."""
    _check_reps(n_reps)
    N = data.population_size
    n = data.n
    p = _ppswr_draw_probs(data)
    if np.any(p <= 0) or np.any(p > 1):
        raise DataError("PPSWR draw probabilities must lie in (0, 1]")
    inv = 1.0 / p
    rho = inv / inv.sum()
    out = np.empty((n, n_reps))
    for b in range(n_reps):
        rng = substream(seed, _TAGS[DesignKind.PPSWR], b)
        n_star = rng.multinomial(N, rho)
        if n_star.sum() != N:
            raise AssertionError("pseudo-population size mismatch")
        c_star = float(n_star @ p)
        k = rng.multinomial(n, n_star * p / c_star)
        out[:, b] = k * c_star / (n * p)
    return BootstrapWeightMatrix(out, master_seed=seed, design=DesignKind.PPSWR)


def bootstrap_stratified(data: SurveyDataset, n_reps: int, seed: int) -> BootstrapWeightMatrix:
    """Replicate weights for a stratified SRS sample.

    Weights within a stratum must be the constant N_h / n_h, which is how
    the stratum population size is recovered.
    """
    _check_reps(n_reps)
    if data.stratum is None:
        raise DataError("stratified bootstrap requires stratum labels")
    labels = data.stratum
    uniq = sorted(set(labels.tolist()))
    groups = []
    for lab in uniq:
        idx = np.flatnonzero(labels == lab)
        w_h = data.weights[idx]
        if np.max(np.abs(w_h - w_h[0])) > 1e-9 * w_h[0]:
            raise DataError(f"stratum {lab!r}: weights are not constant")
        N_h = int(round(w_h[0] * idx.size))
        if abs(N_h - w_h[0] * idx.size) > 1e-6:
            raise DataError(f"stratum {lab!r}: weights do not imply an integer size")
        if N_h < idx.size:
            raise DataError(f"stratum {lab!r}: implied size below sample size")
        groups.append((idx, N_h))
    n = data.n
    out = np.empty((n, n_reps))
    for b in range(n_reps):
        rng = substream(seed, _TAGS[DesignKind.STRATIFIED_SRS], b)
        for idx, N_h in groups:
            n_h = idx.size
            n_star = rng.multinomial(N_h, np.full(n_h, 1.0 / n_h))
            m_star = rng.multivariate_hypergeometric(n_star, n_h)
            out[idx, b] = data.weights[idx] * m_star
    return BootstrapWeightMatrix(out, master_seed=seed, design=DesignKind.STRATIFIED_SRS)


def bootstrap_two_stage(data: SurveyDataset, n_reps: int, seed: int) -> BootstrapWeightMatrix:
    """Replicate weights for a two-stage cluster sample."""
    _check_reps(n_reps)
    if data.cluster is None or data.cluster_size is None:
        raise DataError("two-stage bootstrap requires cluster labels and sizes")
    if data.population_clusters is None:
        raise DataError("two-stage bootstrap requires the number of population clusters")
    N = data.population_size
    N_I = int(data.population_clusters)
    labels = data.cluster
    uniq = sorted(set(labels.tolist()))
    n1 = len(uniq)
    members = []
    sizes = np.empty(n1)
    for j, lab in enumerate(uniq):
        idx = np.flatnonzero(labels == lab)
        size_vals = np.asarray(data.cluster_size, dtype=float)[idx]
        if np.max(np.abs(size_vals - size_vals[0])) > 0:
            raise DataError(f"cluster draw {lab!r}: inconsistent cluster sizes")
        members.append(idx)
        sizes[j] = size_vals[0]
    m_per = np.array([len(ix) for ix in members])
    if np.any(sizes < m_per):
        raise DataError("cluster size smaller than its sample size")
    q = sizes / N
    inv = 1.0 / q
    rho = inv / inv.sum()
    n = data.n
    out = np.zeros((n, n_reps))
    for b in range(n_reps):
        rng = substream(seed, _TAGS[DesignKind.TWO_STAGE_CLUSTER], b)
        copies = rng.multinomial(N_I, rho)               # copies per sampled draw
        m_star_total = float(copies @ sizes)
        pick_p = copies * sizes
        pick_p = pick_p / pick_p.sum()
        picks = rng.choice(n1, size=n1, replace=True, p=pick_p)
        copy_labels = np.array([rng.integers(copies[j]) for j in picks])
        compositions: dict[tuple[int, int], np.ndarray] = {}
        col = np.zeros(n)
        for j, lab in zip(picks, copy_labels):
            key = (int(j), int(lab))
            comp = compositions.get(key)
            if comp is None:
                m_j = members[j].size
                comp = rng.multinomial(int(sizes[j]), np.full(m_j, 1.0 / m_j))
                compositions[key] = comp
            n2 = m_per[j]
            counts = rng.multivariate_hypergeometric(comp, int(n2))
            # redraw design weight per drawn unit: M* / (n1 * n2_j)
            col[members[j]] += counts / n2
        out[:, b] = col * m_star_total / n1
    return BootstrapWeightMatrix(out, master_seed=seed, design=DesignKind.TWO_STAGE_CLUSTER)


_GENERATORS = {
    DesignKind.POISSON: bootstrap_poisson,
    DesignKind.PPSWR: bootstrap_ppswr,
    DesignKind.STRATIFIED_SRS: bootstrap_stratified,
    DesignKind.TWO_STAGE_CLUSTER: bootstrap_two_stage,
}


def bootstrap_weights(data: SurveyDataset, n_reps: int, seed: int,
                      design: DesignKind | None = None) -> BootstrapWeightMatrix:
    """Dispatch to the generator matching the dataset's design."""
    kind = design or data.design
    return _GENERATORS[kind](data, n_reps, seed)


def attach_weights(data: SurveyDataset, matrix: BootstrapWeightMatrix) -> SurveyDataset:
    return data.with_replicates(matrix)


def write_weights(data: SurveyDataset, matrix: BootstrapWeightMatrix, path,
                  bw_prefix: str = "bw_") -> None:
    """Write the dataset with replicate weight columns appended."""
    from .data import CsvSchema

    write_csv(attach_weights(data, matrix), path,
              CsvSchema(bw_prefix=bw_prefix), include_replicates=True)
