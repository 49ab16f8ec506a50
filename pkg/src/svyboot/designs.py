"""Finite populations and the four supported sampling designs.

Each draw_* operation consumes a FinitePopulation and returns a
SurveyDataset whose base weights are the usual design weights:

  Poisson             w_i = 1 / pi_i
  PPSWR               w_i = 1 / (n p_i)        (per draw; duplicates kept)
  stratified SRS      w_i = N_h / n_h
  two-stage cluster   w_ij = [n1 M_i / M]^{-1} (M_i / n2)

For with-replacement designs each draw is a distinct unit record; the
cluster label on a two-stage record identifies the first-stage draw,
not the source cluster.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .data import DesignKind, SurveyDataset
from .errors import DataError
from .rng import substream


@dataclass(frozen=True)
class FinitePopulation:
    """Complete population, optionally clustered or stratified."""

    y: np.ndarray
    x: np.ndarray
    stratum: np.ndarray | None = None
    cluster_id: np.ndarray | None = None
    cluster_sizes: np.ndarray | None = None
    selection_prob: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", np.asarray(self.y))
        if len(self.y) != x.shape[0]:
            raise DataError("population y and x must have equal length")
        if self.cluster_sizes is not None:
            sizes = np.asarray(self.cluster_sizes, dtype=int)
            if sizes.sum() != self.size:
                raise DataError("cluster sizes must sum to the population size")
            object.__setattr__(self, "cluster_sizes", sizes)

    @property
    def size(self) -> int:
        return len(self.y)

    @property
    def n_clusters(self) -> int:
        if self.cluster_sizes is None:
            raise DataError("population has no cluster structure")
        return len(self.cluster_sizes)


def draw_poisson(pop: FinitePopulation, pi: np.ndarray, seed: int) -> SurveyDataset:
    """Poisson sample: unit i enters independently with probability pi_i."""
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (pop.size,):
        raise DataError("pi must have one entry per population unit")
    if np.any(pi <= 0) or np.any(pi > 1):
        raise DataError("inclusion probabilities must lie in (0, 1]")
    rng = substream(seed, "draw-poisson")
    take = rng.random(pop.size) < pi
    idx = np.flatnonzero(take)
    if idx.size == 0:
        raise DataError("Poisson draw produced an empty sample")
    return SurveyDataset(
        y=pop.y[idx],
        x=pop.x[idx],
        weights=1.0 / pi[idx],
        population_size=pop.size,
        design=DesignKind.POISSON,
    )


def draw_ppswr(pop: FinitePopulation, p: np.ndarray, n: int, seed: int) -> SurveyDataset:
    """PPS with-replacement sample of n draws with selection probabilities p."""
    p = np.asarray(p, dtype=float)
    if p.shape != (pop.size,):
        raise DataError("p must have one entry per population unit")
    if np.any(p <= 0):
        raise DataError("selection probabilities must be positive")
    if abs(p.sum() - 1.0) > 1e-9:
        raise DataError("selection probabilities must sum to 1")
    if n < 1:
        raise DataError("sample size must be positive")
    rng = substream(seed, "draw-ppswr")
    idx = rng.choice(pop.size, size=n, replace=True, p=p / p.sum())
    return SurveyDataset(
        y=pop.y[idx],
        x=pop.x[idx],
        weights=1.0 / (n * p[idx]),
        population_size=pop.size,
        design=DesignKind.PPSWR,
        draw_prob=p[idx],
        draw_index=np.arange(n),
    )


def draw_stratified_srs(pop: FinitePopulation, n_h: Mapping | int,
                        seed: int) -> SurveyDataset:
    """Stratified SRS without replacement; n_h per stratum (mapping or common int)."""
    if pop.stratum is None:
        raise DataError("population has no stratum labels")
    rng = substream(seed, "draw-stratified")
    labels = pop.stratum
    uniq = sorted(set(labels.tolist()))
    idx_parts = []
    w_parts = []
    s_parts = []
    for lab in uniq:
        members = np.flatnonzero(labels == lab)
        N_h = members.size
        size = n_h[lab] if isinstance(n_h, Mapping) else int(n_h)
        if size < 1 or size > N_h:
            raise DataError(
                f"stratum {lab!r}: requested {size} of {N_h} units"
            )
        pick = rng.choice(members, size=size, replace=False)
        idx_parts.append(np.sort(pick))
        w_parts.append(np.full(size, N_h / size))
        s_parts.append(np.repeat(lab, size))
    idx = np.concatenate(idx_parts)
    return SurveyDataset(
        y=pop.y[idx],
        x=pop.x[idx],
        weights=np.concatenate(w_parts),
        population_size=pop.size,
        design=DesignKind.STRATIFIED_SRS,
        stratum=np.concatenate(s_parts),
    )


def draw_two_stage(pop: FinitePopulation, n1: int, n2: int, seed: int) -> SurveyDataset:
    """Two-stage sample: n1 PPS-by-size cluster draws, SRS of n2 units each.

    First-stage draws are with replacement; a cluster drawn twice gets two
    independent second-stage samples and the records carry the draw id.
    """
    if pop.cluster_sizes is None or pop.cluster_id is None:
        raise DataError("population has no cluster structure")
    sizes = pop.cluster_sizes
    N = pop.size
    N_I = pop.n_clusters
    if n1 < 1 or n1 > N_I * 10**6:
        raise DataError("invalid number of first-stage draws")
    if np.any(sizes < n2):
        raise DataError("every cluster must have at least n2 units")
    rng = substream(seed, "draw-two-stage")
    members_of = [np.flatnonzero(pop.cluster_id == g) for g in range(N_I)]
    p_cluster = sizes / sizes.sum()
    firsts = rng.choice(N_I, size=n1, replace=True, p=p_cluster)
    idx_parts, cluster_col, size_col, prob_col = [], [], [], []
    for j, g in enumerate(firsts):
        pick = np.sort(rng.choice(members_of[g], size=n2, replace=False))
        idx_parts.append(pick)
        cluster_col.append(np.full(n2, j))
        size_col.append(np.full(n2, sizes[g]))
        prob_col.append(np.full(n2, sizes[g] / N))
    idx = np.concatenate(idx_parts)
    w = np.full(idx.size, N / (n1 * n2))
    return SurveyDataset(
        y=pop.y[idx],
        x=pop.x[idx],
        weights=w,
        population_size=N,
        design=DesignKind.TWO_STAGE_CLUSTER,
        cluster=np.concatenate(cluster_col),
        cluster_size=np.concatenate(size_col),
        draw_prob=np.concatenate(prob_col),
        population_clusters=N_I,
    )
