"""Shared dataset builders for the test suite."""

import numpy as np
import pytest

from svyboot.data import DesignKind, SurveyDataset
from svyboot.designs import FinitePopulation, draw_poisson, draw_ppswr
from svyboot.rng import substream


def make_dataset(y, x, w, *, design=DesignKind.POISSON, population_size=None,
                 **kwargs) -> SurveyDataset:
    """Hand-rolled dataset; population defaults to round(sum w)."""
    y = np.asarray(y)
    if y.dtype.kind in "biuf":
        y = y.astype(float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    w = np.asarray(w, dtype=float)
    if population_size is None:
        population_size = int(round(w.sum()))
    return SurveyDataset(y=y, x=x, weights=w, population_size=population_size,
                         design=design, **kwargs)


def gaussian_population(N: int, seed: int, slope: float = 1.0) -> FinitePopulation:
    """x ~ U(0,5), y ~ N(1 + slope x, 1), size measure 1 + |y+eps|/2."""
    rng = substream(seed, "test-pop-gaussian")
    x = rng.uniform(0.0, 5.0, N)
    y = 1.0 + slope * x + rng.standard_normal(N)
    eps = rng.standard_normal(N)
    size = 1.0 + np.abs(y + eps) / 2.0
    return FinitePopulation(y=y, x=x, selection_prob=size / size.sum())


def logistic_population(N: int, seed: int, slope: float = 0.5) -> FinitePopulation:
    rng = substream(seed, "test-pop-logistic")
    x = rng.standard_normal(N) * 1.5
    p = 1.0 / (1.0 + np.exp(-(-1.0 + slope * x)))
    y = (rng.random(N) < p).astype(float)
    size = 0.5 + rng.random(N)
    return FinitePopulation(y=y, x=x, selection_prob=size / size.sum())


def poisson_sample(pop: FinitePopulation, expected_n: int, seed: int):
    pi = np.full(pop.size, expected_n / pop.size)
    return draw_poisson(pop, pi, seed)


def ppswr_sample(pop: FinitePopulation, n: int, seed: int):
    return draw_ppswr(pop, pop.selection_prob, n, seed)


@pytest.fixture
def gaussian_data():
    pop = gaussian_population(2000, 11)
    return ppswr_sample(pop, 80, 12)


@pytest.fixture
def logistic_data():
    pop = logistic_population(3000, 13)
    return ppswr_sample(pop, 120, 14)
