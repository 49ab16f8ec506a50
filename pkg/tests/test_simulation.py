"""Monte Carlo engine: populations, per-rep batteries, power tables."""

import io
import json
import warnings
from dataclasses import replace

import numpy as np
import pytest

import svyboot.simulation as sim
from svyboot.errors import DataError, DiagnosticError
from svyboot.simulation import (ScenarioConfig, PowerRow, case_gamma,
                                emit_report, gen_population, print_wall_time,
                                run_scenario, _CASE_PROBS)


@pytest.fixture(scope="module")
def smoke_table():
    cfg = ScenarioConfig("table1", mc_reps=8, boot_reps=60,
                         population_size=150, sample_size=15,
                         null_values=(1.0,), master_seed=301)
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="sum of base weights")
        return run_scenario(cfg)


# ---------------------------------------------------------------------------
# contingency-table cases


def test_case_probabilities_sum_to_one():
    for case, probs in _CASE_PROBS.items():
        assert abs(probs.sum() - 1.0) < 1e-12
        assert np.all(probs > 0)


def test_case_one_hand_cells():
    p = _CASE_PROBS["I"].reshape(3, 3)
    assert p[0, 0] == 0.25
    assert p[1, 1] == 1.0 / 16.0


def test_case_gamma_values():
    assert case_gamma("I") == 0.0
    assert abs(case_gamma("III") - 0.125) < 1e-12
    # recomputed from the case-II cell list; rounds to 0.012
    assert abs(case_gamma("II") - 0.0116654179) < 1e-9


# ---------------------------------------------------------------------------
# population generators


def test_table1_population_shape_and_selection():
    cfg = ScenarioConfig("table1").resolved()
    pop = gen_population(cfg, 0)
    assert pop.y.shape == (500,)
    assert np.all((pop.x >= 0) & (pop.x <= 5))
    assert np.all(pop.selection_prob > 0)
    assert abs(pop.selection_prob.sum() - 1.0) < 1e-12
    # y|x ~ N(1 + x, 1), x ~ U(0, 5): mean near 3.5
    assert 2.5 < pop.y.mean() < 4.5


def test_population_regenerated_per_rep_unless_fixed():
    cfg = ScenarioConfig("table1", master_seed=17).resolved()
    assert not np.array_equal(gen_population(cfg, 0).y,
                              gen_population(cfg, 3).y)
    frozen = replace(cfg, fixed_population=True)
    np.testing.assert_array_equal(gen_population(frozen, 0).y,
                                  gen_population(frozen, 3).y)
    # same (seed, rep) is reproducible
    np.testing.assert_array_equal(gen_population(cfg, 3).y,
                                  gen_population(cfg, 3).y)


def test_table2_strata_are_group_by_outcome():
    cfg = ScenarioConfig("table2", master_seed=5).resolved()
    pop = gen_population(cfg, 0)
    labels = set(pop.stratum)
    assert len(labels) == 10
    for lab in labels:
        ys = pop.y[pop.stratum == lab]
        assert np.all(ys == ys[0])
    x1 = pop.x[pop.stratum == "1:0"]
    x5 = pop.x[pop.stratum == "5:0"]
    assert x5.mean() > x1.mean() + 1.0       # group shifts of 0.5 each


def test_table2_population_size_must_divide_into_groups():
    cfg = ScenarioConfig("table2", population_size=1001).resolved()
    with pytest.raises(DataError):
        gen_population(cfg, 0)


def test_table3_cluster_structure():
    cfg = ScenarioConfig("table3", master_seed=9).resolved()
    pop = gen_population(cfg, 0)
    assert pop.cluster_sizes.shape == (30,)
    assert np.all(pop.cluster_sizes >= 30)
    assert pop.y.shape[0] == int(pop.cluster_sizes.sum())
    _, counts = np.unique(pop.cluster_id, return_counts=True)
    np.testing.assert_array_equal(counts, pop.cluster_sizes)


def test_table4_selection_proportional_to_score():
    cfg = ScenarioConfig("table4", master_seed=3).resolved()
    pop = gen_population(cfg, 0, case="I")
    cells = pop.y.astype(int)
    assert cells.min() >= 0 and cells.max() <= 8
    assert np.all(pop.x > 1.0)               # beta_j = 1 + Exp(1)
    ratio = pop.selection_prob / np.ravel(pop.x)
    assert np.ptp(ratio) < 1e-15


# ---------------------------------------------------------------------------
# configuration


def test_resolved_fills_defaults_and_keeps_overrides():
    cfg = ScenarioConfig("table1", sample_size=25).resolved()
    assert cfg.population_size == 500
    assert cfg.sample_size == 25
    assert cfg.null_values == (1.0, 1.1, 1.2)
    assert cfg.methods == ("nlr", "nqs", "ls", "blr", "bqs")
    assert ScenarioConfig("table3").resolved().methods == ("nqs", "bqs")


def test_config_validation():
    with pytest.raises(DataError):
        ScenarioConfig("table9").resolved()
    with pytest.raises(DataError):
        ScenarioConfig("table1", mc_reps=0).resolved()
    with pytest.raises(DataError):
        ScenarioConfig("table1", alpha=1.0).resolved()
    with pytest.raises(DataError):
        ScenarioConfig("table1", alpha=0.0).resolved()
    with pytest.raises(DataError):
        ScenarioConfig("table3", methods=("nlr",)).resolved()
    with pytest.raises(DataError):
        ScenarioConfig("table4", cases=("IV",)).resolved()


def test_power_row_rate_is_exact_ratio():
    row = PowerRow(method="nlr", label="theta2=1", rejections=7, reps=50)
    assert row.rate == 7 / 50
    assert row.mc_se == np.sqrt((7 / 50) * (43 / 50) / 50)


# ---------------------------------------------------------------------------
# driver


def test_smoke_run_shape_and_rates(smoke_table):
    table = smoke_table
    assert len(table.rows) == 5
    assert table.excluded_reps == 0
    assert table.replicate_drop_rate == 0.0
    for row in table.rows:
        assert row.reps == 8
        assert 0.0 <= row.rate <= 1.0
        assert row.mc_se == pytest.approx(
            np.sqrt(row.rate * (1 - row.rate) / row.reps))
    assert 0.0 <= table.rate("nlr", "theta2=1") <= 1.0
    with pytest.raises(KeyError):
        table.rate("nlr", "theta2=9")


@pytest.mark.filterwarnings("ignore:sum of base weights")
def test_run_is_deterministic_and_thread_invariant():
    cfg = ScenarioConfig("table1", mc_reps=5, boot_reps=40,
                         population_size=100, sample_size=12,
                         null_values=(1.0,), master_seed=302)
    one = run_scenario(cfg)
    again = run_scenario(cfg)
    assert one == again
    threaded = run_scenario(replace(cfg, threads=2))
    assert threaded.to_dict() == one.to_dict()


@pytest.mark.filterwarnings("ignore:sum of base weights")
def test_method_order_does_not_change_rates():
    base = ScenarioConfig("table1", mc_reps=4, boot_reps=40,
                          population_size=100, sample_size=12,
                          null_values=(1.0,), master_seed=304)
    fwd = run_scenario(base)
    rev = run_scenario(replace(base, methods=tuple(reversed(
        base.resolved().methods))))
    a = {(r.method, r.label): r.rate for r in fwd.rows}
    b = {(r.method, r.label): r.rate for r in rev.rows}
    assert a == b


def test_table4_smoke():
    cfg = ScenarioConfig("table4", mc_reps=4, boot_reps=80,
                         sample_size=60, cases=("I",), master_seed=305)
    table = run_scenario(cfg)
    assert len(table.rows) == 5
    assert {r.label for r in table.rows} == {"case=I"}
    for row in table.rows:
        assert 0.0 <= row.rate <= 1.0


@pytest.mark.filterwarnings("ignore:sum of base weights")
def test_failed_reps_are_excluded_and_capped(monkeypatch):
    orig = sim._run_rep

    def drop_first(args):
        if args[1] == 0:
            return 0, None, 0.0
        return orig(args)

    monkeypatch.setattr(sim, "_run_rep", drop_first)
    cfg = ScenarioConfig("table1", mc_reps=50, boot_reps=40,
                         population_size=100, sample_size=10,
                         null_values=(1.0,), master_seed=303)
    table = run_scenario(cfg)                # 1/50 = 2%, just allowed
    assert table.excluded_reps == 1
    assert all(row.reps == 49 for row in table.rows)

    def drop_two(args):
        if args[1] < 2:
            return args[1], None, 0.0
        return orig(args)

    monkeypatch.setattr(sim, "_run_rep", drop_two)
    with pytest.raises(DiagnosticError):
        run_scenario(replace(cfg, mc_reps=20))


# ---------------------------------------------------------------------------
# reports


def test_json_report_round_trips_exactly(smoke_table):
    doc = json.loads(emit_report(smoke_table, "json"))
    assert doc["scenario"] == "table1"
    assert doc["master_seed"] == 301
    assert doc["excluded_reps"] == 0
    assert len(doc["rows"]) == len(smoke_table.rows)
    for parsed, row in zip(doc["rows"], smoke_table.rows):
        assert parsed["method"] == row.method
        assert parsed["label"] == row.label
        assert parsed["rate"] == row.rate
        assert parsed["mc_se"] == row.mc_se


def test_csv_and_text_reports_carry_full_precision(smoke_table):
    lines = emit_report(smoke_table, "csv").strip().splitlines()
    assert lines[0] == "method,label,rejections,reps,rate,mc_se"
    assert len(lines) == 1 + len(smoke_table.rows)
    for line, row in zip(lines[1:], smoke_table.rows):
        parts = line.split(",")
        assert parts[0] == row.method
        assert float(parts[4]) == row.rate
        assert float(parts[5]) == row.mc_se
    text = emit_report(smoke_table, "text")
    for row in smoke_table.rows:
        assert repr(row.rate) in text
    with pytest.raises(DataError):
        emit_report(smoke_table, "yaml")


def test_wall_time_goes_to_the_given_stream(smoke_table):
    buf = io.StringIO()
    print_wall_time(smoke_table, stream=buf)
    out = buf.getvalue()
    assert out.startswith("[svyboot]")
    assert "table1" in out and "wall time" in out
