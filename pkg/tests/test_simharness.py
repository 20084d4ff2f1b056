import math

import numpy as np
import pytest

from agmrf import simharness
from agmrf.inference import NumericalError
from agmrf.simharness import (
    DIFF_COLUMNS,
    SimSetting,
    StudyConfig,
    StudyTable,
    make_trend,
    rows_to_csv,
    run_replicate,
    run_study,
    simulate_dataset,
)


def test_trend_shapes():
    c = make_trend("constant")
    assert c[8] == c[0] == -3.0
    lc = make_trend("level-change")
    assert lc[8] - lc[7] == 1.0
    assert np.all(lc[8:15] == -2.0) and lc[15] == -3.0
    tr = make_trend("triangle")
    assert int(np.argmax(tr)) + 1 == 12 and tr.max() == -2.0
    for k in range(1, 4):
        assert math.isclose(tr[11 - k], tr[11 + k], rel_tol=0, abs_tol=1e-15)
    assert tr[7] == -3.0 and tr[15] == -3.0
    # the shock stays detectable at the largest variance
    assert 1.0 >= 5 * math.sqrt(1 / 75)
    with pytest.raises(ValueError):
        make_trend("spike")


def test_setting_validation():
    with pytest.raises(ValueError):
        SimSetting("constant", "equal", 0.0)
    with pytest.raises(ValueError):
        SimSetting("constant", "mixed", 0.1)
    s = SimSetting("triangle", "unequal", 1 / 300)
    assert s.taus()[8] == 10 and s.taus()[7] == 20 and s.taus()[14] == 10 and s.taus()[15] == 20


def test_simulation_is_deterministic():
    s = SimSetting("triangle", "unequal", 1 / 150)
    a, b = simulate_dataset(s, 3, seed=5), simulate_dataset(s, 3, seed=5)
    assert a.y.tobytes() == b.y.tobytes()
    assert simulate_dataset(s, 4, seed=5).y.tobytes() != a.y.tobytes()
    assert simulate_dataset(SimSetting("triangle", "unequal", 1 / 75), 3, seed=5).y.tobytes() != a.y.tobytes()


def test_vanishing_observation_variance():
    d = simulate_dataset(SimSetting("level-change", "equal", 1e-14), 0, seed=1)
    np.testing.assert_allclose(d.y, d.eta, atol=1e-5)


def test_unstructured_effect_variance():
    s = SimSetting("constant", "equal", 1e-14, n=100_000)
    d = simulate_dataset(s, 0, seed=2)
    b = d.eta - make_trend("constant", s.n, s.conflict)
    assert abs(b.var() - 0.05) < 0.002


def test_study_config_parsing():
    cfg = StudyConfig.from_dict({"trends": ["triangle"], "variances": ["1/300", 0.01], "replicates": 3, "grid": {"delta": 0.5}})
    assert cfg.variances == (1 / 300, 0.01) and cfg.grid.delta == 0.5
    assert len(cfg.settings()) == 2 * 2
    with pytest.raises(ValueError):
        StudyConfig.from_dict({"replicas": 3})


def test_constant_trend_single_replicate_similar():
    r = run_replicate(SimSetting("constant", "equal", 1 / 300), 0, seed=1)
    a, b = r.metrics["smoothed-direct"], r.metrics["proposed"]
    assert abs(a["rmse"] - b["rmse"]) < 0.25 * a["rmse"]


@pytest.fixture(scope="module")
def tiny_table():
    cfg = StudyConfig(trends=("level-change",), regimes=("unequal",), variances=(1 / 150,), replicates=2, seed=4)
    return run_study(cfg)


def test_diff_rows_are_exact_subtractions(tiny_table):
    raw = {(r["replicate"], r["model"]): r for r in tiny_table.raw_rows()}
    for d in tiny_table.diff_rows():
        for m in ("rmse", "dic", "ls"):
            assert d[f"d_{m}"] == raw[(d["replicate"], "smoothed-direct")][m] - raw[(d["replicate"], "proposed")][m]
    summary = tiny_table.summary_rows()
    assert summary[0]["n_ok"] == 2 and summary[0]["n_failed"] == 0


def test_parallel_matches_sequential(tiny_table):
    cfg = StudyConfig(trends=("level-change",), regimes=("unequal",), variances=(1 / 150,), replicates=2, seed=4, threads=2)
    par = run_study(cfg)
    assert rows_to_csv(par.diff_rows(), DIFF_COLUMNS) == rows_to_csv(tiny_table.diff_rows(), DIFF_COLUMNS)


def test_failures_are_counted_not_dropped(monkeypatch):
    real = simharness.fit_model
    calls = {"n": 0}

    def flaky(spec, grid):
        calls["n"] += 1
        if calls["n"] == 1:
            raise NumericalError("forced")
        return real(spec, grid)

    monkeypatch.setattr(simharness, "fit_model", flaky)
    table = run_study(StudyConfig(trends=("constant",), regimes=("equal",), variances=(1 / 75,), replicates=2, seed=1))
    assert len(table.failures) == 1 and "forced" in table.failures[0].error
    row = table.summary_rows()[0]
    assert row["n_ok"] == 1 and row["n_failed"] == 1
    assert len(table.diff_rows()) == 1


def test_csv_uses_full_precision():
    text = rows_to_csv([{"a": 1 / 3, "b": "x"}], ("a", "b"))
    assert text.splitlines()[1] == "0.33333333333333331,x"
    assert float(text.splitlines()[1].split(",")[0]) == 1 / 3


def test_empty_summary_is_nan():
    from agmrf.simharness import ReplicateResult

    t = StudyTable([ReplicateResult(SimSetting("constant", "equal", 0.1), 0, error="x")])
    assert math.isnan(t.summary_rows()[0]["median_d_ls"])
