import json

import numpy as np
import pytest

from lstm_laglasso import lstm
from lstm_laglasso.dataset import SynthConfig, TimeSeriesTable, WindowSpec, synth_generate
from lstm_laglasso.experiments import (
    LAST_VALUE,
    ForecastReport,
    ForecastSeries,
    LagLassoConfig,
    ModelSpec,
    SignalModelConfig,
    WalkForwardConfig,
    boxplot_data,
    compare_models,
    config_hash,
    derive_seed,
    forecast_anchors,
    lstm_laglasso,
    persistence_check,
    significance_test,
    signal_trace,
    stitched_signal_trace,
    table1_roster,
    train_signal_model,
    walk_forward,
)
from lstm_laglasso.numerics import Rng

TGT_ONLY = ModelSpec("NN TgtOnly", "mlp", 6, 4)
SMALL_LSTM = ModelSpec("LSTM06", "lstm", 6, 3)


def ar1_table(n=400, phi=0.8, seed=0):
    rng = Rng(seed)
    e = rng.normal(n)
    y = np.empty(n)
    y[0] = e[0]
    for t in range(1, n):
        y[t] = phi * y[t - 1] + e[t]
    return TimeSeriesTable(np.arange(n).astype("datetime64[D]"), ("y",), y[:, None], "y")


def quick_cfg(**kw):
    base = dict(window=200, horizons=(0,), retrain_every=10, epochs_first=5, epochs_next=2, lr=1e-2, max_steps=50)
    base.update(kw)
    return WalkForwardConfig(**base)


class TestWalkForward:
    def test_smoke_fifty_steps(self):
        rep = walk_forward([TGT_ONLY], ar1_table(), quick_cfg())
        s = rep[("NN TgtOnly", 0)]
        assert len(s.sq_errors) == 50 and np.isfinite(s.summary()["median"])
        assert np.all(s.sq_errors >= 0)

    def test_error_count_is_test_region(self):
        t = ar1_table(300)
        rep = walk_forward([LAST_VALUE], t, quick_cfg(window=100, horizons=(0, 3), max_steps=None))
        for h in (0, 3):
            s = rep[("LastValue", h)]
            assert len(s.sq_errors) == 300 - 210
            assert s.anchors[0] + 1 + h == 210 and s.anchors[-1] + 1 + h == 299

    def test_window_exceeding_data(self):
        with pytest.raises(ValueError, match="window"):
            walk_forward([TGT_ONLY], ar1_table(300), quick_cfg(window=250))
        with pytest.raises(ValueError):
            forecast_anchors(100, 0, 0.7, 71)

    def test_deterministic(self):
        t = ar1_table()
        a = walk_forward([TGT_ONLY, SMALL_LSTM], t, quick_cfg(max_steps=20))
        b = walk_forward([TGT_ONLY, SMALL_LSTM], t, quick_cfg(max_steps=20))
        assert a.to_json() == b.to_json()

    def test_seed_changes_results(self):
        t = ar1_table()
        a = walk_forward([TGT_ONLY], t, quick_cfg(max_steps=10, seed=1))
        b = walk_forward([TGT_ONLY], t, quick_cfg(max_steps=10, seed=2))
        assert not np.array_equal(a[("NN TgtOnly", 0)].predictions, b[("NN TgtOnly", 0)].predictions)

    def test_horizon_isolation(self):
        t = ar1_table()
        both = walk_forward([TGT_ONLY], t, quick_cfg(horizons=(0, 2), max_steps=15))
        one = walk_forward([TGT_ONLY], t, quick_cfg(horizons=(2,), max_steps=15))
        np.testing.assert_array_equal(both[("NN TgtOnly", 2)].predictions, one[("NN TgtOnly", 2)].predictions)

    def test_no_look_ahead(self):
        t = synth_generate(SynthConfig(length=400, decoys=3, seed=4))
        roster = [TGT_ONLY, SMALL_LSTM, ModelSpec("NN RelFeat", "mlp", 6, 4, features="relevant")]
        cfg = quick_cfg(window=150, horizons=(0, 4), max_steps=30, relfeat_max=5)
        base = walk_forward(roster, t, cfg)
        anchor = int(base[("LSTM06", 0)].anchors[12])
        vals = t.values.copy()
        vals[anchor + 1:] = Rng(99).normal(vals[anchor + 1:].shape) * 50
        moved = walk_forward(roster, t.with_values(vals), cfg)
        for key, s in base.series.items():
            upto = s.anchors <= anchor
            np.testing.assert_array_equal(s.predictions[upto], moved[key].predictions[upto])

    def test_cold_start_flag(self):
        t = ar1_table()
        warm = walk_forward([TGT_ONLY], t, quick_cfg(max_steps=20))
        cold = walk_forward([TGT_ONLY], t, quick_cfg(max_steps=20, cold_start=True))
        assert warm.metadata["warm_start"] and not cold.metadata["warm_start"]
        assert not np.array_equal(warm[("NN TgtOnly", 0)].predictions, cold[("NN TgtOnly", 0)].predictions)

    def test_relevant_inputs_recorded(self):
        t = synth_generate(SynthConfig(length=400, decoys=3, seed=4))
        rel = ModelSpec("NN RelFeat", "mlp", 6, 4, features="relevant")
        rep = walk_forward([rel], t, quick_cfg(window=150, max_steps=5))
        pairs = rep[("NN RelFeat", 0)].inputs
        assert ("driver", 4) in pairs
        assert rep.metadata["relevant_features"]["0"] == [list(p) for p in pairs]

    def test_roster_validation(self):
        with pytest.raises(ValueError):
            ModelSpec("x", "gru")
        with pytest.raises(ValueError):
            ModelSpec("x", "lstm", features="relevant")
        with pytest.raises(ValueError):
            walk_forward([TGT_ONLY, TGT_ONLY], ar1_table(), quick_cfg())
        assert [m.name for m in table1_roster()] == ["LSTM06", "LSTM21", "LSTM61", "NN TgtOnly", "NN RelFeat"]
        assert [m.seq_in for m in table1_roster()] == [6, 21, 61, 6, 6]


@pytest.fixture(scope="module")
def report():
    return walk_forward([TGT_ONLY, LAST_VALUE], ar1_table(), quick_cfg(horizons=(0, 1), max_steps=20))


class TestReport:
    def test_json_round_trip(self, report, tmp_path):
        report.to_json(tmp_path / "r.json")
        back = ForecastReport.from_json(tmp_path / "r.json")
        assert back.to_json() == report.to_json()
        assert json.loads(report.to_json())["config_hash"] == config_hash(report.config)

    def test_csv(self, report, tmp_path):
        report.to_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0].startswith("model,horizon,anchor")
        assert len(lines) == 1 + 4 * 20

    def test_compare_self_is_one(self, report):
        for row in compare_models(report, "NN TgtOnly"):
            if row["model"] == "NN TgtOnly":
                assert row["median_ratio"] == 1.0 and row["std_ratio"] == 1.0

    def test_compare_matches_raw_series(self, report):
        for row in compare_models(report, "LastValue"):
            e = report[(row["model"], row["horizon"])].sq_errors
            b = report[("LastValue", row["horizon"])].sq_errors
            assert abs(row["median_ratio"] - np.median(e) / np.median(b)) <= 1e-12
            assert abs(row["std_ratio"] - np.std(e) / np.std(b)) <= 1e-12

    def test_compare_zero_errors(self, report):
        s = report[("NN TgtOnly", 0)]
        zero = ForecastSeries("Perfect", 0, s.anchors, s.timestamps, s.actuals, s.actuals,
                              np.zeros_like(s.sq_errors), np.zeros_like(s.sq_errors))
        rep = ForecastReport({**report.series, ("Perfect", 0): zero}, report.config, report.metadata)
        row = next(r for r in compare_models(rep, "LastValue") if r["model"] == "Perfect")
        assert row["median_ratio"] == 0.0

    def test_compare_missing(self, report):
        with pytest.raises(KeyError):
            compare_models(report, "LSTM99")

    def test_boxplot_both_aggregations(self, report):
        box = boxplot_data([report, report])
        assert set(box) == {"over_test_steps", "over_seeds", "runs"}
        stats = box["over_test_steps"]["NN TgtOnly|0"]
        assert stats["q1"] <= stats["median"] <= stats["q3"] and stats["count"] == 20
        assert box["over_seeds"]["NN TgtOnly|0"]["count"] == 2

    def test_metadata(self, report):
        assert report.metadata["window"] == 200 and report.metadata["retrain_every"] == 10
        assert set(report.metadata["seeds"]) == {"NN TgtOnly|h=0", "NN TgtOnly|h=1", "LastValue|h=0", "LastValue|h=1"}


def test_derive_seed_stable():
    assert derive_seed(0, "LSTM06", 5) == derive_seed(0, "LSTM06", 5)
    assert derive_seed(0, "LSTM06", 5) != derive_seed(0, "LSTM06", 10)


def test_persistence_on_random_walk():
    res = persistence_check(length=10_000, sigma=2.0, window=300, seed=1)
    assert res["relative_error"] < 0.1


# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def planted():
    table = synth_generate(SynthConfig(length=800, decoys=5, seed=2))
    cfg = SignalModelConfig(window=400, epochs=150, lr=1e-2, seed=2)
    return table, train_signal_model(table, cfg)


def exogenous(table):
    return [n for n in table.names if n != "target"]


class TestLagLasso:
    def test_driver_explains_hidden_state(self, planted):
        table, model = planted
        rep = lstm_laglasso(model.params, table, model.spec, exogenous(table), LagLassoConfig(k=6),
                            stats=model.stats, rows=np.arange(400, 800))
        assert len(rep.explanations) == 2 * 3 and rep.flags == []
        for u in range(3):
            w = rep.explanations[("hidden_state", u)].solution.weights()
            drv = max(abs(v) for (name, _), v in w.items() if name == "driver")
            dec = max((abs(v) for (name, _), v in w.items() if name != "driver"), default=0.0)
            assert drv > dec

    def test_intersections_match_brute_force(self, planted):
        table, model = planted
        rep = lstm_laglasso(model.params, table, model.spec, exogenous(table), LagLassoConfig(k=3, gamma=30.0),
                            stats=model.stats, rows=np.arange(400, 800))
        inter = rep.intersections("lag")
        act = {k: set(e.solution.active_set) for k, e in rep.explanations.items()}
        for state in ("hidden_state", "cell_state"):
            assert inter["across_units"][state] == act[(state, 0)] & act[(state, 1)] & act[(state, 2)]
            venn = inter["venn"][state]
            assert sum(venn.values()) == len(act[(state, 0)] | act[(state, 1)] | act[(state, 2)])
            assert venn.get((0, 1, 2), 0) == len(inter["across_units"][state])
        for u in range(3):
            common = inter["across_states"][u]
            assert common == act[("hidden_state", u)] & act[("cell_state", u)]
            assert len(common) <= min(len(act[("hidden_state", u)]), len(act[("cell_state", u)]))
        feat = rep.intersections("feature")
        assert all(isinstance(f, str) for f in feat["states_common"])

    def test_gamma_above_max_flags(self, planted):
        table, model = planted
        rep = lstm_laglasso(model.params, table, model.spec, exogenous(table), LagLassoConfig(k=2, gamma=1e9),
                            stats=model.stats, rows=np.arange(400, 800))
        assert "no explanation at this gamma" in rep.flags
        assert all(len(e.solution.active) == 0 for e in rep.explanations.values())

    def test_path_recorded(self, planted):
        table, model = planted
        rep = lstm_laglasso(model.params, table, model.spec, exogenous(table), LagLassoConfig(k=2),
                            stats=model.stats, rows=np.arange(400, 800))
        path = rep.explanations[("cell_state", 1)].path
        assert path.n_active[0] == 0 and len(path.gammas) == 50
        d = json.loads(rep.to_json())
        assert len(d["units"]) == 6 and "intersections" in d

    def test_rejects_model_inputs(self, planted):
        table, model = planted
        with pytest.raises(ValueError, match="exclude"):
            lstm_laglasso(model.params, table, model.spec, ["target", "driver"])


class TestSignificance:
    def test_too_few_runs(self, planted):
        table, model = planted
        with pytest.raises(ValueError):
            significance_test(model.params, table, model.spec, exogenous(table), n_runs=10)

    def test_planted_separates(self, planted):
        table, model = planted
        rep = significance_test(model.params, table, model.spec, exogenous(table), LagLassoConfig(k=6), n_runs=30,
                                rng=Rng(5), stats=model.stats, rows=np.arange(400, 800))
        assert rep.percentile < 5.0
        assert rep.real_mse < np.median(rep.random_mse)

    def test_noise_features_not_extreme(self):
        inside = 0
        trials = 20
        for trial in range(trials):
            rng = Rng(100 + trial)
            n = 300
            vals = np.column_stack([np.cumsum(rng.normal(n)), rng.normal((n, 3))])
            table = TimeSeriesTable(np.arange(n).astype("datetime64[D]"), ("y", "a", "b", "c"), vals, "y")
            params = lstm.init_params(2, 1, rng)
            rep = significance_test(params, table, WindowSpec(50, 0, 6), ["a", "b", "c"], LagLassoConfig(k=3),
                                    n_runs=30, rng=rng)
            inside += 5 <= rep.percentile <= 95
        assert inside >= 0.8 * trials


class TestSignalModel:
    def test_training_reduces_loss(self, planted):
        _, model = planted
        assert model.losses[-1] < model.losses[0]
        assert model.params.units == 3 and model.spec.seq_out == 6

    def test_final_replay_rows(self, planted):
        table, model = planted
        tr = signal_trace(model, table)
        assert tr.rows[0] == 400 and tr.rows[-1] == 799 and tr.units == 3

    def test_stitched(self):
        table = synth_generate(SynthConfig(length=300, decoys=1, seed=3))
        cfg = SignalModelConfig(window=100, epochs=3, seed=1)
        tr = stitched_signal_trace(table, cfg, start=150, every=50, epochs_next=2)
        assert tr.mode == "stitch"
        np.testing.assert_array_equal(tr.rows, np.arange(150, 300))
