import numpy as np
import pytest

from lstm_laglasso.dataset import (
    DataError,
    SynthConfig,
    TimeSeriesTable,
    WindowSpec,
    apply_normalization,
    fit_normalization,
    generate_lagged_features,
    invert_normalization,
    load_csv,
    load_synth_config,
    make_sequences,
    static_split,
    synth_generate,
)
from lstm_laglasso.numerics import Rng


def table_from(values, names=None, target=None):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    names = names or tuple(f"c{j}" for j in range(values.shape[1]))
    ts = np.arange(len(values)).astype("datetime64[D]")
    return TimeSeriesTable(ts, tuple(names), values, target or names[0])


class TestLoadCsv:
    def test_well_formed(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("date,y,x\n2020-01-01,1,2\n2020-01-02,3,4\n2020-01-03,5,6\n")
        t = load_csv(p)
        assert len(t) == 3 and t.names == ("y", "x") and t.target_name == "y"
        np.testing.assert_array_equal(t.column("x"), [2, 4, 6])

    def test_forward_fill(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("date,y,x\n2020-01-01,1,2\n2020-01-02,,4\n2020-01-03,5,6\n")
        np.testing.assert_array_equal(load_csv(p).column("y"), [1, 1, 5])

    def test_leading_missing_dropped_and_sorted(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("date,y,x\n2020-01-03,5,6\n2020-01-01,NA,2\n2020-01-02,3,4\n")
        t = load_csv(p)
        assert len(t) == 2
        np.testing.assert_array_equal(t.column("y"), [3, 5])

    def test_duplicate_date(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("date,y\n2020-01-01,1\n2020-01-01,2\n")
        with pytest.raises(DataError, match="2020-01-01"):
            load_csv(p)

    def test_bad_number_reports_row(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("date,y\n2020-01-01,1\n2020-01-02,abc\n")
        with pytest.raises(DataError, match="row 3"):
            load_csv(p)

    def test_unknown_column(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("date,y,z\n2020-01-01,1,2\n")
        with pytest.raises(DataError, match="unknown column"):
            load_csv(p, schema=["y", "x"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nope.csv"):
            load_csv(tmp_path / "nope.csv")


class TestLaggedFeatures:
    def test_shift_by_one(self):
        t = generate_lagged_features(table_from([1, 2, 3, 4]), 1)
        assert t.names == ("c0", "c0_lag1")
        np.testing.assert_array_equal(t.values, [[2, 1], [3, 2], [4, 3]])

    def test_full_universe_feature_counts(self):
        t = generate_lagged_features(table_from(np.zeros((10, 159)) + np.arange(10)[:, None]), 5)
        assert len(t.names) - 159 == 795
        assert len(t.names) == 954

    @pytest.mark.parametrize("lags", [0, 4])
    def test_rejects_bad_lags(self, lags):
        with pytest.raises(ValueError):
            generate_lagged_features(table_from([1, 2, 3, 4]), lags)

    def test_column_count_invariant(self):
        for d, lags in [(1, 1), (3, 2), (4, 5)]:
            t = generate_lagged_features(table_from(np.arange(30 * d).reshape(30, d)), lags)
            assert len(t.names) == d * (lags + 1)
            assert len(t) == 30 - lags


class TestMakeSequences:
    series = table_from(np.arange(1, 21))

    def test_seq_to_one_alignment(self):
        s = make_sequences(self.series, WindowSpec(20, 0, 6, 0))
        np.testing.assert_array_equal(s.inputs[0, :, 0], [1, 2, 3, 4, 5, 6])
        assert s.labels[0] == 7

    def test_seq_to_seq_alignment(self):
        s = make_sequences(self.series, WindowSpec(20, 5, 6, 6))
        np.testing.assert_array_equal(s.inputs[0, :, 0], [1, 2, 3, 4, 5, 6])
        np.testing.assert_array_equal(s.labels[0], [7, 8, 9, 10, 11, 12])

    def test_too_large_horizon_gives_empty(self):
        s = make_sequences(table_from(np.arange(1, 11)), WindowSpec(100, 10, 6, 0))
        assert len(s) == 0 and s.labels.shape == (0,)

    @pytest.mark.parametrize("h,seq_out", [(0, 0), (5, 0), (3, 4), (20, 0)])
    def test_final_label_offset(self, h, seq_out):
        seq_in = 4
        s = make_sequences(table_from(np.arange(40.0)), WindowSpec(40, h, seq_in, seq_out))
        final_label = s.labels if seq_out == 0 else s.labels[:, -1]
        final_input = s.inputs[:, -1, 0]
        np.testing.assert_array_equal(final_label - final_input, np.full(len(s), 1 + h))

    def test_window_spec_contract(self):
        with pytest.raises(ValueError):
            WindowSpec(10, 5, 6, 0)
        with pytest.raises(ValueError):
            WindowSpec(100, 0, 6, 3)


class TestNormalization:
    def test_population_std(self):
        t = table_from([2.0, 4.0, 6.0])
        stats = fit_normalization(t)
        assert stats.mean[0] == 4.0
        z = apply_normalization(t.values, stats)[:, 0]
        # population std of [2,4,6] is sqrt(8/3); 2/sqrt(8/3) = sqrt(1.5)
        np.testing.assert_allclose(z, [-np.sqrt(1.5), 0, np.sqrt(1.5)], atol=1e-15)

    def test_round_trip(self):
        x = Rng(1).normal((50, 3))
        t = table_from(x)
        stats = fit_normalization(t)
        back = invert_normalization(apply_normalization(x, stats)[:, 1], stats, "c1")
        np.testing.assert_allclose(back, x[:, 1], atol=1e-12)

    def test_constant_column(self):
        with pytest.raises(ValueError, match="c1"):
            fit_normalization(table_from(np.column_stack([[1.0, 2, 3], [5.0, 5, 5]])))

    def test_no_leakage(self):
        x = Rng(2).normal((100, 2))
        train = table_from(x).rows(0, 70)
        before = fit_normalization(train)
        x2 = x.copy()
        x2[70:] += 1000.0
        after = fit_normalization(table_from(x2).rows(0, 70))
        np.testing.assert_array_equal(before.mean, after.mean)
        np.testing.assert_array_equal(before.std, after.std)


class TestSplit:
    @pytest.mark.parametrize("n,frac,sizes", [(100, 0.7, (70, 30)), (10, 0.5, (5, 5)), (2000, 0.7, (1400, 600))])
    def test_sizes(self, n, frac, sizes):
        tr, te = static_split(table_from(np.arange(float(n))), frac)
        assert (len(tr), len(te)) == sizes
        assert tr.timestamps.max() < te.timestamps.min()

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1])
    def test_bad_fraction(self, frac):
        with pytest.raises(ValueError):
            static_split(table_from(np.arange(10.0)), frac)


class TestSynth:
    def test_shape(self):
        t = synth_generate(SynthConfig(length=500, decoys=5, driver_lag=5, seed=1))
        assert len(t) == 500 and len(t.names) == 7
        assert t.names[:2] == ("target", "driver")

    def test_determinism(self):
        cfg = SynthConfig(length=300, decoys=3, seed=9)
        a, b = synth_generate(cfg), synth_generate(cfg)
        np.testing.assert_array_equal(a.values, b.values)

    def test_zero_coefficient_independent(self):
        t = synth_generate(SynthConfig(length=2000, decoys=0, driver_coef=0.0, seed=4))
        for lag in range(0, 8):
            rho = np.corrcoef(t.target[lag:], t.column("driver")[:2000 - lag])[0, 1]
            assert abs(rho) < 0.1

    def test_driver_lag_visible_in_differences(self):
        t = synth_generate(SynthConfig(length=2000, decoys=0, driver_lag=5, driver_coef=1.0, seed=4))
        # y[t+1] - y[t] carries driver[t+1-5]
        dy, d = np.diff(t.target), t.column("driver")
        assert abs(np.corrcoef(dy[4:], d[:-5])[0, 1]) > 0.5
        assert abs(np.corrcoef(dy[4:], d[1:-4])[0, 1]) < 0.1

    def test_regimes_shift_level(self):
        cfg = SynthConfig(length=1000, decoys=0, driver_coef=0.0, sigma=0.05, regimes=[(500, 3.0)], seed=2)
        y = synth_generate(cfg).target
        assert abs(y[100:500].mean()) < 0.5 and abs(y[600:].mean() - 3.0) < 0.5

    def test_bad_length(self):
        with pytest.raises(ValueError):
            SynthConfig(length=0)

    def test_config_file(self, tmp_path):
        p = tmp_path / "s.ini"
        p.write_text("[synth]\nlength = 50\ndecoys = 2\ndriver_lag = 3\ndriver_coef = 0.5\n"
                     "regimes = 10:1.0, 30:-1.0\nseed = 8\n")
        cfg = load_synth_config(p)
        assert cfg.length == 50 and cfg.regimes == [(10, 1.0), (30, -1.0)]
        assert len(synth_generate(cfg)) == 50
