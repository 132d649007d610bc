import csv

import numpy as np
import pytest

from lstm_laglasso import lstm
from lstm_laglasso.mlp import MlpParameters, init_mlp
from lstm_laglasso.numerics import Rng
from lstm_laglasso.training import (
    AdamState,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    fit,
    grid_search,
    mse,
)


class TestMse:
    def test_examples(self):
        assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert mse([0.0, 0.0], [1.0, 3.0]) == 5.0

    def test_permutation_invariant(self):
        a, b = Rng(1).normal(9), Rng(2).normal(9)
        perm = Rng(3).permutation(9)
        assert mse(a, b) == pytest.approx(mse(a[perm], b[perm]), rel=1e-15)

    def test_empty(self):
        with pytest.raises(ValueError):
            mse([], [])


def scalar(w):
    return MlpParameters(W1=[[w]], b1=[0.0], W2=[[0.0]], b2=[0.0])


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        for g in (3.0, -0.02, 1e-3):
            st = AdamState(lr=1e-3)
            new, st = adam_step(st, scalar(1.0), scalar(g))
            expected = 1.0 - 1e-3 * g / (abs(g) + 1e-8)
            assert new.W1[0, 0] == pytest.approx(expected, abs=1e-16)
            assert abs(new.W1[0, 0] - (1.0 - 1e-3 * np.sign(g))) < 1e-8

    def test_zero_gradient(self):
        st = AdamState()
        p = init_mlp(3, Rng(0))
        new, st = adam_step(st, p, p.zeros_like())
        np.testing.assert_array_equal(new.flat(), p.flat())
        assert st.t == 1

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(AdamState(), init_mlp(3, Rng(0)), init_mlp(4, Rng(0)))

    def test_deterministic_trajectory(self):
        def run():
            st, p = AdamState(lr=0.1), scalar(2.0)
            out = []
            for k in range(20):
                p, st = adam_step(st, p, scalar(2 * p.W1[0, 0] + np.sin(k)))
                out.append(p.W1[0, 0])
            return out
        assert run() == run()


def linear_data(n=64):
    x = np.linspace(-1, 1, n)[:, None]
    return x, 2.0 * x[:, 0]


class TestFit:
    def test_linear_convergence(self):
        X, y = linear_data()
        p = init_mlp(1, Rng(0), hidden=1)
        res = fit(p, X, y, TrainConfig(epochs=500, lr=0.05, activation="identity"))
        assert res.losses[-1] < 1e-3

    def test_epochs_zero_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)

    def test_lr_zero_leaves_params(self):
        X, y = linear_data()
        p = init_mlp(1, Rng(1), hidden=3)
        res = fit(p, X, y, TrainConfig(epochs=5, lr=0.0))
        np.testing.assert_array_equal(res.params.flat(), p.flat())

    def test_warm_start_not_worse(self):
        rng = Rng(2)
        X = rng.normal((200, 6, 1))
        y = X[:, -1, 0] * 0.8 + 0.1 * X[:, -2, 0]
        p0 = lstm.init_params(3, 1, Rng(3))
        cfg = TrainConfig(epochs=150, lr=0.02, seed=3)
        converged = fit(p0, X, y, cfg).params
        X2 = np.concatenate([X[1:], rng.normal((1, 6, 1))])
        y2 = X2[:, -1, 0] * 0.8 + 0.1 * X2[:, -2, 0]
        warm = fit(converged, X2, y2, TrainConfig(epochs=1, lr=0.02, seed=3))
        cold = fit(converged, X2, y2, TrainConfig(epochs=1, lr=0.02, seed=3, warm_start=False))
        assert warm.losses[0] <= cold.losses[0]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_epoch(self):
        p = scalar(1.0).replace(W2=np.array([[1.0]]))
        with pytest.raises(TrainingDiverged) as err:
            fit(p, np.array([[1e200]]), np.array([0.0]), TrainConfig(epochs=3, activation="identity"))
        assert err.value.epoch == 0

    def test_reproducible_minibatch(self):
        rng = Rng(4)
        X, y = rng.normal((50, 3)), rng.normal(50)
        cfg = TrainConfig(epochs=10, batch_size=8, lr=0.01, seed=11)
        a = fit(init_mlp(3, Rng(5)), X, y, cfg)
        b = fit(init_mlp(3, Rng(5)), X, y, cfg)
        np.testing.assert_array_equal(a.params.flat(), b.params.flat())
        assert a.losses == b.losses

    def test_clip_keeps_training_finite(self):
        rng = Rng(6)
        X, y = rng.normal((30, 4, 1)) * 50, rng.normal(30) * 50
        res = fit(lstm.init_params(2, 1, Rng(0)), X, y, TrainConfig(epochs=5, lr=0.1, clip_norm=1.0))
        assert np.all(np.isfinite(res.losses))

    def test_loss_curve_csv(self, tmp_path):
        X, y = linear_data(16)
        path = tmp_path / "loss.csv"
        fit(init_mlp(1, Rng(0)), X, y, TrainConfig(epochs=4, log_path=str(path)))
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["epoch", "loss"] and len(rows) == 5


def test_grid_search_picks_a_grid_point():
    X, y = linear_data(80)
    best, scores = grid_search(init_mlp(1, Rng(0), 2), X, y, TrainConfig(epochs=50),
                               {"lr": [0.0, 0.05]})
    assert len(scores) == 2
    assert best.lr == 0.05
