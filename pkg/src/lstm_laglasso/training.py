"""MSE loss, Adam and the epoch loop shared by the LSTM and MLP models."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import lstm, mlp
from .lstm import LstmParameters
from .mlp import MlpParameters
from .numerics import Rng
from .params import TensorParams


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


def mse(pred, actual) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {actual.shape}")
    if pred.size == 0:
        raise ValueError("mse of empty input")
    return float(np.mean((pred - actual) ** 2))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: TensorParams, grads: TensorParams):
    """One bias-corrected Adam update. ``state`` is advanced in place and returned."""
    p, g = params.tensors(), grads.tensors()
    if p.keys() != g.keys() or any(p[k].shape != g[k].shape for k in p):
        raise ValueError("gradient layout does not match parameters")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    new = {}
    for k, w in p.items():
        m = state.m.get(k)
        v = state.v.get(k)
        if m is None or m.shape != w.shape:
            m = np.zeros_like(w)
            v = np.zeros_like(w)
        m = b1 * m + (1.0 - b1) * g[k]
        v = b2 * v + (1.0 - b2) * g[k] * g[k]
        state.m[k], state.v[k] = m, v
        new[k] = w - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return type(params)(**new), state


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 3000
    warm_start: bool = True
    clip_norm: float | None = None
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    final_step_only: bool = False
    activation: str = "tanh"
    log_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")


@dataclass
class FitResult:
    params: TensorParams
    losses: list[float]
    adam: AdamState


def loss_fn_for(params: TensorParams, cfg: TrainConfig) -> Callable:
    if isinstance(params, LstmParameters):
        return lambda p, X, y: lstm.loss_and_grad(p, X, y, cfg.final_step_only)
    if isinstance(params, MlpParameters):
        return lambda p, X, y: mlp.loss_and_grad(p, X, y, cfg.activation)
    raise TypeError(f"unsupported model parameters {type(params).__name__}")


def reinitialize(params: TensorParams, seed: int) -> TensorParams:
    rng = Rng(seed)
    if isinstance(params, LstmParameters):
        return lstm.init_params(params.units, params.inputs, rng)
    if isinstance(params, MlpParameters):
        return mlp.init_mlp(params.inputs, rng, params.hidden)
    raise TypeError(f"unsupported model parameters {type(params).__name__}")


def _clip(grads: TensorParams, max_norm: float) -> TensorParams:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.tensors().values())))
    if norm <= max_norm or norm == 0.0:
        return grads
    s = max_norm / norm
    return type(grads)(**{k: g * s for k, g in grads.tensors().items()})


def fit(params: TensorParams, X, y, cfg: TrainConfig, adam: AdamState | None = None) -> FitResult:
    """Mini-batch Adam over ``cfg.epochs`` epochs.

    With ``warm_start`` the supplied parameters are the starting point, otherwise
    a fresh initialization of the same shape is drawn from ``cfg.seed``. Batches
    are taken in a seeded shuffled order; a single full batch is not shuffled.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("no training samples")
    if y.shape[0] != n:
        raise ValueError(f"{n} inputs but {y.shape[0]} labels")
    if not cfg.warm_start:
        params = reinitialize(params, cfg.seed)
    loss_fn = loss_fn_for(params, cfg)
    if adam is None:
        adam = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = Rng(cfg.seed)
    losses: list[float] = []
    for epoch in range(cfg.epochs):
        if cfg.batch_size >= n:
            batches = [slice(None)]
        else:
            order = rng.permutation(n)
            batches = [order[s:s + cfg.batch_size] for s in range(0, n, cfg.batch_size)]
        total = 0.0
        for b in batches:
            loss, grads = loss_fn(params, X[b], y[b])
            if not np.isfinite(loss) or not np.all(np.isfinite(grads.flat())):
                raise TrainingDiverged(epoch, loss)
            if cfg.clip_norm is not None:
                grads = _clip(grads, cfg.clip_norm)
            params, adam = adam_step(adam, params, grads)
            total += loss * (n if isinstance(b, slice) else len(b))
        losses.append(total / n)
    if cfg.log_path:
        write_loss_curve(losses, cfg.log_path)
    return FitResult(params, losses, adam)


def write_loss_curve(losses, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


def predict(params: TensorParams, X, cfg: TrainConfig | None = None) -> np.ndarray:
    if isinstance(params, LstmParameters):
        return lstm.predict(params, X)
    return mlp.mlp_predict(params, X, cfg.activation if cfg else "tanh")


def grid_search(params: TensorParams, X, y, base: TrainConfig, grid: dict[str, list], val_frac: float = 0.2):
    """Try every combination in ``grid`` on a chronological train/validation split.

    Returns ``(best_config, [(overrides, validation_mse), ...])``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    cut = int(round(len(X) * (1.0 - val_frac)))
    if cut < 1 or cut >= len(X):
        raise ValueError("validation split leaves an empty side")
    keys = sorted(grid)
    scores = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, combo))
        cfg = replace(base, **overrides)
        res = fit(params, X[:cut], y[:cut], cfg)
        pred = predict(res.params, X[cut:], cfg)
        target = y[cut:] if y.ndim == 1 else y[cut:, -1]
        scores.append((overrides, mse(pred, target)))
    best = min(scores, key=lambda s: s[1])[0]
    return replace(base, **best), scores
