"""One-hidden-layer perceptron baseline: ``W2 act(W1 x + b1) + b2``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Rng
from .params import TensorParams, register

ACTIVATIONS = ("tanh", "identity")


@register("mlp")
@dataclass
class MlpParameters(TensorParams):
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def inputs(self) -> int:
        return self.W1.shape[1]

    def validate(self) -> None:
        hdim, _ = self.W1.shape
        if self.b1.shape != (hdim,) or self.W2.shape != (1, hdim) or self.b2.shape != (1,):
            raise ValueError(
                f"inconsistent MLP shapes W1{self.W1.shape} b1{self.b1.shape} W2{self.W2.shape} b2{self.b2.shape}"
            )


def init_mlp(inputs: int, rng: Rng, hidden: int = 10) -> MlpParameters:
    if inputs < 1 or hidden < 1:
        raise ValueError("inputs and hidden must be >= 1")
    b1 = 1.0 / np.sqrt(inputs)
    b2 = 1.0 / np.sqrt(hidden)
    return MlpParameters(
        W1=rng.uniform(-b1, b1, (hidden, inputs)),
        b1=np.zeros(hidden),
        W2=rng.uniform(-b2, b2, (1, hidden)),
        b2=np.zeros(1),
    )


def _act(z, activation):
    if activation == "tanh":
        return np.tanh(z)
    if activation == "identity":
        return z
    raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


def _check(params: MlpParameters, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a (batch, features) array, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if X.shape[1] != params.inputs:
        raise ValueError(f"inputs have {X.shape[1]} features, model expects {params.inputs}")
    return X


def mlp_forward(params: MlpParameters, features, activation: str = "tanh") -> float:
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (params.inputs,):
        raise ValueError(f"features have shape {x.shape}, model expects ({params.inputs},)")
    return float(mlp_predict(params, x[None, :], activation)[0])


def mlp_predict(params: MlpParameters, X, activation: str = "tanh") -> np.ndarray:
    X = _check(params, X)
    return _act(X @ params.W1.T + params.b1, activation) @ params.W2[0] + params.b2[0]


def loss_and_grad(params: MlpParameters, X, y, activation: str = "tanh"):
    X = _check(params, X)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match batch {X.shape[0]}")
    a = _act(X @ params.W1.T + params.b1, activation)
    pred = a @ params.W2[0] + params.b2[0]
    resid = pred - y
    n = X.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.mean(resid ** 2))
    dpred = 2.0 * resid / n
    gW2 = (dpred @ a)[None, :]
    gb2 = np.array([dpred.sum()])
    da = dpred[:, None] * params.W2[0]
    dz = da * (1.0 - a * a) if activation == "tanh" else da
    return loss, MlpParameters.unchecked(W1=dz.T @ X, b1=dz.sum(axis=0), W2=gW2, b2=gb2)


def mlp_backward(params: MlpParameters, X, y, activation: str = "tanh") -> MlpParameters:
    return loss_and_grad(params, X, y, activation)[1]
