"""Single-layer LSTM with a linear read-out and analytic backpropagation through time.

Cell equations, per time step and with ``*`` the element-wise product::

    f = sigmoid(W_fx x + W_fh h_prev + b_f)      forget gate
    i = sigmoid(W_ix x + W_ih h_prev + b_i)      input gate
    g = tanh(W_gx x + W_gh h_prev + b_g)         input node
    o = sigmoid(W_ox x + W_oh h_prev + b_o)      output gate
    c = f * c_prev + i * g
    h = o * tanh(c)

The prediction at each step is ``W_out h + b_out``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Rng, sigmoid
from .params import TensorParams, register

GATES = ("f", "i", "g", "o")
TAP_NAMES = ("forget", "input_times_node", "output_gate", "cell_state", "hidden_state")


@register("lstm")
@dataclass
class LstmParameters(TensorParams):
    W_fx: np.ndarray
    W_fh: np.ndarray
    b_f: np.ndarray
    W_ix: np.ndarray
    W_ih: np.ndarray
    b_i: np.ndarray
    W_gx: np.ndarray
    W_gh: np.ndarray
    b_g: np.ndarray
    W_ox: np.ndarray
    W_oh: np.ndarray
    b_o: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray

    @property
    def units(self) -> int:
        return self.W_fh.shape[0]

    @property
    def inputs(self) -> int:
        return self.W_fx.shape[1]

    def validate(self) -> None:
        u, d = self.W_fx.shape
        for gate in GATES:
            wx, wh, b = (getattr(self, n) for n in (f"W_{gate}x", f"W_{gate}h", f"b_{gate}"))
            if wx.shape != (u, d) or wh.shape != (u, u) or b.shape != (u,):
                raise ValueError(
                    f"gate {gate}: shapes {wx.shape}, {wh.shape}, {b.shape} inconsistent with units={u}, inputs={d}"
                )
        if self.W_out.shape != (1, u) or self.b_out.shape != (1,):
            raise ValueError(f"output head shapes {self.W_out.shape}, {self.b_out.shape} do not match units={u}")


@dataclass
class LstmState:
    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, units: int) -> "LstmState":
        return cls(np.zeros(units), np.zeros(units))


@dataclass
class LstmStepSignals:
    forget: np.ndarray
    input_times_node: np.ndarray
    output_gate: np.ndarray
    cell_state: np.ndarray
    hidden_state: np.ndarray


def init_params(units: int, inputs: int, rng: Rng, forget_bias: float = 1.0) -> LstmParameters:
    """Uniform weights in +-1/sqrt(fan_in); zero biases except the forget gate."""
    if units < 1 or inputs < 1:
        raise ValueError("units and inputs must be >= 1")
    fan_in = inputs + units
    bound = 1.0 / np.sqrt(fan_in)
    p = {}
    for gate in GATES:
        p[f"W_{gate}x"] = rng.uniform(-bound, bound, (units, inputs))
        p[f"W_{gate}h"] = rng.uniform(-bound, bound, (units, units))
        p[f"b_{gate}"] = np.full(units, forget_bias if gate == "f" else 0.0)
    out_bound = 1.0 / np.sqrt(units)
    p["W_out"] = rng.uniform(-out_bound, out_bound, (1, units))
    p["b_out"] = np.zeros(1)
    return LstmParameters(**p)


def _cell(p: LstmParameters, x: np.ndarray, h: np.ndarray, c: np.ndarray):
    """One step for a batch: ``x`` (B, D), ``h``/``c`` (B, U)."""
    f = sigmoid(x @ p.W_fx.T + h @ p.W_fh.T + p.b_f)
    i = sigmoid(x @ p.W_ix.T + h @ p.W_ih.T + p.b_i)
    g = np.tanh(x @ p.W_gx.T + h @ p.W_gh.T + p.b_g)
    o = sigmoid(x @ p.W_ox.T + h @ p.W_oh.T + p.b_o)
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    return f, i, g, o, c_new, tc, o * tc


def step(params: LstmParameters, x, prev: LstmState) -> tuple[LstmState, LstmStepSignals]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.inputs,):
        raise ValueError(f"input has shape {x.shape}, model expects ({params.inputs},)")
    if prev.c.shape != (params.units,) or prev.h.shape != (params.units,):
        raise ValueError(f"state shapes {prev.c.shape}/{prev.h.shape} do not match units={params.units}")
    f, i, g, o, c, _, h = _cell(params, x[None, :], prev.h[None, :], prev.c[None, :])
    sig = LstmStepSignals(f[0], (i * g)[0], o[0], c[0], h[0])
    return LstmState(c[0], h[0]), sig


def _check_batch(params: LstmParameters, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"expected a (batch, time, inputs) array, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if X.shape[1] == 0:
        raise ValueError("empty sequence")
    if X.shape[2] != params.inputs:
        raise ValueError(f"inputs have {X.shape[2]} features, model expects {params.inputs}")
    return X


def forward_batch(params: LstmParameters, X, h0=None, c0=None):
    """Run a batch of sequences from a zero (or given) state.

    Returns ``(predictions (B, T), cache)`` where ``cache`` holds the per-step
    gate activations and states, each shaped (B, T, U), plus the initial state.
    """
    X = _check_batch(params, X)
    B, T, _ = X.shape
    U = params.units
    h = np.zeros((B, U)) if h0 is None else np.array(h0, dtype=np.float64).reshape(B, U)
    c = np.zeros((B, U)) if c0 is None else np.array(c0, dtype=np.float64).reshape(B, U)
    cache = {k: np.empty((B, T, U)) for k in ("f", "i", "g", "o", "c", "tc", "h")}
    cache["h0"], cache["c0"] = h, c
    for t in range(T):
        f, i, g, o, c, tc, h = _cell(params, X[:, t, :], h, c)
        for k, v in zip(("f", "i", "g", "o", "c", "tc", "h"), (f, i, g, o, c, tc, h)):
            cache[k][:, t, :] = v
    preds = cache["h"] @ params.W_out[0] + params.b_out[0]
    return preds, cache


def taps_from_cache(cache) -> dict[str, np.ndarray]:
    return {
        "forget": cache["f"],
        "input_times_node": cache["i"] * cache["g"],
        "output_gate": cache["o"],
        "cell_state": cache["c"],
        "hidden_state": cache["h"],
    }


def forward(params: LstmParameters, sequence, seq_out: bool = False):
    """Run one sequence (T, D) from a zero state.

    Returns ``(predictions, signals)``: all T predictions when ``seq_out`` else a
    length-1 array with the last one, and one :class:`LstmStepSignals` per step.
    """
    X = np.asarray(sequence, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    preds, cache = forward_batch(params, X[None])
    taps = taps_from_cache(cache)
    signals = [LstmStepSignals(*(taps[k][0, t] for k in TAP_NAMES)) for t in range(X.shape[0])]
    return (preds[0] if seq_out else preds[0, -1:]), signals


def predict(params: LstmParameters, X, seq_out: bool = False) -> np.ndarray:
    preds, _ = forward_batch(params, X)
    return preds if seq_out else preds[:, -1]


def loss_and_grad(params: LstmParameters, X, Y, final_step_only: bool = False):
    """Mean squared error over the batch and its exact gradient.

    ``Y`` of shape (B,) supervises the last step; (B, T) supervises every step,
    averaged over steps unless ``final_step_only``.
    """
    X = _check_batch(params, X)
    Y = np.asarray(Y, dtype=np.float64)
    B, T, _ = X.shape
    if Y.shape not in ((B,), (B, T)):
        raise ValueError(f"labels shape {Y.shape} does not match batch {B} x steps {T}")
    preds, cache = forward_batch(params, X)
    dpred = np.zeros((B, T))
    if Y.ndim == 2 and not final_step_only:
        resid = preds - Y
        loss = float(np.mean(resid ** 2))
        dpred[:] = 2.0 * resid / (B * T)
    else:
        last = Y if Y.ndim == 1 else Y[:, -1]
        resid = preds[:, -1] - last
        loss = float(np.mean(resid ** 2))
        dpred[:, -1] = 2.0 * resid / B
    return loss, _backprop(params, X, cache, dpred)


def backward(params: LstmParameters, X, Y, seq_out: bool = False, final_step_only: bool = False) -> LstmParameters:
    """Gradient of the batch MSE w.r.t. every parameter, returned in parameter layout."""
    Y = np.asarray(Y, dtype=np.float64)
    if seq_out and Y.ndim != 2:
        raise ValueError("seq_out requires labels of shape (batch, steps)")
    if not seq_out and Y.ndim != 1:
        raise ValueError("single-output mode requires labels of shape (batch,)")
    return loss_and_grad(params, X, Y, final_step_only)[1]


def _backprop(p: LstmParameters, X, cache, dpred) -> LstmParameters:
    B, T, _ = X.shape
    U = p.units
    H, C = cache["h"], cache["c"]
    g = {k: np.zeros_like(v) for k, v in p.tensors().items()}
    g["W_out"] = (dpred[:, :, None] * H).sum(axis=(0, 1))[None, :]
    g["b_out"] = np.array([dpred.sum()])
    dh_next = np.zeros((B, U))
    dc_next = np.zeros((B, U))
    Wh = {k: getattr(p, f"W_{k}h") for k in GATES}
    for t in range(T - 1, -1, -1):
        f, i, gg, o, tc = (cache[k][:, t, :] for k in ("f", "i", "g", "o", "tc"))
        c_prev = cache["c"][:, t - 1, :] if t > 0 else cache["c0"]
        h_prev = H[:, t - 1, :] if t > 0 else cache["h0"]
        dh = dpred[:, t, None] * p.W_out[0] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = {
            "f": dc * c_prev * f * (1.0 - f),
            "i": dc * gg * i * (1.0 - i),
            "g": dc * i * (1.0 - gg * gg),
            "o": dh * tc * o * (1.0 - o),
        }
        x_t = X[:, t, :]
        dh_next = np.zeros((B, U))
        for k in GATES:
            g[f"W_{k}x"] += dz[k].T @ x_t
            g[f"W_{k}h"] += dz[k].T @ h_prev
            g[f"b_{k}"] += dz[k].sum(axis=0)
            dh_next += dz[k] @ Wh[k]
        dc_next = dc * f
    return LstmParameters.unchecked(**g)
