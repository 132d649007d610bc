"""Independent reference computations used only by the tests."""
import itertools

import mpmath
import numpy as np

from lstm_laglasso.numerics import finite_diff_gradient

mpmath.mp.dps = 40


def _sig(z):
    return 1 / (1 + mpmath.exp(-z))


def lstm_step_reference(params, x, h_prev, c_prev):
    """Scalar-by-scalar evaluation of the cell equations at 40 significant digits."""
    U, D = params.W_fx.shape
    x = [mpmath.mpf(float(v)) for v in x]
    h_prev = [mpmath.mpf(float(v)) for v in h_prev]
    c_prev = [mpmath.mpf(float(v)) for v in c_prev]

    def pre(W_x, W_h, b, u):
        z = mpmath.mpf(float(b[u]))
        for d in range(D):
            z += mpmath.mpf(float(W_x[u, d])) * x[d]
        for v in range(U):
            z += mpmath.mpf(float(W_h[u, v])) * h_prev[v]
        return z

    out = {k: [] for k in ("f", "i", "g", "o", "c", "h")}
    for u in range(U):
        f = _sig(pre(params.W_fx, params.W_fh, params.b_f, u))
        i = _sig(pre(params.W_ix, params.W_ih, params.b_i, u))
        g = mpmath.tanh(pre(params.W_gx, params.W_gh, params.b_g, u))
        o = _sig(pre(params.W_ox, params.W_oh, params.b_o, u))
        c = f * c_prev[u] + i * g
        h = o * mpmath.tanh(c)
        for k, v in zip(("f", "i", "g", "o", "c", "h"), (f, i, g, o, c, h)):
            out[k].append(float(v))
    return {k: np.array(v) for k, v in out.items()}


def rel_err(a, b, floor=1e-6):
    """Per-coordinate relative error ``|a-b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def fd_check(params, loss_of_params, eps=1e-5):
    """Finite-difference gradient of ``loss_of_params`` at ``params`` (flattened)."""
    return finite_diff_gradient(lambda v: loss_of_params(params.from_flat(v)), params.flat(), eps)


def lasso_objective(X, s, w, gamma):
    r = X @ w - s
    return float(r @ r + gamma * np.abs(w).sum())


def zoom_grid_minimum(X, s, gamma, center, radius=4.0, points=21, levels=40):
    """Exhaustive grid search around ``center``, shrinking the box around the incumbent."""
    best = np.asarray(center, dtype=float)
    best_val = lasso_objective(X, s, best, gamma)
    offsets = np.linspace(-1.0, 1.0, points)
    for _ in range(levels):
        axes = [best[j] + radius * offsets for j in range(X.shape[1])]
        for j in range(X.shape[1]):
            if axes[j].min() < 0 < axes[j].max():
                axes[j] = np.append(axes[j], 0.0)
        grid = np.array(list(itertools.product(*axes)))
        R = grid @ X.T - s
        vals = np.einsum("ij,ij->i", R, R) + gamma * np.abs(grid).sum(axis=1)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best, best_val = grid[k], vals[k]
        radius *= 0.5
    return best, best_val
