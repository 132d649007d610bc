"""Lasso by cyclic coordinate descent on lag-expanded design matrices.

The objective is the unnormalized ``||X w - s||^2 + gamma * ||w||_1``, so the
smallest penalty with an all-zero solution is ``gamma_max = 2 * max_j |x_j^T s|``.
Every lag of a feature is a free coordinate; no lag is excluded once another lag
of the same feature enters the model.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import TimeSeriesTable

Label = tuple[str, int]


class LassoConvergenceError(RuntimeError):
    def __init__(self, sweeps: int, objective: float):
        super().__init__(f"coordinate descent did not converge in {sweeps} sweeps (objective={objective:.6g})")
        self.sweeps = sweeps
        self.objective = objective


@dataclass
class LagDesignMatrix:
    """``X[r, j]`` is feature ``column_names[j][0]`` at lag ``column_names[j][1]`` relative to row ``rows[r]``."""

    X: np.ndarray
    column_names: list[Label]
    k: int
    rows: np.ndarray

    @property
    def features(self) -> list[str]:
        return list(dict.fromkeys(name for name, _ in self.column_names))

    def take_rows(self, rows) -> "LagDesignMatrix":
        """Restrict to the given source-row indices (all must be present)."""
        rows = np.asarray(rows, dtype=int)
        pos = np.searchsorted(self.rows, rows)
        if np.any(pos >= len(self.rows)) or np.any(self.rows[np.minimum(pos, len(self.rows) - 1)] != rows):
            raise ValueError("requested rows are not available in the lag matrix")
        return LagDesignMatrix(self.X[pos], self.column_names, self.k, rows)


def build_lag_matrix(features: TimeSeriesTable, k: int, allow_large_k: bool = False) -> LagDesignMatrix:
    """Expand every column into lags ``0..k`` (feature-major) and drop the first ``k`` rows."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > 6 and not allow_large_k:
        raise ValueError(f"k={k} exceeds the default bound 6; pass allow_large_k=True")
    n = len(features)
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the table length {n}")
    if not features.names:
        raise ValueError("empty feature table")
    vals = features.values
    cols, names = [], []
    for j, name in enumerate(features.names):
        for lag in range(k + 1):
            cols.append(vals[k - lag:n - lag, j])
            names.append((name, lag))
    return LagDesignMatrix(np.column_stack(cols), names, k, np.arange(k, n))


@dataclass
class Standardized:
    X: np.ndarray
    s: np.ndarray
    column_names: list
    x_mean: np.ndarray
    x_std: np.ndarray
    s_mean: float
    s_std: float
    dropped: list = field(default_factory=list)


def standardize_columns(X, column_names: Sequence | None = None, rel_tol: float = 1e-12):
    """Column-only variant of :func:`standardize`; returns ``(X, kept_names, dropped_names)``."""
    if isinstance(X, LagDesignMatrix):
        column_names = X.column_names if column_names is None else column_names
        X = X.X
    X = np.asarray(X, dtype=np.float64)
    column_names = list(column_names) if column_names is not None else list(range(X.shape[1]))
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    keep = std > rel_tol * np.maximum(1.0, np.abs(mean))
    dropped = [column_names[j] for j in np.flatnonzero(~keep)]
    if dropped:
        warnings.warn(f"dropping {len(dropped)} constant column(s): {dropped[:5]}", stacklevel=2)
    kept = [column_names[j] for j in np.flatnonzero(keep)]
    return (X[:, keep] - mean[keep]) / std[keep], kept, dropped


def standardize(X, s, column_names: Sequence | None = None, rel_tol: float = 1e-12) -> Standardized:
    """Zero-mean, unit (population) std columns and target; constant columns are dropped and reported."""
    if isinstance(X, LagDesignMatrix):
        column_names = X.column_names if column_names is None else column_names
        X = X.X
    X = np.asarray(X, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if X.shape[0] != s.shape[0]:
        raise ValueError(f"{X.shape[0]} design rows but {s.shape[0]} targets")
    column_names = list(column_names) if column_names is not None else list(range(X.shape[1]))
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    keep = std > rel_tol * np.maximum(1.0, np.abs(mean))
    dropped = [column_names[j] for j in np.flatnonzero(~keep)]
    if dropped:
        warnings.warn(f"dropping {len(dropped)} constant column(s): {dropped[:5]}", stacklevel=2)
    s_mean, s_std = float(s.mean()), float(s.std())
    if not s_std > 0:
        raise ValueError("target has zero variance")
    Xs = (X[:, keep] - mean[keep]) / std[keep]
    return Standardized(Xs, (s - s_mean) / s_std, [column_names[j] for j in np.flatnonzero(keep)],
                        mean[keep], std[keep], s_mean, s_std, dropped)


def gamma_max(X, s) -> float:
    return float(2.0 * np.max(np.abs(np.asarray(X).T @ np.asarray(s)))) if np.size(X) else 0.0


@dataclass
class LassoSolution:
    w: np.ndarray
    gamma: float
    objective: float
    column_names: list
    sweeps: int = 0
    objective_trace: list[float] = field(default_factory=list)

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.w)

    @property
    def active_set(self) -> list:
        return [self.column_names[j] for j in self.active]

    def weights(self) -> dict:
        return {self.column_names[j]: float(self.w[j]) for j in self.active}

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "objective": self.objective,
            "active": [
                {"feature": _name(lbl), "lag": _lag(lbl), "weight": float(self.w[j])}
                for j, lbl in zip(self.active, self.active_set)
            ],
        }


def _name(lbl):
    return lbl[0] if isinstance(lbl, tuple) else str(lbl)


def _lag(lbl):
    return int(lbl[1]) if isinstance(lbl, tuple) else None


def kkt_violation(G, c, w, gamma) -> float:
    """Largest violation of the subgradient optimality conditions, from the Gram form."""
    grad = 2.0 * (G @ w - c)
    nz = w != 0
    v_active = np.abs(grad[nz] + gamma * np.sign(w[nz]))
    v_zero = np.abs(grad[~nz]) - gamma
    return float(max(v_active.max(initial=0.0), v_zero.max(initial=0.0), 0.0))


def _soft(x: float, t: float) -> float:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def _sweep(G, c, diag, q, w, half, coords) -> float:
    max_delta = 0.0
    for j in coords:
        djj = diag[j]
        if djj == 0.0:
            continue
        wj = w[j]
        new = _soft(c[j] - q[j] + djj * wj, half) / djj
        d = new - wj
        if d != 0.0:
            w[j] = new
            q += G[j] * d  # G is symmetric; rows are contiguous
            ad = abs(d)
            if ad > max_delta:
                max_delta = ad
    return max_delta


def _gram_objective(G, c, ss, w, gamma) -> float:
    return float(ss - 2.0 * c @ w + w @ (G @ w) + gamma * np.abs(w).sum())


def coordinate_descent(G, c, ss, gamma, w0=None, tol=1e-8, kkt_tol=1e-7, max_sweeps=100_000,
                       record_objective=False):
    """Minimize ``ss - 2 c^T w + w^T G w + gamma |w|_1`` (``G = X^T X``, ``c = X^T s``).

    Converged when a full sweep moves no coordinate by ``tol`` or more and the
    optimality conditions hold to ``kkt_tol``. Between full sweeps the solver
    iterates on the current active set.
    """
    p = c.shape[0]
    w = np.zeros(p) if w0 is None else np.array(w0, dtype=np.float64)
    q = G @ w
    diag = np.diag(G).copy()
    half = 0.5 * gamma
    trace = [_gram_objective(G, c, ss, w, gamma)] if record_objective else []
    all_coords = range(p)
    sweeps = 0
    while sweeps < max_sweeps:
        delta = _sweep(G, c, diag, q, w, half, all_coords)
        sweeps += 1
        if record_objective:
            trace.append(_gram_objective(G, c, ss, w, gamma))
        if delta < tol:
            q = G @ w  # drop accumulated rounding before certifying
            if kkt_violation(G, c, w, gamma) <= kkt_tol:
                return w, sweeps, trace
        active = np.flatnonzero(w)
        while sweeps < max_sweeps and active.size:
            delta = _sweep(G, c, diag, q, w, half, active)
            sweeps += 1
            if record_objective:
                trace.append(_gram_objective(G, c, ss, w, gamma))
            if delta < tol:
                break
    raise LassoConvergenceError(sweeps, _gram_objective(G, c, ss, w, gamma))


class Gram:
    """Precomputed ``X^T X``, ``X^T s`` and ``s^T s`` for repeated fits on the same data."""

    def __init__(self, X, s, G: np.ndarray | None = None):
        self.X = np.asarray(X, dtype=np.float64)
        self.s = np.asarray(s, dtype=np.float64)
        self.G = self.X.T @ self.X if G is None else G
        self.c = self.X.T @ self.s
        self.ss = float(self.s @ self.s)

    @property
    def gamma_max(self) -> float:
        return float(2.0 * np.max(np.abs(self.c))) if self.c.size else 0.0


def lasso_fit(X, s, gamma: float, column_names: Sequence | None = None, w0=None, tol: float = 1e-8,
              max_sweeps: int = 100_000, record_objective: bool = False, gram: Gram | None = None) -> LassoSolution:
    """Minimize ``||X w - s||^2 + gamma ||w||_1`` by cyclic coordinate descent with soft-thresholding."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    gram = gram if gram is not None else Gram(X, s)
    names = list(column_names) if column_names is not None else list(range(gram.X.shape[1]))
    w, sweeps, trace = coordinate_descent(gram.G, gram.c, gram.ss, gamma, w0, tol,
                                          max_sweeps=max_sweeps, record_objective=record_objective)
    r = gram.X @ w - gram.s
    obj = float(r @ r + gamma * np.abs(w).sum())
    return LassoSolution(w, float(gamma), obj, names, sweeps, trace)


def default_grid(gmax: float, n: int = 50, ratio: float = 1e-3) -> np.ndarray:
    """Geometric grid from ``gmax`` down to ``gmax * ratio``."""
    if gmax <= 0:
        return np.array([1.0])
    return np.geomspace(gmax, gmax * ratio, n)


@dataclass
class LassoPath:
    gammas: np.ndarray
    n_active: list[int]
    objectives: list[float]
    mse: list[float]
    solutions: list[LassoSolution]

    def at(self, gamma: float) -> LassoSolution:
        j = int(np.argmin(np.abs(self.gammas - gamma)))
        return self.solutions[j]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["gamma", "n_active", "objective", "mse"])
            for row in zip(self.gammas, self.n_active, self.objectives, self.mse):
                w.writerow([repr(float(row[0])), row[1], repr(float(row[2])), repr(float(row[3]))])


def lasso_path(X, s, grid=None, column_names: Sequence | None = None, gram: Gram | None = None) -> LassoPath:
    """Warm-started fits along a descending grid of positive penalties."""
    gram = gram if gram is not None else Gram(X, s)
    grid = default_grid(gram.gamma_max) if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) > 0):
        raise ValueError("grid must be non-empty, positive and descending")
    sols, w = [], None
    n = gram.X.shape[0]
    for gamma in grid:
        sol = lasso_fit(None, None, float(gamma), column_names, w0=w, gram=gram)
        sols.append(sol)
        w = sol.w
    mses = [float(np.mean((gram.X @ sol.w - gram.s) ** 2)) if n else 0.0 for sol in sols]
    return LassoPath(grid, [len(sol.active) for sol in sols], [sol.objective for sol in sols], mses, sols)


@dataclass
class RelevantFeatures:
    horizon: int
    gamma: float
    solution: LassoSolution
    path: LassoPath | None
    dropped: list

    @property
    def selected(self) -> list[Label]:
        return self.solution.active_set

    def to_dict(self) -> dict:
        return {"horizon": self.horizon, **self.solution.to_dict(), "dropped": [list(d) for d in self.dropped]}


def aligned_design(target: np.ndarray, features: TimeSeriesTable, horizon: int, k: int,
                   allow_large_k: bool = False):
    """Lag matrix rows ``t`` paired with ``target[t + 1 + horizon]``."""
    lagm = build_lag_matrix(features, k, allow_large_k)
    n = len(features)
    rows = lagm.rows[lagm.rows + 1 + horizon <= n - 1]
    if rows.size < 2:
        raise ValueError("not enough rows for the requested horizon")
    lagm = lagm.take_rows(rows)
    return lagm, np.asarray(target, dtype=np.float64)[rows + 1 + horizon]


def select_relevant_features(target, features: TimeSeriesTable, horizon: int, k: int = 5, gamma: float = 1.0,
                             grid=None, max_features: int | None = None) -> RelevantFeatures:
    """Lasso on the lag-expanded features against the horizon-aligned target.

    ``max_features`` keeps only the largest-|weight| selections.
    """
    if not features.names or len(features) == 0:
        raise ValueError("empty feature table")
    lagm, y = aligned_design(target, features, horizon, k)
    std = standardize(lagm, y)
    gram = Gram(std.X, std.s)
    path = lasso_path(None, None, grid, std.column_names, gram=gram) if grid is not None else None
    w0 = path.solutions[-1].w if path is not None and path.gammas[-1] >= gamma else None
    sol = lasso_fit(None, None, gamma, std.column_names, w0=w0, gram=gram)
    if max_features is not None and len(sol.active) > max_features:
        keep = sol.active[np.argsort(-np.abs(sol.w[sol.active]), kind="stable")[:max_features]]
        w = np.zeros_like(sol.w)
        w[keep] = sol.w[keep]
        sol = LassoSolution(w, sol.gamma, _gram_objective(gram.G, gram.c, gram.ss, w, gamma),
                            sol.column_names, sol.sweeps)
    return RelevantFeatures(horizon, gamma, sol, path, std.dropped)


def solution_to_json(sol: LassoSolution, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(sol.to_dict(), fh, indent=2)
