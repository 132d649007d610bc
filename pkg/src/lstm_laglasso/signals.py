"""Record gate and state signals of a trained LSTM and detect dormant units."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import lstm
from .dataset import NormalizationStats, TimeSeriesTable, WindowSpec
from .lstm import TAP_NAMES, LstmParameters

STATE_CARRY = ("reset", "carry")


@dataclass
class SignalTrace:
    """Per-step, per-unit values at the five instrumented cell locations.

    ``values[loc]`` has shape (steps, units). ``rows`` are source-table row indices.
    """

    timestamps: np.ndarray
    rows: np.ndarray
    values: dict[str, np.ndarray]
    mode: str = "final"
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def units(self) -> int:
        return self.values["hidden_state"].shape[1]

    def __getitem__(self, location: str) -> np.ndarray:
        return self.values[location]

    def to_long_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp", "location", "unit", "value"])
            for loc in (*TAP_NAMES, *self.extras):
                arr = self.values.get(loc, self.extras.get(loc))
                for r, ts in enumerate(self.timestamps):
                    for u in range(arr.shape[1]):
                        w.writerow([str(ts), loc, u, repr(float(arr[r, u]))])


def trace_from_long_csv(path) -> SignalTrace:
    data: dict[str, dict[int, list[float]]] = {}
    stamps: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            loc, unit = rec["location"], int(rec["unit"])
            data.setdefault(loc, {}).setdefault(unit, []).append(float(rec["value"]))
            if loc == TAP_NAMES[0] and unit == 0:
                stamps.append(rec["timestamp"])
    values, extras = {}, {}
    for loc, per_unit in data.items():
        arr = np.column_stack([per_unit[u] for u in sorted(per_unit)])
        (values if loc in TAP_NAMES else extras)[loc] = arr
    ts = np.array(stamps, dtype="datetime64[D]")
    return SignalTrace(ts, np.arange(len(ts)), values, "loaded", extras)


def _model_inputs(params: LstmParameters, table: TimeSeriesTable, features, stats):
    features = list(features) if features is not None else (
        [table.target_name] if params.inputs == 1 else list(table.names))
    if len(features) != params.inputs:
        raise ValueError(f"{len(features)} input features but the model expects {params.inputs}")
    x = table.values[:, [table.index(f) for f in features]]
    if stats is not None:
        idx = [stats.index(f) for f in features]
        x = (x - stats.mean[idx]) / stats.std[idx]
    return x


def extract_trace(params: LstmParameters, table: TimeSeriesTable, spec: WindowSpec,
                  state_carry: str = "reset", features: Sequence[str] | None = None,
                  stats: NormalizationStats | None = None, verbose: bool = False,
                  rows: Sequence[int] | None = None) -> SignalTrace:
    """Run the model over ``table`` and record one value per time step and unit.

    With ``state_carry="reset"`` the value at row ``t`` is the last step of the
    ``spec.seq_in``-long sequence ending at ``t`` started from a zero state.
    With ``"carry"`` the whole table is one sequence and every step is recorded.
    ``rows`` restricts the recorded anchors.
    """
    if state_carry not in STATE_CARRY:
        raise ValueError(f"state_carry must be one of {STATE_CARRY}")
    x = _model_inputs(params, table, features, stats)
    n = len(table)
    if state_carry == "reset":
        anchors = np.arange(spec.seq_in - 1, n) if rows is None else np.asarray(rows, dtype=int)
        if anchors.size and (anchors.min() < spec.seq_in - 1 or anchors.max() >= n):
            raise ValueError("requested rows lack the history needed for a full input sequence")
        if anchors.size == 0:
            return _empty_trace(table, params.units, verbose)
        windows = np.lib.stride_tricks.sliding_window_view(x, spec.seq_in, axis=0)
        X = windows[anchors - (spec.seq_in - 1)].transpose(0, 2, 1)
        _, cache = lstm.forward_batch(params, X)
        sel = (slice(None), -1, slice(None))
    else:
        _, cache = lstm.forward_batch(params, x[None])
        anchors = np.arange(n) if rows is None else np.asarray(rows, dtype=int)
        sel = (0, anchors, slice(None))
    taps = lstm.taps_from_cache(cache)
    values = {k: np.ascontiguousarray(taps[k][sel]) for k in TAP_NAMES}
    extras = {}
    if verbose:
        extras = {"input_gate": cache["i"][sel].copy(), "input_node": cache["g"][sel].copy()}
    return SignalTrace(table.timestamps[anchors], anchors, values, "final", extras)


def _empty_trace(table, units, verbose):
    values = {k: np.zeros((0, units)) for k in TAP_NAMES}
    extras = {k: np.zeros((0, units)) for k in ("input_gate", "input_node")} if verbose else {}
    return SignalTrace(table.timestamps[:0], np.zeros(0, dtype=int), values, "final", extras)


def extract_stitched_trace(schedule, table: TimeSeriesTable, spec: WindowSpec,
                           features: Sequence[str] | None = None, verbose: bool = False) -> SignalTrace:
    """Stitch traces from models retrained along moving windows.

    ``schedule`` is a list of ``(start_row, params, stats)`` sorted by ``start_row``;
    each model covers anchors from its start row up to the next start row.
    """
    schedule = sorted(schedule, key=lambda e: e[0])
    parts = []
    for j, (start, params, stats) in enumerate(schedule):
        stop = schedule[j + 1][0] if j + 1 < len(schedule) else len(table)
        rows = np.arange(max(start, spec.seq_in - 1), stop)
        parts.append(extract_trace(params, table, spec, "reset", features, stats, verbose, rows))
    values = {k: np.concatenate([p.values[k] for p in parts]) for k in TAP_NAMES}
    extras = {k: np.concatenate([p.extras[k] for p in parts]) for k in parts[0].extras} if parts else {}
    rows = np.concatenate([p.rows for p in parts])
    return SignalTrace(table.timestamps[rows], rows, values, "stitch", extras)


@dataclass
class UnitActivitySummary:
    """Rolling activity statistics and dormant spans per unit.

    ``mean_abs[:, u]`` and ``variance[:, u]`` describe the window ending at trace
    position ``window - 1 + i``. Spans are inclusive ``(start, end)`` trace positions.
    """

    window: int
    location: str
    mean_abs: np.ndarray
    variance: np.ndarray
    spans: list[list[tuple[int, int]]]
    timestamps: np.ndarray

    def span_dates(self, unit: int) -> list[tuple[str, str]]:
        return [(str(self.timestamps[a]), str(self.timestamps[b])) for a, b in self.spans[unit]]

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "location": self.location,
            "units": [
                {"unit": u, "inactive_spans": [list(map(int, s)) for s in spans],
                 "inactive_dates": self.span_dates(u)}
                for u, spans in enumerate(self.spans)
            ],
        }


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    if not mask.any():
        return []
    d = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def summarize_activity(trace: SignalTrace, window: int = 60, eps_weight: float = 0.05, eps_var: float = 1e-4,
                       location: str = "hidden_state") -> UnitActivitySummary:
    """Flag dormant stretches of each unit.

    A rolling window is inactive when both the mean absolute value and the
    (population) variance fall below their thresholds. Every step covered by
    an inactive window is flagged and contiguous flags merge into spans.
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    x = trace.values[location] if location in trace.values else trace.extras[location]
    n, units = x.shape
    if n < window:
        empty = np.zeros((0, units))
        return UnitActivitySummary(window, location, empty, empty, [[] for _ in range(units)], trace.timestamps)
    win = np.lib.stride_tricks.sliding_window_view(x, window, axis=0)  # (n-w+1, units, w)
    mean_abs = np.abs(win).mean(axis=2)
    variance = win.var(axis=2)
    spans = []
    for u in range(units):
        quiet = (mean_abs[:, u] < eps_weight) & (variance[:, u] < eps_var)
        covered = np.zeros(n + 1, dtype=np.int64)
        starts = np.flatnonzero(quiet)
        np.add.at(covered, starts, 1)
        np.add.at(covered, starts + window, -1)
        spans.append(_runs(np.cumsum(covered[:n]) > 0))
    return UnitActivitySummary(window, location, mean_abs, variance, spans, trace.timestamps)


def jaccard(a: Sequence[tuple[int, int]], b: Sequence[tuple[int, int]]) -> float:
    """Jaccard overlap of two sets of inclusive integer spans."""
    sa = set().union(*(range(s, e + 1) for s, e in a)) if a else set()
    sb = set().union(*(range(s, e + 1) for s, e in b)) if b else set()
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)
