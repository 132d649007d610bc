"""Time-series tables, lagged features, sequence samples, normalization and splits."""
from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import Rng

MISSING_TOKENS = {"", "na", "nan", "null", "n/a", "#n/a"}


class DataError(ValueError):
    """Raised for malformed input data."""


@dataclass(frozen=True)
class TimeSeriesTable:
    """Aligned multivariate series: ``values[t, j]`` is column ``names[j]`` at ``timestamps[t]``."""

    timestamps: np.ndarray
    names: tuple[str, ...]
    values: np.ndarray
    target_name: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(self.names):
            raise DataError(f"values shape {values.shape} does not match {len(self.names)} columns")
        if len(self.timestamps) != values.shape[0]:
            raise DataError("timestamps and values have different lengths")
        if len(set(self.names)) != len(self.names):
            raise DataError("duplicate column names")
        if self.target_name not in self.names:
            raise DataError(f"target column {self.target_name!r} not in table")
        ts = np.asarray(self.timestamps)
        if len(ts) > 1 and np.any(ts[1:] <= ts[:-1]):
            raise DataError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise DataError("table contains missing or non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def target(self) -> np.ndarray:
        return self.column(self.target_name)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown column {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    def select(self, columns: Sequence[str], target_name: str | None = None) -> "TimeSeriesTable":
        idx = [self.index(c) for c in columns]
        target = target_name or (self.target_name if self.target_name in columns else columns[0])
        return TimeSeriesTable(self.timestamps, tuple(columns), self.values[:, idx], target)

    def rows(self, start: int, stop: int) -> "TimeSeriesTable":
        return TimeSeriesTable(self.timestamps[start:stop], self.names, self.values[start:stop], self.target_name)

    def with_values(self, values: np.ndarray) -> "TimeSeriesTable":
        return TimeSeriesTable(self.timestamps, self.names, values, self.target_name)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["date", *self.names])
            for ts, row in zip(self.timestamps, self.values):
                w.writerow([str(ts), *(repr(float(v)) for v in row)])


def load_csv(path, schema: Sequence[str] | None = None, target: str | None = None) -> TimeSeriesTable:
    """Read a dated CSV: first column an ISO-8601 date, the rest numeric.

    Rows are sorted by date, missing cells are forward-filled from the previous
    observation and leading rows that cannot be filled are dropped.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row expected") from None
        names = [h.strip() for h in header[1:]]
        if not names:
            raise DataError(f"{path}: no data columns")
        if schema is not None:
            unknown = [n for n in names if n not in schema]
            if unknown:
                raise DataError(f"{path}: unknown column(s) {unknown}")
            absent = [n for n in schema if n not in names]
            if absent:
                raise DataError(f"{path}: missing column(s) {absent}")
        dates, rows, seen = [], [], {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(rec)} fields, expected {len(header)}")
            raw_date = rec[0].strip()
            try:
                d = np.datetime64(raw_date, "D")
            except ValueError:
                raise DataError(f"{path}: row {lineno}: unparseable date {raw_date!r}") from None
            if d in seen:
                raise DataError(f"{path}: row {lineno}: duplicate date {raw_date} (first seen at row {seen[d]})")
            seen[d] = lineno
            vals = []
            for name, cell in zip(names, rec[1:]):
                cell = cell.strip()
                if cell.lower() in MISSING_TOKENS:
                    vals.append(np.nan)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {lineno}, column {name!r}: unparseable number {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {lineno}, column {name!r}: non-finite value {cell!r}")
                vals.append(v)
            dates.append(d)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    ts = np.array(dates, dtype="datetime64[D]")
    vals = np.array(rows, dtype=np.float64)
    order = np.argsort(ts, kind="stable")
    ts, vals = ts[order], vals[order]
    for i in range(1, len(vals)):
        gap = np.isnan(vals[i])
        vals[i, gap] = vals[i - 1, gap]
    complete = ~np.isnan(vals).any(axis=1)
    first = int(np.argmax(complete)) if complete.any() else len(vals)
    if first == len(vals):
        raise DataError(f"{path}: no complete rows after forward fill")
    ts, vals = ts[first:], vals[first:]
    if schema is not None:
        order_cols = [names.index(n) for n in schema]
        names, vals = list(schema), vals[:, order_cols]
    return TimeSeriesTable(ts, tuple(names), vals, target or names[0])


def generate_lagged_features(table: TimeSeriesTable, lags: int = 5) -> TimeSeriesTable:
    """Append ``lags`` shifted copies ``<col>_lag<k>`` of every column, dropping the first ``lags`` rows."""
    if lags < 1:
        raise ValueError("lags must be >= 1")
    n = len(table)
    if lags >= n:
        raise ValueError(f"lags={lags} must be smaller than the table length {n}")
    blocks = [table.values[lags:]]
    names = list(table.names)
    for j, name in enumerate(table.names):
        col = table.values[:, j]
        blocks.append(np.column_stack([col[lags - k:n - k] for k in range(1, lags + 1)]))
        names.extend(f"{name}_lag{k}" for k in range(1, lags + 1))
    return TimeSeriesTable(table.timestamps[lags:], tuple(names), np.hstack(blocks), table.target_name)


@dataclass(frozen=True)
class WindowSpec:
    """Moving-window and sequence geometry. ``horizon=0`` forecasts the next row."""

    window_len: int
    horizon: int = 0
    seq_in: int = 6
    seq_out: int = 0

    def __post_init__(self):
        if self.seq_in < 1:
            raise ValueError("seq_in must be >= 1")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.seq_out not in (0, self.seq_in):
            raise ValueError(f"seq_out must be 0 or seq_in ({self.seq_in}), got {self.seq_out}")
        if self.window_len < self.seq_in + self.horizon + 1:
            raise ValueError(
                f"window_len {self.window_len} too short for seq_in {self.seq_in} and horizon {self.horizon}"
            )


@dataclass
class Sequences:
    """Sequence samples. ``inputs`` is (n, seq_in, features); ``labels`` is (n,) or (n, seq_in)."""

    inputs: np.ndarray
    labels: np.ndarray
    anchors: np.ndarray
    feature_names: tuple[str, ...] = ()

    def __len__(self) -> int:
        return self.inputs.shape[0]


def sequence_arrays(values: np.ndarray, target: np.ndarray, seq_in: int, horizon: int, seq_out: bool,
                    anchors: np.ndarray | None = None):
    """Array-level core of :func:`make_sequences`.

    ``values`` is (n, d). Admissible anchors ``t`` satisfy ``t >= seq_in - 1`` and
    ``t + 1 + horizon <= n - 1``; explicitly passed anchors must be admissible.
    """
    n = values.shape[0]
    lo, hi = seq_in - 1, n - 2 - horizon
    if anchors is None:
        anchors = np.arange(lo, hi + 1) if hi >= lo else np.zeros(0, dtype=int)
    anchors = np.asarray(anchors, dtype=int)
    d = values.shape[1]
    if anchors.size == 0:
        labels = np.zeros((0, seq_in)) if seq_out else np.zeros(0)
        return np.zeros((0, seq_in, d)), labels, anchors
    windows = np.lib.stride_tricks.sliding_window_view(values, seq_in, axis=0)  # (n-seq_in+1, d, seq_in)
    inputs = np.ascontiguousarray(windows[anchors - lo].transpose(0, 2, 1))
    if seq_out:
        steps = anchors[:, None] + np.arange(-seq_in + 1, 1)[None, :]
        labels = target[steps + 1 + horizon]
    else:
        labels = target[anchors + 1 + horizon]
    return inputs, labels, anchors


def make_sequences(table: TimeSeriesTable, spec: WindowSpec, features: Sequence[str] | None = None) -> Sequences:
    """Build input sequences ending at each admissible anchor with horizon-aligned labels.

    The label for a step at row ``r`` is the target at ``r + 1 + horizon``. Anchors
    without enough history or future are skipped, never padded.
    """
    features = list(features) if features is not None else list(table.names)
    idx = [table.index(f) for f in features]
    x, y, anchors = sequence_arrays(table.values[:, idx], table.target, spec.seq_in, spec.horizon, spec.seq_out > 0)
    return Sequences(x, y, anchors, tuple(features))


@dataclass(frozen=True)
class NormalizationStats:
    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def index(self, name: str) -> int:
        return self.names.index(name)


def fit_stats(values: np.ndarray, names: Sequence[str] | None = None) -> NormalizationStats:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    names = tuple(names) if names is not None else tuple(f"col{j}" for j in range(values.shape[1]))
    if values.shape[0] < 2:
        raise ValueError("normalization needs at least 2 rows")
    mean = values.mean(axis=0)
    std = values.std(axis=0)  # population convention (divide by n)
    bad = [names[j] for j in np.flatnonzero(~(std > 0))]
    if bad:
        raise ValueError(f"zero standard deviation in column(s) {bad}")
    return NormalizationStats(names, mean, std)


def fit_normalization(table: TimeSeriesTable) -> NormalizationStats:
    """Fit per-column mean and population std on a training slice."""
    return fit_stats(table.values, table.names)


def apply_normalization(rows, stats: NormalizationStats) -> np.ndarray:
    return (np.asarray(rows, dtype=np.float64) - stats.mean) / stats.std


def invert_normalization(values, stats: NormalizationStats, column: str | int) -> np.ndarray:
    j = stats.index(column) if isinstance(column, str) else int(column)
    return np.asarray(values, dtype=np.float64) * stats.std[j] + stats.mean[j]


def split_index(n: int, train_frac: float) -> int:
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must lie in (0, 1), got {train_frac}")
    return int(math.floor(n * train_frac + 1e-9))


def static_split(table: TimeSeriesTable, train_frac: float = 0.7) -> tuple[TimeSeriesTable, TimeSeriesTable]:
    """Chronological train/test split with no shuffling."""
    k = split_index(len(table), train_frac)
    return table.rows(0, k), table.rows(k, len(table))


@dataclass
class SynthConfig:
    """Settings for the synthetic yield-like generator.

    The target follows ``y[t] = y[t-1] + kappa*(level[t] - y[t-1]) + driver_coef*driver[t-driver_lag] + sigma*eps[t]``
    where ``level[t]`` is piecewise constant over ``regimes`` (list of ``(start_row, level)``).
    """

    length: int = 2000
    decoys: int = 20
    driver_lag: int = 5
    driver_coef: float = 1.0
    regimes: list[tuple[int, float]] = field(default_factory=list)
    seed: int = 0
    kappa: float = 0.1
    sigma: float = 0.5
    level: float = 0.0
    driver_phi: float = 0.0

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("length must be positive")
        if self.decoys < 0 or self.driver_lag < 0:
            raise ValueError("decoys and driver_lag must be non-negative")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if not -1.0 < self.driver_phi < 1.0:
            raise ValueError("driver_phi must lie in (-1, 1)")


def parse_regimes(text: str) -> list[tuple[int, float]]:
    out = []
    for part in text.replace(";", ",").split(","):
        part = part.strip()
        if not part:
            continue
        start, _, level = part.partition(":")
        out.append((int(start), float(level)))
    return out


def load_synth_config(path) -> SynthConfig:
    """Read a ``[synth]`` section of key = value pairs."""
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise FileNotFoundError(f"config file not found: {path}")
    return synth_config_from_mapping(dict(cp["synth"]) if "synth" in cp else {})


def synth_config_from_mapping(m) -> SynthConfig:
    kw = {}
    casts = {"length": int, "decoys": int, "driver_lag": int, "seed": int, "driver_coef": float,
             "kappa": float, "sigma": float, "level": float, "driver_phi": float}
    for key, value in m.items():
        if key == "regimes":
            kw[key] = parse_regimes(value) if isinstance(value, str) else [tuple(r) for r in value]
        elif key in casts:
            kw[key] = casts[key](value)
        else:
            raise ValueError(f"unknown synth key {key!r}")
    return SynthConfig(**kw)


def synth_generate(config: SynthConfig, rng: Rng | None = None) -> TimeSeriesTable:
    """Generate target, driver and Gaussian decoy columns.

    Columns are ``target``, ``driver``, ``decoy_1`` .. ``decoy_n``.
    """
    rng = rng if rng is not None else Rng(config.seed)
    n, lag = config.length, config.driver_lag
    burn = lag + 50
    total = n + burn
    innov = rng.normal(total)
    driver = np.empty(total)
    scale = math.sqrt(1.0 - config.driver_phi ** 2)
    driver[0] = innov[0]
    for t in range(1, total):
        driver[t] = config.driver_phi * driver[t - 1] + scale * innov[t]
    decoys = rng.normal((n, config.decoys)) if config.decoys else np.zeros((n, 0))
    eps = rng.normal(total)
    level = np.full(total, config.level)
    for start, lvl in sorted(config.regimes):
        level[burn + start:] = lvl
    y = np.empty(total)
    y[:burn] = config.level
    for t in range(burn, total):
        y[t] = (y[t - 1] + config.kappa * (level[t] - y[t - 1])
                + config.driver_coef * driver[t - lag] + config.sigma * eps[t])
    stamps = np.busday_offset(np.datetime64("2000-01-03"), np.arange(n), roll="forward")
    names = ("target", "driver", *(f"decoy_{j + 1}" for j in range(config.decoys)))
    values = np.column_stack([y[burn:], driver[burn:], decoys])
    return TimeSeriesTable(stamps.astype("datetime64[D]"), names, values, "target")
