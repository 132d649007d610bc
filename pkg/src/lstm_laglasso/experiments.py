"""Study orchestration: walk-forward forecasting, state explanation and its significance test.

Walk-forward protocol, per model and horizon ``h`` (direct forecasting, one chain each):

* the static split puts the first ``train_frac`` of rows in the training region;
* every target row ``tau`` of the test region is forecast from anchor ``t = tau - 1 - h``;
* at anchor ``t`` only rows ``t - window + 1 .. t`` are visible; normalization is fitted
  on them and training samples are those whose label row is ``<= t``;
* models are retrained (warm start by default) every ``retrain_every`` anchors.
"""
from __future__ import annotations

import hashlib
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import lstm, mlp, training
from .dataset import (NormalizationStats, TimeSeriesTable, WindowSpec, fit_stats, sequence_arrays,
                      split_index)
from .lasso import (Gram, LassoPath, LassoSolution, build_lag_matrix, default_grid, lasso_fit, lasso_path,
                    select_relevant_features, standardize_columns)
from .lstm import LstmParameters
from .numerics import Rng
from .signals import SignalTrace, extract_stitched_trace, extract_trace

MODEL_KINDS = ("lstm", "mlp", "last_value")
STATES = ("hidden_state", "cell_state")


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of a configuration mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def derive_seed(seed: int, *labels) -> int:
    """Stable 32-bit seed for a named sub-task (independent of Python's string hashing)."""
    key = zlib.crc32("|".join(map(str, labels)).encode("utf-8"))
    return int(np.random.SeedSequence([seed, key]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Forecasting study


@dataclass(frozen=True)
class ModelSpec:
    """One forecaster. ``seq_in`` is the LSTM sequence length or the MLP lag window;
    ``units`` is the LSTM state size or the MLP hidden width."""

    name: str
    kind: str
    seq_in: int = 6
    units: int = 100
    features: str = "target"
    seq_out: bool = False

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"model {self.name!r}: kind must be one of {MODEL_KINDS}")
        if self.features not in ("target", "relevant"):
            raise ValueError(f"model {self.name!r}: features must be 'target' or 'relevant'")
        if self.features == "relevant" and self.kind != "mlp":
            raise ValueError(f"model {self.name!r}: relevant-feature inputs are only supported for MLPs")
        if self.seq_in < 1 or (self.kind != "last_value" and self.units < 1):
            raise ValueError(f"model {self.name!r}: seq_in and units must be >= 1")


LAST_VALUE = ModelSpec("LastValue", "last_value", seq_in=1, units=0)


def table1_roster(lstm_units: int = 100, mlp_hidden: int = 10) -> list[ModelSpec]:
    return [
        ModelSpec("LSTM06", "lstm", 6, lstm_units),
        ModelSpec("LSTM21", "lstm", 21, lstm_units),
        ModelSpec("LSTM61", "lstm", 61, lstm_units),
        ModelSpec("NN TgtOnly", "mlp", 6, mlp_hidden),
        ModelSpec("NN RelFeat", "mlp", 6, mlp_hidden, features="relevant"),
    ]


@dataclass(frozen=True)
class WalkForwardConfig:
    window: int = 3000
    horizons: tuple[int, ...] = (0, 5, 10, 15, 20)
    train_frac: float = 0.7
    retrain_every: int = 1
    epochs_first: int = 200
    epochs_next: int = 50
    lr: float = 1e-3
    batch_size: int = 3000
    clip_norm: float | None = None
    cold_start: bool = False
    seed: int = 0
    max_steps: int | None = None
    relfeat_k: int = 5
    relfeat_gamma: float = 1.0
    relfeat_max: int | None = None
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
        if not self.horizons or min(self.horizons) < 0:
            raise ValueError("horizons must be a non-empty list of non-negative integers")
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.retrain_every < 1 or self.epochs_first < 1 or self.epochs_next < 1:
            raise ValueError("retrain_every and epoch counts must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["horizons"] = list(self.horizons)
        return d


@dataclass
class ForecastSeries:
    """Per-step results of one (model, horizon) chain. ``anchors`` are source rows."""

    model: str
    horizon: int
    anchors: np.ndarray
    timestamps: np.ndarray
    predictions: np.ndarray
    actuals: np.ndarray
    sq_errors: np.ndarray
    raw_sq_errors: np.ndarray
    retrain_steps: list[int] = field(default_factory=list)
    inputs: list = field(default_factory=list)
    seed: int = 0

    def summary(self) -> dict:
        e = self.sq_errors
        return {"median": float(np.median(e)), "mean": float(np.mean(e)), "std": float(np.std(e)),
                "raw_mean": float(np.mean(self.raw_sq_errors)), "count": int(e.size)}

    def to_dict(self) -> dict:
        return {
            "model": self.model, "horizon": self.horizon, "seed": self.seed,
            "anchors": self.anchors.tolist(), "timestamps": [str(t) for t in self.timestamps],
            "predictions": self.predictions.tolist(), "actuals": self.actuals.tolist(),
            "sq_errors": self.sq_errors.tolist(), "raw_sq_errors": self.raw_sq_errors.tolist(),
            "retrain_steps": list(self.retrain_steps), "inputs": [list(p) for p in self.inputs],
            "summary": self.summary(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastSeries":
        return cls(d["model"], int(d["horizon"]), np.array(d["anchors"], dtype=int),
                   np.array(d["timestamps"], dtype="datetime64[D]"), np.array(d["predictions"]),
                   np.array(d["actuals"]), np.array(d["sq_errors"]), np.array(d["raw_sq_errors"]),
                   list(d["retrain_steps"]), [tuple(p) for p in d["inputs"]], int(d["seed"]))


@dataclass
class ForecastReport:
    series: dict[tuple[str, int], ForecastSeries]
    config: dict
    metadata: dict

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    @property
    def models(self) -> list[str]:
        return list(dict.fromkeys(m for m, _ in self.series))

    @property
    def horizons(self) -> list[int]:
        return sorted({h for _, h in self.series})

    def __getitem__(self, key: tuple[str, int]) -> ForecastSeries:
        return self.series[key]

    def summary(self) -> dict[tuple[str, int], dict]:
        return {k: s.summary() for k, s in self.series.items()}

    def to_dict(self) -> dict:
        return {"artifact": "forecast_report", "config": self.config, "config_hash": self.config_hash,
                "metadata": self.metadata,
                "series": [s.to_dict() for s in self.series.values()]}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastReport":
        series = {}
        for sd in d["series"]:
            s = ForecastSeries.from_dict(sd)
            series[(s.model, s.horizon)] = s
        return cls(series, d["config"], d["metadata"])

    @classmethod
    def from_json(cls, path) -> "ForecastReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_csv(self, path) -> None:
        """Flattened per-step table: one row per (model, horizon, anchor)."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("model,horizon,anchor,timestamp,prediction,actual,sq_error,raw_sq_error\n")
            for s in self.series.values():
                for j in range(len(s.anchors)):
                    fh.write(f"{s.model},{s.horizon},{s.anchors[j]},{s.timestamps[j]},{s.predictions[j]!r},"
                             f"{s.actuals[j]!r},{s.sq_errors[j]!r},{s.raw_sq_errors[j]!r}\n")


def forecast_anchors(n: int, horizon: int, train_frac: float, window: int, max_steps: int | None = None) -> np.ndarray:
    """Anchors whose forecast targets ``t + 1 + h`` cover the static test region."""
    s0 = split_index(n, train_frac)
    first = s0 - 1 - horizon
    if first - window + 1 < 0:
        raise ValueError(f"window {window} exceeds the {first + 1} rows available before the first forecast "
                         f"at horizon {horizon}")
    anchors = np.arange(first, n - 1 - horizon)
    if anchors.size == 0:
        raise ValueError("empty test region")
    return anchors[:max_steps] if max_steps is not None else anchors


def _relevant_inputs(table: TimeSeriesTable, horizon: int, anchor0: int, cfg: WalkForwardConfig):
    """Lasso-selected (column, lag) pairs from rows up to the first forecast anchor."""
    past = table.rows(0, anchor0 + 1)
    rel = select_relevant_features(past.target, past, horizon, k=cfg.relfeat_k, gamma=cfg.relfeat_gamma,
                                   max_features=cfg.relfeat_max)
    pairs = [(name, int(lag)) for name, lag in rel.selected]
    return pairs or [(table.target_name, 0)]


def _mlp_design(z: np.ndarray, pairs_idx, horizon: int, target_col: int):
    """Samples from a normalized window: rows ``a`` with label row ``a + 1 + h`` inside the window."""
    max_lag = max(lag for _, lag in pairs_idx)
    last = z.shape[0] - 2 - horizon
    anchors = np.arange(max_lag, last + 1)
    X = np.column_stack([z[anchors - lag, c] for c, lag in pairs_idx]) if anchors.size else None
    return X, z[anchors + 1 + horizon, target_col] if anchors.size else None


def _mlp_features(z: np.ndarray, pairs_idx) -> np.ndarray:
    a = z.shape[0] - 1
    return np.array([[z[a - lag, c] for c, lag in pairs_idx]])


def _retrain(spec: ModelSpec, params, z: np.ndarray, pairs_idx, horizon: int, cfg: WalkForwardConfig,
             seed: int, first: bool):
    epochs = cfg.epochs_first if first or cfg.cold_start else cfg.epochs_next
    tc = training.TrainConfig(epochs=epochs, batch_size=cfg.batch_size, lr=cfg.lr, clip_norm=cfg.clip_norm,
                              seed=seed, warm_start=not cfg.cold_start, final_step_only=not spec.seq_out)
    if spec.kind == "lstm":
        X, y, _ = sequence_arrays(z[:, :1], z[:, 0], spec.seq_in, horizon, spec.seq_out)
    else:
        X, y = _mlp_design(z, pairs_idx, horizon, 0)
    if X is None or len(X) == 0:
        raise ValueError(f"no training samples in window for model {spec.name} at horizon {horizon}")
    return training.fit(params, X, y, tc).params


def run_chain(spec: ModelSpec, table: TimeSeriesTable, horizon: int, cfg: WalkForwardConfig,
              inputs: Sequence[tuple[str, int]] | None = None) -> ForecastSeries:
    """One sequential walk-forward chain for a single model and horizon."""
    n = len(table)
    anchors = forecast_anchors(n, horizon, cfg.train_frac, cfg.window, cfg.max_steps)
    seed = derive_seed(cfg.seed, spec.name, horizon)
    tgt = table.target_name
    if spec.kind == "mlp":
        pairs = list(inputs) if inputs is not None else [(tgt, lag) for lag in range(spec.seq_in)]
    else:
        pairs = [(tgt, 0)]
    cols = list(dict.fromkeys([tgt, *(c for c, _ in pairs)]))
    col_idx = [table.index(c) for c in cols]
    pairs_idx = [(cols.index(c), lag) for c, lag in pairs]
    need = max(lag for _, lag in pairs) + 1 if spec.kind == "mlp" else spec.seq_in
    if cfg.window < need + horizon + 1:
        raise ValueError(f"window {cfg.window} too short for model {spec.name} at horizon {horizon}")

    rng = Rng(seed)
    if spec.kind == "lstm":
        params = lstm.init_params(spec.units, 1, rng)
    elif spec.kind == "mlp":
        params = mlp.init_mlp(len(pairs), rng, spec.units)
    else:
        params = None

    raw = table.values[:, col_idx]
    m = len(anchors)
    preds = np.empty(m)
    means, stds = np.empty(m), np.empty(m)
    retrains: list[int] = []
    # The model is fixed between retrains, so each block of anchors is forecast in one batch.
    for b0 in range(0, m, cfg.retrain_every):
        block = range(b0, min(b0 + cfg.retrain_every, m))
        feats = []
        for j in block:
            t = anchors[j]
            win = raw[t - cfg.window + 1:t + 1]
            stats = fit_stats(win, cols)
            z = (win - stats.mean) / stats.std
            means[j], stds[j] = stats.mean[0], stats.std[0]
            if j == b0 and params is not None:
                params = _retrain(spec, params, z, pairs_idx, horizon, cfg, derive_seed(seed, "fit", j),
                                  first=not retrains)
                retrains.append(int(t))
            if spec.kind == "lstm":
                feats.append(z[-spec.seq_in:, :1])
            elif spec.kind == "mlp":
                feats.append(_mlp_features(z, pairs_idx)[0])
            else:
                feats.append(z[-1, 0])
        if spec.kind == "lstm":
            preds[block.start:block.stop] = lstm.predict(params, np.stack(feats))
        elif spec.kind == "mlp":
            preds[block.start:block.stop] = mlp.mlp_predict(params, np.stack(feats))
        else:
            preds[block.start:block.stop] = feats
    actual_raw = table.values[anchors + 1 + horizon, col_idx[0]]
    actuals = (actual_raw - means) / stds
    errs = (preds - actuals) ** 2
    raw_errs = (preds * stds + means - actual_raw) ** 2
    return ForecastSeries(spec.name, horizon, anchors, table.timestamps[anchors + 1 + horizon], preds, actuals,
                          errs, raw_errs, retrains, list(pairs) if spec.kind == "mlp" else [], seed)


def _run_chain_task(args):
    return run_chain(*args)


def walk_forward(models: Sequence[ModelSpec], table: TimeSeriesTable, cfg: WalkForwardConfig,
                 with_baseline: bool = False) -> ForecastReport:
    """Run every (model, horizon) chain and collect a :class:`ForecastReport`."""
    models = list(models) + ([LAST_VALUE] if with_baseline and LAST_VALUE not in models else [])
    if not models:
        raise ValueError("empty model roster")
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate model names in roster: {names}")
    for h in cfg.horizons:
        forecast_anchors(len(table), h, cfg.train_frac, cfg.window, cfg.max_steps)  # validate before computing
    relevant = {}
    if any(m.features == "relevant" for m in models):
        for h in cfg.horizons:
            first = forecast_anchors(len(table), h, cfg.train_frac, cfg.window)[0]
            relevant[h] = _relevant_inputs(table, h, int(first), cfg)
    tasks = [(m, table, h, cfg, relevant.get(h) if m.features == "relevant" else None)
             for m in models for h in cfg.horizons]
    if cfg.n_jobs > 1:
        with ProcessPoolExecutor(cfg.n_jobs) as pool:
            results = list(pool.map(_run_chain_task, tasks))
    else:
        results = [run_chain(*t) for t in tasks]
    series = {(s.model, s.horizon): s for s in results}
    config = {"walk_forward": cfg.to_dict(), "models": [asdict(m) for m in models]}
    metadata = {
        "window": cfg.window,
        "retrain_every": cfg.retrain_every,
        "warm_start": not cfg.cold_start,
        "seq_lengths": {m.name: m.seq_in for m in models},
        "seeds": {f"{s.model}|h={s.horizon}": s.seed for s in results},
        "relevant_features": {str(h): [list(p) for p in v] for h, v in relevant.items()},
        "rows": len(table),
        "test_start": str(table.timestamps[split_index(len(table), cfg.train_frac)]),
    }
    return ForecastReport(series, config, metadata)


def compare_models(report: ForecastReport, baseline: str) -> list[dict]:
    """Median, mean and std ratios of each model's errors to the baseline's, per horizon."""
    if baseline not in report.models:
        raise KeyError(f"baseline model {baseline!r} not in report (models: {report.models})")
    rows = []
    for h in report.horizons:
        base = report.series.get((baseline, h))
        if base is None:
            raise KeyError(f"baseline model {baseline!r} has no results at horizon {h}")
        b = base.summary()
        for model in report.models:
            s = report.series.get((model, h))
            if s is None:
                continue
            m = s.summary()
            rows.append({"model": model, "horizon": h,
                         "median_ratio": _ratio(m["median"], b["median"]),
                         "mean_ratio": _ratio(m["mean"], b["mean"]),
                         "std_ratio": _ratio(m["std"], b["std"])})
    return rows


def _ratio(a: float, b: float) -> float:
    if b == 0.0:
        return 1.0 if a == 0.0 else math.inf
    return a / b


def five_number(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"min": float(v.min()), "q1": float(q1), "median": float(med), "q3": float(q3), "max": float(v.max()),
            "mean": float(v.mean()), "count": int(v.size)}


def boxplot_data(reports: Sequence[ForecastReport]) -> dict:
    """Box statistics per model and horizon under both aggregations.

    ``over_test_steps`` summarizes the per-step errors of the first report;
    ``over_seeds`` summarizes the per-run mean error across the given reports.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no reports")
    first = reports[0]
    steps = {f"{m}|{h}": five_number(s.sq_errors) for (m, h), s in first.series.items()}
    seeds = {}
    for key in first.series:
        means = [r.series[key].summary()["mean"] for r in reports if key in r.series]
        seeds[f"{key[0]}|{key[1]}"] = five_number(means)
    return {"over_test_steps": steps, "over_seeds": seeds, "runs": len(reports)}


def persistence_check(length: int = 10_000, sigma: float = 1.0, window: int = 300, seed: int = 0) -> dict:
    """Last-value forecasts of a Gaussian random walk; raw MSE should match ``sigma**2``."""
    rng = Rng(seed)
    walk = np.cumsum(sigma * rng.normal(length))
    stamps = np.arange(length).astype("datetime64[D]")
    table = TimeSeriesTable(stamps, ("walk",), walk[:, None], "walk")
    cfg = WalkForwardConfig(window=window, horizons=(0,), seed=seed)
    s = walk_forward([LAST_VALUE], table, cfg).series[(LAST_VALUE.name, 0)]
    mse = float(np.mean(s.raw_sq_errors))
    return {"raw_mse": mse, "step_variance": sigma ** 2, "relative_error": abs(mse - sigma ** 2) / sigma ** 2,
            "steps": int(s.raw_sq_errors.size)}


# ---------------------------------------------------------------------------
# Signal model


@dataclass(frozen=True)
class SignalModelConfig:
    """Small LSTM trained once on a trailing window for signal extraction."""

    units: int = 3
    seq_in: int = 6
    seq_out: bool = True
    horizon: int = 5
    window: int = 3000
    epochs: int = 200
    lr: float = 1e-2
    batch_size: int = 3000
    clip_norm: float | None = None
    seed: int = 0
    end: int | None = None
    features: tuple[str, ...] | None = None

    @property
    def spec(self) -> WindowSpec:
        return WindowSpec(self.window, self.horizon, self.seq_in, self.seq_in if self.seq_out else 0)


@dataclass
class SignalModel:
    params: LstmParameters
    stats: NormalizationStats
    spec: WindowSpec
    features: list[str]
    rows: tuple[int, int]
    losses: list[float]


def train_signal_model(table: TimeSeriesTable, cfg: SignalModelConfig, init: LstmParameters | None = None,
                       epochs: int | None = None) -> SignalModel:
    """Train on rows ``end - window .. end - 1`` (default: the last ``window`` rows)."""
    end = len(table) if cfg.end is None else cfg.end
    start = end - cfg.window
    if start < 0 or end > len(table):
        raise ValueError(f"window {cfg.window} ending at row {end} exceeds the {len(table)}-row table")
    features = list(cfg.features) if cfg.features else [table.target_name]
    idx = [table.index(f) for f in features]
    win = table.values[start:end]
    stats = fit_stats(win[:, idx], features)
    tstats = fit_stats(win[:, [table.index(table.target_name)]], [table.target_name])
    x = (win[:, idx] - stats.mean) / stats.std
    y = (win[:, table.index(table.target_name)] - tstats.mean[0]) / tstats.std[0]
    X, Y, _ = sequence_arrays(x, y, cfg.seq_in, cfg.horizon, cfg.seq_out)
    params = init if init is not None else lstm.init_params(cfg.units, len(features), Rng(cfg.seed))
    tc = training.TrainConfig(epochs=epochs or cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                              clip_norm=cfg.clip_norm, seed=cfg.seed, final_step_only=not cfg.seq_out)
    res = training.fit(params, X, Y, tc)
    return SignalModel(res.params, stats, cfg.spec, features, (start, end), res.losses)


def signal_trace(model: SignalModel, table: TimeSeriesTable, rows: Sequence[int] | None = None,
                 verbose: bool = False) -> SignalTrace:
    """Final-model replay over ``rows`` (default: the model's training rows with full history)."""
    if rows is None:
        start, end = model.rows
        rows = np.arange(max(start, model.spec.seq_in - 1), end)
    return extract_trace(model.params, table, model.spec, "reset", model.features, model.stats, verbose, rows)


def stitched_signal_trace(table: TimeSeriesTable, cfg: SignalModelConfig, start: int, every: int,
                          epochs_next: int = 50, verbose: bool = False) -> SignalTrace:
    """Retrain along moving windows from row ``start`` every ``every`` rows and stitch the traces."""
    if every < 1:
        raise ValueError("every must be >= 1")
    schedule, model = [], None
    for s in range(start, len(table), every):
        c = replace(cfg, end=s)
        model = train_signal_model(table, c, model.params if model else None,
                                   None if model is None else epochs_next)
        schedule.append((s, model.params, model.stats))
    trace = extract_stitched_trace(schedule, table, cfg.spec, model.features, verbose)
    return trace


# ---------------------------------------------------------------------------
# State explanation


@dataclass(frozen=True)
class LagLassoConfig:
    k: int = 6
    gamma: float = 1.0
    grid: tuple[float, ...] | None = None
    path: bool = True
    states: tuple[str, ...] = STATES


@dataclass
class UnitExplanation:
    state: str
    unit: int
    solution: LassoSolution
    mse: float
    actual: np.ndarray
    predicted: np.ndarray
    path: LassoPath | None = None

    def active(self, level: str = "lag") -> set:
        if level == "lag":
            return set(self.solution.active_set)
        if level == "feature":
            return {name for name, _ in self.solution.active_set}
        raise ValueError("level must be 'lag' or 'feature'")


@dataclass
class ExplanationReport:
    explanations: dict[tuple[str, int], UnitExplanation]
    timestamps: np.ndarray
    rows: np.ndarray
    gamma: float
    k: int
    dropped: list = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    @property
    def mse(self) -> float:
        """Mean standardized in-sample fit error over all explained states and units."""
        vals = [e.mse for e in self.explanations.values() if np.isfinite(e.mse)]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def units(self) -> list[int]:
        return sorted({u for _, u in self.explanations})

    @property
    def states(self) -> list[str]:
        return list(dict.fromkeys(s for s, _ in self.explanations))

    def intersections(self, level: str = "lag") -> dict:
        """Common-feature sets across units (per state) and across states (per unit).

        ``venn[state]`` maps each exact membership pattern (tuple of units) to the number
        of features active in exactly those units.
        """
        act = {key: e.active(level) for key, e in self.explanations.items()}
        out = {"level": level, "across_units": {}, "across_states": {}, "venn": {}, "state_union": {}}
        for state in self.states:
            sets = [act[(state, u)] for u in self.units if (state, u) in act]
            out["across_units"][state] = set.intersection(*sets) if sets else set()
            union = set().union(*sets)
            out["state_union"][state] = union
            venn: dict[tuple[int, ...], int] = {}
            for feat in union:
                pattern = tuple(u for u in self.units if feat in act.get((state, u), set()))
                venn[pattern] = venn.get(pattern, 0) + 1
            out["venn"][state] = venn
        if len(self.states) >= 2:
            a, b = self.states[:2]
            for u in self.units:
                if (a, u) in act and (b, u) in act:
                    out["across_states"][u] = act[(a, u)] & act[(b, u)]
            out["states_common"] = out["state_union"][a] & out["state_union"][b]
        return out

    def to_dict(self) -> dict:
        inter = self.intersections("lag")
        inter_f = self.intersections("feature")
        return {
            "artifact": "explanation", "gamma": self.gamma, "k": self.k, "mse": self.mse, "flags": self.flags,
            "dropped": [list(d) for d in self.dropped],
            "units": [
                {"state": e.state, "unit": e.unit, "mse": e.mse, **e.solution.to_dict()}
                for e in self.explanations.values()
            ],
            "intersections": {
                "lag": _jsonable_intersections(inter),
                "feature": _jsonable_intersections(inter_f),
            },
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def _label(x):
    return list(x) if isinstance(x, tuple) else x


def _jsonable_intersections(inter: dict) -> dict:
    return {
        "across_units": {s: sorted(map(_label, v), key=str) for s, v in inter["across_units"].items()},
        "across_states": {str(u): sorted(map(_label, v), key=str) for u, v in inter["across_states"].items()},
        "states_common": sorted(map(_label, inter.get("states_common", set())), key=str),
        "venn": {s: [{"units": list(p), "count": c} for p, c in sorted(v.items())] for s, v in inter["venn"].items()},
    }


def explain_trace(trace: SignalTrace, exogenous: TimeSeriesTable, cfg: LagLassoConfig) -> ExplanationReport:
    """Regress each recorded state of each unit on the lag-expanded exogenous table."""
    lagm = build_lag_matrix(exogenous, cfg.k)
    rows = np.intersect1d(trace.rows, lagm.rows)
    if rows.size < 2:
        raise ValueError("trace and lag matrix share fewer than 2 rows")
    lagm = lagm.take_rows(rows)
    pos = np.searchsorted(trace.rows, rows)
    X, names, dropped = standardize_columns(lagm)  # shared by every target
    G = X.T @ X
    grid = np.asarray(cfg.grid, dtype=np.float64) if cfg.grid is not None else None
    out: dict[tuple[str, int], UnitExplanation] = {}
    flags = []
    for state in cfg.states:
        series = trace[state][pos]
        for u in range(series.shape[1]):
            s = series[:, u]
            sd = float(s.std())
            if not sd > 0:
                flags.append(f"{state} unit {u} is constant; not explained")
                zero = LassoSolution(np.zeros(X.shape[1]), cfg.gamma, 0.0, names)
                out[(state, u)] = UnitExplanation(state, u, zero, math.nan, s - s.mean(), np.zeros_like(s))
                continue
            ss = (s - s.mean()) / sd
            gram = Gram(X, ss, G)
            path = None
            w0 = None
            if cfg.path:
                g = grid if grid is not None else default_grid(gram.gamma_max)
                path = lasso_path(None, None, g, names, gram=gram)
                if path.gammas[-1] >= cfg.gamma:
                    w0 = path.solutions[-1].w
            sol = lasso_fit(None, None, cfg.gamma, names, w0=w0, gram=gram)
            pred = X @ sol.w
            out[(state, u)] = UnitExplanation(state, u, sol, float(np.mean((pred - ss) ** 2)), ss, pred, path)
    if all(len(e.solution.active) == 0 for e in out.values()):
        flags.append("no explanation at this gamma")
    return ExplanationReport(out, trace.timestamps[pos], rows, cfg.gamma, cfg.k, dropped, flags)


def _model_features(params: LstmParameters, table: TimeSeriesTable, features):
    if features is not None:
        return list(features)
    return [table.target_name] if params.inputs == 1 else list(table.names)


def lstm_laglasso(params: LstmParameters, table: TimeSeriesTable, spec: WindowSpec, exogenous: Sequence[str],
                  cfg: LagLassoConfig = LagLassoConfig(), features: Sequence[str] | None = None,
                  stats: NormalizationStats | None = None, rows: Sequence[int] | None = None,
                  trace: SignalTrace | None = None) -> ExplanationReport:
    """Extract state traces from a trained LSTM and explain them with lagged exogenous features."""
    model_inputs = _model_features(params, table, features)
    exogenous = list(exogenous)
    if not exogenous:
        raise ValueError("empty exogenous feature list")
    overlap = sorted(set(exogenous) & set(model_inputs))
    if overlap:
        raise ValueError(f"exogenous features must exclude the model's own inputs: {overlap}")
    if trace is None:
        trace = extract_trace(params, table, spec, "reset", model_inputs, stats, rows=rows)
    return explain_trace(trace, table.select(exogenous, target_name=exogenous[0]), cfg)


@dataclass
class SignificanceReport:
    real_mse: float
    random_mse: np.ndarray
    n_runs: int

    @property
    def percentile(self) -> float:
        """Share of random runs (ties count half) with a lower MSE than the real features, in percent."""
        r = self.random_mse
        return float(100.0 * (np.sum(r < self.real_mse) + 0.5 * np.sum(r == self.real_mse)) / r.size)

    def to_dict(self) -> dict:
        return {"artifact": "significance", "real_mse": self.real_mse, "random_mse": self.random_mse.tolist(),
                "n_runs": self.n_runs, "percentile": self.percentile}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


MIN_RUNS = 30


def significance_test(params: LstmParameters, table: TimeSeriesTable, spec: WindowSpec, exogenous: Sequence[str],
                      cfg: LagLassoConfig = LagLassoConfig(), n_runs: int = 100, rng: Rng | None = None,
                      features: Sequence[str] | None = None, stats: NormalizationStats | None = None,
                      rows: Sequence[int] | None = None) -> SignificanceReport:
    """Compare the explanation error with real features against i.i.d. standard normal stand-ins."""
    if n_runs < MIN_RUNS:
        raise ValueError(f"n_runs must be >= {MIN_RUNS}, got {n_runs}")
    rng = rng if rng is not None else Rng(0)
    cfg = replace(cfg, path=False)
    model_inputs = _model_features(params, table, features)
    trace = extract_trace(params, table, spec, "reset", model_inputs, stats, rows=rows)
    real = lstm_laglasso(params, table, spec, exogenous, cfg, model_inputs, trace=trace).mse
    exog = table.select(list(exogenous), target_name=list(exogenous)[0])
    random = np.empty(n_runs)
    for r in range(n_runs):
        fake = exog.with_values(rng.normal(exog.values.shape))
        random[r] = explain_trace(trace, fake, cfg).mse
    return SignificanceReport(float(real), random, n_runs)
