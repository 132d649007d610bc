"""Command-line entry point: validate a config file, dispatch a study, write artifacts.

Subcommands::

    lstm-laglasso run <config> [--set section.key=value ...]
    lstm-laglasso plot <artifact.json> --kind <kind> [--out FILE]
    lstm-laglasso synth <config> [--out FILE]
    lstm-laglasso check

``<config>`` is an INI file or the name of a shipped config (``forecast_table1``,
``forecast_table1_desk``, ``signals_table2``, ``laglasso_planted``, ``significance_planted``).
Outputs go to ``[experiment] output``; if ``LSTM_LAGLASSO_OUTPUT_ROOT`` is set, the
output directory is placed under that root instead.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import experiments as ex
from .dataset import SynthConfig, TimeSeriesTable, load_csv, synth_config_from_mapping, synth_generate
from .numerics import Rng
from .params import save_params
from .signals import SignalTrace, summarize_activity
from .training import write_loss_curve

OUTPUT_ROOT_ENV = "LSTM_LAGLASSO_OUTPUT_ROOT"
STUDIES = ("forecast", "signals", "laglasso", "significance")
PLOT_KINDS = ("boxplot", "signals", "weights", "histogram")


class ConfigError(ValueError):
    pass


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _opt(cast):
    def inner(v: str):
        return None if v.strip().lower() in ("", "none") else cast(v)
    return inner


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.replace(";", ",").split(",") if x.strip())


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.replace(";", ",").split(",") if x.strip())


def _names(v: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in v.split(",") if x.strip())


def _study(v: str) -> str:
    if v not in STUDIES:
        raise ValueError(f"must be one of {STUDIES}")
    return v


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "experiment": {"study": (_study, None), "seed": (int, 0), "output": (str, "")},
    "data": {"csv": (str, None), "target": (_opt(str), None), "columns": (_opt(_names), None)},
    "forecast": {
        "window": (int, 3000), "horizons": (_ints, (0, 5, 10, 15, 20)), "train_frac": (float, 0.7),
        "retrain_every": (int, 1), "epochs_first": (int, 200), "epochs_next": (int, 50), "lr": (float, 1e-3),
        "batch_size": (int, 3000), "clip_norm": (_opt(float), None), "cold_start": (_bool, False),
        "max_steps": (_opt(int), None), "relfeat_k": (int, 5), "relfeat_gamma": (float, 1.0),
        "relfeat_max": (_opt(int), None), "lstm_units": (int, 100), "mlp_hidden": (int, 10),
        "baseline": (str, "NN TgtOnly"), "last_value": (_bool, True), "n_jobs": (int, 1),
    },
    "model": {"kind": (str, None), "seq_in": (int, 6), "units": (int, 100), "features": (str, "target"),
              "seq_out": (_bool, False)},
    "signal_model": {
        "units": (int, 3), "seq_in": (int, 6), "seq_out": (_bool, True), "horizon": (int, 5),
        "window": (int, 3000), "epochs": (int, 200), "lr": (float, 1e-2), "batch_size": (int, 3000),
        "clip_norm": (_opt(float), None), "end": (_opt(int), None), "features": (_opt(_names), None),
        "trace": (str, "final"), "stitch_start": (_opt(int), None), "stitch_every": (int, 250),
        "epochs_next": (int, 50),
    },
    "activity": {"window": (int, 60), "eps_weight": (float, 0.05), "eps_var": (float, 1e-4),
                 "location": (str, "hidden_state")},
    "laglasso": {"k": (int, 6), "gamma": (float, 1.0), "grid": (_opt(_floats), None),
                 "exogenous": (_opt(_names), None), "path": (_bool, True)},
    "significance": {"n_runs": (int, 100), "seed": (_opt(int), None)},
}


@dataclass
class ExperimentConfig:
    path: Path
    raw: dict[str, dict[str, str]]
    values: dict[str, dict] = field(default_factory=dict)
    models: list[ex.ModelSpec] = field(default_factory=list)
    synth: SynthConfig | None = None

    @property
    def study(self) -> str:
        return self.values["experiment"]["study"]

    @property
    def hash(self) -> str:
        return ex.config_hash(self.raw)

    def section(self, name: str) -> dict:
        return self.values[name]

    def output_dir(self) -> Path:
        out = self.values["experiment"]["output"] or f"outputs/{self.path.stem}"
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root:
            return Path(root) / Path(out).name
        p = Path(out)
        return p if p.is_absolute() else Path.cwd() / p


def resolve_config_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    shipped = resources.files("lstm_laglasso") / "configs" / f"{p.stem}.ini"
    if p.suffix in ("", ".ini") and shipped.is_file():
        return Path(str(shipped))
    raise ConfigError(f"config file not found: {name}")


def read_raw(path: Path, overrides=()) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as err:
        raise ConfigError(f"{path}: {err}") from err
    raw = {s: dict(cp[s]) for s in cp.sections()}
    for ov in overrides:
        key, eq, value = ov.partition("=")
        section, dot, opt = key.rpartition(".")
        if not eq or not dot:
            raise ConfigError(f"--set expects section.key=value, got {ov!r}")
        raw.setdefault(section, {})[opt] = value
    return raw


def _parse_section(section: str, schema: dict, given: dict[str, str]) -> dict:
    unknown = sorted(set(given) - set(schema))
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s) {unknown}; allowed: {sorted(schema)}")
    out = {}
    for key, (parse, default) in schema.items():
        if key in given:
            try:
                out[key] = parse(given[key])
            except ValueError as err:
                raise ConfigError(f"{section}.{key}: {err}") from err
        else:
            out[key] = default
    return out


def load_config(path, overrides=()) -> ExperimentConfig:
    """Parse and validate a config file; nothing is computed here."""
    path = resolve_config_path(str(path))
    raw = read_raw(path, overrides)
    cfg = ExperimentConfig(path, raw)
    for section in raw:
        base = section.split(maxsplit=1)[0]
        if base not in SCHEMA and base != "synth":
            raise ConfigError(f"unknown section [{section}]; allowed: {sorted([*SCHEMA, 'synth'])}")
    for section, schema in SCHEMA.items():
        if section != "model":
            cfg.values[section] = _parse_section(section, schema, raw.get(section, {}))
    if "experiment" not in raw or "study" not in raw["experiment"]:
        raise ConfigError("experiment.study: required")
    has_csv, has_synth = "data" in raw, "synth" in raw
    if has_csv == has_synth:
        raise ConfigError("exactly one of [data] or [synth] must be given")
    if has_csv and cfg.values["data"]["csv"] is None:
        raise ConfigError("data.csv: required")
    if has_synth:
        try:
            cfg.synth = synth_config_from_mapping(raw["synth"])
        except (ValueError, TypeError) as err:
            raise ConfigError(f"[synth] {err}") from err
    _validate_study(cfg)
    return cfg


def _validate_study(cfg: ExperimentConfig) -> None:
    f = cfg.values["forecast"]
    try:
        if cfg.study == "forecast":
            cfg.models = _roster(cfg)
            walk_forward_config(cfg)
            if f["baseline"] not in [m.name for m in cfg.models] + (["LastValue"] if f["last_value"] else []):
                raise ConfigError(f"forecast.baseline: model {f['baseline']!r} is not in the roster")
        else:
            sm = cfg.values["signal_model"]
            if sm["trace"] not in ("final", "stitch"):
                raise ConfigError("signal_model.trace: must be 'final' or 'stitch'")
            _ = signal_model_config(cfg).spec  # validates the window geometry
            lasso_config(cfg)
            if cfg.study == "significance" and cfg.values["significance"]["n_runs"] < ex.MIN_RUNS:
                raise ConfigError(f"significance.n_runs: must be >= {ex.MIN_RUNS}")
    except ConfigError:
        raise
    except (ValueError, TypeError) as err:
        raise ConfigError(f"[{_section_for(cfg.study)}] {err}") from err


def _section_for(study: str) -> str:
    return "forecast" if study == "forecast" else "signal_model"


def _roster(cfg: ExperimentConfig) -> list[ex.ModelSpec]:
    f = cfg.values["forecast"]
    sections = [s for s in cfg.raw if s.split(maxsplit=1)[0] == "model"]
    if not sections:
        return ex.table1_roster(f["lstm_units"], f["mlp_hidden"])
    models = []
    for s in sections:
        parts = s.split(maxsplit=1)
        if len(parts) != 2:
            raise ConfigError(f"[{s}] model sections are named [model <name>]")
        v = _parse_section(s, SCHEMA["model"], cfg.raw[s])
        if v["kind"] is None:
            raise ConfigError(f"{s}.kind: required")
        try:
            models.append(ex.ModelSpec(parts[1], v["kind"], v["seq_in"], v["units"], v["features"], v["seq_out"]))
        except ValueError as err:
            raise ConfigError(f"[{s}] {err}") from err
    return models


def walk_forward_config(cfg: ExperimentConfig) -> ex.WalkForwardConfig:
    f = cfg.values["forecast"]
    keys = ("window", "horizons", "train_frac", "retrain_every", "epochs_first", "epochs_next", "lr", "batch_size",
            "clip_norm", "cold_start", "max_steps", "relfeat_k", "relfeat_gamma", "relfeat_max", "n_jobs")
    return ex.WalkForwardConfig(seed=cfg.values["experiment"]["seed"], **{k: f[k] for k in keys})


def signal_model_config(cfg: ExperimentConfig) -> ex.SignalModelConfig:
    sm = cfg.values["signal_model"]
    keys = ("units", "seq_in", "seq_out", "horizon", "window", "epochs", "lr", "batch_size", "clip_norm", "end",
            "features")
    return ex.SignalModelConfig(seed=cfg.values["experiment"]["seed"], **{k: sm[k] for k in keys})


def lasso_config(cfg: ExperimentConfig) -> ex.LagLassoConfig:
    v = cfg.values["laglasso"]
    if v["k"] < 1:
        raise ConfigError("laglasso.k: must be >= 1")
    if v["gamma"] < 0:
        raise ConfigError("laglasso.gamma: must be >= 0")
    return ex.LagLassoConfig(k=v["k"], gamma=v["gamma"], grid=v["grid"], path=v["path"])


def load_table(cfg: ExperimentConfig) -> TimeSeriesTable:
    if cfg.synth is not None:
        return synth_generate(cfg.synth)
    d = cfg.values["data"]
    p = Path(d["csv"])
    if not p.is_absolute():
        p = cfg.path.parent / p
    if not p.exists():
        raise FileNotFoundError(f"data file not found: {p}")
    return load_csv(p, schema=d["columns"], target=d["target"])


# ---------------------------------------------------------------------------
# Artifacts and plot data


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1), encoding="utf-8")
    return path


def trace_artifact(trace: SignalTrace, target: np.ndarray, target_name: str) -> dict:
    locs = {**trace.values, **trace.extras}
    return {
        "artifact": "signal_trace", "mode": trace.mode,
        "timestamps": [str(t) for t in trace.timestamps], "rows": trace.rows.tolist(),
        "target": {"name": target_name, "values": np.asarray(target).tolist()},
        "locations": {k: v.T.tolist() for k, v in locs.items()},
    }


def emit_plot_data(artifact: dict, kind: str) -> dict:
    """Figure-ready series (arrays plus axis labels) for one kind of plot."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; supported kinds: {', '.join(PLOT_KINDS)}")
    expected = {"boxplot": "forecast_report", "signals": "signal_trace", "weights": "explanation",
                "histogram": "significance"}[kind]
    if artifact.get("artifact") != expected:
        raise ValueError(f"plot kind {kind!r} needs a {expected} artifact, got {artifact.get('artifact')!r}")
    if kind == "boxplot":
        rep = ex.ForecastReport.from_dict(artifact)
        box = ex.boxplot_data([rep])
        return {"kind": kind, "x_label": "model", "y_label": "normalized squared error",
                "horizons": rep.horizons, "models": rep.models, "config_hash": artifact.get("config_hash"),
                **box}
    if kind == "signals":
        return {"kind": kind, "x_label": "date", "y_label": "signal value", "y2_label": artifact["target"]["name"],
                "timestamps": artifact["timestamps"], "target": artifact["target"]["values"],
                "series": {loc: {f"unit {u}": vals for u, vals in enumerate(units)}
                           for loc, units in artifact["locations"].items()},
                "mode": artifact["mode"]}
    if kind == "weights":
        bars = {}
        for u in artifact["units"]:
            key = f"{u['state']} unit {u['unit']}"
            bars[key] = {"labels": [f"{a['feature']}[t-{a['lag']}]" for a in u["active"]],
                         "weights": [a["weight"] for a in u["active"]], "mse": u["mse"]}
        return {"kind": kind, "x_label": "feature and lag", "y_label": "lasso weight", "gamma": artifact["gamma"],
                "bars": bars, "flags": artifact["flags"]}
    rand = np.asarray(artifact["random_mse"])
    counts, edges = np.histogram(rand, bins=min(20, max(5, rand.size // 5)))
    return {"kind": kind, "x_label": "explanation MSE", "y_label": "runs", "counts": counts.tolist(),
            "edges": edges.tolist(), "real_mse": artifact["real_mse"], "percentile": artifact["percentile"],
            "n_runs": artifact["n_runs"]}


# ---------------------------------------------------------------------------
# Studies


def _run_forecast(cfg: ExperimentConfig, table: TimeSeriesTable, out: Path, log) -> dict:
    f = cfg.values["forecast"]
    report = ex.walk_forward(cfg.models, table, walk_forward_config(cfg), with_baseline=f["last_value"])
    report.metadata["run_config_hash"] = cfg.hash
    report.to_json(out / "forecast_report.json")
    report.to_csv(out / "forecast_errors.csv")
    files = {"report": "forecast_report.json", "errors_csv": "forecast_errors.csv"}
    comparison = ex.compare_models(report, f["baseline"])
    _write_json(out / "comparison.json", {"baseline": f["baseline"], "rows": comparison})
    files["comparison"] = "comparison.json"
    _write_json(out / "plot_boxplot.json", emit_plot_data(report.to_dict(), "boxplot"))
    files["plot"] = "plot_boxplot.json"
    for row in comparison:
        log(f"h={row['horizon']:>2} {row['model']:<12} median ratio vs {f['baseline']}: {row['median_ratio']:.3f}")
    return files


def _signal_model(cfg: ExperimentConfig, table: TimeSeriesTable, out: Path):
    smc = signal_model_config(cfg)
    model = ex.train_signal_model(table, smc)
    save_params(model.params, out / "params.json")
    write_loss_curve(model.losses, out / "loss.csv")
    sm = cfg.values["signal_model"]
    if sm["trace"] == "stitch":
        start = sm["stitch_start"] if sm["stitch_start"] is not None else smc.window
        trace = ex.stitched_signal_trace(table, smc, start, sm["stitch_every"], sm["epochs_next"])
    else:
        trace = ex.signal_trace(model, table)
    return model, trace


def _run_signals(cfg: ExperimentConfig, table: TimeSeriesTable, out: Path, log) -> dict:
    model, trace = _signal_model(cfg, table, out)
    trace.to_long_csv(out / "trace.csv")
    art = trace_artifact(trace, table.target[trace.rows], table.target_name)
    art["config_hash"] = cfg.hash
    _write_json(out / "signals.json", art)
    a = cfg.values["activity"]
    summary = summarize_activity(trace, a["window"], a["eps_weight"], a["eps_var"], a["location"])
    _write_json(out / "activity.json", summary.to_dict())
    _write_json(out / "plot_signals.json", emit_plot_data(art, "signals"))
    for u, spans in enumerate(summary.spans):
        log(f"unit {u}: {len(spans)} inactive span(s) {summary.span_dates(u)}")
    return {"params": "params.json", "loss": "loss.csv", "trace": "trace.csv", "signals": "signals.json",
            "activity": "activity.json", "plot": "plot_signals.json"}


def _exogenous(cfg: ExperimentConfig, table: TimeSeriesTable, model) -> list[str]:
    given = cfg.values["laglasso"]["exogenous"]
    if given:
        return list(given)
    return [n for n in table.names if n not in model.features]


def _run_laglasso(cfg: ExperimentConfig, table: TimeSeriesTable, out: Path, log) -> dict:
    model, trace = _signal_model(cfg, table, out)
    lcfg = lasso_config(cfg)
    rep = ex.lstm_laglasso(model.params, table, model.spec, _exogenous(cfg, table, model), lcfg,
                           model.features, model.stats, trace=trace)
    d = rep.to_dict()
    d["config_hash"] = cfg.hash
    _write_json(out / "explanation.json", d)
    for (state, u), e in rep.explanations.items():
        if e.path is not None:
            e.path.to_csv(out / f"path_{state}_{u}.csv")
    _write_json(out / "plot_weights.json", emit_plot_data(d, "weights"))
    log(f"explanation MSE {rep.mse:.4f}; flags: {rep.flags or 'none'}")
    return {"params": "params.json", "explanation": "explanation.json", "plot": "plot_weights.json"}


def _run_significance(cfg: ExperimentConfig, table: TimeSeriesTable, out: Path, log) -> dict:
    model, trace = _signal_model(cfg, table, out)
    s = cfg.values["significance"]
    seed = s["seed"] if s["seed"] is not None else cfg.values["experiment"]["seed"]
    rep = ex.significance_test(model.params, table, model.spec, _exogenous(cfg, table, model), lasso_config(cfg),
                               s["n_runs"], Rng(seed), model.features, model.stats, rows=trace.rows)
    d = rep.to_dict()
    d["config_hash"] = cfg.hash
    _write_json(out / "significance.json", d)
    _write_json(out / "plot_histogram.json", emit_plot_data(d, "histogram"))
    log(f"real MSE {rep.real_mse:.4f} at percentile {rep.percentile:.1f} of {rep.n_runs} random runs")
    return {"params": "params.json", "significance": "significance.json", "plot": "plot_histogram.json"}


STUDY_RUNNERS = {"forecast": _run_forecast, "signals": _run_signals, "laglasso": _run_laglasso,
                 "significance": _run_significance}


def run(config, overrides=(), log=print) -> Path:
    cfg = load_config(config, overrides)
    table = load_table(cfg)
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    files = STUDY_RUNNERS[cfg.study](cfg, table, out, log)
    manifest = {"study": cfg.study, "config": str(cfg.path), "config_hash": cfg.hash, "config_values": cfg.raw,
                "seed": cfg.values["experiment"]["seed"], "outputs": files,
                "seconds": round(time.perf_counter() - t0, 3)}
    _write_json(out / "run.json", manifest)
    log(f"wrote {out}")
    return out


def synth(config, out: str | None = None) -> Path:
    path = resolve_config_path(str(config))
    raw = read_raw(path)
    if "synth" not in raw:
        raise ConfigError("synth: config has no [synth] section")
    try:
        table = synth_generate(synth_config_from_mapping(raw["synth"]))
    except (ValueError, TypeError) as err:
        raise ConfigError(f"[synth] {err}") from err
    target = Path(out) if out else Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / f"{path.stem}.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(target)
    return target


# ---------------------------------------------------------------------------
# Self-checks


def self_checks() -> list[tuple[str, bool, str]]:
    """Quick invariant checks; the full suite lives in the test directory."""
    from . import lstm, mlp
    from .dataset import WindowSpec
    from .lasso import Gram, kkt_violation, lasso_fit
    from .numerics import finite_diff_gradient
    from .signals import extract_trace

    results = []
    rng = Rng(2024)

    worst = 0.0
    for units, steps in ((1, 2), (2, 4), (3, 6)):
        p = lstm.init_params(units, 2, rng)
        X, Y = rng.normal((2, steps, 2)), rng.normal((2, steps))
        _, g = lstm.loss_and_grad(p, X, Y)
        num = finite_diff_gradient(lambda v: lstm.loss_and_grad(p.from_flat(v), X, Y)[0], p.flat())
        a = g.flat()
        worst = max(worst, float(np.max(np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-6))))
    q = mlp.init_mlp(3, rng, 4)
    X, y = rng.normal((5, 3)), rng.normal(5)
    a = mlp.loss_and_grad(q, X, y)[1].flat()
    num = finite_diff_gradient(lambda v: mlp.loss_and_grad(q.from_flat(v), X, y)[0], q.flat())
    worst = max(worst, float(np.max(np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-6))))
    results.append(("gradients match finite differences", worst < 1e-4, f"max rel err {worst:.2e}"))

    p = lstm.init_params(3, 1, rng)
    table = TimeSeriesTable(np.arange(300).astype("datetime64[D]"), ("x",), 2 * rng.normal((300, 1)), "x")
    tr = extract_trace(p, table, WindowSpec(50, 0, 6))
    gap = float(np.max(np.abs(tr["hidden_state"] - tr["output_gate"] * np.tanh(tr["cell_state"]))))
    ranges = bool(np.all((tr["forget"] > 0) & (tr["forget"] < 1)) and np.all(np.abs(tr["hidden_state"]) < 1))
    results.append(("trace ranges and h = o * tanh(c)", ranges and gap <= 1e-12, f"max gap {gap:.1e}"))

    X = rng.normal((60, 5))
    s = X[:, 0] - X[:, 2] + 0.1 * rng.normal(60)
    ols = np.linalg.lstsq(X, s, rcond=None)[0]
    d0 = float(np.max(np.abs(lasso_fit(X, s, 0.0).w - ols)))
    gram = Gram(X, s)
    zero = bool(np.all(lasso_fit(X, s, gram.gamma_max).w == 0))
    sol = lasso_fit(X, s, 0.1 * gram.gamma_max)
    kkt = kkt_violation(gram.G, gram.c, sol.w, sol.gamma)
    results.append(("lasso: least squares at 0, zero at gamma_max, KKT", d0 < 1e-8 and zero and kkt <= 1e-6,
                    f"ols gap {d0:.1e}, kkt {kkt:.1e}"))

    pc = ex.persistence_check(length=6000, seed=1)
    results.append(("last-value MSE on a random walk", pc["relative_error"] < 0.1,
                    f"relative error {pc['relative_error']:.3f}"))
    return results


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lstm-laglasso", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the study described by a config file")
    r.add_argument("config")
    r.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    p = sub.add_parser("plot", help="write plot-data JSON for an artifact")
    p.add_argument("artifact")
    p.add_argument("--kind", required=True, help=f"one of: {', '.join(PLOT_KINDS)}")
    p.add_argument("--out", help="output file (default: plot_<kind>.json next to the artifact)")
    s = sub.add_parser("synth", help="generate a synthetic dataset CSV from a [synth] section")
    s.add_argument("config")
    s.add_argument("--out")
    sub.add_parser("check", help="run quick invariant self-checks")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    err = sys.stderr
    try:
        if args.command == "run":
            run(args.config, args.set)
        elif args.command == "plot":
            src = Path(args.artifact)
            if not src.exists():
                raise FileNotFoundError(f"artifact not found: {src}")
            data = emit_plot_data(json.loads(src.read_text(encoding="utf-8")), args.kind)
            dest = Path(args.out) if args.out else src.with_name(f"plot_{args.kind}.json")
            _write_json(dest, data)
            print(f"wrote {dest}")
        elif args.command == "synth":
            print(f"wrote {synth(args.config, args.out)}")
        else:
            ok = True
            for name, passed, detail in self_checks():
                ok &= passed
                print(f"{'PASS' if passed else 'FAIL'}  {name} ({detail})")
            return 0 if ok else 1
    except ConfigError as e:
        print(f"config error: {e}", file=err)
        return 2
    except (FileNotFoundError, ValueError, KeyError, ArithmeticError) as e:
        print(f"error: {e}", file=err)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
