"""Backtest execution from a RunConfig and the on-disk output bundle.

Files written by :func:`write_bundle` (all floats with 17 significant digits):

``forecasts.csv``  origin_time, method, series, horizon, mean, q025, q25, q50, q75, q975
``scores.csv``     origin_time, method, log_density
``inclusion.csv``  time, method, series, predictor_id, included
``models.json``    pool labels and, per method, time and series, the weighted model set
``meta.json``      configuration echo, seed, library versions, wall time, run log
"""
from __future__ import annotations

import csv
import json
import math
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .avs import MethodOutput, bma_config, run_backtest
from .config import RunConfig
from .data import DataError, SeriesPanel, _format_time
from .metrics import logdensity_trace, rmsfe_by_horizon

BUNDLE_FILES = ("forecasts.csv", "scores.csv", "inclusion.csv", "models.json", "meta.json")


def fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class RunResult:
    config: RunConfig
    panel: SeriesPanel
    outputs: dict[str, MethodOutput]
    wall_time: float


def execute(cfg: RunConfig, progress=None) -> RunResult:
    """Run the configured method(s) on the configured panel."""
    t0 = time.perf_counter()
    panel = cfg.build_panel()
    pools = cfg.build_pools(panel)
    engine = cfg.engine_config(panel.names)
    request = cfg.forecast_request()
    methods = ["avs", "bma"] if cfg.mode == "both" else [cfg.mode]
    outputs = {}
    for method in methods:
        ecfg = engine if method == "avs" else bma_config(engine, pools, cfg.baseline_exhaustive_limit)
        outputs[method] = run_backtest(panel, pools, ecfg, request, cfg.training_length,
                                       cfg.evaluation_end, method=method, progress=progress)
    return RunResult(cfg, panel, outputs, time.perf_counter() - t0)


def _versions() -> dict:
    import numba
    import scipy
    import yaml

    return {"ddnm_avs": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "pyyaml": yaml.__version__}


def write_bundle(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    panel = result.panel
    label = lambda t: _format_time(panel.times[t])  # noqa: E731
    methods = list(result.outputs)
    first = next(iter(result.outputs.values()))
    q_names = None

    rows = []
    for mi, method in enumerate(methods):
        for step in result.outputs[method].steps:
            if step.summary is None:
                continue
            for r in step.summary.rows():
                rows.append((step.t, mi, r))
                if q_names is None:
                    q_names = [k for k in r if k.startswith("q")]
    rows.sort(key=lambda x: (x[0], x[1]))
    with (out / "forecasts.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin_time", "method", "series", "horizon", "mean", *(q_names or [])])
        for t, mi, r in rows:
            w.writerow([label(t - 1), methods[mi], r["series"], r["horizon"], fmt(r["mean"]),
                        *(fmt(r[q]) for q in q_names)])

    srows = []
    for mi, method in enumerate(methods):
        for step in result.outputs[method].steps:
            if step.goal_logdensity is not None:
                srows.append((step.t, mi, step.goal_logdensity))
    srows.sort(key=lambda x: (x[0], x[1]))
    with (out / "scores.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin_time", "method", "log_density"])
        for t, mi, v in srows:
            w.writerow([label(t - 1), methods[mi], fmt(v)])

    labels = {name: pool.labels(panel.names) for name, pool in zip(panel.names, first.pools)}
    with (out / "inclusion.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "method", "series", "predictor_id", "included"])
        per_time = []
        for mi, method in enumerate(methods):
            for step in result.outputs[method].steps:
                per_time.append((step.t, mi, step.representative))
        per_time.sort(key=lambda x: (x[0], x[1]))
        for t, mi, rep in per_time:
            for j, name in enumerate(panel.names):
                for lab, bit in zip(labels[name], rep[j].bits):
                    w.writerow([label(t), methods[mi], name, lab, bit])

    models = {"pools": labels, "methods": {}}
    for method in methods:
        entries = []
        for step in result.outputs[method].steps:
            for j, name in enumerate(panel.names):
                entries.append({"time": label(step.t), "series": name, "active": step.active,
                                "models": {k: step.maps[j][k] for k in sorted(step.maps[j])}})
        models["methods"][method] = entries
    (out / "models.json").write_text(json.dumps(models, indent=1) + "\n")

    meta = {
        "config": result.config.to_dict(),
        "seed": result.config.seed,
        "versions": _versions(),
        "wall_time_seconds": result.wall_time,
        "run_log": {m: o.run_log for m, o in result.outputs.items()},
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    return out


# -- reading back and evaluating ---------------------------------------------------

def read_csv(path) -> list[dict]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {p}")
    with p.open(newline="") as fh:
        return list(csv.DictReader(fh))


def read_meta(run_dir) -> dict:
    p = Path(run_dir) / "meta.json"
    if not p.exists():
        raise DataError(f"{p} not found; is {run_dir} a run directory?")
    return json.loads(p.read_text())


def evaluate_bundle(run_dir, panel: SeriesPanel, out_dir=None) -> tuple[Path, Path]:
    """Write ``rmsfe.csv`` (series, horizon, method, value) and ``trace.csv``."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir
    out.mkdir(parents=True, exist_ok=True)
    index = {_format_time(t): i for i, t in enumerate(panel.times)}

    def row_index(lab, path):
        try:
            return index[lab]
        except KeyError:
            raise DataError(f"{path}: time {lab!r} is not in the actuals panel") from None

    fc = read_csv(run_dir / "forecasts.csv")
    methods = list(dict.fromkeys(r["method"] for r in fc))
    if not methods:
        raise DataError(f"{run_dir / 'forecasts.csv'} has no rows")
    rm_rows = []
    for method in methods:
        rows = [r for r in fc if r["method"] == method]
        origins = sorted({row_index(r["origin_time"], "forecasts.csv") for r in rows})
        K = max(int(r["horizon"]) for r in rows)
        pos = {o: i for i, o in enumerate(origins)}
        means = np.full((len(origins), K, panel.m), np.nan)
        for r in rows:
            try:
                j = panel.names.index(r["series"])
            except ValueError:
                raise DataError(f"forecasts.csv: unknown series {r['series']!r}") from None
            means[pos[row_index(r["origin_time"], "forecasts.csv")], int(r["horizon"]) - 1, j] = float(r["mean"])
        table = rmsfe_by_horizon(origins, means, panel.values, panel.names)
        for series, h, value, count in table.rows:
            rm_rows.append((series, h, method, value))
    with (out / "rmsfe.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "horizon", "method", "value"])
        for series, h, method, value in rm_rows:
            w.writerow([series, h, method, fmt(value)])

    sc = read_csv(run_dir / "scores.csv")
    with (out / "trace.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin_time", "method", "log_density", "running_mean"])
        for method in list(dict.fromkeys(r["method"] for r in sc)):
            rows = [r for r in sc if r["method"] == method]
            rows.sort(key=lambda r: row_index(r["origin_time"], "scores.csv"))
            tr = logdensity_trace([r["origin_time"] for r in rows], [float(r["log_density"]) for r in rows])
            for o, v, run in tr.rows:
                w.writerow([o, method, fmt(v), fmt(run)])
    return out / "rmsfe.csv", out / "trace.csv"


def compare_scores(rows_a: list[dict], rows_b: list[dict], method_a=None, method_b=None) -> list[tuple]:
    """Per-origin ``log_density_a - log_density_b`` over the origins both files share."""
    def pick(rows, method, which):
        methods = list(dict.fromkeys(r["method"] for r in rows))
        if method is None:
            if len(methods) != 1:
                raise DataError(f"scores for {which} hold methods {methods}; choose one")
            method = methods[0]
        sel = {r["origin_time"]: float(r["log_density"]) for r in rows if r["method"] == method}
        if not sel:
            raise DataError(f"no scores for method {method!r} in {which}")
        return method, sel

    ma, a = pick(rows_a, method_a, "a")
    mb, b = pick(rows_b, method_b, "b")
    common = [o for o in a if o in b]
    if not common:
        raise DataError("the two score sets share no origin")
    return [(o, ma, mb, a[o], b[o], a[o] - b[o]) for o in common]
