"""Series panels: loading, validation, writing and synthetic generators."""
from __future__ import annotations

import csv
import datetime as _dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for unreadable or inconsistent panel data."""


@dataclass(frozen=True, eq=False)
class SeriesPanel:
    """``T x m`` panel of series values plus optional exogenous columns.

    Exogenous arrays are indexed by the same integer time index as ``values``
    and may be longer than ``T``; the extra entries are known future values.
    """

    names: tuple[str, ...]
    times: tuple
    values: np.ndarray
    exog: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=float, ndmin=2)
        if values.ndim != 2:
            raise DataError(f"values must be a T x m matrix, got shape {values.shape}")
        names = tuple(str(n) for n in self.names)
        if values.shape[1] != len(names):
            raise DataError(f"{len(names)} names for {values.shape[1]} columns")
        if len(set(names)) != len(names):
            raise DataError(f"duplicate series names {names}")
        times = tuple(self.times)
        if len(times) != values.shape[0]:
            raise DataError(f"{len(times)} time labels for {values.shape[0]} rows")
        if not np.all(np.isfinite(values)):
            row = int(np.argwhere(~np.isfinite(values))[0, 0])
            raise DataError(f"missing or non-finite value at row {row}")
        exog = {}
        for name, col in dict(self.exog).items():
            col = np.array(col, dtype=float).reshape(-1)
            col.setflags(write=False)
            exog[str(name)] = col
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "exog", exog)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown series {name!r}; have {list(self.names)}") from None

    def reorder(self, order: Sequence[str]) -> "SeriesPanel":
        idx = [self.index_of(n) for n in order]
        if sorted(idx) != list(range(self.m)):
            raise DataError(f"series order {list(order)} is not a permutation of {list(self.names)}")
        return SeriesPanel(tuple(order), self.times, self.values[:, idx], self.exog)

    def head(self, T: int) -> "SeriesPanel":
        """First ``T`` rows; exogenous columns keep their full length."""
        return SeriesPanel(self.names, self.times[:T], self.values[:T], self.exog)

    def with_exog(self, extra: Mapping[str, np.ndarray]) -> "SeriesPanel":
        exog = dict(self.exog)
        exog.update(extra)
        return SeriesPanel(self.names, self.times, self.values, exog)

    def exog_value(self, name: str, t: int) -> float:
        col = self.exog.get(name)
        if col is None:
            raise DataError(f"unknown exogenous column {name!r}")
        if t < 0 or t >= col.size or not math.isfinite(col[t]):
            raise DataError(f"exogenous column {name!r} has no value at time index {t}")
        return float(col[t])


@dataclass(frozen=True)
class PanelSchema:
    time_column: str
    value_columns: tuple[str, ...]
    exog_columns: tuple[str, ...] = ()
    delimiter: str = ","


# -- time labels -----------------------------------------------------------------

def _parse_time(raw: str):
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return _dt.date.fromisoformat(raw)
    except ValueError:
        pass
    if len(raw) == 7 and raw[4] == "-":
        try:
            return _dt.date.fromisoformat(raw + "-01")
        except ValueError:
            pass
    raise DataError(f"cannot parse time label {raw!r}")


def _month_index(d: _dt.date) -> int:
    return d.year * 12 + d.month - 1


def check_times(times: Sequence) -> None:
    """Strictly increasing and equally spaced (integer steps, days or months)."""
    if len(times) < 2:
        return
    kinds = {type(t) for t in times}
    if len(kinds) != 1:
        raise DataError("time column mixes integer and date labels")
    for i in range(1, len(times)):
        if not times[i] > times[i - 1]:
            raise DataError(
                f"time labels not strictly increasing at row {i + 1} "
                f"({times[i - 1]} -> {times[i]})"
            )
    if isinstance(times[0], int):
        steps = {b - a for a, b in zip(times, times[1:])}
        if len(steps) != 1:
            raise DataError(f"integer time labels are not equally spaced: steps {sorted(steps)}")
        return
    day_steps = {(b - a).days for a, b in zip(times, times[1:])}
    if len(day_steps) == 1:
        return
    same_day = len({t.day for t in times}) == 1
    month_steps = {_month_index(b) - _month_index(a) for a, b in zip(times, times[1:])}
    if same_day and len(month_steps) == 1:
        return
    raise DataError("date labels are not equally spaced in days or calendar months")


def _format_time(t) -> str:
    return t.isoformat() if isinstance(t, _dt.date) else str(t)


# -- reading / writing -----------------------------------------------------------

def _read_rows(path, delimiter):
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(rows) < 2:
        raise DataError(f"{path}: header only, no data rows")
    return header, rows[1:]


def _column_index(header, name, path):
    try:
        return header.index(name)
    except ValueError:
        raise DataError(f"{path}: column {name!r} not in header {header}") from None


def _parse_float(raw, row, col, path):
    raw = raw.strip()
    if raw == "" or raw.lower() in ("na", "nan", "null"):
        raise DataError(f"{path}: missing value in column {col!r} at row {row}")
    try:
        v = float(raw)
    except ValueError:
        raise DataError(f"{path}: cannot parse {raw!r} in column {col!r} at row {row}") from None
    if not math.isfinite(v):
        raise DataError(f"{path}: non-finite value in column {col!r} at row {row}")
    return v


def load_panel(path, schema: PanelSchema) -> SeriesPanel:
    """Read a delimited file with a header row into a validated panel.

    Row numbers in diagnostics count the header as row 1.
    """
    header, rows = _read_rows(path, schema.delimiter)
    ti = _column_index(header, schema.time_column, path)
    vi = [_column_index(header, c, path) for c in schema.value_columns]
    xi = [_column_index(header, c, path) for c in schema.exog_columns]
    times, values, exog = [], [], [[] for _ in xi]
    seen = {}
    for r, row in enumerate(rows, start=2):
        if len(row) < len(header):
            raise DataError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        t = _parse_time(row[ti])
        if t in seen:
            raise DataError(f"{path}: duplicate time {_format_time(t)} at row {r} (first at row {seen[t]})")
        seen[t] = r
        times.append(t)
        values.append([_parse_float(row[i], r, header[i], path) for i in vi])
        for col, i in zip(exog, xi):
            col.append(_parse_float(row[i], r, header[i], path))
    try:
        check_times(times)
    except DataError as err:
        raise DataError(f"{path}: {err}") from None
    return SeriesPanel(
        tuple(schema.value_columns),
        tuple(times),
        np.array(values, dtype=float),
        {name: np.array(col) for name, col in zip(schema.exog_columns, exog)},
    )


def load_future_exog(path, panel: SeriesPanel, columns: Sequence[str], time_column: str,
                     delimiter: str = ",") -> SeriesPanel:
    """Extend exogenous columns with values keyed by time beyond the panel end."""
    header, rows = _read_rows(path, delimiter)
    ti = _column_index(header, time_column, path)
    ci = [_column_index(header, c, path) for c in columns]
    times = [_parse_time(r[ti]) for r in rows]
    full_times = list(panel.times) + times
    try:
        check_times(full_times)
    except DataError as err:
        raise DataError(f"{path}: future table does not continue the panel: {err}") from None
    extra = {}
    for name, i in zip(columns, ci):
        future = [_parse_float(r[i], n, name, path) for n, r in enumerate(rows, start=2)]
        past = panel.exog.get(name, np.full(panel.T, np.nan))[: panel.T]
        extra[name] = np.concatenate([past, future])
    return panel.with_exog(extra)


def write_panel(panel: SeriesPanel, path, time_column: str = "time", include_exog: bool = True) -> None:
    """Write ``panel`` with 17 significant digits (lossless for float64)."""
    exog_names = list(panel.exog) if include_exog else []
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([time_column, *panel.names, *exog_names])
        for t in range(panel.T):
            row = [_format_time(panel.times[t])]
            row += [format(v, ".17g") for v in panel.values[t]]
            row += [format(panel.exog[n][t], ".17g") for n in exog_names]
            w.writerow(row)


# -- synthetic data ----------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientPath:
    """``level + amplitude*sin(2*pi*(t + phase)/period)`` plus a Gaussian random walk.

    ``breaks`` optionally adds piecewise-constant shifts: ``((t0, jump), ...)``.
    """

    level: float = 0.0
    amplitude: float = 0.0
    period: float = 100.0
    phase: float = 0.0
    rw_sd: float = 0.0
    breaks: tuple[tuple[int, float], ...] = ()

    def generate(self, T: int, rng: np.random.Generator) -> np.ndarray:
        t = np.arange(T, dtype=float)
        path = self.level + self.amplitude * np.sin(2.0 * np.pi * (t + self.phase) / self.period)
        steps = rng.normal(0.0, 1.0, T) * self.rw_sd
        steps[0] = 0.0
        path = path + np.cumsum(steps)
        for t0, jump in self.breaks:
            path[int(t0):] += jump
        return path


@dataclass(frozen=True)
class SyntheticConfig:
    """Two-predictor synthetic regression with one fast and one steady coefficient.

    The default ``theta1`` swings through a full cycle every 100 steps: slow
    enough for a discounted filter to follow one step ahead, but it changes
    sign-relevant amounts over 25 steps.
    """

    T_total: int = 130
    c: float = 0.5
    theta1: CoefficientPath = CoefficientPath(level=0.0, amplitude=2.0, period=100.0, phase=25.0, rw_sd=0.05)
    theta2: CoefficientPath = CoefficientPath(level=1.0, rw_sd=0.005)
    obs_noise_sd: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.T_total < 1:
            raise ValueError("T_total must be positive")
        if self.obs_noise_sd < 0:
            raise ValueError("obs_noise_sd must be non-negative")


def synthetic_components(cfg: SyntheticConfig) -> dict[str, np.ndarray]:
    """All generated arrays: ``x1, x2, theta1, theta2, noise, y``."""
    rng = np.random.default_rng(cfg.seed)
    T = cfg.T_total
    x1 = 2.0 * rng.integers(0, 2, T) - 1.0
    x2 = 2.0 * rng.integers(0, 2, T) - 1.0
    theta1 = cfg.theta1.generate(T, rng)
    theta2 = cfg.theta2.generate(T, rng)
    noise = rng.normal(0.0, 1.0, T) * cfg.obs_noise_sd
    y = cfg.c + theta1 * x1 + theta2 * x2 + noise
    return dict(x1=x1, x2=x2, theta1=theta1, theta2=theta2, noise=noise, y=y)


def generate_synthetic(cfg: SyntheticConfig = SyntheticConfig()) -> SeriesPanel:
    parts = synthetic_components(cfg)
    return SeriesPanel(("y",), tuple(range(cfg.T_total)), parts["y"][:, None],
                       {"x1": parts["x1"], "x2": parts["x2"]})


MACRO_NAMES = ("Inflation", "Consumption", "Tr10Yr")


def generate_macro_standin(T: int = 312, seed: int = 2016, start_year: int = 1991) -> SeriesPanel:
    """Monthly 3-series stand-in shaped like the Inflation/Consumption/Tr10Yr panel.

    A sparse VAR with lag-1 persistence, lag-12 feedback and a contemporaneous
    link to Tr10Yr; two recession-style dips hit Inflation and Consumption.
    Purely synthetic: it exercises the macro protocol, it does not mimic any
    data vintage.
    """
    rng = np.random.default_rng(seed)
    burn = 24
    n = T + burn
    y = np.zeros((n, 3))
    mu = np.array([2.5, 2.2, 5.0])
    y[:13] = mu + rng.normal(0, 0.3, (13, 3))
    shock_sd = np.array([0.25, 0.3, 0.18])
    dips = np.zeros((n, 3))
    for centre in (burn + 120, burn + 212):
        for t in range(centre - 6, centre + 12):
            w = math.exp(-0.5 * ((t - centre) / 4.0) ** 2)
            dips[t] += w * np.array([-1.2, -1.8, -0.4])
    trend = np.linspace(0.0, -1.5, n)
    for t in range(13, n):
        d = y[t - 1] - mu
        d12 = y[t - 12] - mu
        tr = 0.97 * (y[t - 1, 2] - mu[2] - trend[t - 1]) + trend[t] + rng.normal(0, shock_sd[2])
        y3 = mu[2] + tr
        cons = (mu[1] + 0.85 * d[1] + 0.12 * d12[1]
                - 0.1 * (y3 - mu[2]) + rng.normal(0, shock_sd[1]))
        infl = (mu[0] + 0.8 * d[0] + 0.15 * d12[1] - 0.1 * d12[0]
                + 0.1 * (cons - mu[1]) + 0.05 * (y3 - mu[2]) + rng.normal(0, shock_sd[0]))
        y[t] = np.array([infl, cons, y3]) + dips[t]
    y = y[burn:]
    times = tuple(
        _dt.date(start_year + (i // 12), i % 12 + 1, 1) for i in range(T)
    )
    return SeriesPanel(MACRO_NAMES, times, y)
