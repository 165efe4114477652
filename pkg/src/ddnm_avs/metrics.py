"""Backtest metrics: rMSFE by horizon, log density traces and inclusion matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .models import ModelIndicator


@dataclass(frozen=True)
class MetricTable:
    """Rows of a metric table; ``key`` names the columns that identify a row."""

    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    key: tuple[str, ...]

    def __post_init__(self):
        pos = [self.columns.index(k) for k in self.key]
        seen = set()
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValueError(f"row {r} does not match columns {self.columns}")
            k = tuple(r[i] for i in pos)
            if k in seen:
                raise ValueError(f"duplicate key {k}")
            seen.add(k)

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def as_dicts(self) -> list[dict]:
        return [dict(zip(self.columns, r)) for r in self.rows]

    def lookup(self, **key) -> tuple:
        for r in self.rows:
            if all(r[self.columns.index(k)] == v for k, v in key.items()):
                return r
        raise KeyError(key)

    def __len__(self) -> int:
        return len(self.rows)


def rmsfe_by_horizon(origins: Sequence[int], means, actuals, names: Sequence[str] | None = None) -> MetricTable:
    """Root mean squared error of point forecasts for each (series, horizon).

    Parameters
    ----------
    origins
        Row index of each forecast origin.
    means
        ``n_origins x K x m`` point forecasts; ``means[i, h-1]`` targets row
        ``origins[i] + h``.
    actuals
        ``T x m`` observed values.  Origins whose target row lies past the
        end are left out of that horizon's mean; a horizon with no usable
        origin reports NaN with count 0.
    """
    means = np.asarray(means, dtype=float)
    actuals = np.asarray(actuals, dtype=float)
    if actuals.ndim == 1:
        actuals = actuals[:, None]
    if means.ndim == 2:
        means = means[:, :, None]
    origins = np.asarray(origins, dtype=int)
    if means.shape[0] != origins.size or means.shape[2] != actuals.shape[1]:
        raise ValueError(f"forecasts {means.shape} do not align with {origins.size} origins "
                         f"and {actuals.shape[1]} series")
    n, K, m = means.shape
    names = tuple(names) if names is not None else tuple(f"y{j}" for j in range(m))
    rows = []
    used = 0
    for j in range(m):
        for h in range(1, K + 1):
            target = origins + h
            ok = (target < actuals.shape[0]) & np.isfinite(means[:, h - 1, j])
            if ok.any():
                err = means[ok, h - 1, j] - actuals[target[ok], j]
                value = math.sqrt(float(np.mean(err * err)))
            else:
                value = math.nan
            used += int(ok.sum())
            rows.append((names[j], h, value, int(ok.sum())))
    if used == 0:
        raise ValueError("no forecast has an observed target")
    return MetricTable(("series", "horizon", "value", "count"), tuple(rows), ("series", "horizon"))


def logdensity_trace(origins: Sequence, values: Sequence[float]) -> MetricTable:
    """Per-origin log densities with their running mean."""
    vals = np.asarray(values, dtype=float)
    if len(origins) != vals.size:
        raise ValueError("origins and values differ in length")
    running = np.cumsum(vals) / np.arange(1, vals.size + 1) if vals.size else vals
    rows = tuple((o, float(v), float(r)) for o, v, r in zip(origins, vals, running))
    return MetricTable(("origin_time", "log_density", "running_mean"), rows, ("origin_time",))


def inclusion_trajectory(models: Sequence[ModelIndicator], p: int | None = None) -> np.ndarray:
    """``time x entries`` 0/1 matrix of the representative model's inclusions."""
    if not models:
        return np.zeros((0, p or 0), dtype=np.int8)
    width = len(models[0]) if p is None else p
    out = np.zeros((len(models), width), dtype=np.int8)
    for i, mdl in enumerate(models):
        if len(mdl) != width:
            raise ValueError(f"model {mdl.key} does not match pool size {width}")
        out[i] = mdl.bits
    return out
