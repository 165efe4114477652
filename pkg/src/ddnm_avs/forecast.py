"""Recoupled DDNM forecasting: composed 1-step densities and simulated path futures.

Latent simulation follows the discount model directly.  Working in precision
units (``C* = C/s``), one step for a series is::

    lambda <- lambda * eta / beta,   eta ~ Beta(beta*n/2, (1-beta)*n/2)
    theta  <- theta + omega,         omega ~ N(0, C*(1-delta)/delta / lambda)
    y       ~ N(F'theta, 1/lambda)

where ``C*`` and ``n`` are the scale-free covariance and dof that the filter
would hold after assimilating the path so far.  Both depend on the
regressors only, never on the observed values of ``y`` itself, so they are
carried along each simulated path.  The first step draws straight from the
evolved prior ``(a, R, r, s)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import dlm
from .data import DataError, SeriesPanel
from .dlm import DlmDiscounts, DlmPosterior
from .models import EXOG, INTERCEPT, LAG, PARENT, CandidatePool, ModelIndicator

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
DEFAULT_QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)


@dataclass(frozen=True, eq=False)
class SeriesState:
    """Candidate models for one series at the forecast origin, with their weights."""

    pool: CandidatePool
    models: tuple[ModelIndicator, ...]
    posteriors: tuple[DlmPosterior, ...]
    probs: np.ndarray = None
    discounts: DlmDiscounts = DlmDiscounts()

    def __post_init__(self):
        models = tuple(self.models)
        posts = tuple(self.posteriors)
        if not models or len(models) != len(posts):
            raise ValueError("need one posterior per model and at least one model")
        for mdl, post in zip(models, posts):
            self.pool.validate(mdl)
            if post.dim != mdl.size:
                raise ValueError(f"posterior dimension {post.dim} != model size {mdl.size}")
        probs = np.ones(len(models)) if self.probs is None else np.asarray(self.probs, dtype=float)
        if probs.shape != (len(models),) or np.any(probs < 0) or not probs.sum() > 0:
            raise ValueError("model probabilities must be non-negative and not all zero")
        probs = probs / probs.sum()
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "posteriors", posts)
        object.__setattr__(self, "probs", probs)


@dataclass(frozen=True, eq=False)
class DdnmState:
    """Everything needed to forecast from ``origin``: per-series models and the data so far."""

    series: tuple[SeriesState, ...]
    history: np.ndarray
    origin: int
    exog: Mapping[str, np.ndarray] = field(default_factory=dict)
    names: tuple[str, ...] = ()

    def __post_init__(self):
        hist = np.asarray(self.history, dtype=float)
        if hist.ndim != 2 or hist.shape[1] != len(self.series):
            raise ValueError("history must be a T x m array with one column per series")
        if self.origin >= hist.shape[0]:
            raise ValueError("history must cover the origin")
        for j, ss in enumerate(self.series):
            if ss.pool.series_index != j:
                raise ValueError(f"series {j} carries the pool of series {ss.pool.series_index}")
        object.__setattr__(self, "history", hist)
        object.__setattr__(self, "series", tuple(self.series))
        if not self.names:
            object.__setattr__(self, "names", tuple(f"y{j}" for j in range(len(self.series))))

    @property
    def m(self) -> int:
        return len(self.series)

    @property
    def max_lag(self) -> int:
        return max(1, max(s.pool.max_lag for s in self.series))

    @classmethod
    def from_panel(cls, panel: SeriesPanel, origin: int, series: Sequence[SeriesState]) -> "DdnmState":
        return cls(tuple(series), panel.values[: origin + 1], origin, panel.exog, panel.names)


@dataclass(frozen=True, eq=False)
class PathSamples:
    draws: np.ndarray
    origin_time: int
    horizon: int
    names: tuple[str, ...] = ()

    def __post_init__(self):
        d = np.asarray(self.draws, dtype=float)
        if d.ndim != 3 or d.shape[1] != self.horizon:
            raise ValueError(f"draws must be n x {self.horizon} x m, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("non-finite simulated values")
        object.__setattr__(self, "draws", d)


# -- helpers -----------------------------------------------------------------

def log_mean_exp(logw: np.ndarray) -> tuple[float, float]:
    """``log(mean(exp(logw)))`` with a delta-method standard error."""
    logw = np.asarray(logw, dtype=float)
    mx = float(np.max(logw))
    w = np.exp(logw - mx)
    mean = float(w.mean())
    est = mx + math.log(mean)
    if w.size < 2:
        return est, math.inf
    return est, float(w.std(ddof=1) / math.sqrt(w.size) / mean)


def _exog_at(state: DdnmState, name: str, t: int) -> float:
    col = state.exog.get(name)
    if col is None or t >= col.size or not math.isfinite(col[t]):
        raise DataError(
            f"future value of exogenous column {name!r} at time {t} is required but not supplied"
        )
    return float(col[t])


def _observed_regressors(state: DdnmState, j: int, model: ModelIndicator, y_t: np.ndarray) -> np.ndarray:
    """Regressors for series ``j`` at ``origin+1`` given the contemporaneous vector ``y_t``."""
    pool = state.series[j].pool
    t = state.origin + 1
    F = np.empty(model.size)
    for c, i in enumerate(model.included):
        e = pool.entries[i]
        if e.kind == INTERCEPT:
            F[c] = 1.0
        elif e.kind == LAG:
            F[c] = state.history[t - e.lag, e.source]
        elif e.kind == PARENT:
            F[c] = y_t[e.source]
        else:
            F[c] = _exog_at(state, e.name, t)
    return F


def conditional_logdensities(state: DdnmState, y_t) -> list[np.ndarray]:
    """Per series, per model: ``log p(y_{j,t} | y_{pa(j),t}, M, D_{t-1})``."""
    y_t = np.asarray(y_t, dtype=float).reshape(-1)
    if y_t.size != state.m:
        raise ValueError(f"observation has {y_t.size} entries for {state.m} series")
    out = []
    for j, ss in enumerate(state.series):
        d = ss.discounts
        vals = np.empty(len(ss.models))
        for r, (mdl, post) in enumerate(zip(ss.models, ss.posteriors)):
            F = _observed_regressors(state, j, mdl, y_t)
            a, R, rr = dlm._evolve(post.m, post.C, post.n, d.delta, d.beta)
            f, q, _ = dlm._forecast(a, R, post.s, F)
            vals[r] = dlm._logt(float(y_t[j]), rr, f, q)
        out.append(vals)
    return out


def joint_one_step_logdensity(state: DdnmState, y_t) -> float:
    """``log p(y_t | D_{t-1})`` by composition over series, last series first.

    With several models per series the per-series term is the mixture
    ``log sum_M p(M) p(y_j | y_pa(j), M)``.
    """
    terms = conditional_logdensities(state, y_t)
    total = 0.0
    for j in reversed(range(state.m)):
        probs = state.series[j].probs
        vals = terms[j]
        if vals.size == 1:
            total += float(vals[0])
        else:
            with np.errstate(divide="ignore"):
                lw = np.log(probs) + vals
            mx = lw.max()
            total += float(mx + math.log(np.exp(lw - mx).sum()))
    return total


def _chol_batch(S: np.ndarray) -> np.ndarray:
    p = S.shape[-1]
    scale = np.trace(S, axis1=-2, axis2=-1)[..., None, None] / p
    eye = np.eye(p)
    try:
        return np.linalg.cholesky(S + 1e-12 * (scale + 1e-300) * eye)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (S + np.swapaxes(S, -1, -2)))
        return V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]


class _Group:
    """Latent state of the samples that use one model for one series."""

    def __init__(self, j, model, post, disc, rows):
        self.j = j
        self.model = model
        self.idx = model.included
        self.post = post
        self.disc = disc
        self.rows = rows
        self.p = model.size
        self.theta = None
        self.lam = None
        self.Cstar = None
        self.n = post.n


def _regressor_block(state, grp, buf, pos, t, parent_values=None):
    """``n_g x p`` regressors at absolute time ``t`` (buffer position ``pos``)."""
    pool = state.series[grp.j].pool
    F = np.empty((grp.rows.size, grp.p))
    for c, i in enumerate(grp.idx):
        e = pool.entries[i]
        if e.kind == INTERCEPT:
            F[:, c] = 1.0
        elif e.kind == LAG:
            F[:, c] = buf[grp.rows, pos - e.lag, e.source]
        elif e.kind == PARENT:
            if parent_values is None:
                F[:, c] = buf[grp.rows, pos, e.source]
            else:
                F[:, c] = parent_values[e.source]
        else:
            F[:, c] = _exog_at(state, e.name, t)
    return F


def _simulate(state: DdnmState, k: int, n: int, rng: np.random.Generator, *,
              observed: np.ndarray | None = None, target: np.ndarray | None = None,
              choices: Sequence[np.ndarray] | None = None):
    """Core latent-path simulator.

    ``observed`` (``k x m``) switches to evaluation mode: nothing is drawn for
    ``y``, regressors use the observed path and the per-sample log density of
    the whole path is accumulated.  ``target`` (``m``-vector) adds, in draw
    mode, the per-sample log density of that vector at the final horizon,
    with lags from the simulated path and parents from ``target``.
    """
    if k < 1 or n < 1:
        raise ValueError("k and n_samples must be positive")
    m, L = state.m, state.max_lag
    buf = np.full((n, L + k, m), np.nan)
    lo = state.origin - L + 1
    src = state.history[max(lo, 0): state.origin + 1]
    buf[:, L - src.shape[0]: L, :] = src
    if observed is not None:
        observed = np.asarray(observed, dtype=float)
        if observed.shape != (k, m) or not np.all(np.isfinite(observed)):
            raise ValueError(f"observed path must be a finite {k} x {m} array")
        buf[:, L:, :] = observed
    if choices is None:
        choices = [rng.choice(len(ss.models), size=n, p=ss.probs) if len(ss.models) > 1
                   else np.zeros(n, dtype=int) for ss in state.series]
    groups = []
    for j, ss in enumerate(state.series):
        gj = []
        for r in np.unique(choices[j]):
            rows = np.flatnonzero(choices[j] == r)
            gj.append(_Group(j, ss.models[r], ss.posteriors[r], ss.discounts, rows))
        groups.append(gj)
    logd = np.zeros(n)
    tlogd = np.zeros(n) if target is not None else None

    for h in range(1, k + 1):
        t = state.origin + h
        pos = L - 1 + h
        for j in reversed(range(m)):
            for g in groups[j]:
                ng, p = g.rows.size, g.p
                delta, beta = g.disc.delta, g.disc.beta
                if h == 1:
                    post = g.post
                    r = beta * post.n
                    g.lam = rng.gamma(0.5 * r, 2.0 / (r * post.s), size=ng)
                    if p:
                        Rstar = (post.C / post.s) / delta
                        Lr = _chol_batch(Rstar[None])[0]
                        z = rng.standard_normal((ng, p))
                        g.theta = post.m + (z @ Lr.T) / np.sqrt(g.lam)[:, None]
                        Rstar = np.broadcast_to(Rstar, (ng, p, p))
                else:
                    if beta < 1.0:
                        eta = rng.beta(0.5 * beta * g.n, 0.5 * (1.0 - beta) * g.n, size=ng)
                        g.lam = g.lam * eta / beta
                    r = beta * g.n
                    if p:
                        if delta < 1.0:
                            W = g.Cstar * ((1.0 - delta) / delta)
                            Lw = _chol_batch(W)
                            z = rng.standard_normal((ng, p))
                            g.theta = g.theta + np.einsum("nij,nj->ni", Lw, z) / np.sqrt(g.lam)[:, None]
                        Rstar = g.Cstar / delta
                sd = 1.0 / np.sqrt(g.lam)
                if p:
                    F = _regressor_block(state, g, buf, pos, t)
                    mean = np.einsum("ni,ni->n", F, g.theta)
                else:
                    F = np.empty((ng, 0))
                    mean = np.zeros(ng)
                if observed is not None:
                    yv = observed[h - 1, j]
                    logd[g.rows] += -HALF_LOG_2PI - np.log(sd) - 0.5 * ((yv - mean) / sd) ** 2
                else:
                    buf[g.rows, pos, j] = mean + sd * rng.standard_normal(ng)
                    if target is not None and h == k:
                        if p:
                            Ft = _regressor_block(state, g, buf, pos, t, parent_values=target)
                            mt = np.einsum("ni,ni->n", Ft, g.theta)
                        else:
                            mt = np.zeros(ng)
                        tlogd[g.rows] += -HALF_LOG_2PI - np.log(sd) - 0.5 * ((target[j] - mt) / sd) ** 2
                if p and h < k:
                    RF = np.einsum("nij,nj->ni", Rstar, F)
                    qs = 1.0 + np.einsum("ni,ni->n", F, RF)
                    C = Rstar - RF[:, :, None] * RF[:, None, :] / qs[:, None, None]
                    g.Cstar = 0.5 * (C + np.swapaxes(C, 1, 2))
                g.n = r + 1.0
    return buf[:, L:, :].copy(), logd, tlogd


# -- public API ------------------------------------------------------------------

def simulate_paths(state: DdnmState, k: int, n_samples: int, rng: np.random.Generator) -> PathSamples:
    """Synthetic futures ``y_{origin+1..origin+k}``; models are drawn per sample from each series' weights."""
    draws, _, _ = _simulate(state, k, n_samples, rng)
    return PathSamples(draws, state.origin, k, state.names)


def mc_path_logdensity(state: DdnmState, observed_path, n_samples: int,
                       rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo ``log p(y_{origin+1..origin+k} | D_origin)`` and its standard error."""
    observed_path = np.asarray(observed_path, dtype=float)
    if observed_path.ndim == 1:
        observed_path = observed_path[:, None]
    k = observed_path.shape[0]
    _, logd, _ = _simulate(state, k, n_samples, rng, observed=observed_path)
    return log_mean_exp(logd)


def mc_marginal_logdensity(state: DdnmState, target, h: int, n_samples: int,
                           rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo ``log p(y_{origin+h} | D_origin)`` at the vector ``target``."""
    target = np.asarray(target, dtype=float).reshape(-1)
    _, _, tl = _simulate(state, h, n_samples, rng, target=target)
    return log_mean_exp(tl)


def forecast_paths(state: DdnmState, k: int, n_samples: int, rng: np.random.Generator,
                   target=None):
    """Draw paths and, when ``target`` is given, the MC log density of ``y_{origin+k}`` in one pass."""
    tgt = None if target is None else np.asarray(target, dtype=float).reshape(-1)
    draws, _, tl = _simulate(state, k, n_samples, rng, target=tgt)
    paths = PathSamples(draws, state.origin, k, state.names)
    return paths, (None if tgt is None else log_mean_exp(tl))


def model_averaged_paths(
    maps: Sequence[Mapping[str, float]],
    posteriors: Sequence[Mapping[str, DlmPosterior]],
    pools: Sequence[CandidatePool],
    discounts: Sequence[DlmDiscounts],
    panel: SeriesPanel,
    origin: int,
    k: int,
    n_samples: int,
    rng: np.random.Generator,
) -> PathSamples:
    """Paths from the product-form mixture: one model per series drawn per sample."""
    state = mixture_state(maps, posteriors, pools, discounts, panel, origin)
    return simulate_paths(state, k, n_samples, rng)


def mixture_state(maps, posteriors, pools, discounts, panel, origin) -> DdnmState:
    series = []
    for j, (mp, posts, pool, disc) in enumerate(zip(maps, posteriors, pools, discounts, strict=True)):
        keys = [key for key in sorted(mp) if mp[key] > 0]
        if not keys:
            raise ValueError(f"series {j}: empty model map")
        series.append(SeriesState(
            pool,
            tuple(ModelIndicator.from_key(key) for key in keys),
            tuple(posts[key] for key in keys),
            np.array([mp[key] for key in keys]),
            disc,
        ))
    return DdnmState.from_panel(panel, origin, series)


@dataclass(frozen=True, eq=False)
class ForecastSummary:
    """Per (horizon, series) mean and quantiles of simulated paths."""

    origin_time: int
    names: tuple[str, ...]
    quantiles: tuple[float, ...]
    mean: np.ndarray
    table: np.ndarray

    def rows(self):
        k, m = self.mean.shape
        for j in range(m):
            for h in range(k):
                yield {"series": self.names[j], "horizon": h + 1, "mean": float(self.mean[h, j]),
                       **{_qname(q): float(self.table[i, h, j]) for i, q in enumerate(self.quantiles)}}


def _qname(q: float) -> str:
    digits = f"{q:.3f}".split(".")[1].rstrip("0")
    return "q" + (digits if len(digits) > 1 else digits + "0") if digits else "q0"


def summarize(paths: PathSamples, quantiles: Sequence[float] = DEFAULT_QUANTILES) -> ForecastSummary:
    """Empirical means and type-7 (linear interpolation) quantiles."""
    d = paths.draws
    if d.shape[0] == 0:
        raise ValueError("no draws to summarise")
    table = np.quantile(d, list(quantiles), axis=0, method="linear")
    names = paths.names or tuple(f"y{j}" for j in range(d.shape[2]))
    return ForecastSummary(paths.origin_time, names, tuple(quantiles), d.mean(axis=0), table)
