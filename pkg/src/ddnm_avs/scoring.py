"""Per-series model score ledgers and Gibbs / discounted-BMA model probabilities.

A ledger tracks, for one series, a set of models with their filtered DLM state
and a discounted cumulative score ``s_t = alpha * s_{t-1} + increment_t``.
Three increments are supported:

``one_step``
    ``log p(y_t | M, D_{t-1})``.
``kstep_marginal``
    ``log p(y_t | M, D_{t-k})`` from the plug-in k-step T forecast made from
    the posterior at ``t-k`` with the regressors observed at ``t``.
``path_lpfd``
    ``log p(y_{t-k+1}, ..., y_t | M, D_{t-k})``, which factorises exactly into
    the sum of the last ``k`` one-step log densities.

Regressors always use observed values of lagged and parental series, so each
series is scored on its own and the cost is linear in the number of series.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from . import _kernels as _k
from . import dlm
from .data import DataError, SeriesPanel
from .dlm import DlmDiscounts, DlmPosterior
from .models import CandidatePool, ModelIndicator, design_matrix, first_available

ONE_STEP = "one_step"
KSTEP = "kstep_marginal"
PATH_LPFD = "path_lpfd"
SCORE_KINDS = (ONE_STEP, KSTEP, PATH_LPFD)


@dataclass(frozen=True)
class ScoreConfig:
    kind: str = KSTEP
    k: int = 1
    alpha: float = 0.98
    tau: float | None = None
    window_start: int = 0
    history_cap: int = 2000

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise ValueError(f"unknown score kind {self.kind!r}; expected one of {SCORE_KINDS}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if self.kind == ONE_STEP and self.k != 1:
            raise ValueError("one_step scores require k = 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.tau is None:
            object.__setattr__(self, "tau", 1.0 / self.k if self.kind == PATH_LPFD else 1.0)
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.window_start < 0:
            raise ValueError("window_start must be non-negative")


@dataclass(frozen=True)
class PriorSpec:
    """Starting DLM prior for every model: see ``dlm.default_prior``.

    Calibration uses ``calibration_length`` rows from the ledger start.
    """

    n0: float = 10.0
    g: float = 1.0
    calibration_length: int = 30

    def __post_init__(self):
        if not self.n0 > 0 or not self.g > 0 or self.calibration_length < 2:
            raise ValueError(f"invalid prior spec {self}")


@dataclass(frozen=True)
class ModelPrior:
    """Baseline model probabilities: uniform, or independent Bernoulli(pi) per free entry."""

    kind: str = "uniform"
    pi: float = 0.5

    def __post_init__(self):
        if self.kind not in ("uniform", "bernoulli"):
            raise ValueError(f"unknown model prior {self.kind!r}")
        if not 0.0 < self.pi < 1.0:
            raise ValueError("pi must lie in (0, 1)")

    def log_prior(self, model: ModelIndicator, pool: CandidatePool) -> float:
        if self.kind == "uniform":
            return 0.0
        q = sum(model.bits[i] for i in pool.free)
        return q * math.log(self.pi) + (len(pool.free) - q) * math.log1p(-self.pi)


@dataclass(frozen=True, eq=False)
class LedgerEntry:
    """One tracked model: discounted score, current posterior and score history."""

    model: ModelIndicator
    score: float
    last_updated: int
    n_increments: int
    m: np.ndarray
    C: np.ndarray
    n: float
    s: float
    ring: tuple = ()
    increments: tuple[float, ...] = ()
    last_loglik: float | None = None

    @property
    def key(self) -> str:
        return self.model.key

    @property
    def posterior(self) -> DlmPosterior:
        return DlmPosterior(self.m, self.C, self.n, self.s)


@dataclass(frozen=True, eq=False)
class LedgerContext:
    """Immutable data shared by all entries of a ledger."""

    pool: CandidatePool
    X: np.ndarray
    y: np.ndarray
    discounts: DlmDiscounts
    prior: PriorSpec
    start: int
    _index_cache: dict = field(default_factory=dict, repr=False)

    def index(self, model: ModelIndicator) -> np.ndarray:
        idx = self._index_cache.get(model.bits)
        if idx is None:
            idx = np.array(model.included, dtype=int)
            self._index_cache[model.bits] = idx
        return idx

    def initial_entry(self, model: ModelIndicator) -> LedgerEntry:
        idx = self.index(model)
        stop = min(self.start + self.prior.calibration_length, self.y.size)
        rows = slice(self.start, stop)
        post = dlm.default_prior(
            self.X[rows][:, idx], self.y[rows], self.pool.is_intercept()[idx],
            g=self.prior.g, n0=self.prior.n0,
        )
        return LedgerEntry(model, 0.0, self.start - 1, 0, post.m, post.C, post.n, post.s)


class _Ring(NamedTuple):
    """Circular buffer of the last ``k`` posteriors (k-step) or log densities (path)."""

    m: np.ndarray
    C: np.ndarray
    n: np.ndarray
    s: np.ndarray
    ll: np.ndarray
    head: int
    cnt: int


_KIND_CODES = {ONE_STEP: _k.KIND_ONE_STEP, KSTEP: _k.KIND_KSTEP, PATH_LPFD: _k.KIND_PATH}


def _empty_ring(kind: str, k: int, p: int) -> _Ring:
    kk = k if kind == KSTEP else 0
    return _Ring(np.empty((kk, p)), np.empty((kk, p, p)), np.empty(kk), np.empty(kk),
                 np.empty(k if kind == PATH_LPFD else 0), 0, 0)


def _advance_entry(entry: LedgerEntry, ctx: LedgerContext, cfg: ScoreConfig, t_stop: int) -> LedgerEntry:
    """Filter ``entry`` forward through times ``last_updated+1 .. t_stop``."""
    if t_stop <= entry.last_updated:
        return entry
    idx = ctx.index(entry.model)
    ring = entry.ring if entry.ring else _empty_ring(cfg.kind, cfg.k, idx.size)
    rm, rC, rn, rs, rl = (a.copy() for a in ring[:5])
    t0 = entry.last_updated + 1
    incs = np.empty(t_stop - t0 + 1)
    m, C, n, s, score, n_inc, head, cnt, n_new, ell, bad = _k.advance(
        ctx.X, ctx.y, idx, t0, t_stop, np.array(entry.m), np.array(entry.C), entry.n, entry.s,
        ctx.discounts.delta, ctx.discounts.beta, _KIND_CODES[cfg.kind], cfg.k, cfg.alpha,
        entry.score, entry.n_increments, rm, rC, rn, rs, rl, ring.head, ring.cnt, incs,
    )
    if bad >= 0:
        raise DataError(f"series {ctx.pool.series_index}: missing data at time {bad}")
    history = entry.increments + tuple(incs[:n_new].tolist())
    if len(history) > cfg.history_cap:
        history = history[-cfg.history_cap:]
    return LedgerEntry(entry.model, float(score), t_stop, int(n_inc), m, C, float(n), float(s),
                       _Ring(rm, rC, rn, rs, rl, int(head), int(cnt)), history, float(ell))


class ScoreLedger:
    """Score ledger for one series.

    ``tracked`` entries are advanced eagerly by :meth:`advance`.  Models that
    were evaluated but are no longer tracked sit in a bounded LRU cache and
    are caught up lazily when looked up again; catching up runs the exact
    same recursion as a fresh backfill, so the cache never changes a score.
    """

    def __init__(self, ctx: LedgerContext, config: ScoreConfig, clock: int,
                 tracked=None, cache=None, cache_size: int = 5000):
        self.ctx = ctx
        self.config = config
        self.clock = clock
        self.tracked: dict[str, LedgerEntry] = dict(tracked or {})
        self.cache: OrderedDict[str, LedgerEntry] = OrderedDict(cache or {})
        self.cache_size = cache_size

    @classmethod
    def create(
        cls,
        pool: CandidatePool,
        panel: SeriesPanel,
        config: ScoreConfig,
        discounts: DlmDiscounts = DlmDiscounts(),
        prior: PriorSpec = PriorSpec(),
        models: Iterable[ModelIndicator] = (),
        cache_size: int = 5000,
    ) -> "ScoreLedger":
        start = first_available(pool, panel, config.window_start)
        X = design_matrix(pool, panel)
        X.setflags(write=False)
        y = panel.values[:, pool.series_index].copy()
        y.setflags(write=False)
        ctx = LedgerContext(pool, X, y, discounts, prior, start)
        ledger = cls(ctx, config, start - 1, cache_size=cache_size)
        ledger.track(models if models else [pool.forced_model()])
        return ledger

    @property
    def pool(self) -> CandidatePool:
        return self.ctx.pool

    @property
    def start(self) -> int:
        return self.ctx.start

    def copy(self) -> "ScoreLedger":
        return ScoreLedger(self.ctx, self.config, self.clock, self.tracked, self.cache, self.cache_size)

    def __contains__(self, model) -> bool:
        key = model.key if isinstance(model, ModelIndicator) else model
        return key in self.tracked

    def __len__(self) -> int:
        return len(self.tracked)

    def models(self) -> list[ModelIndicator]:
        return [e.model for e in self.tracked.values()]

    def entry(self, model) -> LedgerEntry:
        key = model.key if isinstance(model, ModelIndicator) else model
        return self.tracked[key]

    # -- evaluation ---------------------------------------------------------

    def backfill(self, model: ModelIndicator, t: int | None = None) -> LedgerEntry:
        """Fit ``model`` from the ledger start through ``t`` (default: the clock)."""
        t = self.clock if t is None else t
        self.pool.validate(model)
        return _advance_entry(self.ctx.initial_entry(model), self.ctx, self.config, t)

    def fetch(self, model: ModelIndicator) -> LedgerEntry:
        """Entry for ``model`` current at the clock: tracked, cached, or backfilled."""
        key = model.key
        e = self.tracked.get(key)
        if e is not None:
            return e
        e = self.cache.pop(key, None)
        if e is not None:
            e = _advance_entry(e, self.ctx, self.config, self.clock)
        else:
            e = self.backfill(model)
        self._remember(e)
        return e

    def fetch_many(self, models: Sequence[ModelIndicator], parallel: bool = False,
                   max_workers: int | None = None) -> list[LedgerEntry]:
        if not parallel:
            return [self.fetch(mdl) for mdl in models]
        todo = [mdl for mdl in models if mdl.key not in self.tracked]
        pending = {}
        for mdl in todo:
            if mdl.key not in pending:
                pending[mdl.key] = self.cache.pop(mdl.key, None) or self.ctx.initial_entry(mdl)
        with ThreadPoolExecutor(max_workers=max_workers) as ex:
            done = list(ex.map(lambda e: _advance_entry(e, self.ctx, self.config, self.clock),
                               pending.values()))
        for e in sorted(done, key=lambda e: e.key):
            self._remember(e)
        out = []
        for mdl in models:
            e = self.tracked.get(mdl.key) or self.cache[mdl.key]
            out.append(e)
        return out

    def _remember(self, e: LedgerEntry) -> None:
        self.cache[e.key] = e
        self.cache.move_to_end(e.key)
        while len(self.cache) > self.cache_size:
            self.cache.popitem(last=False)

    def track(self, models: Iterable[ModelIndicator]) -> None:
        """Make ``models`` the tracked set; others move to the cache."""
        models = list(models)
        new = {}
        for mdl in models:
            new[mdl.key] = self.fetch(mdl)
        for key, e in self.tracked.items():
            if key not in new:
                self._remember(e)
        for key in new:
            self.cache.pop(key, None)
        self.tracked = new

    # -- time ---------------------------------------------------------------

    def advance(self, t: int) -> None:
        """Assimilate time ``t`` into every tracked model (in place)."""
        if t != self.clock + 1:
            raise ValueError(f"ledger clock is {self.clock}; cannot advance to {t}")
        if t >= self.ctx.y.size:
            raise DataError(f"no observation at time {t}")
        self.tracked = {key: _advance_entry(e, self.ctx, self.config, t) for key, e in self.tracked.items()}
        self.clock = t

    def advance_to(self, t: int) -> None:
        while self.clock < t:
            self.advance(self.clock + 1)

    def scores(self, models: Iterable[ModelIndicator] | None = None) -> dict[str, float]:
        entries = self.tracked.values() if models is None else [self.fetch(m) for m in models]
        return {e.key: e.score for e in entries}


# -- functional wrappers -----------------------------------------------------

def _advance_kind(ledger: ScoreLedger, t: int, kind: str, k: int | None = None) -> ScoreLedger:
    if ledger.config.kind != kind:
        raise ValueError(f"ledger scores {ledger.config.kind!r}, not {kind!r}")
    if k is not None and ledger.config.k != k:
        raise ValueError(f"ledger horizon is {ledger.config.k}, not {k}")
    new = ledger.copy()
    new.advance(t)
    return new


def advance_one_step(ledger: ScoreLedger, t: int) -> ScoreLedger:
    return _advance_kind(ledger, t, ONE_STEP)


def advance_kstep(ledger: ScoreLedger, t: int, k: int | None = None) -> ScoreLedger:
    return _advance_kind(ledger, t, KSTEP, k)


def advance_lpfd(ledger: ScoreLedger, t: int, k: int | None = None) -> ScoreLedger:
    return _advance_kind(ledger, t, PATH_LPFD, k)


def backfill(ledger: ScoreLedger, model: ModelIndicator, t: int | None = None) -> LedgerEntry:
    t = ledger.clock if t is None else t
    if t - ledger.start + 1 < ledger.config.k:
        raise ValueError(
            f"fit window [{ledger.start}, {t}] is shorter than the score horizon {ledger.config.k}"
        )
    if model.key in ledger.tracked:
        raise ValueError(f"model {model.key} is already tracked")
    return ledger.backfill(model, t)


def discounted_sum(increments: Sequence[float], alpha: float) -> float:
    """``sum_i alpha**(n-1-i) * increments[i]`` evaluated by the same recursion as the ledger."""
    s = 0.0
    for inc in increments:
        s = alpha * s + inc
    return s


# -- model probabilities -----------------------------------------------------

def gibbs_weights(scores, log_prior, tau: float) -> np.ndarray:
    """Normalised ``exp(log_prior + tau * score)`` with a max shift."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("empty model set")
    if not tau > 0:
        raise ValueError("tau must be positive")
    logw = np.asarray(log_prior, dtype=float) + tau * scores
    logw = logw - logw.max()
    w = np.exp(logw)
    return w / w.sum()


def _log_prior_values(prior, entries: Sequence[LedgerEntry], pool: CandidatePool) -> np.ndarray:
    if prior is None:
        return np.zeros(len(entries))
    if isinstance(prior, ModelPrior):
        return np.array([prior.log_prior(e.model, pool) for e in entries])
    vals = []
    for e in entries:
        p = prior.get(e.key)
        if p is None:
            raise ValueError(f"model {e.key} has no baseline probability")
        vals.append(math.log(p) if p > 0 else -math.inf)
    return np.array(vals)


def _entries_for(ledger: ScoreLedger, models) -> list[LedgerEntry]:
    if models is None:
        entries = list(ledger.tracked.values())
    else:
        entries = []
        for mdl in models:
            key = mdl.key if isinstance(mdl, ModelIndicator) else mdl
            if key not in ledger.tracked:
                raise ValueError(f"model {key} is not tracked by the ledger")
            entries.append(ledger.tracked[key])
    if not entries:
        raise ValueError("empty model set")
    return sorted(entries, key=lambda e: e.key)


def gibbs_probabilities(ledger: ScoreLedger, models=None, prior=None, tau: float | None = None) -> dict[str, float]:
    """Gibbs model probabilities over tracked models, keyed by bit string.

    Models with no score increment yet get probability zero, unless no model
    has one, in which case the baseline prior alone decides.
    """
    tau = ledger.config.tau if tau is None else tau
    entries = _entries_for(ledger, models)
    logp = _log_prior_values(prior, entries, ledger.pool)
    scored = np.array([e.n_increments > 0 for e in entries])
    if not scored.any():
        scored[:] = True
    scores = np.array([e.score for e in entries])
    w = gibbs_weights(scores[scored], logp[scored], tau)
    out = dict.fromkeys((e.key for e in entries), 0.0)
    for e, wi in zip((e for e, ok in zip(entries, scored) if ok), w):
        out[e.key] = float(wi)
    return out


def bma_probabilities(ledger: ScoreLedger, prior=None, alpha: float | None = None, models=None) -> dict[str, float]:
    """Discounted BMA: ``p(M|D_t) ∝ p(M|D_0)**(alpha**t) * prod_h p(y_h|M,D_{h-1})**(alpha**(t-h))``."""
    cfg = ledger.config
    if cfg.kind != ONE_STEP:
        raise ValueError("BMA probabilities need a one_step ledger")
    alpha = cfg.alpha if alpha is None else alpha
    if alpha != cfg.alpha:
        raise ValueError(f"ledger was discounted with alpha={cfg.alpha}, not {alpha}")
    entries = _entries_for(ledger, models)
    logp = _log_prior_values(prior, entries, ledger.pool)
    weight = np.array([alpha ** e.n_increments for e in entries])
    logw = weight * logp + np.array([e.score for e in entries])
    w = gibbs_weights(logw, np.zeros(len(entries)), 1.0)
    return {e.key: float(wi) for e, wi in zip(entries, w)}


def bma_recursive_step(previous: Mapping[str, float], loglik: Mapping[str, float], alpha: float) -> dict[str, float]:
    """One step of ``p(M|D_t) ∝ p(M|D_{t-1})**alpha * p(y_t|M,D_{t-1})``."""
    keys = sorted(previous)
    logw = np.array([alpha * math.log(previous[k]) + loglik[k] for k in keys])
    w = gibbs_weights(logw, np.zeros(len(keys)), 1.0)
    return {k: float(wi) for k, wi in zip(keys, w)}


class JointModelProbabilities:
    """Product-form probabilities over multivariate models (one model per series).

    Never materialises the product space except through :meth:`enumerate`.
    """

    def __init__(self, maps: Sequence[Mapping[str, float]]):
        if not maps:
            raise ValueError("need at least one series")
        self.maps = [dict(sorted(mp.items())) for mp in maps]
        for mp in self.maps:
            if not mp:
                raise ValueError("empty model map")

    def probability(self, joint: Sequence[str]) -> float:
        p = 1.0
        for mp, key in zip(self.maps, joint, strict=True):
            p *= mp.get(key, 0.0)
        return p

    def argmax(self) -> tuple[str, ...]:
        return tuple(modal_key(mp) for mp in self.maps)

    def sample(self, rng: np.random.Generator, n: int) -> list[np.ndarray]:
        """Per-series independent draws; element ``j`` holds indices into map ``j``'s sorted keys."""
        out = []
        for mp in self.maps:
            p = np.array(list(mp.values()))
            out.append(rng.choice(p.size, size=n, p=p / p.sum()))
        return out

    def enumerate(self):
        import itertools

        for combo in itertools.product(*(list(mp.items()) for mp in self.maps)):
            keys = tuple(k for k, _ in combo)
            yield keys, math.prod(p for _, p in combo)


def recouple(maps: Sequence[Mapping[str, float]]) -> JointModelProbabilities:
    return JointModelProbabilities(maps)


def modal_key(probabilities: Mapping[str, float]) -> str:
    """Argmax; ties go to fewer included predictors, then canonical bit order."""
    if not probabilities:
        raise ValueError("empty probability map")
    return min(probabilities, key=lambda k: (-probabilities[k], k.count("1"), k))
