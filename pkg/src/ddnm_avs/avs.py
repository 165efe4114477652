"""Adaptive variable selection loop and the discounted-BMA baseline."""
from __future__ import annotations

import itertools
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import DataError, SeriesPanel
from .dlm import DlmDiscounts
from .forecast import (
    DEFAULT_QUANTILES,
    DdnmState,
    ForecastSummary,
    SeriesState,
    forecast_paths,
    joint_one_step_logdensity,
    mc_path_logdensity,
    simulate_paths,
    summarize,
)
from .models import CandidatePool, ModelIndicator
from .scoring import (
    KSTEP,
    ONE_STEP,
    PATH_LPFD,
    ModelPrior,
    PriorSpec,
    ScoreConfig,
    ScoreLedger,
    bma_probabilities,
    gibbs_probabilities,
    modal_key,
)
from .sss import SssConfig, run_sss, stream

log = logging.getLogger(__name__)

THREADS_ENV = "DDNM_AVS_THREADS"
GIBBS = "gibbs"
BMA = "bma"
SEARCH_MODES = ("sss", "exhaustive", "fixed")
EXHAUSTIVE_LIMIT = 4096


class ConfigError(ValueError):
    """Inconsistent run configuration, detected before any computation."""


@dataclass(frozen=True)
class EngineConfig:
    """How models are searched, scored and weighted.

    ``search='exhaustive'`` tracks every model in the pool (small pools only);
    ``'fixed'`` keeps the initially tracked models.  ``avs_every=n`` runs the
    search and reweighting only every ``n``-th step; in between, forecasts
    come from the representative model alone.
    """

    score: ScoreConfig = ScoreConfig()
    sss: SssConfig = SssConfig()
    discounts: tuple[DlmDiscounts, ...] | DlmDiscounts = DlmDiscounts()
    prior: PriorSpec = PriorSpec()
    model_prior: ModelPrior = ModelPrior()
    weighting: str = GIBBS
    search: str = "sss"
    avs_every: int = 1
    seed: int = 0
    cache_size: int = 5000

    def __post_init__(self):
        if self.weighting not in (GIBBS, BMA):
            raise ConfigError(f"weighting must be 'gibbs' or 'bma', got {self.weighting!r}")
        if self.weighting == BMA and (self.score.kind != ONE_STEP or self.score.tau != 1.0):
            raise ConfigError("BMA weighting needs one_step scores with tau = 1")
        if self.search not in SEARCH_MODES:
            raise ConfigError(f"search must be one of {SEARCH_MODES}, got {self.search!r}")
        if int(self.avs_every) != self.avs_every or self.avs_every < 1:
            raise ConfigError("avs_every must be a positive integer")

    def discounts_for(self, j: int) -> DlmDiscounts:
        if isinstance(self.discounts, DlmDiscounts):
            return self.discounts
        return self.discounts[j]


@dataclass(frozen=True)
class ForecastRequest:
    """What to emit at each evaluation step.

    ``goal`` picks the log density reported per origin: the 1-step joint
    density, the marginal density of ``y_{origin+horizon}``, or the density
    of the whole path ``y_{origin+1..origin+horizon}``.
    """

    horizon: int = 1
    mc_samples: int = 5000
    goal: str = KSTEP
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES
    paths: bool = True

    def __post_init__(self):
        if self.horizon < 1 or self.mc_samples < 1:
            raise ConfigError("forecast horizon and mc_samples must be positive")
        if self.goal not in (ONE_STEP, KSTEP, PATH_LPFD):
            raise ConfigError(f"unknown forecast goal {self.goal!r}")


@dataclass(frozen=True)
class RepresentativeModel:
    models: tuple[ModelIndicator, ...]

    @property
    def keys(self) -> tuple[str, ...]:
        return tuple(m.key for m in self.models)

    def __getitem__(self, j: int) -> ModelIndicator:
        return self.models[j]

    def __len__(self) -> int:
        return len(self.models)


def select_representative(maps: Sequence[Mapping[str, float]]) -> RepresentativeModel:
    """Per-series modal model; by the product form this is also the joint mode."""
    if not maps:
        raise ValueError("need at least one probability map")
    return RepresentativeModel(tuple(ModelIndicator.from_key(modal_key(mp)) for mp in maps))


def all_models(pool: CandidatePool, limit: int = EXHAUSTIVE_LIMIT) -> list[ModelIndicator]:
    """Every valid model of ``pool`` in canonical order."""
    free = pool.free
    room = pool.size_cap - len(pool.forced)
    count = sum(math.comb(len(free), q) for q in range(min(room, len(free)) + 1))
    if count > limit:
        raise ConfigError(f"pool for series {pool.series_index} has {count} models; "
                          f"exhaustive tracking is limited to {limit}")
    out = []
    for q in range(min(room, len(free)) + 1):
        for inc in itertools.combinations(free, q):
            out.append(ModelIndicator.from_indices(pool.p, pool.forced + inc))
    return sorted(out)


def model_count(pool: CandidatePool) -> int:
    room = pool.size_cap - len(pool.forced)
    return sum(math.comb(len(pool.free), q) for q in range(min(room, len(pool.free)) + 1))


@dataclass(frozen=True, eq=False)
class AvsRunState:
    clock: int
    pools: tuple[CandidatePool, ...]
    ledgers: tuple[ScoreLedger, ...]
    representative: RepresentativeModel
    config: EngineConfig
    first_step: int
    run_log: tuple = ()

    def is_active(self, t: int) -> bool:
        return (t - self.first_step) % self.config.avs_every == 0

    @property
    def m(self) -> int:
        return len(self.pools)


@dataclass(frozen=True, eq=False)
class StepOutput:
    t: int
    active: bool
    maps: tuple[dict, ...]
    representative: RepresentativeModel
    one_step_logdensity: float | None = None
    goal_logdensity: float | None = None
    goal_se: float | None = None
    summary: ForecastSummary | None = None


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def _per_series(fn: Callable[[int], object], m: int) -> list:
    n = min(_threads(), m)
    if n <= 1:
        return [fn(j) for j in range(m)]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, range(m)))


def _weights(ledger: ScoreLedger, cfg: EngineConfig) -> dict[str, float]:
    if cfg.weighting == BMA:
        return bma_probabilities(ledger, prior=cfg.model_prior)
    return gibbs_probabilities(ledger, prior=cfg.model_prior)


def init_run(panel: SeriesPanel, pools: Sequence[CandidatePool], config: EngineConfig,
             first_step: int | None = None) -> AvsRunState:
    """Build ledgers, bring them to a common clock and pick the first representative."""
    pools = tuple(pools)
    if len(pools) != len(panel.names):
        raise ConfigError(f"{len(pools)} pools for {len(panel.names)} series")
    if not isinstance(config.discounts, DlmDiscounts) and len(config.discounts) != len(pools):
        raise ConfigError("need one set of discount factors per series")
    ledgers = []
    for j, pool in enumerate(pools):
        if pool.series_index != j:
            raise ConfigError(f"pool {j} is built for series {pool.series_index}")
        if config.search == "exhaustive":
            models = all_models(pool)
        else:
            models = [pool.forced_model()]
        ledgers.append(ScoreLedger.create(pool, panel, config.score, config.discounts_for(j),
                                          config.prior, models, config.cache_size))
    start = max(L.start for L in ledgers)
    first = start if first_step is None else first_step
    if first < start:
        raise ConfigError(f"first step {first} precedes the earliest usable time {start}")
    for L in ledgers:
        L.advance_to(first - 1)
    rep = select_representative([_weights(L, config) for L in ledgers])
    return AvsRunState(first - 1, pools, tuple(ledgers), rep, config, first)


def _series_states(run: AvsRunState, ledgers, maps) -> list[SeriesState]:
    out = []
    for j, (L, mp) in enumerate(zip(ledgers, maps)):
        keys = [k for k in sorted(mp) if mp[k] > 0]
        out.append(SeriesState(
            run.pools[j],
            tuple(ModelIndicator.from_key(k) for k in keys),
            tuple(L.tracked[k].posterior for k in keys),
            np.array([mp[k] for k in keys]),
            run.config.discounts_for(j),
        ))
    return out


def _exog_horizon(panel: SeriesPanel, pools, origin: int, K: int) -> int:
    names = {n for p in pools for n in p.exog_names}
    h = K
    for name in names:
        col = panel.exog[name]
        avail = 0
        while avail < h and origin + avail + 1 < col.size and math.isfinite(col[origin + avail + 1]):
            avail += 1
        h = min(h, avail)
    return h


def _forecast(run, ledgers, maps, panel, t, request: ForecastRequest):
    origin = t - 1
    state = DdnmState.from_panel(panel, origin, _series_states(run, ledgers, maps))
    seed = run.config.seed
    one = None
    if t < panel.T:
        one = joint_one_step_logdensity(state, panel.values[t])
    K = request.horizon
    K_eff = _exog_horizon(panel, run.pools, origin, K)
    complete = origin + K < panel.T
    goal = se = None
    if request.goal == ONE_STEP or K == 1:
        goal, se = one, (0.0 if one is not None else None)
    summary = None
    target = None
    if request.goal == KSTEP and K > 1 and complete and K_eff == K:
        target = panel.values[origin + K]
    if request.paths or target is not None:
        if K_eff < 1:
            raise DataError(f"no future exogenous values after time {origin}")
        paths, tl = forecast_paths(state, K_eff, request.mc_samples,
                                   stream(seed, t, "paths"), target=target)
        if tl is not None:
            goal, se = tl
        if request.paths:
            summary = summarize(paths, request.quantiles)
    if request.goal == PATH_LPFD and K > 1 and complete and K_eff == K:
        goal, se = mc_path_logdensity(state, panel.values[origin + 1: origin + K + 1],
                                      request.mc_samples, stream(seed, t, "path_density"))
    return one, goal, se, summary


def avs_step(run: AvsRunState, panel: SeriesPanel, t: int,
             request: ForecastRequest | None = None) -> tuple[AvsRunState, StepOutput]:
    """One pass of search, weighting, forecasting, assimilation and selection.

    The input state is never modified; on error nothing has changed.
    """
    if t != run.clock + 1:
        raise ValueError(f"run clock is {run.clock}; next step must be {run.clock + 1}, got {t}")
    cfg = run.config
    ledgers = [L.copy() for L in run.ledgers]
    active = run.is_active(t)

    def search(j):
        L = ledgers[j]
        if active and cfg.search == "sss":
            seed_model = run.representative[j]
            res = run_sss(seed_model, L, cfg.sss, rng=stream(cfg.seed, j, t, "sss"),
                          prior=cfg.model_prior)
            L.track(res.models)
        if active:
            return _weights(L, cfg)
        return {run.representative[j].key: 1.0}

    maps = tuple(_per_series(search, run.m))
    one = goal = se = summary = None
    if request is not None:
        one, goal, se, summary = _forecast(run, ledgers, maps, panel, t, request)

    def assimilate(j):
        ledgers[j].advance(t)
        return _weights(ledgers[j], cfg) if active else None

    post = _per_series(assimilate, run.m)
    rep = select_representative(post) if active else run.representative
    new = replace(run, clock=t, ledgers=tuple(ledgers), representative=rep,
                  run_log=run.run_log)
    return new, StepOutput(t, active, maps, rep, one, goal, se, summary)


# -- backtests -----------------------------------------------------------------

@dataclass
class MethodOutput:
    """Everything one method emits over an evaluation range (times are row indices)."""

    method: str
    pools: tuple[CandidatePool, ...]
    steps: list[StepOutput] = field(default_factory=list)
    run_log: list = field(default_factory=list)

    def representatives(self) -> list[tuple[int, RepresentativeModel]]:
        return [(s.t, s.representative) for s in self.steps]


def bma_config(cfg: EngineConfig, pools: Sequence[CandidatePool],
               exhaustive_limit: int = 256) -> EngineConfig:
    """Baseline configuration: one-step scores, tau = 1, discounted BMA weights, every step."""
    small = all(model_count(p) <= exhaustive_limit for p in pools)
    score = ScoreConfig(ONE_STEP, 1, cfg.score.alpha, 1.0, cfg.score.window_start, cfg.score.history_cap)
    return replace(cfg, score=score, weighting=BMA, search="exhaustive" if small else "sss", avs_every=1)


def run_backtest(
    panel: SeriesPanel,
    pools: Sequence[CandidatePool],
    config: EngineConfig,
    request: ForecastRequest,
    training_length: int,
    eval_end: int | None = None,
    method: str = "avs",
    progress: Callable[[int], None] | None = None,
) -> MethodOutput:
    """Step through ``[first usable time, eval_end)``, emitting forecasts from ``training_length`` on."""
    eval_end = panel.T if eval_end is None else eval_end
    if not 0 < training_length < eval_end <= panel.T:
        raise ConfigError(f"need 0 < training_length ({training_length}) < evaluation end "
                          f"({eval_end}) <= panel length ({panel.T})")
    run = init_run(panel, pools, config)
    if run.first_step > training_length:
        raise ConfigError(f"training length {training_length} is shorter than the first usable "
                          f"time {run.first_step} implied by the lags")
    out = MethodOutput(method, tuple(pools))
    for t in range(run.first_step, eval_end):
        emit = request if t >= training_length else None
        run, step = avs_step(run, panel, t, emit)
        if emit is not None:
            out.steps.append(step)
        if progress is not None:
            progress(t)
    out.run_log = list(run.run_log)
    return out
