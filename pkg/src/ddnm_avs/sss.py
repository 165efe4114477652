"""Shotgun stochastic search over one series' model space."""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .models import CandidatePool, ModelIndicator, neighborhood, pad_model
from .scoring import LedgerEntry, ModelPrior, ScoreLedger, gibbs_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SssConfig:
    """Search budget per series and time step.

    ``avoid_revisits`` keeps the seed walk from returning to a model that has
    already served as a seed while unvisited neighbours remain.
    """

    iterations: int = 5
    max_tracked: int = 100
    rng_stream: int = 0
    parallel_eval: bool = False
    avoid_revisits: bool = True
    max_workers: int | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.max_tracked < 1:
            raise ValueError("max_tracked must be >= 1")


@dataclass(frozen=True)
class SearchResult:
    tracked: tuple[tuple[ModelIndicator, float], ...]
    visited_count: int
    seed_trajectory: tuple[ModelIndicator, ...]

    @property
    def models(self) -> list[ModelIndicator]:
        return [m for m, _ in self.tracked]


def stream(seed: int, *key) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``; keys may be ints or strings."""
    spawn = tuple(k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in key)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn))


def _rank(item):
    model, score = item
    return (-score, model.size, model.key)


def _sample_index(weights: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(weights)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(weights) - 1))


def run_sss(
    seed_model: ModelIndicator,
    ledger: ScoreLedger,
    config: SssConfig = SssConfig(),
    rng: np.random.Generator | None = None,
    tau: float | None = None,
    prior: ModelPrior | None = None,
    initial: Iterable[ModelIndicator] | None = None,
) -> SearchResult:
    """Search around ``seed_model`` using scores current at ``ledger.clock``.

    The running list starts from ``initial`` (default: the ledger's tracked
    models) plus the seed.  Each iteration scores the seed's whole
    neighbourhood, merges it into the list, and samples the next seed from the
    neighbourhood with Gibbs weights.  The ledger's cache is updated as a side
    effect; its tracked set is left alone.
    """
    pool = ledger.pool
    pool.validate(seed_model)
    tau = ledger.config.tau if tau is None else tau
    prior = prior or ModelPrior()
    rng = rng if rng is not None else stream(config.rng_stream, pool.series_index, ledger.clock, "sss")
    initial = ledger.models() if initial is None else list(initial)

    running: dict[str, tuple[ModelIndicator, float]] = {}
    visited: set[str] = set()

    def merge(entries: list[LedgerEntry]):
        for e in entries:
            visited.add(e.key)
            running[e.key] = (e.model, e.score)

    merge(ledger.fetch_many(sorted(set(initial) | {seed_model}), parallel=config.parallel_eval,
                            max_workers=config.max_workers))
    seed = seed_model
    trajectory = [seed]
    used = {seed.key}
    for _ in range(config.iterations):
        nb = sorted(set(neighborhood(seed, pool).all()))
        if not nb:
            break
        entries = ledger.fetch_many(nb, parallel=config.parallel_eval, max_workers=config.max_workers)
        merge(entries)
        candidates = entries
        if config.avoid_revisits:
            fresh = [e for e in entries if e.key not in used]
            candidates = fresh or entries
        w = gibbs_weights([e.score for e in candidates],
                          [prior.log_prior(e.model, pool) for e in candidates], tau)
        seed = candidates[_sample_index(w, rng)].model
        used.add(seed.key)
        trajectory.append(seed)

    ranked = sorted(running.values(), key=_rank)
    keep = ranked[: config.max_tracked]
    if seed_model.key not in {m.key for m, _ in keep}:
        keep = ranked[: config.max_tracked - 1] + [running[seed_model.key]]
        keep.sort(key=_rank)
    return SearchResult(tuple(keep), len(visited), tuple(trajectory))


def seed_from_representative(
    prev: ModelIndicator | None,
    pool: CandidatePool,
    prev_pool: CandidatePool | None = None,
    run_log: list | None = None,
) -> ModelIndicator:
    """Seed for the next search: the previous representative when it still fits the pool.

    A representative from an older pool is carried over when the pool only
    gained entries; otherwise the forced-only model is used and the event is
    logged.
    """
    if prev is None:
        return pool.forced_model()
    if prev_pool is not None and prev_pool != pool:
        padded = pad_model(prev, prev_pool, pool)
        if padded is not None and pool.is_valid(padded):
            _note(run_log, "pool_extended", pool, f"representative {prev.key} padded to {padded.key}")
            return padded
    elif pool.is_valid(prev):
        return prev
    _note(run_log, "seed_degraded", pool, f"representative {prev.key} incompatible with pool; "
          "restarting from forced-only model")
    return pool.forced_model()


def _note(run_log, event, pool, message):
    log.info("series %d: %s", pool.series_index, message)
    if run_log is not None:
        run_log.append({"event": event, "series": pool.series_index, "message": message})
