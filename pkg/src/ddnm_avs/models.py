"""Candidate predictor pools, model indicators and search neighbourhoods."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .data import DataError, SeriesPanel

INTERCEPT = "intercept"
LAG = "lag"
PARENT = "parent"
EXOG = "exog"


class Predictor(NamedTuple):
    kind: str
    source: int = -1
    lag: int = 0
    name: str = ""

    def label(self, series_names: Sequence[str] | None = None) -> str:
        def src():
            if series_names is not None and 0 <= self.source < len(series_names):
                return series_names[self.source]
            return f"y{self.source}"

        if self.kind == INTERCEPT:
            return "intercept"
        if self.kind == LAG:
            return f"{src()}_lag{self.lag}"
        if self.kind == PARENT:
            return f"{src()}_parent"
        return self.name


def intercept() -> Predictor:
    return Predictor(INTERCEPT)


def lag(source: int, lag_: int) -> Predictor:
    if lag_ < 1:
        raise ValueError(f"lag must be >= 1, got {lag_}")
    return Predictor(LAG, source, lag_)


def parent(source: int) -> Predictor:
    return Predictor(PARENT, source)


def exogenous(name: str) -> Predictor:
    return Predictor(EXOG, name=name)


@dataclass(frozen=True, order=True)
class ModelIndicator:
    """Inclusion bits over a pool; ordering is the canonical bit-string order."""

    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise ValueError(f"bits must be 0/1, got {self.bits}")
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "_key", "".join(map(str, bits)))
        object.__setattr__(self, "_included", tuple(i for i, b in enumerate(bits) if b))

    @classmethod
    def from_key(cls, key: str) -> "ModelIndicator":
        return cls(tuple(int(c) for c in key))

    @classmethod
    def from_indices(cls, p: int, included: Iterable[int]) -> "ModelIndicator":
        bits = [0] * p
        for i in included:
            bits[i] = 1
        return cls(tuple(bits))

    @property
    def key(self) -> str:
        return self._key

    @property
    def included(self) -> tuple[int, ...]:
        return self._included

    @property
    def size(self) -> int:
        return len(self._included)

    def __len__(self) -> int:
        return len(self.bits)

    def __str__(self) -> str:
        return self.key


@dataclass(frozen=True)
class CandidatePool:
    """Ordered predictor pool for one series.

    ``forced`` lists entry positions that every model includes; they never
    take part in add/drop/swap moves.  ``max_size`` caps the number of
    included entries (forced ones count).
    """

    series_index: int
    entries: tuple[Predictor, ...]
    forced: tuple[int, ...] = (0,)
    max_size: int | None = None

    def __post_init__(self):
        entries = tuple(Predictor(*e) for e in self.entries)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "forced", tuple(sorted(set(self.forced))))
        if not entries:
            raise ValueError("a candidate pool needs at least one entry")
        if len(set(entries)) != len(entries):
            raise ValueError("duplicate entries in candidate pool")
        for e in entries:
            if e.kind not in (INTERCEPT, LAG, PARENT, EXOG):
                raise ValueError(f"unknown predictor kind {e.kind!r}")
            if e.kind == PARENT and e.source <= self.series_index:
                raise ValueError(
                    f"series {self.series_index} cannot take series {e.source} as a parent; "
                    "parents must come later in the series order"
                )
            if e.kind == LAG and (e.lag < 1 or e.source < 0):
                raise ValueError(f"invalid lag entry {e}")
            if e.kind == EXOG and not e.name:
                raise ValueError("exogenous entries need a column name")
        if any(not 0 <= i < len(entries) for i in self.forced):
            raise ValueError(f"forced positions {self.forced} out of range")
        if self.max_size is not None and self.max_size < len(self.forced):
            raise ValueError("max_size is smaller than the forced set")

    @classmethod
    def build(
        cls,
        series_index: int,
        m: int,
        lags: Mapping[int, Sequence[int]] | Sequence[int] = (),
        parents: bool | Sequence[int] = True,
        exog: Sequence[str] = (),
        include_intercept: bool = True,
        force_intercept: bool = True,
        max_size: int | None = None,
    ) -> "CandidatePool":
        """Assemble a pool: intercept, lags per source series, parents, exogenous.

        ``lags`` is either one lag list used for every series or a mapping
        ``source -> lag list``.  ``parents=True`` admits every later series.
        """
        if isinstance(lags, Mapping):
            lag_map = {int(s): list(v) for s, v in lags.items()}
        else:
            lag_map = {s: list(lags) for s in range(m)}
        entries = []
        if include_intercept:
            entries.append(intercept())
        for s in sorted(lag_map):
            entries.extend(lag(s, l) for l in lag_map[s])
        if parents is True:
            parent_list = list(range(series_index + 1, m))
        elif parents is False:
            parent_list = []
        else:
            parent_list = list(parents)
        entries.extend(parent(s) for s in parent_list)
        entries.extend(exogenous(n) for n in exog)
        forced = (0,) if include_intercept and force_intercept else ()
        return cls(series_index, tuple(entries), forced, max_size)

    @property
    def p(self) -> int:
        return len(self.entries)

    @property
    def free(self) -> tuple[int, ...]:
        forced = set(self.forced)
        return tuple(i for i in range(self.p) if i not in forced)

    @property
    def max_lag(self) -> int:
        return max((e.lag for e in self.entries if e.kind == LAG), default=0)

    @property
    def exog_names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries if e.kind == EXOG)

    @property
    def size_cap(self) -> int:
        return self.p if self.max_size is None else self.max_size

    def labels(self, series_names: Sequence[str] | None = None) -> list[str]:
        return [e.label(series_names) for e in self.entries]

    def is_intercept(self) -> np.ndarray:
        return np.array([e.kind == INTERCEPT for e in self.entries])

    def forced_model(self) -> ModelIndicator:
        return ModelIndicator.from_indices(self.p, self.forced)

    def validate(self, model: ModelIndicator) -> None:
        if len(model) != self.p:
            raise ValueError(f"model has {len(model)} bits, pool has {self.p} entries")
        if any(model.bits[i] == 0 for i in self.forced):
            raise ValueError(f"model {model.key} drops a forced entry")
        if model.size > self.size_cap:
            raise ValueError(f"model {model.key} exceeds the size cap {self.size_cap}")

    def is_valid(self, model: ModelIndicator) -> bool:
        try:
            self.validate(model)
        except ValueError:
            return False
        return True


class Neighborhood(NamedTuple):
    added: list[ModelIndicator]
    swapped: list[ModelIndicator]
    dropped: list[ModelIndicator]

    def all(self) -> list[ModelIndicator]:
        return [*self.added, *self.swapped, *self.dropped]


def neighborhood(model: ModelIndicator, pool: CandidatePool) -> Neighborhood:
    """Add-one, swap-one and drop-one moves over the pool's free entries."""
    pool.validate(model)
    bits = list(model.bits)
    free = pool.free
    ins = [i for i in free if bits[i]]
    outs = [i for i in free if not bits[i]]

    def flip(*idx):
        b = bits.copy()
        for i in idx:
            b[i] = 1 - b[i]
        return ModelIndicator(tuple(b))

    added = [flip(i) for i in outs] if model.size < pool.size_cap else []
    dropped = [flip(i) for i in ins]
    swapped = [flip(i, o) for i in ins for o in outs]
    return Neighborhood(added, swapped, dropped)


def design_matrix(pool: CandidatePool, panel: SeriesPanel, T: int | None = None) -> np.ndarray:
    """``T x p`` matrix of every pool entry's value at every time (NaN when unavailable)."""
    T = panel.T if T is None else T
    X = np.full((T, pool.p), np.nan)
    Y = panel.values
    for i, e in enumerate(pool.entries):
        if e.kind == INTERCEPT:
            X[:, i] = 1.0
        elif e.kind == LAG:
            if e.lag < T:
                X[e.lag:, i] = Y[: T - e.lag, e.source]
        elif e.kind == PARENT:
            X[:, i] = Y[:T, e.source]
        else:
            col = panel.exog.get(e.name)
            if col is None:
                raise DataError(f"exogenous column {e.name!r} not in panel")
            n = min(T, col.size)
            X[:n, i] = col[:n]
    return X


def design_vector(pool: CandidatePool, model: ModelIndicator, panel: SeriesPanel, t: int) -> np.ndarray:
    """Included entries' values at time ``t`` in pool order."""
    F = np.empty(model.size)
    Y = panel.values
    for j, i in enumerate(model.included):
        e = pool.entries[i]
        if e.kind == INTERCEPT:
            F[j] = 1.0
        elif e.kind == LAG:
            if t - e.lag < 0:
                raise DataError(f"lag {e.lag} of series {e.source} unavailable at time {t}")
            F[j] = Y[t - e.lag, e.source]
        elif e.kind == PARENT:
            if t >= panel.T:
                raise DataError(f"parent series {e.source} unobserved at time {t}")
            F[j] = Y[t, e.source]
        else:
            F[j] = panel.exog_value(e.name, t)
    return F


def missing_inputs(pool: CandidatePool, panel: SeriesPanel, t: int) -> list[str]:
    """Reasons the pool cannot be evaluated at ``t``; empty when available."""
    reasons = []
    if pool.max_lag and t <= pool.max_lag:
        reasons.append(f"time {t} does not exceed max lag {pool.max_lag}")
    for name in pool.exog_names:
        col = panel.exog.get(name)
        if col is None or t >= col.size or not np.isfinite(col[t]):
            reasons.append(f"exogenous column {name!r} has no value at time {t}")
    return reasons


def availability(pool: CandidatePool, panel: SeriesPanel, t: int) -> bool:
    return not missing_inputs(pool, panel, t)


def first_available(pool: CandidatePool, panel: SeriesPanel, start: int = 0) -> int:
    t = max(start, pool.max_lag + 1 if pool.max_lag else 0)
    while t < panel.T and not availability(pool, panel, t):
        t += 1
    if t >= panel.T:
        raise DataError(f"pool for series {pool.series_index} is never available in the panel")
    return t


def pad_model(model: ModelIndicator, old: CandidatePool, new: CandidatePool) -> ModelIndicator | None:
    """Carry a model onto a pool that extends ``old``; ``None`` if entries were removed."""
    pos = {e: i for i, e in enumerate(new.entries)}
    bits = [0] * new.p
    for i in model.included:
        j = pos.get(old.entries[i])
        if j is None:
            return None
        bits[j] = 1
    for i in new.forced:
        bits[i] = 1
    return ModelIndicator(tuple(bits))
