"""Univariate discount DLM with normal-gamma conjugate filtering.

Coefficients ``theta`` and precision ``lambda`` follow random walks governed by
a state discount ``delta`` and a volatility discount ``beta``.  Scale matrices
``C`` and ``R`` are kept on the data scale, so the one-step forecast of
``y = F'theta + nu`` is Student-T with dof ``r``, location ``F'a`` and scale
``s + F'RF``.

The public functions take and return small frozen containers.  The underscore
wrappers call the compiled kernels that the scoring code also uses, so a
model fitted through either route goes through identical floating-point
operations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import _kernels as _k

Q_FLOOR = _k.Q_FLOOR
LOG_PI = _k.LOG_PI


def _frozen_vector(x) -> np.ndarray:
    v = np.array(x, dtype=float, ndmin=1)
    if v.ndim != 1:
        raise ValueError(f"expected a vector, got shape {v.shape}")
    v.setflags(write=False)
    return v


def _frozen_matrix(x, dim: int) -> np.ndarray:
    M = np.array(x, dtype=float, ndmin=2)
    if M.shape != (dim, dim):
        raise ValueError(f"expected a {dim}x{dim} matrix, got shape {M.shape}")
    M.setflags(write=False)
    return M


@dataclass(frozen=True)
class DlmDiscounts:
    delta: float = 0.98
    beta: float = 0.98

    def __post_init__(self):
        for name in ("delta", "beta"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")


@dataclass(frozen=True, eq=False)
class DlmPosterior:
    """Normal-gamma posterior ``(m, C, n, s)`` at a single time."""

    m: np.ndarray
    C: np.ndarray
    n: float
    s: float

    def __post_init__(self):
        m = _frozen_vector(self.m)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "C", _frozen_matrix(self.C, m.size))
        object.__setattr__(self, "n", float(self.n))
        object.__setattr__(self, "s", float(self.s))
        if not self.n > 0 or not self.s > 0:
            raise ValueError(f"n and s must be positive (n={self.n}, s={self.s})")

    @property
    def dim(self) -> int:
        return self.m.size


@dataclass(frozen=True, eq=False)
class DlmPrior:
    """Evolved prior ``(a, R, r, s)``; ``s`` is carried over from the posterior."""

    a: np.ndarray
    R: np.ndarray
    r: float
    s: float

    def __post_init__(self):
        a = _frozen_vector(self.a)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "R", _frozen_matrix(self.R, a.size))
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "s", float(self.s))
        if not self.r > 0 or not self.s > 0:
            raise ValueError(f"r and s must be positive (r={self.r}, s={self.s})")

    @property
    def dim(self) -> int:
        return self.a.size


@dataclass(frozen=True)
class StudentTForecast:
    dof: float
    location: float
    scale: float

    def __post_init__(self):
        if not self.dof > 0 or not self.scale > 0:
            raise ValueError(f"dof and scale must be positive ({self})")

    @property
    def variance(self) -> float:
        if self.dof <= 2:
            return math.inf
        return self.scale * self.dof / (self.dof - 2.0)


# -- array kernels -----------------------------------------------------------

def _evolve(m, C, n, delta, beta, k=1):
    R, r = _k.evolve(C, float(n), float(delta), float(beta), int(k))
    return m, R, r


def _forecast(a, R, s, F):
    f, q, RF = _k.forecast(a, R, float(s), F)
    return f, q, RF


def _logt(y, dof, loc, scale):
    return _k.logt(float(y), float(dof), float(loc), float(scale))


def _update(a, R, r, s, y, f, q, RF):
    return _k.update(a, R, float(r), float(s), float(y), f, q, RF)


def logt_array(y, dof, loc, scale):
    """Vectorised Student-T log density (same parametrisation as ``log_predictive``)."""
    y, dof, loc, scale = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (y, dof, loc, scale)))
    z2 = (y - loc) ** 2 / scale
    return (
        gammaln(0.5 * (dof + 1.0))
        - gammaln(0.5 * dof)
        - 0.5 * (np.log(dof * scale) + LOG_PI)
        - 0.5 * (dof + 1.0) * np.log1p(z2 / dof)
    )


# -- public operations ---------------------------------------------------------

def evolve(post: DlmPosterior, disc: DlmDiscounts) -> DlmPrior:
    a, R, r = _evolve(post.m, post.C, post.n, disc.delta, disc.beta)
    return DlmPrior(a, R, r, post.s)


def evolve_k(post: DlmPosterior, disc: DlmDiscounts, k: int) -> DlmPrior:
    """Evolve ``k`` steps with no intervening observations.

    Discounting compounds: ``R = C / delta**k`` and ``r = beta**k * n``.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    a, R, r = _evolve(post.m, post.C, post.n, disc.delta, disc.beta, int(k))
    return DlmPrior(a, R, r, post.s)


def _check_regressor(F, dim: int) -> np.ndarray:
    F = np.asarray(F, dtype=float).reshape(-1)
    if F.size != dim:
        raise ValueError(f"regressor has length {F.size}, state has dimension {dim}")
    return F


def one_step_forecast(prior: DlmPrior, F) -> StudentTForecast:
    F = _check_regressor(F, prior.dim)
    f, q, _ = _forecast(prior.a, prior.R, prior.s, F)
    return StudentTForecast(prior.r, f, q)


def log_predictive(f: StudentTForecast, y: float) -> float:
    return _logt(float(y), f.dof, f.location, f.scale)


def update(prior: DlmPrior, F, y: float) -> DlmPosterior:
    F = _check_regressor(F, prior.dim)
    y = float(y)
    if not math.isfinite(y):
        raise ValueError(f"observation must be finite, got {y}")
    f, q, RF = _forecast(prior.a, prior.R, prior.s, F)
    m, C, n, s = _update(prior.a, prior.R, prior.r, prior.s, y, f, q, RF)
    return DlmPosterior(m, C, n, s)


def kstep_forecast(post: DlmPosterior, disc: DlmDiscounts, F, k: int) -> StudentTForecast:
    """Plug-in k-step marginal forecast: ``evolve_k`` followed by the T forecast."""
    return one_step_forecast(evolve_k(post, disc, k), F)


def default_prior(
    X: np.ndarray,
    y: np.ndarray,
    intercept: np.ndarray,
    *,
    g: float = 1.0,
    n0: float = 10.0,
) -> DlmPosterior:
    """Unit-information style starting posterior from a calibration window.

    ``X`` holds the included regressor columns over the window and ``y`` the
    response.  Coefficient means are zero; the intercept gets scale ``g*s0``
    and any other predictor ``g*s0/var(x)``, with ``s0`` the sample variance
    of ``y``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    intercept = np.asarray(intercept, dtype=bool)
    p = X.shape[1]
    s0 = float(np.var(y, ddof=1)) if y.size > 1 else 1.0
    if not s0 > 0 or not math.isfinite(s0):
        s0 = 1.0
    scales = np.empty(p)
    for i in range(p):
        if intercept[i]:
            scales[i] = g * s0
            continue
        v = float(np.var(X[:, i], ddof=1)) if X.shape[0] > 1 else 0.0
        if not v > 0 or not math.isfinite(v):
            v = 1.0
        scales[i] = g * s0 / v
    return DlmPosterior(np.zeros(p), np.diag(scales), n0, s0)
