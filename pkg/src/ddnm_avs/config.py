"""Run configuration: a YAML document mapped onto nested dataclasses.

Every section is optional; unknown keys are rejected so typos fail early.
``RunConfig.to_dict`` produces a plain mapping that re-parses to an equal
configuration (it is what ``meta.json`` echoes).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .avs import GIBBS, SEARCH_MODES, ConfigError, EngineConfig, ForecastRequest
from .data import (
    CoefficientPath,
    DataError,
    PanelSchema,
    SeriesPanel,
    SyntheticConfig,
    generate_macro_standin,
    generate_synthetic,
    load_future_exog,
    load_panel,
)
from .dlm import DlmDiscounts
from .forecast import DEFAULT_QUANTILES
from .models import CandidatePool
from .scoring import KSTEP, ModelPrior, PriorSpec, ScoreConfig
from .sss import SssConfig

MODES = ("avs", "bma", "both")
SOURCES = ("synthetic", "file", "macro_standin")


@dataclass(frozen=True)
class DataSpec:
    source: str = "synthetic"
    path: str | None = None
    time_column: str = "time"
    series: tuple[str, ...] = ()
    exog: tuple[str, ...] = ()
    future_exog: str | None = None
    delimiter: str = ","


@dataclass(frozen=True)
class SyntheticSpec:
    T_total: int = 130
    c: float = 0.5
    theta1: dict = field(default_factory=lambda: dataclasses.asdict(SyntheticConfig().theta1))
    theta2: dict = field(default_factory=lambda: dataclasses.asdict(SyntheticConfig().theta2))
    obs_noise_sd: float = 0.25
    seed: int = 0

    def __post_init__(self):
        for name in ("theta1", "theta2"):
            d = dict(getattr(self, name))
            try:
                path = dataclasses.asdict(CoefficientPath(**{k: v for k, v in d.items() if k != "breaks"}))
            except TypeError as err:
                raise ConfigError(f"synthetic.{name}: {err}") from None
            path["breaks"] = [[int(t0), float(j)] for t0, j in d.get("breaks", ())]
            object.__setattr__(self, name, path)

    def build(self) -> SyntheticConfig:
        def path(d):
            d = dict(d)
            d["breaks"] = tuple(tuple(b) for b in d.get("breaks", ()))
            return CoefficientPath(**d)

        return SyntheticConfig(self.T_total, self.c, path(self.theta1), path(self.theta2),
                               self.obs_noise_sd, self.seed)


@dataclass(frozen=True)
class PoolSpec:
    """``lags`` is one list for every source series or a mapping ``series name -> lags``."""

    lags: Any = ()
    parents: Any = True
    exog: tuple[str, ...] = ()
    intercept: bool = True
    force_intercept: bool = True
    max_size: int | None = None


@dataclass(frozen=True)
class DlmSpec:
    delta: float = 0.98
    beta: float = 0.98
    n0: float = 10.0
    g: float = 1.0
    calibration_length: int = 30


@dataclass(frozen=True)
class ScoreSpec:
    kind: str = KSTEP
    k: int = 1
    alpha: float = 0.98
    tau: float | None = None
    window_start: int = 0


@dataclass(frozen=True)
class SearchSpec:
    method: str = "sss"
    iterations: int = 5
    max_tracked: int = 100
    parallel_eval: bool = False
    avoid_revisits: bool = True
    cache_size: int = 5000


@dataclass(frozen=True)
class ModelPriorSpec:
    kind: str = "uniform"
    pi: float = 0.5


@dataclass(frozen=True)
class ForecastSpec:
    horizon: int | None = None
    mc_samples: int = 5000
    goal: str | None = None
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES


@dataclass(frozen=True)
class RunConfig:
    data: DataSpec = DataSpec()
    synthetic: SyntheticSpec = SyntheticSpec()
    series_order: tuple[str, ...] | None = None
    pools: PoolSpec = PoolSpec()
    pool_overrides: dict = field(default_factory=dict)
    dlm: DlmSpec = DlmSpec()
    dlm_overrides: dict = field(default_factory=dict)
    score: ScoreSpec = ScoreSpec()
    model_prior: ModelPriorSpec = ModelPriorSpec()
    search: SearchSpec = SearchSpec()
    avs_every: int = 1
    training_length: int = 30
    evaluation_end: int | None = None
    forecast: ForecastSpec = ForecastSpec()
    baseline_exhaustive_limit: int = 256
    seed: int = 0
    mode: str = "avs"
    output_dir: str = "out"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.data.source not in SOURCES:
            raise ConfigError(f"data.source must be one of {SOURCES}, got {self.data.source!r}")
        if self.data.source == "file" and not self.data.path:
            raise ConfigError("data.path is required when data.source is 'file'")
        if self.search.method not in SEARCH_MODES:
            raise ConfigError(f"search.method must be one of {SEARCH_MODES}")
        if self.training_length < 1:
            raise ConfigError("training_length must be positive")
        # surface ScoreConfig/engine inconsistencies before any data is read
        self.engine_config()
        self.forecast_request()

    # -- derived objects ---------------------------------------------------------

    def score_config(self) -> ScoreConfig:
        s = self.score
        try:
            return ScoreConfig(s.kind, s.k, s.alpha, s.tau, s.window_start)
        except ValueError as err:
            raise ConfigError(f"score: {err}") from None

    def discounts(self, names: tuple[str, ...] | None = None):
        base = DlmDiscounts(self.dlm.delta, self.dlm.beta)
        if not self.dlm_overrides:
            return base
        if names is None:
            raise ConfigError("per-series discount overrides need the series names")
        unknown = set(self.dlm_overrides) - set(names)
        if unknown:
            raise ConfigError(f"dlm_overrides name unknown series {sorted(unknown)}")
        out = []
        for n in names:
            o = self.dlm_overrides.get(n, {})
            out.append(DlmDiscounts(o.get("delta", base.delta), o.get("beta", base.beta)))
        return tuple(out)

    def engine_config(self, names: tuple[str, ...] | None = None) -> EngineConfig:
        sc = self.search
        try:
            return EngineConfig(
                score=self.score_config(),
                sss=SssConfig(sc.iterations, sc.max_tracked, 0, sc.parallel_eval, sc.avoid_revisits),
                discounts=self.discounts(names) if names is not None else DlmDiscounts(self.dlm.delta, self.dlm.beta),
                prior=PriorSpec(self.dlm.n0, self.dlm.g, self.dlm.calibration_length),
                model_prior=ModelPrior(self.model_prior.kind, self.model_prior.pi),
                weighting=GIBBS,
                search=sc.method,
                avs_every=self.avs_every,
                seed=self.seed,
                cache_size=sc.cache_size,
            )
        except ConfigError:
            raise
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def forecast_request(self) -> ForecastRequest:
        f = self.forecast
        score = self.score_config()
        return ForecastRequest(
            horizon=f.horizon if f.horizon is not None else score.k,
            mc_samples=f.mc_samples,
            goal=f.goal if f.goal is not None else score.kind,
            quantiles=tuple(f.quantiles),
        )

    def build_panel(self) -> SeriesPanel:
        d = self.data
        if d.source == "synthetic":
            panel = generate_synthetic(self.synthetic.build())
        elif d.source == "macro_standin":
            panel = bundled_macro_panel()
        else:
            schema = PanelSchema(d.time_column, tuple(d.series), tuple(d.exog), d.delimiter)
            if not schema.value_columns:
                raise ConfigError("data.series must list the value columns")
            panel = load_panel(d.path, schema)
            if d.future_exog:
                panel = load_future_exog(d.future_exog, panel, d.exog, d.time_column, d.delimiter)
        if self.series_order:
            panel = panel.reorder(tuple(self.series_order))
        return panel

    def build_pools(self, panel: SeriesPanel) -> list[CandidatePool]:
        names = panel.names
        unknown = set(self.pool_overrides) - set(names)
        if unknown:
            raise ConfigError(f"pool_overrides name unknown series {sorted(unknown)}")
        pools = []
        for j, name in enumerate(names):
            spec = dataclasses.replace(self.pools, **self.pool_overrides.get(name, {}))
            lags = spec.lags
            if isinstance(lags, Mapping):
                bad = set(lags) - set(names)
                if bad:
                    raise ConfigError(f"lag sources {sorted(bad)} are not series")
                lags = {names.index(s): list(v) for s, v in lags.items()}
            else:
                lags = list(lags or ())
            parents = spec.parents
            if not isinstance(parents, bool):
                bad = [p for p in parents if p not in names]
                if bad:
                    raise ConfigError(f"parents {bad} are not series")
                parents = [names.index(p) for p in parents]
            for x in spec.exog:
                if x not in panel.exog:
                    raise ConfigError(f"exogenous predictor {x!r} is not a panel column")
            try:
                pools.append(CandidatePool.build(j, len(names), lags, parents, tuple(spec.exog),
                                                 spec.intercept, spec.force_intercept, spec.max_size))
            except ValueError as err:
                raise ConfigError(f"pool for {name}: {err}") from None
        return pools

    # -- (de)serialisation ----------------------------------------------------

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, raw: Mapping | None) -> "RunConfig":
        return _build(cls, raw or {}, "config")

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return dataclasses.replace(self, **kw) if kw else self


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


_NESTED = {
    "data": DataSpec, "synthetic": SyntheticSpec, "pools": PoolSpec, "dlm": DlmSpec,
    "score": ScoreSpec, "search": SearchSpec, "model_prior": ModelPriorSpec, "forecast": ForecastSpec,
}
_TUPLES = {"series", "exog", "quantiles", "series_order"}


def _build(cls, raw, where):
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kw = {}
    for key, val in raw.items():
        if cls is RunConfig and key in _NESTED:
            val = _build(_NESTED[key], val or {}, key)
        elif key == "pool_overrides":
            val = {str(n): _check_keys(PoolSpec, v, f"pool_overrides.{n}") for n, v in (val or {}).items()}
        elif key == "dlm_overrides":
            val = {str(n): _check_keys(DlmDiscounts, v, f"dlm_overrides.{n}") for n, v in (val or {}).items()}
        elif key in _TUPLES and val is not None:
            val = tuple(val)
        elif key == "lags" and isinstance(val, list):
            val = tuple(val)
        elif key == "lags" and isinstance(val, Mapping):
            val = {str(k): tuple(v) for k, v in val.items()}
        elif key == "parents" and isinstance(val, list):
            val = tuple(val)
        kw[key] = val
    try:
        return cls(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{where}: {err}") from None


def _check_keys(cls, raw, where) -> dict:
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    out = dict(raw)
    for k in ("lags", "exog", "parents"):
        if isinstance(out.get(k), list):
            out[k] = tuple(out[k])
    return out


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as err:
        raise ConfigError(f"{p}: invalid YAML: {err}") from None
    return RunConfig.from_dict(raw)


def preset(name: str) -> RunConfig:
    """Bundled configurations: ``synthetic`` and ``macro``."""
    try:
        text = resources.files("ddnm_avs").joinpath("data", f"{name}.yaml").read_text()
    except FileNotFoundError:
        raise ConfigError(f"unknown preset {name!r}; available: synthetic, macro") from None
    return RunConfig.from_dict(yaml.safe_load(text))


def bundled_macro_panel() -> SeriesPanel:
    """The 3-series monthly stand-in shipped with the package (regenerated if absent)."""
    ref = resources.files("ddnm_avs").joinpath("data", "macro_standin.csv")
    try:
        with resources.as_file(ref) as path:
            if Path(path).exists():
                schema = PanelSchema("date", ("Inflation", "Consumption", "Tr10Yr"))
                return load_panel(path, schema)
    except (FileNotFoundError, DataError):
        pass
    return generate_macro_standin()
