"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) along
with the measured quantities behind the verdict.
"""
import math
import subprocess
import sys
import time

import numpy as np
import pytest
import yaml

from ddnm_avs import dlm
from ddnm_avs.avs import THREADS_ENV, EngineConfig, ForecastRequest, run_backtest
from ddnm_avs.bundle import BUNDLE_FILES, evaluate_bundle, execute, read_csv, write_bundle
from ddnm_avs.config import RunConfig, bundled_macro_panel, preset
from ddnm_avs.data import PanelSchema, SeriesPanel, load_panel, write_panel
from ddnm_avs.dlm import DlmDiscounts, DlmPosterior
from ddnm_avs.forecast import conditional_logdensities, joint_one_step_logdensity, mc_path_logdensity
from ddnm_avs.models import CandidatePool, ModelIndicator, intercept, lag, neighborhood, parent
from ddnm_avs.scoring import (
    KSTEP,
    ONE_STEP,
    PATH_LPFD,
    ScoreConfig,
    ScoreLedger,
    bma_recursive_step,
    gibbs_probabilities,
)
from ddnm_avs.sss import SssConfig, run_sss

from acceptance_log import criterion
from conftest import exog_panel, regression_data, triangle_panel
from oracles import batch_conjugate_posterior, closed_form_discounted, enumerate_model_space, exact_probabilities
from test_forecast import analytic_path_terms, make_state
from test_scoring import exog_pool, make_ledger, oracle_increments


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def test_criterion_01_conjugate_oracle():
    with criterion(1, "static filter vs batch normal-gamma posterior") as notes:
        static = DlmDiscounts(1.0, 1.0)
        worst = 0.0
        t0 = time.perf_counter()
        for p in range(1, 6):
            X, y = regression_data(T=100, p=p, seed=100 + p)
            prior = DlmPosterior(np.zeros(p), np.eye(p) * 4.0, 2.0, 0.5)
            post = prior
            for F, yt in zip(X, y):
                post = dlm.update(dlm.evolve(post, static), F, yt)
            m, C, n, s = batch_conjugate_posterior(X, y, prior.m, prior.C, prior.n, prior.s)
            worst = max(worst, rel_err(post.m, m), rel_err(post.C, C), rel_err(post.n, n), rel_err(post.s, s))
        elapsed = time.perf_counter() - t0
        notes += [f"max rel err {worst:.2e}", f"{elapsed:.3f}s"]
        assert worst <= 1e-10
        assert elapsed < 1.0


def test_criterion_02_bma_reduction():
    with criterion(2, "gibbs(one_step, tau=1) = posterior model probs; recursive = closed form") as notes:
        panel = exog_panel(T=70, n_exog=2, seed=31)
        pool = exog_pool(2)
        led = make_ledger(panel, pool, ScoreConfig(ONE_STEP, 1, 1.0))
        led.advance_to(69)
        assert len(led.models()) == 4
        logml = {m.key: sum(oracle_increments(led, m, ONE_STEP, 1, 69)) for m in led.models()}
        exact = exact_probabilities(logml)
        got = gibbs_probabilities(led, tau=1.0)
        gap = max(abs(got[k] - exact[k]) for k in exact)

        alpha = 0.95
        led = make_ledger(panel, pool, ScoreConfig(ONE_STEP, 1, alpha))
        prior = {"100": 0.1, "101": 0.2, "110": 0.3, "111": 0.4}
        rec, incs = dict(prior), {k: [] for k in prior}
        for _ in range(20):
            led.advance(led.clock + 1)
            step = {k: led.entry(k).last_loglik for k in prior}
            for k in prior:
                incs[k].append(step[k])
            rec = bma_recursive_step(rec, step, alpha)
        logw = {k: alpha**20 * math.log(prior[k]) + closed_form_discounted(incs[k], alpha) for k in prior}
        closed = exact_probabilities(logw)
        gap2 = max(abs(rec[k] - closed[k]) for k in prior)
        notes += [f"gibbs gap {gap:.1e}", f"recursion gap {gap2:.1e}"]
        assert gap <= 1e-12 and gap2 <= 1e-12


def test_criterion_03_lpfd_identity():
    with criterion(3, "analytic LPFD vs Monte Carlo path density, m=2, k=4, 20 instances") as notes:
        t0 = time.perf_counter()
        zs = []
        for seed in range(20):
            panel = triangle_panel(T=70, m=2, seed=1000 + seed)
            pools = [CandidatePool.build(j, 2, lags=[1]) for j in range(2)]
            state = make_state(panel, pools, 60, disc=DlmDiscounts(0.95, 1.0))
            analytic = sum(float(v[0]) for v in analytic_path_terms(panel, pools, state, 4))
            est, se = mc_path_logdensity(state, panel.values[61:65], 10_000, np.random.default_rng(seed))
            zs.append(abs(est - analytic) / se)
        elapsed = time.perf_counter() - t0
        notes += [f"max |z| {max(zs):.2f}", f"{elapsed:.1f}s"]
        assert max(zs) <= 3.0
        assert elapsed < 30.0


def test_criterion_04_composition_identity():
    with criterion(4, "joint 1-step log density = ordered sum of conditionals, m=3") as notes:
        panel = triangle_panel(T=80, m=3, seed=7)
        pools = [CandidatePool.build(j, 3, lags=[1]) for j in range(3)]
        checked = 0
        for origin in range(40, 79):
            state = make_state(panel, pools, origin)
            y = panel.values[origin + 1]
            terms = conditional_logdensities(state, y)
            total = 0.0
            for j in (2, 1, 0):
                total += float(terms[j][0])
            assert joint_one_step_logdensity(state, y) == total
            checked += 1
        notes.append(f"{checked} origins bitwise equal")


def test_criterion_05_neighborhood_counts():
    with criterion(5, "neighborhood sizes by enumeration; 39-entry pool with 5 inclusions") as notes:
        cases = 0
        for p_free in range(0, 13):
            pool = CandidatePool(0, (intercept(), *(lag(0, i + 1) for i in range(p_free))))
            assert len(pool.free) == p_free
            for q in range(p_free + 1):
                bits = (1,) + tuple(1 if i < q else 0 for i in range(p_free))
                nb = neighborhood(ModelIndicator(bits), pool).all()
                assert len({m.key for m in nb}) == len(nb) == (p_free - q) + q + q * (p_free - q)
                cases += 1
        macro = preset("macro")
        infl = macro.build_pools(macro.build_panel())[0]
        assert infl.p == 39
        free_pool = CandidatePool(0, infl.entries, forced=())
        bits = [0] * 39
        for i in (1, 5, 13, 20, 37):
            bits[i] = 1
        count = len(neighborhood(ModelIndicator(tuple(bits)), free_pool).all())
        notes += [f"{cases} (p_free, q) cases", f"inflation pool count {count}"]
        assert count == 209


def _synthetic_seed(seed: int):
    raw = preset("synthetic").to_dict()
    raw["seed"] = raw["synthetic"]["seed"] = seed
    raw["forecast"]["mc_samples"] = 1000
    return RunConfig.from_dict(raw)


def test_criterion_06_synthetic_replication():
    with criterion(6, "synthetic study over 20 seeds") as notes:
        t0 = time.perf_counter()
        excl_avs, incl_bma, dens, rm = [], [], {"avs": [], "bma": []}, {"avs": {1: [], 25: []}, "bma": {1: [], 25: []}}
        for seed in range(20):
            cfg = _synthetic_seed(seed)
            res = execute(cfg)
            pool = res.outputs["avs"].pools[0]
            ix = pool.labels(res.panel.names).index("x1")
            y = res.panel.values[:, 0]
            assert len(res.outputs["avs"].steps) == 100
            excl_avs += [s.representative[0].bits[ix] == 0 for s in res.outputs["avs"].steps]
            incl_bma += [s.representative[0].bits[ix] == 1 for s in res.outputs["bma"].steps]
            goal = {meth: {s.t: s.goal_logdensity for s in out.steps if s.goal_logdensity is not None}
                    for meth, out in res.outputs.items()}
            shared = sorted(set(goal["avs"]) & set(goal["bma"]))
            for meth in ("avs", "bma"):
                dens[meth] += [goal[meth][t] for t in shared]
                for h in (1, 25):
                    err = [s.summary.mean[h - 1, 0] - y[s.t - 1 + h] for s in res.outputs[meth].steps
                           if s.t - 1 + h < y.size and s.summary.mean.shape[0] >= h]
                    rm[meth][h].append(math.sqrt(np.mean(np.square(err))))
        elapsed = time.perf_counter() - t0
        a, b = float(np.mean(excl_avs)), float(np.mean(incl_bma))
        da, db = float(np.mean(dens["avs"])), float(np.mean(dens["bma"]))
        r = {(m, h): float(np.mean(rm[m][h])) for m in rm for h in (1, 25)}
        notes += [f"AVS excludes x1 {a:.0%}", f"BMA includes x1 {b:.0%}",
                  f"25-step log density AVS {da:.3f} vs BMA {db:.3f}",
                  f"rMSFE h1 AVS {r['avs', 1]:.3f} / BMA {r['bma', 1]:.3f}",
                  f"h25 AVS {r['avs', 25]:.3f} / BMA {r['bma', 25]:.3f}", f"{elapsed:.0f}s"]
        assert a >= 0.8 and b >= 0.6
        assert da > db
        assert r["bma", 1] < r["avs", 1] and r["avs", 25] < r["bma", 25]
        assert elapsed < 300


def test_criterion_07_macro_protocol_on_user_panel(tmp_path):
    with criterion(7, "macro protocol on a user-supplied file panel") as notes:
        panel = bundled_macro_panel()
        path = tmp_path / "panel.csv"
        write_panel(panel, path)
        raw = preset("macro").to_dict()
        raw["data"] = {"source": "file", "path": str(path), "time_column": "time",
                       "series": list(panel.names)}
        raw["evaluation_end"] = raw["training_length"] + 30
        raw["forecast"]["mc_samples"] = 300
        raw["search"]["iterations"] = 2
        cfg_path = tmp_path / "macro.yaml"
        cfg_path.write_text(yaml.safe_dump(raw))
        out = tmp_path / "run"
        t0 = time.perf_counter()
        proc = subprocess.run([sys.executable, "-m", "ddnm_avs.cli", "run", "--config", str(cfg_path),
                               "--out-dir", str(out)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        evaluate_bundle(out, load_panel(path, PanelSchema("time", panel.names)))
        rm = read_csv(out / "rmsfe.csv")
        horizons = {int(r["horizon"]) for r in rm}
        scores = read_csv(out / "scores.csv")
        notes += [f"{len(scores) // 2} origins per method", f"horizons 1..{max(horizons)}",
                  f"{time.perf_counter() - t0:.0f}s"]
        assert horizons == set(range(1, 25))
        assert {r["method"] for r in rm} == {r["method"] for r in scores} == {"avs", "bma"}
        cfg = RunConfig.from_dict(raw)
        assert cfg.score.k == 24 and cfg.score.alpha == 0.98 and cfg.mode == "both"


@pytest.mark.slow
def test_criterion_07_full_standin_run_time(tmp_path):
    with criterion(7, "full bundled stand-in run, mode=both, k=24") as notes:
        cfg = preset("macro").with_overrides(output_dir=str(tmp_path / "macro"))
        res = execute(cfg)
        write_bundle(res, tmp_path / "macro")
        notes.append(f"{res.wall_time / 60:.1f} min")
        assert res.wall_time < 30 * 60


def _scaling_pools(m):
    """Own lags 1-3, one lag of the next series and (if any) the next series as parent."""
    pools = []
    for j in range(m):
        nxt = (j + 1) % m
        entries = [intercept(), lag(j, 1), lag(j, 2), lag(j, 3), lag(nxt, 1)]
        entries.append(parent(j + 1) if j + 1 < m else lag(nxt, 2))
        pools.append(CandidatePool(j, tuple(entries)))
    return pools


def _per_step_time(m, steps=40):
    panel = triangle_panel(T=90, m=m, seed=5)
    pools = _scaling_pools(m)
    cfg = EngineConfig(ScoreConfig(KSTEP, 3, 0.98), sss=SssConfig(iterations=3),
                       discounts=DlmDiscounts(0.98, 0.98))
    req = ForecastRequest(3, 500, KSTEP)
    best = math.inf
    for _ in range(3):
        t0 = time.perf_counter()
        run_backtest(panel, pools, cfg, req, 90 - steps)
        best = min(best, time.perf_counter() - t0)
    return best / steps


def test_criterion_08_linear_scaling(monkeypatch):
    with criterion(8, "per-step time ratio for 6 vs 3 series") as notes:
        monkeypatch.setenv(THREADS_ENV, "1")
        _per_step_time(3, steps=5)
        t3, t6 = _per_step_time(3), _per_step_time(6)
        notes += [f"{t3 * 1e3:.1f} ms vs {t6 * 1e3:.1f} ms", f"ratio {t6 / t3:.2f}"]
        assert all(p.p == 6 for p in _scaling_pools(6))
        assert t6 / t3 <= 2.5


def test_criterion_09_determinism(tmp_path):
    with criterion(9, "two CLI runs with the same seed") as notes:
        raw = preset("synthetic").to_dict()
        raw["synthetic"]["T_total"] = 70
        raw["score"]["k"] = 5
        raw["forecast"].update(horizon=5, mc_samples=300)
        raw["search"] = {"method": "sss", "iterations": 3}
        cfg_path = tmp_path / "cfg.yaml"
        cfg_path.write_text(yaml.safe_dump(raw))
        outs = []
        for name in ("a", "b"):
            d = tmp_path / name
            proc = subprocess.run([sys.executable, "-m", "ddnm_avs.cli", "run", "--config", str(cfg_path),
                                   "--out-dir", str(d), "--seed", "11"], capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
            outs.append(d)
        same = [name for name in BUNDLE_FILES if name != "meta.json"
                and (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()]
        notes.append(f"identical: {', '.join(same)}")
        assert len(same) == len(BUNDLE_FILES) - 1


def test_criterion_10_sss_coverage():
    with criterion(10, "SSS tracked list = enumeration for p_free <= 4") as notes:
        cases = 0
        for p_free in range(1, 5):
            panel = exog_panel(T=60, n_exog=p_free, seed=50 + p_free)
            pool = exog_pool(p_free)
            for kind, k in ((ONE_STEP, 1), (KSTEP, 3), (PATH_LPFD, 2)):
                cfg = ScoreConfig(kind, k, 0.98)
                led = ScoreLedger.create(pool, panel, cfg, DlmDiscounts(0.98, 0.98))
                led.advance_to(59)
                res = run_sss(pool.forced_model(), led, SssConfig(iterations=2 ** (p_free + 1)))
                full = ScoreLedger.create(pool, panel, cfg, DlmDiscounts(0.98, 0.98),
                                          models=[ModelIndicator(b) for b in enumerate_model_space(p_free)])
                full.advance_to(59)
                assert {m.key: s for m, s in res.tracked} == full.scores()
                cases += 1
        notes.append(f"{cases} pools x score kinds")
