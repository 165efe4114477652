import csv
import json
from collections import defaultdict

import numpy as np
import pytest
import yaml

from ddnm_avs.avs import ConfigError
from ddnm_avs.bundle import BUNDLE_FILES, compare_scores, read_csv
from ddnm_avs.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_RUNTIME, main
from ddnm_avs.config import RunConfig, load_config, preset
from ddnm_avs.data import PanelSchema, load_panel


def small_config(tmp_path, **changes):
    """Synthetic preset shrunk to a few seconds of work."""
    raw = preset("synthetic").to_dict()
    raw["synthetic"]["T_total"] = 50
    raw["score"]["k"] = 3
    raw["forecast"]["horizon"] = 3
    raw["forecast"]["mc_samples"] = 200
    raw["training_length"] = 35
    raw["output_dir"] = str(tmp_path / "out")
    for key, val in changes.items():
        raw[key] = val
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def run_dir(tmp_path, name, *extra):
    cfg = small_config(tmp_path)
    out = tmp_path / name
    assert main(["run", "--config", str(cfg), "--out-dir", str(out), *extra]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    return run_dir(tmp_path_factory.mktemp("bundle"), "run")


def test_bundle_files_present(bundle):
    assert sorted(p.name for p in bundle.iterdir()) == sorted(BUNDLE_FILES)


def test_rerun_is_byte_identical(tmp_path, bundle):
    again = run_dir(tmp_path, "again")
    for name in BUNDLE_FILES:
        if name == "meta.json":
            continue
        assert (again / name).read_bytes() == (bundle / name).read_bytes(), name
    a = json.loads((bundle / "meta.json").read_text())
    b = json.loads((again / "meta.json").read_text())
    a.pop("wall_time_seconds"), b.pop("wall_time_seconds")
    a["config"].pop("output_dir"), b["config"].pop("output_dir")
    assert a == b


def test_seed_change_changes_forecasts(tmp_path, bundle):
    other = run_dir(tmp_path, "other", "--seed", "7")
    assert (other / "forecasts.csv").read_bytes() != (bundle / "forecasts.csv").read_bytes()


def test_scores_interleave_methods(bundle):
    rows = read_csv(bundle / "scores.csv")
    assert list(rows[0]) == ["origin_time", "method", "log_density"]
    pairs = [rows[i: i + 2] for i in range(0, len(rows), 2)]
    for a, b in pairs:
        assert a["origin_time"] == b["origin_time"]
        assert (a["method"], b["method"]) == ("avs", "bma")


def test_forecast_columns(bundle):
    rows = read_csv(bundle / "forecasts.csv")
    assert list(rows[0]) == ["origin_time", "method", "series", "horizon", "mean",
                             "q025", "q25", "q50", "q75", "q975"]
    for r in rows:
        qs = [float(r[c]) for c in ("q025", "q25", "q50", "q75", "q975")]
        assert qs == sorted(qs)


def test_model_probabilities_sum_to_one(bundle):
    models = json.loads((bundle / "models.json").read_text())
    assert set(models["methods"]) == {"avs", "bma"}
    for entries in models["methods"].values():
        for e in entries:
            assert abs(sum(e["models"].values()) - 1.0) <= 1e-12
            assert all(set(k) <= {"0", "1"} for k in e["models"])


def test_inclusion_rows_match_pool_labels(bundle):
    models = json.loads((bundle / "models.json").read_text())
    rows = read_csv(bundle / "inclusion.csv")
    per = defaultdict(list)
    for r in rows:
        per[(r["time"], r["method"], r["series"])].append(r["predictor_id"])
        assert r["included"] in ("0", "1")
    for labels in per.values():
        assert labels == models["pools"]["y"]


def test_meta_config_round_trips(bundle):
    meta = json.loads((bundle / "meta.json").read_text())
    cfg = RunConfig.from_dict(meta["config"])
    assert cfg.to_dict() == meta["config"]
    assert meta["seed"] == cfg.seed
    assert {"numpy", "scipy", "python"} <= set(meta["versions"])


def test_evaluate_writes_rmsfe_and_trace(tmp_path, bundle):
    out = tmp_path / "eval"
    assert main(["evaluate", str(bundle), "--out-dir", str(out)]) == EXIT_OK
    rm = read_csv(out / "rmsfe.csv")
    assert list(rm[0]) == ["series", "horizon", "method", "value"]
    assert {r["method"] for r in rm} == {"avs", "bma"}
    assert sorted({int(r["horizon"]) for r in rm}) == [1, 2, 3]
    tr = read_csv(out / "trace.csv")
    assert list(tr[0]) == ["origin_time", "method", "log_density", "running_mean"]


def test_perfect_forecasts_evaluate_to_zero(tmp_path):
    panel_path = tmp_path / "panel.csv"
    assert main(["simulate", "--preset", "synthetic", "--T", "40", "--out", str(panel_path)]) == EXIT_OK
    panel = load_panel(panel_path, PanelSchema("time", ("y",)))
    rd = tmp_path / "fake"
    rd.mkdir()
    cfg = preset("synthetic").with_overrides(mode="avs")
    (rd / "meta.json").write_text(json.dumps({"config": cfg.to_dict()}))
    with (rd / "forecasts.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["origin_time", "method", "series", "horizon", "mean"])
        for o in range(30, 37):
            for h in (1, 2, 3):
                w.writerow([o, "avs", "y", h, repr(float(panel.values[o + h, 0]))])
    (rd / "scores.csv").write_text("origin_time,method,log_density\n30,avs,-1.0\n")
    cfg_file = tmp_path / "c.yaml"
    raw = cfg.to_dict()
    raw["data"]["series"] = ["y"]
    cfg_file.write_text(yaml.safe_dump(raw))
    (rd / "meta.json").write_text(json.dumps({"config": raw}))
    assert main(["evaluate", str(rd), "--actuals", str(panel_path)]) == EXIT_OK
    assert all(float(r["value"]) == 0.0 for r in read_csv(rd / "rmsfe.csv"))


def test_compare_is_antisymmetric(tmp_path, bundle, capsys):
    ab, ba = tmp_path / "ab.csv", tmp_path / "ba.csv"
    scores = str(bundle / "scores.csv")
    assert main(["compare", scores, "--method-a", "avs", "--method-b", "bma", "--out", str(ab)]) == EXIT_OK
    assert main(["compare", scores, "--method-a", "bma", "--method-b", "avs", "--out", str(ba)]) == EXIT_OK
    ra, rb = read_csv(ab), read_csv(ba)
    assert [r["origin_time"] for r in ra] == [r["origin_time"] for r in rb]
    for x, y in zip(ra, rb):
        assert float(x["advantage"]) == -float(y["advantage"])
    assert "mean advantage" in capsys.readouterr().err


def test_compare_needs_method_choice(bundle):
    rows = read_csv(bundle / "scores.csv")
    with pytest.raises(ValueError, match="choose one"):
        compare_scores(rows, rows)


def test_simulate_noise_free_rows_are_exact(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["simulate", "--preset", "synthetic", "--noise", "0", "--out", str(out)]) == EXIT_OK
    panel = load_panel(out, PanelSchema("time", ("y",), ("x1", "x2")))
    assert panel.T == 130
    assert set(np.unique(panel.exog["x1"])) == {-1.0, 1.0}


def test_simulate_seed_changes_bytes(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["simulate", "--preset", "synthetic", "--seed", "1", "--out", str(a)])
    main(["simulate", "--preset", "synthetic", "--seed", "2", "--out", str(b)])
    assert a.read_bytes() != b.read_bytes()


# -- exit codes ---------------------------------------------------------------------

def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("score: {kind: nonsense}\n")
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
    bad.write_text("unknown_key: 1\n")
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
    bad.write_text("score: [unclosed\n")
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    assert main(["run", "--config", str(bad), "--preset", "synthetic"]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_data_errors_exit_3(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"data": {"source": "file", "path": str(tmp_path / "none.csv"),
                                            "series": ["a"]}}))
    assert main(["run", "--config", str(cfg)]) == EXIT_DATA
    assert main(["evaluate", str(tmp_path)]) == EXIT_DATA


def test_runtime_errors_exit_4(tmp_path):
    broken = tmp_path / "s.csv"
    broken.write_text("origin_time,method\n1,avs\n")
    assert main(["compare", str(broken)]) == EXIT_RUNTIME


def test_config_validation_happens_before_compute():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"score": {"kind": "one_step", "k": 3}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"mode": "sometimes"})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"data": {"source": "file"}})


def test_yaml_round_trip(tmp_path):
    for name in ("synthetic", "macro"):
        cfg = preset(name)
        path = tmp_path / f"{name}.yaml"
        path.write_text(yaml.safe_dump(cfg.to_dict()))
        assert load_config(path).to_dict() == cfg.to_dict()


def test_macro_preset_pools_match_documented_sizes():
    cfg = preset("macro")
    panel = cfg.build_panel()
    pools = cfg.build_pools(panel)
    assert panel.names == ("Inflation", "Consumption", "Tr10Yr")
    assert [p.p for p in pools] == [39, 38, 37]
    assert cfg.score.k == 24 and cfg.score.alpha == 0.98 and cfg.mode == "both"
