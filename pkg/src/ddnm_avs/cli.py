"""Command-line entry point: ``ddnm-avs {simulate,run,evaluate,compare}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime failure.
Set ``DDNM_AVS_THREADS`` to run per-series work on that many threads.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace

from .avs import ConfigError
from .bundle import compare_scores, evaluate_bundle, execute, fmt, read_csv, read_meta, write_bundle
from .config import RunConfig, load_config, preset
from .data import DataError, PanelSchema, generate_synthetic, load_panel, write_panel

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("ddnm_avs")


def _config(args) -> RunConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = preset(args.preset or "synthetic")
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        over["mode"] = args.mode
    if getattr(args, "out_dir", None) is not None:
        over["output_dir"] = args.out_dir
    cfg = cfg.with_overrides(**over)
    if getattr(args, "mc_samples", None) is not None:
        cfg = cfg.with_overrides(forecast=replace(cfg.forecast, mc_samples=args.mc_samples))
    return RunConfig.from_dict(cfg.to_dict())


def cmd_simulate(args) -> int:
    cfg = _config(args)
    spec = cfg.synthetic
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.noise is not None:
        spec = replace(spec, obs_noise_sd=args.noise)
    if args.T is not None:
        spec = replace(spec, T_total=args.T)
    panel = generate_synthetic(spec.build())
    write_panel(panel, args.out)
    print(f"wrote {panel.T} rows to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)

    def progress(t):
        if args.verbose:
            log.info("step %d done", t)

    result = execute(cfg, progress)
    out = write_bundle(result, cfg.output_dir)
    print(f"wrote {', '.join(sorted(p.name for p in out.iterdir()))} to {out} "
          f"in {result.wall_time:.1f}s")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    meta = read_meta(args.run_dir)
    cfg = RunConfig.from_dict(meta["config"])
    if args.actuals:
        d = cfg.data
        names = tuple(cfg.series_order or d.series)
        if not names:
            raise ConfigError("--actuals needs the value columns named in the run config")
        panel = load_panel(args.actuals, PanelSchema(d.time_column, names, (), d.delimiter))
    else:
        panel = cfg.build_panel()
    rm, tr = evaluate_bundle(args.run_dir, panel, args.out_dir)
    print(f"wrote {rm} and {tr}")
    return EXIT_OK


def cmd_compare(args) -> int:
    rows_a = read_csv(args.scores_a)
    rows_b = read_csv(args.scores_b) if args.scores_b else rows_a
    diff = compare_scores(rows_a, rows_b, args.method_a, args.method_b)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin_time", "method_a", "method_b", "log_density_a", "log_density_b", "advantage"])
        for o, ma, mb, a, b, d in diff:
            w.writerow([o, ma, mb, fmt(a), fmt(b), fmt(d)])
    finally:
        if args.out:
            fh.close()
    mean = sum(d[-1] for d in diff) / len(diff)
    print(f"mean advantage {mean:.6g} over {len(diff)} origins", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddnm-avs", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--preset", choices=["synthetic", "macro"], help="bundled configuration")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("simulate", help="write a synthetic panel")
    config_args(sp)
    sp.add_argument("--out", required=True, help="output CSV path")
    sp.add_argument("--noise", type=float, help="observation noise sd")
    sp.add_argument("--T", type=int, help="number of rows")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("run", help="run a backtest and write the output bundle")
    config_args(sp)
    sp.add_argument("--mode", choices=["avs", "bma", "both"])
    sp.add_argument("--out-dir")
    sp.add_argument("--mc-samples", type=int)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("evaluate", help="rMSFE and log density traces for a run directory")
    sp.add_argument("run_dir")
    sp.add_argument("--actuals", help="panel CSV with observed values (default: the run's data)")
    sp.add_argument("--out-dir", help="where to write rmsfe.csv and trace.csv (default: run_dir)")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("compare", help="per-origin log density advantage between two score sets")
    sp.add_argument("scores_a")
    sp.add_argument("scores_b", nargs="?")
    sp.add_argument("--method-a")
    sp.add_argument("--method-b")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except Exception as err:  # noqa: BLE001
        print(f"runtime failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
