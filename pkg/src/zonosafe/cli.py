"""Command-line entry point.

Subcommands cover the whole workflow: ``gen-data`` writes the dataset CSV and
its manifest, ``train`` produces a model file (training plus all fits),
``fit`` refits heads/dynamics/bounds from an existing model's networks,
``run`` executes scenario x mode simulations, ``analyze`` aggregates trace
directories, and ``write-config`` dumps the documented defaults.

Exit codes: 0 success, 2 configuration/usage error, 3 I/O error, and for
single runs a verdict code (4 collision, 5 diverged, 6 timeout). Matrix runs
exit 0 unless execution itself fails; the verdicts live in the report.
"""

from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .certificates import EvalMode
from .config import ConfigError, default_config_text, load_config
from .modelio import load_model, save_model
from .pipeline import fit_model, train_and_fit
from .simlab import (
    VERDICT_COLLISION,
    VERDICT_DIVERGED,
    VERDICT_PASSED,
    aggregate,
    canonical_scenarios,
    mean_spread_delta,
    render_text,
    run,
    save_run_report,
    save_trace,
    scenario_by_name,
    write_passage_csv,
    write_probe_csv,
    write_spread_csv,
)
from .trainer import TrainResult, generate_dataset, load_dataset, save_dataset, save_history, save_manifest, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_COLLISION = 4
EXIT_DIVERGED = 5
EXIT_TIMEOUT = 6

_VERDICT_CODES = {
    VERDICT_PASSED: EXIT_OK,
    VERDICT_COLLISION: EXIT_COLLISION,
    VERDICT_DIVERGED: EXIT_DIVERGED,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zonosafe")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=False):
        p.add_argument("--config", type=Path, default=None, help="key=value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--seed", type=int, default=None, help="override train.seed")
        p.add_argument("--out-dir", type=Path, default=Path("out"))
        if model:
            p.add_argument("--model", type=Path, required=True)

    p = sub.add_parser("gen-data", help="generate the training dataset CSV")
    common(p)

    p = sub.add_parser("train", help="generate/load data, train, fit, write the model")
    common(p)
    p.add_argument("--dataset", type=Path, default=None,
                   help="existing dataset CSV (default: generate)")

    p = sub.add_parser("fit", help="refit dynamics/heads/bounds from a model's networks")
    common(p, model=True)
    p.add_argument("--dataset", type=Path, required=True)

    p = sub.add_parser("run", help="closed-loop scenario x mode simulations")
    common(p, model=True)
    p.add_argument("--scenario", default="all",
                   help="scenario name or 'all' (default)")
    p.add_argument("--mode", default="all", choices=["set", "point", "margin", "all"])
    p.add_argument("--timing", action="store_true",
                   help="write wall-clock timings (makes CSVs non-reproducible)")
    p.add_argument("--parallel", type=int, default=1, metavar="N",
                   help="worker processes for matrix runs")

    p = sub.add_parser("analyze", help="aggregate a directory of run outputs")
    p.add_argument("--trace-dir", type=Path, required=True)
    p.add_argument("--model", type=Path, default=None,
                   help="include probe fit quality from the model metadata")
    p.add_argument("--timing", action="store_true")

    p = sub.add_parser("write-config", help="write the documented default config")
    p.add_argument("path", type=Path)
    return parser


def _load(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    return load_config(args.config, overrides)


def _cmd_gen_data(args) -> int:
    cfg = _load(args)
    samples, manifest = generate_dataset(cfg)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    save_dataset(samples, args.out_dir / "dataset.csv")
    save_manifest(manifest, args.out_dir / "dataset_manifest.json")
    print(f"wrote {len(samples)} samples to {args.out_dir / 'dataset.csv'}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _load(args)
    if args.dataset is not None:
        samples = load_dataset(args.dataset)
        manifest = {"source": str(args.dataset), "size": len(samples)}
    else:
        samples, manifest = generate_dataset(cfg)
    model, history = train_and_fit(samples, cfg, manifest)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    save_model(model, args.out_dir / "model.json")
    save_history(history, args.out_dir / "loss_history.csv")
    first, last = history[0]["total"], history[-1]["total"]
    print(f"trained {cfg.train.epochs} epochs: loss {first:.4f} -> {last:.4f}")
    print(f"wrote {args.out_dir / 'model.json'}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    cfg = _load(args)
    samples = load_dataset(args.dataset)
    old = load_model(args.model)
    result = TrainResult(encoder=old.encoder, decoder=old.decoder,
                         teacher_w=old.teacher_w, teacher_b=old.teacher_b,
                         a=old.dynamics.a, b=old.dynamics.b, history=[])
    model = fit_model(result, samples, cfg, {"source": str(args.dataset)})
    args.out_dir.mkdir(parents=True, exist_ok=True)
    save_model(model, args.out_dir / "model.json")
    print(f"wrote {args.out_dir / 'model.json'}")
    return EXIT_OK


def _run_one(task):
    scenario_name, mode_kind, delta, model_path, cfg = task
    model = load_model(model_path)
    scenario = scenario_by_name(scenario_name)
    mode = EvalMode(mode_kind, delta if mode_kind == "margin" else None)
    return run(scenario, mode, model, cfg)


def _margin_delta(cfg, model_path, scenarios) -> float:
    """Configured fixed margin, or the mean spread over set+point runs."""
    if not math.isnan(cfg.controller.margin_delta):
        return cfg.controller.margin_delta
    model = load_model(model_path)
    trace_sets = []
    for name in scenarios:
        for kind in ("set", "point"):
            _, traces = run(scenario_by_name(name), EvalMode(kind), model, cfg)
            trace_sets.append(traces)
    return mean_spread_delta(trace_sets)


def _cmd_run(args) -> int:
    cfg = _load(args)
    scenarios = ([s.name for s in canonical_scenarios()]
                 if args.scenario == "all" else [scenario_by_name(args.scenario).name])
    modes = ["set", "point", "margin"] if args.mode == "all" else [args.mode]
    delta = _margin_delta(cfg, args.model, scenarios) if "margin" in modes else None

    tasks = [(s, m, delta, args.model, cfg) for s in scenarios for m in modes]
    if args.parallel > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(task) for task in tasks]

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for (scen, mode_kind, _, _, _), (report, traces) in zip(tasks, results):
        stem = f"{scen.lower()}_{mode_kind}"
        save_trace(traces, args.out_dir / f"trace_{stem}.csv", timing=args.timing)
        save_run_report(report, args.out_dir / f"report_{stem}.json", timing=args.timing)
    if delta is not None:
        with open(args.out_dir / "margin_delta.txt", "w", encoding="utf-8") as fh:
            fh.write(f"{delta:.17g}\n")

    agg = aggregate(results)
    text = render_text(agg, timing=args.timing)
    with open(args.out_dir / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text)

    if len(results) == 1:
        verdict = results[0][0].verdict
        return _VERDICT_CODES.get(verdict, EXIT_TIMEOUT)
    return EXIT_OK


def _cmd_analyze(args) -> int:
    from . import analyze as _analyze

    return _analyze.analyze_directory(args.trace_dir, model_path=args.model,
                                      timing=args.timing)


def _cmd_write_config(args) -> int:
    with open(args.path, "w", encoding="utf-8") as fh:
        fh.write(default_config_text())
    print(f"wrote {args.path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handlers = {
        "gen-data": _cmd_gen_data,
        "train": _cmd_train,
        "fit": _cmd_fit,
        "run": _cmd_run,
        "analyze": _cmd_analyze,
        "write-config": _cmd_write_config,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
