"""Command-line entry point.

    dftsotfs recipes
    dftsotfs run --recipe fig5_papr [--seed S] [--out DIR] [--threads N]
    dftsotfs run --config exp.yaml [--seed S] [--out DIR] [--threads N]

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import yaml

from .experiments import (ConfigError, ExperimentConfig, ResultRecord, TrialError, list_recipes, parse_config,
                          recipe_config, run_experiment)

log = logging.getLogger("dftsotfs")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
CSV_HEADER = ["experiment", "point", "metric", "value", "trials", "ci95"]


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_csv(records: list[ResultRecord], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.experiment, r.point, r.metric, _fmt(r.value), r.trials, _fmt(r.ci95)])


def write_summary(cfg: ExperimentConfig, name: str, records: list[ResultRecord], path: Path) -> None:
    summary = {
        "name": name,
        "config": cfg.to_dict(),
        "results": [{k: (None if isinstance(v, float) and math.isnan(v) else v)
                     for k, v in dataclasses.asdict(r).items()} for r in records],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError("config", f"cannot read {path}: {e.strerror}") from None
    except yaml.YAMLError as e:
        raise ConfigError("config", f"not valid YAML: {e}") from None
    return parse_config(data)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dftsotfs", description="DFT-s-OTFS sensing and communication experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("recipes", help="list built-in experiment recipes")
    run = sub.add_parser("run", help="run an experiment")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="YAML experiment file")
    src.add_argument("--recipe", help="built-in recipe name")
    run.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
    run.add_argument("--out", help="output directory (default: the config's output, else results/<name>)")
    run.add_argument("--threads", type=int, default=1, help="worker threads for independent trials")
    return p


def _run(args) -> int:
    if args.recipe:
        cfg = recipe_config(args.recipe)
        name = args.recipe
    else:
        cfg = load_config(args.config)
        name = Path(args.config).stem
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.threads < 1:
        raise ConfigError("threads", "must be >= 1")
    out = Path(args.out or cfg.output or Path("results") / name)
    log.info("running %s (%s) seed=%d -> %s", name, cfg.experiment, cfg.seed, out)
    records = run_experiment(cfg, threads=args.threads)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(records, out / f"{name}.csv")
    write_summary(cfg, name, records, out / f"{name}.json")
    print(out / f"{name}.csv")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "recipes":
        for name in list_recipes():
            print(name)
        return EXIT_OK
    try:
        return _run(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrialError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ArithmeticError, ValueError, RuntimeError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
