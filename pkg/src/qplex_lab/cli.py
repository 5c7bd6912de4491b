"""Command line entry point: ``qplex-lab {run,dataset,compare,accept}``."""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

from .config import ExperimentConfig, parse_pairs, parse_text
from .errors import UsageError


def _seed_list(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        lo, sep, hi = part.partition("-")
        try:
            seeds += list(range(int(lo), int(hi) + 1)) if sep else [int(lo)]
        except ValueError:
            raise UsageError(f"seeds: malformed value {text!r}") from None
    return seeds


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qplex-lab", description="Train, compare and check value-factorisation learners "
                                "on matrix games and a two-state MMDP.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="train one configuration (optionally over several seeds)")
    run.add_argument("--preset", help="named preset applied before the config file and flags")
    run.add_argument("--config", help="flat key=value config file")
    run.add_argument("--seeds", help="seed list such as 0-5 or 0,3; each seed gets its own sub-directory")
    run.add_argument("--workers", type=int, default=1, help="parallel worker processes for --seeds")
    for f in fields(ExperimentConfig):
        run.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", metavar="V")
    run.add_argument("pairs", nargs="*", help="extra key=value overrides")

    ds = sub.add_parser("dataset", help="write a uniform offline dataset")
    ds.add_argument("--env", required=True)
    ds.add_argument("--episodes", type=int, required=True)
    ds.add_argument("--seed", type=int, default=0)
    ds.add_argument("--mode", choices=("uniform", "exhaustive"), default="uniform")
    ds.add_argument("--out", required=True)

    cmp_ = sub.add_parser("compare", help="median / quartile summary over run directories")
    cmp_.add_argument("runs", nargs="+")
    cmp_.add_argument("--report", required=True)

    acc = sub.add_parser("accept", help="run the acceptance criteria and print one line each")
    acc.add_argument("--only", help="comma separated criterion numbers")
    return p


def config_from_args(args) -> ExperimentConfig:
    pairs: list[tuple[str, str]] = []
    if args.preset:
        pairs.append(("preset", args.preset))
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"config: cannot read {args.config} ({exc.strerror})") from None
        pairs += parse_text(text)
    for f in fields(ExperimentConfig):
        v = getattr(args, f"cfg_{f.name}")
        if v is not None:
            pairs.append((f.name, v))
    for item in args.pairs:
        if "=" not in item:
            raise UsageError(f"expected key=value, got {item!r}")
        pairs.append(tuple(item.split("=", 1)))
    return parse_pairs(pairs)


def _run_one(cfg: ExperimentConfig) -> str:
    from .experiment import run_experiment

    run, out = run_experiment(cfg)
    last = run.rows[-1]
    return f"{out}: return={last.mean_return:.4g} q_inf_norm={last.q_inf_norm:.4g} evals={len(run.rows)}"


def cmd_run(args) -> int:
    from .experiment import output_dir

    cfg = config_from_args(args)
    if not args.seeds:
        print(_run_one(cfg))
        return 0
    base = output_dir(replace(cfg, seed=0)).parent if not cfg.out else Path(cfg.out)
    cfgs = [replace(cfg, seed=s, out=str(base / f"seed{s}") if cfg.out else "") for s in _seed_list(args.seeds)]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            for line in pool.map(_run_one, cfgs):
                print(line)
    else:
        for c in cfgs:
            print(_run_one(c))
    return 0


def cmd_dataset(args) -> int:
    from .dataset import make_uniform_dataset

    eps = make_uniform_dataset(args.env, args.episodes, args.seed, args.out, args.mode == "exhaustive")
    print(f"wrote {len(eps)} episodes ({sum(len(e) for e in eps)} transitions) to {args.out}")
    return 0


def cmd_compare(args) -> int:
    from .experiment import compare_runs

    table = compare_runs(args.runs, args.report)
    print(f"wrote {len(table)} summary rows to {args.report}")
    return 0


def cmd_accept(args) -> int:
    from .acceptance import CRITERIA, run_criteria

    only = None
    if args.only:
        try:
            only = [int(x) for x in args.only.split(",")]
        except ValueError:
            raise UsageError(f"only: malformed criterion list {args.only!r}") from None
        bad = [k for k in only if k not in CRITERIA]
        if bad:
            raise UsageError(f"only: unknown criteria {bad}")
    results = run_criteria(only, echo=True)
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return {"run": cmd_run, "dataset": cmd_dataset, "compare": cmd_compare, "accept": cmd_accept}[args.verb](args)
    except UsageError as exc:
        print(f"qplex-lab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
