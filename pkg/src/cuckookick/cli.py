"""``cuckookick`` command line: run an experiment and write CSV."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .bench import (
    DEFAULT_GRID,
    Experiment,
    ExperimentConfig,
    emit_csv,
    rows_to_csv,
    run_chain_length,
    run_dary_fill,
    run_serial_fill,
    run_touch_sim,
    run_txn_aborts,
    touch_to_csv,
)
from .core import InvalidConfigError, Policy
from .workload import parse_ratios

DEFAULT_POLICIES = {
    Experiment.SERIAL_FILL: ["random"],
    Experiment.DARY_FILL: ["random", "rattle", "khosla", "bfs", "sorted"],
    Experiment.CHAIN_LENGTH: ["random", "bfs", "sorted"],
}


def _densities(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad density list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cuckookick", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for exp in Experiment:
        p = sub.add_parser(exp.value)
        p.add_argument("--bins", type=int, default=None, help="number of bins n")
        p.add_argument("--bin-size", type=int, default=None, help="slots per bin B")
        p.add_argument("--hashes", type=int, default=None, help="hash functions per key (d)")
        p.add_argument("--policy", action="append", choices=[x.value for x in Policy],
                       help="eviction policy; repeat for several")
        p.add_argument("--ghosts", action="store_true", help="enable ghost insertions")
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--densities", type=_densities, default=None, help="comma list, increasing")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=8)
        p.add_argument("--ops-per-txn", type=int, default=100)
        p.add_argument("--ratios", default="1:0:1:1", help="insert:delete:overwrite:read")
        p.add_argument("--preset", type=int, action="append", choices=range(1, 7),
                       help="engine preset; repeat for several (default: all six)")
        p.add_argument("--max-steps", type=int, default=None, help="walk/search cap per insert")
        p.add_argument("--rounds", type=int, default=1000, help="touch-sim rounds per trial (D)")
        p.add_argument("--touches", type=int, default=2, help="touch-sim slots per thread (j)")
        p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    return parser


def _config(exp: Experiment, a: argparse.Namespace) -> ExperimentConfig:
    txn = exp is Experiment.TXN_ABORTS
    dary = exp is Experiment.DARY_FILL
    bins = a.bins or (1 << 11 if txn else 1 << 10)
    bin_size = a.bin_size or (8 if txn else 1 if dary else 4)
    hashes = a.hashes or (4 if dary else 2)
    trials = a.trials or (20 if txn else 50)
    if a.densities:
        grid = a.densities
    elif txn:
        grid = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95]
    else:
        grid = list(DEFAULT_GRID)
    return ExperimentConfig(
        experiment=exp, bins=bins, bin_size=bin_size, hashes=hashes,
        policies=[Policy(p) for p in (a.policy or DEFAULT_POLICIES.get(exp, ["random"]))],
        ghosts=a.ghosts, trials=trials, densities=grid, seed=a.seed, max_steps=a.max_steps,
        threads=a.threads, ops_per_txn=a.ops_per_txn, ratios=parse_ratios(a.ratios),
        presets=a.preset or [1, 2, 3, 4, 5, 6], t=a.threads, j=a.touches, rounds=a.rounds,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    exp = Experiment(args.command)
    try:
        cfg = _config(exp, args)
        if exp is Experiment.TOUCH_SIM:
            res = run_touch_sim(cfg.t, cfg.j, cfg.bins, cfg.bin_size, cfg.rounds, cfg.trials, cfg.seed)
            text = touch_to_csv([res])
            if args.out:
                with open(args.out, "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
            return 0
        runner = {
            Experiment.SERIAL_FILL: run_serial_fill,
            Experiment.DARY_FILL: run_dary_fill,
            Experiment.CHAIN_LENGTH: run_chain_length,
            Experiment.TXN_ABORTS: run_txn_aborts,
        }[exp]
        diagnostics: list = []
        rows = runner(cfg) if exp is Experiment.TXN_ABORTS else runner(cfg, diagnostics)
    except InvalidConfigError as exc:
        print(f"cuckookick: {exc}", file=sys.stderr)
        return 2
    for d in diagnostics if exp is not Experiment.TXN_ABORTS else []:
        state = "" if d.completed else " (incomplete, excluded)"
        print(f"trial {d.trial} {d.policy}{'+ghosts' if d.ghosts else ''}: {d.failures} failed inserts, "
              f"first at density {d.first_failure_density}{state}", file=sys.stderr)
    if args.out:
        emit_csv(rows, args.out)
    else:
        sys.stdout.write(rows_to_csv(rows))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
