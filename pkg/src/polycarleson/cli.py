"""Command line entry point: ``polycarleson <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import sys
import time

from . import harness
from .harness import RunConfig

SUBCOMMANDS = {
    "verify-appendix": "growth, sublevel and tile-width oracles",
    "verify-kernel": "kernel decomposition identity, oddness and supports",
    "decompose": "partition, support, reconstruction and critical-set certificates",
    "verify-lemma0": "pair interaction decay",
    "verify-trees": "tree, sparse-set, tree-pair and row sweeps",
    "forest": "mass levels, trees, forests and rows with certificates",
    "norms": "empirical L^p -> L^r lower bounds",
    "report": "every suite above",
}


def _flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="file of key = value lines; flags override it")
    p.add_argument("--d", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--r", type=float)
    p.add_argument("--kmax", dest="k_max", type=int)
    p.add_argument("--grid", dest="m", type=int, help="grid exponent: 2^grid cells")
    p.add_argument("--seed", type=int)
    p.add_argument("--eps0", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--K", type=float)
    p.add_argument("--M", type=int)
    p.add_argument("--kernel", choices=["telescoping", "narrow"])
    p.add_argument("--candidates", type=int, help="phase values per coefficient")
    p.add_argument("--trials", type=int)
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polycarleson", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, text in SUBCOMMANDS.items():
        _flags(sub.add_parser(name, help=text, description=text))
    return parser


def make_config(args: argparse.Namespace) -> RunConfig:
    values = harness.read_config(args.config) if args.config else {}
    for key in ("d", "p", "r", "k_max", "m", "seed", "eps0", "N", "K", "M", "kernel",
                "candidates", "trials", "out"):
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    return RunConfig(**values)


def _suites(command: str, cfg: RunConfig):
    """Named thunks, each returning one or more reports."""
    t = cfg.trials
    appendix = ("appendix", lambda: harness.verify_appendix(cfg.d, t or 1000, cfg.seed))
    kernel = ("kernel", lambda: harness.verify_kernel(t or 1000, seed=cfg.seed))
    tiles = [("partition", lambda: harness.verify_partition(cfg.d, cfg.k_max, cfg.m, t or 20, cfg.seed)),
             ("support", lambda: harness.verify_support(cfg.d, cfg.k_max, cfg.m, t or 100, cfg.seed)),
             ("reconstruction", lambda: harness.verify_reconstruction(cfg.d, cfg.k_max, cfg.m, cfg.seed)),
             ("critical", lambda: harness.verify_critical(cfg.d, t or 500, cfg.seed, cfg.eps0))]
    lemma0 = ("lemma0", lambda: harness.verify_lemma0(cfg, t or 200))
    trees = ("trees", lambda: harness.verify_trees(cfg))
    forests = [("forest", lambda: harness.verify_forest(cfg)),
               ("forest_relaxed", lambda: harness.verify_forest(cfg, relaxed=True))]
    norms = ("norms", lambda: harness.run_norm_experiment(cfg))
    table = {"verify-appendix": [appendix], "verify-kernel": [kernel], "decompose": tiles,
             "verify-lemma0": [lemma0], "verify-trees": [trees], "forest": forests,
             "norms": [norms]}
    table["report"] = [appendix, kernel, *tiles, lemma0, trees, *forests, norms]
    return table[command]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:      # bad flags or --help
        return int(exc.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = make_config(args)
        if args.command in ("norms", "report"):
            cfg.check_norm_exponents()
    except (ValueError, OSError) as exc:
        print(f"polycarleson: error: {exc}", file=sys.stderr)
        return 2
    reports, runtimes = [], {}
    for name, thunk in _suites(args.command, cfg):
        t0 = time.perf_counter()
        out = thunk()
        runtimes[name] = time.perf_counter() - t0
        for rep in out if isinstance(out, list) else [out]:
            reports.append(rep)
            status = "PASS" if rep.passed else "FAIL"
            failed = [k for k, v in rep.checks.items() if not v]
            print(f"{status} {rep.name}" + (f"  failed: {', '.join(failed)}" if failed else ""))
        print(f"     {name}: {runtimes[name]:.1f} s")
    path = harness.write_report(reports, cfg, runtimes)
    print(f"report: {path}")
    return 0 if all(r.passed for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
