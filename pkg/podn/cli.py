"""Command-line interface: ``run``, ``suite`` and ``generate``."""
import argparse
import json
import logging
import sys
from typing import List, Optional

from podn.errors import PodnError
from podn.harness import run_dir, run_experiment, run_suite
from utils.config import METHODS, load_settings
from utils.data_processing import generate_synthetic, save_dataset

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default="configuration.ini",
                        help="settings file (INI, or JSON when it ends in .json)")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument("--quiet", action="store_true", help="warnings only, no progress bar")


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", choices=METHODS, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out-dir", default=None)
    parser.add_argument("--eps-mu", type=float, default=None, help="reject threshold factor (mu = eps_mu * eta)")
    parser.add_argument("--rho", type=float, default=None, help="margin threshold factor")
    parser.add_argument("--omega", type=float, default=None)
    parser.add_argument("--w1", type=float, default=None)
    parser.add_argument("--w2", type=float, default=None)
    parser.add_argument("--trigger", type=int, default=None, help="labels of one new category before expansion (5)")
    parser.add_argument("--allometry", type=float, default=None, help="lr factor of the new head column (10)")
    parser.add_argument("--memory-k", type=int, default=None, help="memory samples per category (5)")
    parser.add_argument("--label-budget", type=int, default=None, help="stream labels given to closed_baseline")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="podn", description="Open-set recognition with prototypes and radiuses")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="one experiment")
    _add_common(run)
    _add_experiment_flags(run)
    run.set_defaults(func=cmd_run)

    suite = commands.add_parser("suite", help="several methods over several seeds")
    _add_common(suite)
    _add_experiment_flags(suite)
    suite.add_argument("--seeds", type=int, nargs="+", default=None,
                       help="seeds to run (default: 10 seeds from the configured seed)")
    suite.add_argument("--methods", choices=METHODS, nargs="+", default=list(METHODS))
    suite.add_argument("--jobs", type=int, default=1, help="seeds run in parallel")
    suite.add_argument("--db", default=None, help="DuckDB file receiving the long-format metrics")
    suite.set_defaults(func=cmd_suite)

    generate = commands.add_parser("generate", help="write a synthetic dataset CSV")
    _add_common(generate)
    generate.add_argument("output")
    generate.add_argument("--clusters", type=int, default=None)
    generate.add_argument("--dim", type=int, default=None)
    generate.add_argument("--per-cluster", type=int, default=None)
    generate.add_argument("--separation", type=float, default=None)
    generate.add_argument("--sigma", type=float, default=None)
    generate.add_argument("--seed", type=int, default=None)
    generate.set_defaults(func=cmd_generate)
    return parser


def _settings(args: argparse.Namespace):
    return load_settings(
        args.config,
        method=args.method,
        seed=args.seed,
        out_dir=args.out_dir,
        label_budget=args.label_budget,
        eps_mu=args.eps_mu,
        rho=args.rho,
        omega=args.omega,
        w1=args.w1,
        w2=args.w2,
        trigger=args.trigger,
        allometry=args.allometry,
        memory_k=args.memory_k,
    )


def cmd_run(args: argparse.Namespace) -> int:
    config = _settings(args)
    report = run_experiment(config)
    summary = report.metrics()
    if config.out_dir:
        summary["run_dir"] = str(run_dir(config))
    print(json.dumps(summary, indent=2))
    return 0


def cmd_suite(args: argparse.Namespace) -> int:
    config = _settings(args)
    seeds = args.seeds if args.seeds else list(range(config.seed, config.seed + 10))
    result = run_suite(config, args.methods, seeds, jobs=args.jobs, db_path=args.db, progress=not args.quiet)
    print(result.summary.to_string(index=False))
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    settings = load_settings(args.config)
    data = settings.data
    dataset = generate_synthetic(
        n_clusters=args.clusters if args.clusters is not None else data.n_clusters,
        dim=args.dim if args.dim is not None else data.dim,
        per_cluster=args.per_cluster if args.per_cluster is not None else data.per_cluster,
        separation=args.separation if args.separation is not None else data.separation,
        sigma=args.sigma if args.sigma is not None else data.sigma,
        seed=args.seed if args.seed is not None else settings.seed,
    )
    path = save_dataset(dataset, args.output)
    logger.info("wrote %d samples to %s", len(dataset), path)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    try:
        return args.func(args)
    except (PodnError, OSError, ValueError) as exc:
        logger.debug("command failed", exc_info=True)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
