import argparse
import logging
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import ValidationError

from . import config
from .bench import run_coverage_sweep, run_ptas, run_routing_table, write_plot_data
from .errors import CardinalRoundingError, ConfigError
from .instances import (
    convert_facility,
    gen_chessboard,
    gen_fpp,
    gen_routing_instance,
    make_replay,
    save_instance,
    save_replay,
)
from .schemas import BenchConfig

logger = logging.getLogger(__name__)

# argparse dest -> BenchConfig field
_CONFIG_FLAGS = {
    "seeds": "seeds",
    "grid": "grids",
    "k": "ks",
    "demands": "demands",
    "delta": "delta",
    "budget": "budgets",
    "rho_grid": "rho_grid",
    "methods": "methods",
    "ilp": "ilp",
    "out": "out",
    "seed_base": "seed_base",
    "workers": "workers",
    "instance": "instance",
    "d": "d",
    "ell": "ells",
    "best_of_k": "best_of_k",
    "time_limit": "time_limit",
}


def load_config(path: Optional[str], overrides: Dict) -> BenchConfig:
    """Env defaults, then the TOML file at `path`, then non-None CLI overrides."""
    data: Dict = {}
    if path:
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return BenchConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"invalid bench configuration: {e}") from e


def _bench_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with key = value settings")
    common.add_argument("--seeds", type=int, help=f"Runs per cell (default {config.SEEDS})")
    common.add_argument("--grid", action="append", help="Grid size WxH; repeatable")
    common.add_argument("--k", type=int, nargs="+", help="Numbers of requests")
    common.add_argument("--demands", help="fixed3 or u1-5")
    common.add_argument("--delta", type=float, help="Slack LP headroom (default 1)")
    common.add_argument("--budget", type=float, nargs="+", help="Budgets L")
    common.add_argument("--rho-grid", type=float, nargs="+", help="Greedy pre-selection fractions")
    common.add_argument("--methods", nargs="+", help="Subset of methods to run")
    common.add_argument("--ilp", choices=["internal", "external", "off"], help="Exact solver")
    common.add_argument("--out", help=f"Output directory (default {config.OUT_DIR})")
    common.add_argument("--seed-base", type=int, help="Base seed for all derived streams")
    common.add_argument("--workers", type=int, help="Worker processes")
    common.add_argument("--instance", help="chessboard:K, fpp:Q, instance JSON or point file")
    common.add_argument("--d", type=float, help="Unit disk diameter")
    common.add_argument("--ell", type=int, nargs="+", help="PTAS shift periods")
    common.add_argument("--best-of-k", type=int, help="Random roundings per best-of-k run")
    common.add_argument("--time-limit", type=float, help="ILP time limit in seconds")
    return common


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cardround",
        description="Dependent randomized rounding experiments: routing and max-coverage.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = _bench_flags()
    sub.add_parser("routing-table", parents=[common], help="Congestion table over seeded grids")
    sub.add_parser("coverage-sweep", parents=[common], help="Max-coverage budget / rho sweep")
    sub.add_parser("ptas", parents=[common], help="Unit disk PTAS on a point file")

    gen = sub.add_parser("gen", help="Write a generated instance as canonical JSON")
    gen.add_argument("kind", choices=["chessboard", "fpp", "routing"])
    gen.add_argument("--k", type=int, default=4, help="Chessboard k or number of requests")
    gen.add_argument("--q", type=int, default=17, help="Prime order of the projective plane")
    gen.add_argument("--grid", default="5x5", help="Routing grid WxH")
    gen.add_argument("--demands", default="fixed3", choices=["fixed3", "uniform1to5"])
    gen.add_argument("--seed", type=int, default=config.SEED_BASE)
    gen.add_argument("--out", required=True, help="Output JSON path")

    conv = sub.add_parser("convert", help="Convert a facility-location file to max-coverage")
    conv.add_argument("file")
    conv.add_argument("--format", required=True, choices=["orlib_points", "ufllib", "orlib_matrix"])
    conv.add_argument("--threshold", type=float, required=True, help="Distance threshold d")
    conv.add_argument("--mstar", action="store_true", help="Divide assignment costs by demand")
    conv.add_argument("--budget", type=float, default=1.0)
    conv.add_argument("--out", required=True, help="Output JSON path")
    return parser


def _run_gen(args: argparse.Namespace) -> None:
    if args.kind == "chessboard":
        save_instance(gen_chessboard(args.k), args.out)
    elif args.kind == "fpp":
        save_instance(gen_fpp(args.q), args.out)
    else:
        w, _, h = args.grid.lower().partition("x")
        width, height = int(w), int(h or w)
        _, requests = gen_routing_instance(width, height, args.k, args.demands, args.seed)
        save_replay(make_replay(width, height, args.demands, args.seed, requests), args.out)
        logger.info(f"Saved routing replay to {args.out}")


def _run_bench(args: argparse.Namespace) -> None:
    overrides = {field: getattr(args, dest) for dest, field in _CONFIG_FLAGS.items()}
    cfg = load_config(args.config, overrides)
    logger.info(f"Bench configuration: {cfg.model_dump()}")
    if args.command == "routing-table":
        table = run_routing_table(cfg)
        table.write(cfg.out, "routing")
    elif args.command == "coverage-sweep":
        table = run_coverage_sweep(cfg)
        stem = Path(cfg.instance).stem.replace(":", "-")
        table.write(cfg.out, f"coverage_{stem}")
        write_plot_data(table.summary, cfg.out, stem=f"coverage_{stem}")
    else:
        table = run_ptas(cfg)
        table.write(cfg.out, f"ptas_{Path(cfg.instance).stem}")
    logger.info("\n" + table.summary.to_string(index=False))


def bench_main(argv: Optional[List[str]] = None) -> None:
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s [%(levelname)s] %(message)s",
        handlers=[logging.StreamHandler(sys.stdout)],
    )
    for noisy in ("numexpr", "matplotlib"):
        logging.getLogger(noisy).setLevel(logging.WARNING)

    args = _build_parser().parse_args(argv)
    try:
        if args.command == "gen":
            _run_gen(args)
        elif args.command == "convert":
            instance = convert_facility(
                args.file, args.format, args.threshold, mstar_descale=args.mstar, budget=args.budget
            )
            save_instance(instance, args.out)
        else:
            _run_bench(args)
    except CardinalRoundingError as e:
        logger.error(f"{args.command} failed: {e}")
        sys.exit(1)


if __name__ == "__main__":
    bench_main()
