"""
Experiment runners behind the bench CLI.

Every row carries the seed it was produced with and the hash of its instance,
so any number in an output CSV can be recomputed on its own.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import config
from .coverage import (
    CoverageInstance,
    best_of_k,
    derand_cover,
    eval_F,
    gradient_cover,
    greedy_cover,
    hybrid_cover,
    integral_part,
    solve_cover_ilp,
    solve_cover_lp,
)
from .errors import ConfigError
from .instances import (
    gen_chessboard,
    gen_fpp,
    gen_routing_instance,
    instance_hash,
    load_instance,
    make_replay,
)
from .lp import LpStatus, solve_external, solve_ilp
from .ptas import PointSet, build_udg, ptas_solve
from .rounding import derive_seed
from .routing import (
    build_routing_ilp,
    decompose_all,
    round_decomposition,
    solution_to_ilp_point,
    solve_routing_lp,
    solve_slack_lp,
)
from .schemas import COVERAGE_METHODS, ROUTING_METHODS, SCHEMA_VERSION, BenchConfig, content_hash

logger = logging.getLogger(__name__)

# bench method name -> (rounding method, which LP the decomposition comes from)
ROUTING_PLAN: Dict[str, Tuple[str, str]] = {
    "RR-tree": ("tree", "lp"),
    "RR-bitwise": ("bitwise", "lp"),
    "RR+": ("bitwise", "slack"),
    "DeRR-bitwise": ("derand_bitwise", "lp"),
    "DeRR-tree": ("derand_tree", "lp"),
    "DeRR+": ("derand_tree", "slack"),
    "independent": ("independent", "lp"),
}

HYBRID_MODES = ("random", "derand", "gradient")


def _std(s: pd.Series) -> float:
    return float(s.std(ddof=1)) if len(s) > 1 else 0.0


def aggregate(raw: pd.DataFrame, keys: Sequence[str], value: str) -> pd.DataFrame:
    """Mean, sample standard deviation (0 for a single run) and count per key."""
    named = {
        "mean": (value, "mean"),
        "std": (value, _std),
        "n": (value, "size"),
    }
    if "gap_pct" in raw.columns:
        named["gap_pct"] = ("gap_pct", "mean")
    if "integral" in raw.columns:
        named["integral"] = ("integral", "mean")
    summary = raw.groupby(list(keys), sort=True, dropna=False).agg(**named).reset_index()
    summary.insert(0, "schema_version", SCHEMA_VERSION)
    return summary


@dataclass
class ResultTable:
    raw: pd.DataFrame
    summary: pd.DataFrame

    def write(self, out_dir: str, stem: str) -> Dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"raw": out / f"{stem}_raw.csv", "summary": out / f"{stem}.csv"}
        self.raw.to_csv(paths["raw"], index=False)
        self.summary.to_csv(paths["summary"], index=False)
        for kind, p in paths.items():
            logger.info(f"Wrote {kind} results to {p}")
        return paths


def _run_jobs(fn: Callable, jobs: List[tuple], workers: int) -> List[dict]:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(fn, jobs))
    else:
        batches = [fn(job) for job in jobs]
    return [row for batch in batches for row in batch]


def routing_seed_rows(
    width: int,
    height: int,
    k: int,
    demands: str,
    seed: int,
    methods: Sequence[str],
    ilp: str = config.ILP_MODE,
    delta: float = config.SLACK_DELTA,
    time_limit: float = config.ILP_TIME_LIMIT,
    gap_limit: float = config.ILP_GAP_LIMIT,
) -> List[dict]:
    """Runs every requested routing method on one generated instance."""
    net, requests = gen_routing_instance(width, height, k, demands, seed)
    digest = content_hash(make_replay(width, height, demands, seed, requests))
    c_star, flows = solve_routing_lp(net, requests)
    decomps = {"lp": decompose_all(net, requests, flows)}
    slack_load = math.nan
    if any(ROUTING_PLAN.get(m, ("", ""))[1] == "slack" for m in methods):
        _, slack_flows = solve_slack_lp(net, requests, c_star, min(delta, c_star))
        slack_load = float(slack_flows.sum(axis=0).max(initial=0.0))
        decomps["slack"] = decompose_all(net, requests, slack_flows)

    results: Dict[str, dict] = {}
    solutions = []
    for method in methods:
        if method == "OPT":
            continue
        kind, source = ROUTING_PLAN[method]
        run_seed = derive_seed(seed, method)
        start = time.perf_counter()
        sol = round_decomposition(net, decomps[source], kind, rng=run_seed)
        results[method] = {
            "congestion": sol.congestion,
            "feasible": sol.feasible,
            "rng_seed": str(run_seed),
            "wall_ms": 1000 * (time.perf_counter() - start),
            "status": "",
        }
        if sol.feasible:
            solutions.append(sol)

    opt: Optional[int] = None
    if "OPT" in methods and ilp != "off":
        start = time.perf_counter()
        model = build_routing_ilp(net, requests)
        if ilp == "external":
            res = solve_external(model)
        else:
            incumbent = None
            for sol in sorted(solutions, key=lambda s: s.congestion):
                incumbent = solution_to_ilp_point(net, requests, sol)
                if incumbent is not None:
                    break
            res = solve_ilp(model, time_limit=time_limit, gap_limit=gap_limit, incumbent=incumbent)
        if res.values is not None:
            opt = int(round(res.objective_value))
        results["OPT"] = {
            "congestion": opt,
            "feasible": res.status == LpStatus.OPTIMAL,
            "rng_seed": "",
            "wall_ms": 1000 * (time.perf_counter() - start),
            "status": res.status.value,
        }

    reference = opt if opt is not None else max(1, math.ceil(c_star - config.FEAS_TOL))
    rows = []
    for method, rec in results.items():
        congestion = rec["congestion"]
        gap = (
            math.nan
            if method == "OPT" or congestion is None
            else 100.0 * (congestion - reference) / reference
        )
        rows.append(
            {
                "schema_version": SCHEMA_VERSION,
                "grid": f"{width}x{height}",
                "k": k,
                "demands": demands,
                "seed": seed,
                "instance_hash": digest,
                "method": method,
                "congestion": congestion,
                "feasible": rec["feasible"],
                "c_star": c_star,
                "slack_load": slack_load,
                "reference": reference,
                "gap_pct": gap,
                "rng_seed": rec["rng_seed"],
                "status": rec["status"],
                "wall_ms": rec["wall_ms"],
            }
        )
    logger.info(
        f"{width}x{height} k={k} seed {seed}: C*={c_star:.3f} "
        + " ".join(f"{m}={r['congestion']}" for m, r in results.items())
    )
    return rows


def _routing_job(job: tuple) -> List[dict]:
    return routing_seed_rows(*job)


def run_routing_table(cfg: BenchConfig) -> ResultTable:
    """Congestion per (grid, k, demand mode, method), averaged over seeds."""
    methods = list(cfg.methods or ROUTING_METHODS)
    unknown = sorted(set(methods) - set(ROUTING_METHODS))
    if unknown:
        raise ConfigError(f"unknown routing methods: {', '.join(unknown)}")
    if cfg.ilp == "off" and "OPT" in methods:
        logger.warning("ILP disabled; dropping OPT, gaps are taken against ceil(C*)")
        methods.remove("OPT")
        if not methods:
            raise ConfigError("no routing methods left to run")
    jobs = [
        (
            w,
            h,
            k,
            cfg.demands,
            derive_seed(cfg.seed_base, "routing", w, h, k, run),
            methods,
            cfg.ilp,
            cfg.delta,
            cfg.time_limit,
            cfg.gap_limit,
        )
        for w, h in cfg.grids
        for k in cfg.ks
        for run in range(cfg.seeds)
    ]
    logger.info(f"Running {len(jobs)} routing instances with {cfg.workers} worker(s)")
    raw = pd.DataFrame(_run_jobs(_routing_job, jobs, cfg.workers))
    raw = raw.sort_values(["grid", "k", "demands", "seed", "method"]).reset_index(drop=True)
    summary = aggregate(raw, ["grid", "k", "demands", "method"], "congestion")
    return ResultTable(raw=raw, summary=summary)


def load_coverage_instance(spec: str) -> CoverageInstance:
    """'chessboard:K', 'fpp:Q' or the path of a canonical instance file."""
    kind, _, arg = spec.partition(":")
    if kind == "chessboard" and arg:
        return gen_chessboard(int(arg))
    if kind == "fpp" and arg:
        return gen_fpp(int(arg))
    return load_instance(spec)


def coverage_rows(instance: CoverageInstance, cfg: BenchConfig, methods: Sequence[str]) -> List[dict]:
    digest = instance_hash(instance)
    budgets = cfg.budgets or [instance.budget]
    rows: List[dict] = []

    def record(budget, method, value, cost, seed=None, rho=math.nan, wall_ms=0.0, integral=None):
        rows.append(
            {
                "schema_version": SCHEMA_VERSION,
                "instance": instance.name,
                "instance_hash": digest,
                "budget": budget,
                "method": method,
                "rho": rho,
                "seed": "" if seed is None else str(seed),
                "value": value,
                "cost": cost,
                "integral": math.nan if integral is None else integral,
                "wall_ms": wall_ms,
            }
        )

    lp_methods = {"LP", "LP-once", "bound", "fixed", "best-of-k", "derand", "gradient"}
    for b_idx, budget in enumerate(budgets):
        sub = instance.restricted(budget=budget)
        if lp_methods & set(methods):
            start = time.perf_counter()
            frac = solve_cover_lp(sub)
            lp_ms = 1000 * (time.perf_counter() - start)
            fixed = integral_part(sub, frac.y)
            if "LP" in methods:
                record(budget, "LP", frac.W_star, float(sub.costs @ frac.y), wall_ms=lp_ms, integral=fixed)
            if "fixed" in methods:
                chosen = np.flatnonzero(frac.y >= 1.0 - config.INT_TOL)
                record(budget, "fixed", fixed, sub.cost(chosen), integral=fixed)
            if "LP-once" in methods:
                record(budget, "LP-once", eval_F(frac.y, sub), float(sub.costs @ frac.y))
            if "bound" in methods:
                record(budget, "bound", (1.0 - 1.0 / math.e) * frac.W_star, float(sub.costs @ frac.y))
            for method in ("best-of-k", "derand", "gradient"):
                if method not in methods:
                    continue
                seed = derive_seed(cfg.seed_base, "coverage", method, b_idx) if method == "best-of-k" else None
                start = time.perf_counter()
                if method == "best-of-k":
                    sol = best_of_k(sub, frac.y, k=cfg.best_of_k, rng=seed)
                elif method == "derand":
                    sol = derand_cover(sub, frac.y)
                else:
                    sol = gradient_cover(sub, frac.y)
                record(budget, method, sol.value, sol.cost, seed=seed,
                       wall_ms=1000 * (time.perf_counter() - start), integral=sol.integral_value)
        if "greedy" in methods:
            for run in range(cfg.seeds):
                seed = derive_seed(cfg.seed_base, "coverage", "greedy", b_idx, run)
                start = time.perf_counter()
                sol = greedy_cover(sub, rng=seed)
                record(budget, "greedy", sol.value, sol.cost, seed=seed,
                       wall_ms=1000 * (time.perf_counter() - start))
        if "hybrid" in methods:
            for r_idx, rho in enumerate(cfg.rho_grid):
                for mode in HYBRID_MODES:
                    seed = derive_seed(cfg.seed_base, "coverage", "hybrid", b_idx, r_idx) if mode == "random" else None
                    start = time.perf_counter()
                    sol = hybrid_cover(sub, rho, mode=mode, rng=seed, k=cfg.best_of_k)
                    record(budget, f"hybrid-{mode}", sol.value, sol.cost, seed=seed, rho=rho,
                           wall_ms=1000 * (time.perf_counter() - start), integral=sol.integral_value)
        logger.info(f"{instance.name} L={budget}: {sum(1 for r in rows if r['budget'] == budget)} rows")
    return rows


def run_coverage_sweep(cfg: BenchConfig) -> ResultTable:
    """LP bound, roundings, greedy and hybrids over a budget list and rho grid."""
    if not cfg.instance:
        raise ConfigError("coverage-sweep needs an instance (--instance)")
    methods = list(cfg.methods or COVERAGE_METHODS)
    unknown = sorted(set(methods) - set(COVERAGE_METHODS))
    if unknown:
        raise ConfigError(f"unknown coverage methods: {', '.join(unknown)}")
    if "hybrid" in methods and not cfg.rho_grid:
        logger.warning("hybrid requested without --rho-grid; skipping it")
    instance = load_coverage_instance(cfg.instance)
    raw = pd.DataFrame(coverage_rows(instance, cfg, methods))
    raw = raw.sort_values(["budget", "method", "rho", "seed"], na_position="first").reset_index(drop=True)
    summary = aggregate(raw, ["instance", "budget", "method", "rho"], "value")
    return ResultTable(raw=raw, summary=summary)


def write_plot_data(summary: pd.DataFrame, out_dir: str, stem: str = "sweep") -> List[Path]:
    """One 'budget value' file per method (and rho) plus a gnuplot script that draws them."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for (method, rho), group in summary.groupby(["method", "rho"], sort=True, dropna=False):
        label = method if pd.isna(rho) else f"{method}-rho{rho:g}"
        path = out / f"{stem}_{label}.dat"
        with open(path, "w") as f:
            f.write("# budget value\n")
            for budget, value in group.sort_values("budget")[["budget", "mean"]].itertuples(index=False):
                f.write(f"{budget:g} {value:.6f}\n")
        written.append(path)
    script = out / f"{stem}.gp"
    plots = ", \\\n     ".join(
        f"'{p.name}' using 1:2 with linespoints title '{p.stem[len(stem) + 1:]}'" for p in written
    )
    script.write_text(
        "set xlabel 'budget'\nset ylabel 'covered weight'\nset key bottom right\n"
        f"plot {plots}\n"
    )
    written.append(script)
    logger.info(f"Wrote {len(written) - 1} plot data files and {script}")
    return written


def run_ptas(cfg: BenchConfig) -> ResultTable:
    """PTAS value per shift period for a point file; OPT added when requested."""
    if not cfg.instance or cfg.d is None:
        raise ConfigError("ptas needs a point file (--instance) and a diameter (--d)")
    points = PointSet.from_file(cfg.instance, cfg.d)
    methods = list(cfg.methods or ["PTAS"])
    budgets = [int(b) for b in (cfg.budgets or [10])]
    rows = []
    for budget in budgets:
        for ell in cfg.ells if "PTAS" in methods else []:
            start = time.perf_counter()
            res = ptas_solve(points, budget, ell, time_limit=cfg.time_limit)
            rows.append(
                {
                    "schema_version": SCHEMA_VERSION,
                    "instance": Path(cfg.instance).name,
                    "budget": budget,
                    "method": f"PTAS-{ell}",
                    "value": res.solution.value,
                    "shift": f"{res.shift[0]},{res.shift[1]}",
                    "wall_ms": 1000 * (time.perf_counter() - start),
                }
            )
        if "OPT" in methods:
            start = time.perf_counter()
            opt = solve_cover_ilp(build_udg(points, budget), time_limit=cfg.time_limit)
            rows.append(
                {
                    "schema_version": SCHEMA_VERSION,
                    "instance": Path(cfg.instance).name,
                    "budget": budget,
                    "method": "OPT",
                    "value": opt.value,
                    "shift": "",
                    "wall_ms": 1000 * (time.perf_counter() - start),
                }
            )
    raw = pd.DataFrame(rows)
    summary = aggregate(raw, ["instance", "budget", "method"], "value")
    return ResultTable(raw=raw, summary=summary)
