"""
Dense LP / ILP engine.

A two-phase primal simplex on a full tableau, a best-first branch-and-bound on
top of it, and export/import of the text LP format for optional external
solvers. Sized for desk-scale models; nothing here is sparse.
"""

import heapq
import itertools
import logging
import math
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from . import config
from .errors import CardinalRoundingError, ConfigError, ParseError

logger = logging.getLogger(__name__)

Relation = Literal["<=", ">=", "="]
Sense = Literal["minimize", "maximize"]

PIVOT_TOL = 1e-9
COST_TOL = 1e-9


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration-limit"
    TIME_LIMIT = "time-limit"


@dataclass
class LinearProgram:
    """
    A linear program over n variables.

    Rows are (dense coefficient vector, relation, rhs). Bounds default to
    [0, +inf); `integrality` flags the variables branch-and-bound must make
    integral.
    """

    objective: np.ndarray
    sense: Sense = "minimize"
    rows: List[Tuple[np.ndarray, str, float]] = field(default_factory=list)
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    integrality: Optional[np.ndarray] = None
    names: Optional[List[str]] = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        n = len(self.objective)
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        self.integrality = (
            np.zeros(n, dtype=bool)
            if self.integrality is None
            else np.asarray(self.integrality, dtype=bool)
        )
        if self.names is None:
            self.names = [f"x{j}" for j in range(n)]
        if self.sense not in ("minimize", "maximize"):
            raise ValueError(f"unknown sense: {self.sense}")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if len(set(self.names)) != n or any(" " in name for name in self.names):
            raise ValueError("variable names must be unique and contain no spaces")

    @property
    def num_vars(self) -> int:
        return len(self.objective)

    @property
    def bounds(self) -> List[Tuple[float, float]]:
        return list(zip(self.lower.tolist(), self.upper.tolist()))

    def add_row(
        self, coeffs: Union[Dict[int, float], Sequence[float]], relation: Relation, rhs: float
    ) -> None:
        if relation not in ("<=", ">=", "="):
            raise ValueError(f"unknown relation: {relation}")
        if isinstance(coeffs, dict):
            vec = np.zeros(self.num_vars)
            for j, v in coeffs.items():
                vec[j] += v
        else:
            vec = np.asarray(coeffs, dtype=float)
            if len(vec) != self.num_vars:
                raise ValueError("row width does not match the objective")
        self.rows.append((vec, relation, float(rhs)))

    def matrix(self) -> Tuple[np.ndarray, List[str], np.ndarray]:
        if not self.rows:
            return np.zeros((0, self.num_vars)), [], np.zeros(0)
        A = np.vstack([r[0] for r in self.rows])
        return A, [r[1] for r in self.rows], np.array([r[2] for r in self.rows])

    def with_bounds(self, lower: np.ndarray, upper: np.ndarray) -> "LinearProgram":
        """Copy sharing the rows, with new variable bounds."""
        return replace(self, lower=np.asarray(lower, dtype=float), upper=np.asarray(upper, dtype=float))

    def evaluate(self, x: np.ndarray) -> float:
        return float(self.objective @ x)

    def is_feasible(self, x: np.ndarray, tol: float = config.FEAS_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        if np.any(x < self.lower - tol) or np.any(x > self.upper + tol):
            return False
        for vec, rel, rhs in self.rows:
            lhs = float(vec @ x)
            if rel == "<=" and lhs > rhs + tol:
                return False
            if rel == ">=" and lhs < rhs - tol:
                return False
            if rel == "=" and abs(lhs - rhs) > tol:
                return False
        return True


@dataclass
class LpSolution:
    status: LpStatus
    values: Optional[np.ndarray] = None
    objective_value: Optional[float] = None
    bound: Optional[float] = None
    gap: Optional[float] = None
    nodes: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == LpStatus.OPTIMAL


class _Tableau:
    """Standard-form tableau: constraint rows on top, reduced-cost row last."""

    def __init__(self, T: np.ndarray, basis: List[int]):
        self.T = T
        self.basis = basis
        self.iterations = 0

    @property
    def m(self) -> int:
        return self.T.shape[0] - 1

    def pivot(self, r: int, c: int) -> None:
        T = self.T
        T[r] /= T[r, c]
        col = T[:, c].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        self.basis[r] = c

    def run(self, allowed: np.ndarray, max_iter: int) -> LpStatus:
        """Primal simplex on the current reduced-cost row over `allowed` columns."""
        T = self.T
        stalled = 0
        while True:
            if self.iterations >= max_iter:
                return LpStatus.ITERATION_LIMIT
            costs = T[-1, :-1]
            candidates = np.flatnonzero((costs < -COST_TOL) & allowed)
            if len(candidates) == 0:
                return LpStatus.OPTIMAL
            if stalled >= config.LP_STALL_PIVOTS:
                c = int(candidates[0])  # Bland
            else:
                c = int(candidates[np.argmin(costs[candidates])])
            column = T[:-1, c]
            rows = np.flatnonzero(column > PIVOT_TOL)
            if len(rows) == 0:
                return LpStatus.UNBOUNDED
            ratios = T[rows, -1] / column[rows]
            best = ratios.min()
            ties = rows[ratios <= best + PIVOT_TOL]
            r = int(min(ties, key=lambda i: self.basis[i]))
            self.pivot(r, c)
            self.iterations += 1
            stalled = stalled + 1 if best <= PIVOT_TOL else 0


def _standard_form(lp: LinearProgram):
    """
    Rewrites the LP as min c'x' s.t. A'x' = b, x' >= 0.

    Returns the column map (source variable, sign), the offset so that
    x = offset + scatter(sign * x'), and the row data with finite upper bounds
    appended as rows.
    """
    n = lp.num_vars
    src: List[int] = []
    sign: List[float] = []
    offset = np.zeros(n)
    extra_rows: List[Tuple[int, float]] = []
    for j in range(n):
        lo, hi = lp.lower[j], lp.upper[j]
        if np.isfinite(lo) and np.isfinite(hi) and hi - lo <= config.FEAS_TOL:
            offset[j] = lo
        elif np.isfinite(lo):
            offset[j] = lo
            src.append(j)
            sign.append(1.0)
            if np.isfinite(hi):
                extra_rows.append((len(src) - 1, hi - lo))
        elif np.isfinite(hi):
            offset[j] = hi
            src.append(j)
            sign.append(-1.0)
        else:
            src.append(j)
            sign.append(1.0)
            src.append(j)
            sign.append(-1.0)
    src_arr = np.array(src, dtype=np.int64)
    sign_arr = np.array(sign)

    A, rels, b = lp.matrix()
    A_std = A[:, src_arr] * sign_arr if len(src_arr) else np.zeros((len(b), 0))
    b_std = b - A @ offset if len(b) else b
    width = len(src_arr)
    bound_rows = np.zeros((len(extra_rows), width))
    for k, (col, ub) in enumerate(extra_rows):
        bound_rows[k, col] = 1.0
    A_std = np.vstack([A_std, bound_rows])
    rels = list(rels) + ["<="] * len(extra_rows)
    b_std = np.concatenate([b_std, [ub for _, ub in extra_rows]])

    c = lp.objective if lp.sense == "minimize" else -lp.objective
    c_std = c[src_arr] * sign_arr if len(src_arr) else np.zeros(0)
    return src_arr, sign_arr, offset, A_std, rels, b_std, c_std


def solve_lp(lp: LinearProgram, max_iter: int = config.LP_MAX_ITER) -> LpSolution:
    """
    Solves the LP relaxation (integrality flags are ignored).

    Args:
        lp: the model.
        max_iter: pivot budget shared by both phases.

    Returns:
        LpSolution with status optimal, infeasible, unbounded or iteration-limit.
    """
    src, sign, offset, A, rels, b, c = _standard_form(lp)
    m, width = A.shape

    flip = b < 0
    A[flip] *= -1
    b = np.abs(b)
    rels = [
        {"<=": ">=", ">=": "<="}.get(rel, rel) if f else rel for rel, f in zip(rels, flip)
    ]

    n_slack = sum(1 for rel in rels if rel != "=")
    n_art = sum(1 for rel in rels if rel != "<=")
    total = width + n_slack + n_art
    T = np.zeros((m + 1, total + 1))
    T[:m, :width] = A
    T[:m, -1] = b
    basis: List[int] = []
    s, a = width, width + n_slack
    art_cols = []
    for i, rel in enumerate(rels):
        if rel == "<=":
            T[i, s] = 1.0
            basis.append(s)
            s += 1
        elif rel == ">=":
            T[i, s] = -1.0
            T[i, a] = 1.0
            basis.append(a)
            art_cols.append(a)
            s += 1
            a += 1
        else:
            T[i, a] = 1.0
            basis.append(a)
            art_cols.append(a)
            a += 1

    tab = _Tableau(T, basis)
    if art_cols:
        T[-1, art_cols] = 1.0
        for i, col in enumerate(basis):
            if col >= width + n_slack:
                T[-1] -= T[i]
        status = tab.run(np.ones(total, dtype=bool), max_iter)
        if status == LpStatus.ITERATION_LIMIT:
            return LpSolution(status=status)
        infeasibility = -T[-1, -1]
        if infeasibility > config.FEAS_TOL * max(1.0, float(np.abs(b).max(initial=0.0))):
            logger.debug(f"Phase 1 ended with infeasibility {infeasibility:.3e}")
            return LpSolution(status=LpStatus.INFEASIBLE)
        keep = []
        for i in range(tab.m):
            if tab.basis[i] < width + n_slack:
                keep.append(i)
                continue
            row = tab.T[i, : width + n_slack]
            nz = np.flatnonzero(np.abs(row) > PIVOT_TOL)
            if len(nz):
                tab.pivot(i, int(nz[0]))
                keep.append(i)
        # rows still carrying an artificial are redundant
        used = tab.iterations
        T = np.vstack([tab.T[keep], tab.T[-1:]])
        T = np.delete(T, np.arange(width + n_slack, total), axis=1)
        tab = _Tableau(T, [tab.basis[i] for i in keep])
        tab.iterations = used
        total = width + n_slack

    cost = np.zeros(total)
    cost[:width] = c
    tab.T[-1, :] = 0.0
    tab.T[-1, :total] = cost
    for i, col in enumerate(tab.basis):
        if cost[col] != 0.0:
            tab.T[-1] -= cost[col] * tab.T[i]
    status = tab.run(np.ones(total, dtype=bool), max_iter)
    if status != LpStatus.OPTIMAL:
        return LpSolution(status=status)

    xs = np.zeros(total)
    for i, col in enumerate(tab.basis):
        xs[col] = max(0.0, tab.T[i, -1])
    x = offset.copy()
    np.add.at(x, src, sign * xs[:width])
    value = lp.evaluate(x)
    logger.debug(f"LP solved: objective {value:.6f} after {tab.iterations} pivots")
    return LpSolution(
        status=LpStatus.OPTIMAL, values=x, objective_value=value, bound=value, gap=0.0
    )


def _integral_objective(lp: LinearProgram) -> bool:
    nz = np.flatnonzero(lp.objective)
    if len(nz) == 0:
        return True
    coeffs = lp.objective[nz]
    return bool(np.all(lp.integrality[nz]) and np.all(coeffs == np.round(coeffs)))


def _relative_gap(best: float, bound: float) -> float:
    return max(0.0, best - bound) / max(1.0, abs(best))


def solve_ilp(
    lp: LinearProgram,
    time_limit: float = config.ILP_TIME_LIMIT,
    gap_limit: float = config.ILP_GAP_LIMIT,
    incumbent: Optional[np.ndarray] = None,
) -> LpSolution:
    """
    Best-first branch-and-bound over LP relaxations.

    Branches on the most fractional integer variable (lowest index on ties).
    When the objective can only take integral values, node bounds are rounded
    before pruning. A feasible integral `incumbent` may be supplied to prune
    from the start.

    Returns:
        LpSolution whose `bound` is the best proven bound and `gap` the
        relative gap between incumbent and bound. Status is optimal when the
        gap closed within `gap_limit`, time-limit when the clock ran out.
    """
    start = time.monotonic()
    sign = 1.0 if lp.sense == "minimize" else -1.0
    integral_obj = _integral_objective(lp)
    int_idx = np.flatnonzero(lp.integrality)

    best_x: Optional[np.ndarray] = None
    best_val = math.inf
    if incumbent is not None:
        x0 = np.asarray(incumbent, dtype=float)
        if lp.is_feasible(x0) and np.all(
            np.abs(x0[int_idx] - np.round(x0[int_idx])) <= config.INT_TOL
        ):
            best_x, best_val = x0, sign * lp.evaluate(x0)
        else:
            logger.warning("Supplied incumbent is infeasible; ignoring it")

    counter = itertools.count()
    heap = [(-math.inf, 0, next(counter), lp.lower.copy(), lp.upper.copy())]
    nodes = 0
    stopped: Optional[LpStatus] = None
    unresolved = math.inf
    saw_unbounded = False

    while heap:
        open_bound = min(heap[0][0], unresolved)
        if best_x is not None and _relative_gap(best_val, open_bound) <= gap_limit + 1e-12:
            break
        if time.monotonic() - start > time_limit:
            stopped = LpStatus.TIME_LIMIT
            logger.warning(f"Branch-and-bound hit the time limit after {nodes} nodes")
            break
        node_bound, neg_depth, _, lower, upper = heapq.heappop(heap)
        if node_bound >= best_val - config.FEAS_TOL:
            continue
        relaxed = solve_lp(lp.with_bounds(lower, upper))
        nodes += 1
        if relaxed.status == LpStatus.INFEASIBLE:
            continue
        if relaxed.status == LpStatus.UNBOUNDED:
            saw_unbounded = True
            continue
        if relaxed.status != LpStatus.OPTIMAL:
            unresolved = min(unresolved, node_bound)
            continue
        value = sign * relaxed.objective_value
        bound = math.ceil(value - config.INT_TOL) if integral_obj else value
        if bound >= best_val - config.FEAS_TOL:
            continue
        x = relaxed.values
        frac = np.abs(x[int_idx] - np.round(x[int_idx])) if len(int_idx) else np.zeros(0)
        if len(frac) == 0 or frac.max() <= config.INT_TOL:
            candidate = x.copy()
            candidate[int_idx] = np.round(candidate[int_idx])
            best_x, best_val = candidate, sign * lp.evaluate(candidate)
            logger.debug(f"New incumbent {sign * best_val:.6f} at node {nodes}")
            continue
        j = int(int_idx[np.argmax(frac)])
        down_upper = upper.copy()
        down_upper[j] = math.floor(x[j])
        up_lower = lower.copy()
        up_lower[j] = math.ceil(x[j])
        depth = -neg_depth + 1
        heapq.heappush(heap, (bound, -depth, next(counter), lower.copy(), down_upper))
        heapq.heappush(heap, (bound, -depth, next(counter), up_lower, upper.copy()))

    open_bound = min(heap[0][0] if heap else math.inf, unresolved)
    if best_x is None:
        if stopped is not None:
            status = stopped
        elif saw_unbounded:
            status = LpStatus.UNBOUNDED
        elif unresolved < math.inf:
            status = LpStatus.ITERATION_LIMIT
        else:
            status = LpStatus.INFEASIBLE
        bound = None if open_bound == math.inf else sign * open_bound
        return LpSolution(status=status, bound=bound, nodes=nodes)

    open_bound = min(open_bound, best_val)
    gap = _relative_gap(best_val, open_bound)
    if stopped is not None:
        status = stopped
    elif gap <= gap_limit + 1e-12:
        status = LpStatus.OPTIMAL
    else:
        status = LpStatus.ITERATION_LIMIT
    logger.info(
        f"ILP finished ({status.value}): objective {sign * best_val:.6f}, "
        f"bound {sign * open_bound:.6f}, {nodes} nodes"
    )
    return LpSolution(
        status=status,
        values=best_x,
        objective_value=lp.evaluate(best_x),
        bound=sign * open_bound,
        gap=gap,
        nodes=nodes,
    )


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _linear_expr(coeffs: np.ndarray, names: Sequence[str]) -> str:
    terms = [(j, v) for j, v in enumerate(coeffs) if v != 0.0]
    if not terms:
        return f"0 {names[0]}" if names else "0"
    parts = []
    for k, (j, v) in enumerate(terms):
        op = "-" if v < 0 else "+"
        mag = _fmt(abs(v))
        if k == 0:
            parts.append(f"{'-' if v < 0 else ''}{mag} {names[j]}")
        else:
            parts.append(f"{op} {mag} {names[j]}")
    return " ".join(parts)


def export_model(lp: LinearProgram, path: Union[str, Path]) -> Path:
    """
    Writes the model in the CPLEX text LP format.

    Section order: comment, sense, objective, Subject To (one line per row),
    Bounds (one line per variable), General, Binary, End.
    """
    path = Path(path)
    names = lp.names
    binary = [
        j for j in range(lp.num_vars)
        if lp.integrality[j] and lp.lower[j] == 0.0 and lp.upper[j] == 1.0
    ]
    general = [j for j in range(lp.num_vars) if lp.integrality[j] and j not in set(binary)]
    lines = [
        "\\ cardinal-rounding model",
        "Maximize" if lp.sense == "maximize" else "Minimize",
        f" obj: {_linear_expr(lp.objective, names)}",
        "Subject To",
    ]
    for i, (vec, rel, rhs) in enumerate(lp.rows):
        lines.append(f" c{i}: {_linear_expr(vec, names)} {rel} {_fmt(rhs)}")
    lines.append("Bounds")
    for j, (lo, hi) in enumerate(lp.bounds):
        if np.isfinite(lo) and np.isfinite(hi):
            lines.append(f" {_fmt(lo)} <= {names[j]} <= {_fmt(hi)}")
        elif np.isfinite(lo):
            lines.append(f" {names[j]} >= {_fmt(lo)}")
        elif np.isfinite(hi):
            lines.append(f" -inf <= {names[j]} <= {_fmt(hi)}")
        else:
            lines.append(f" {names[j]} free")
    if general:
        lines.append("General")
        lines.append(" " + " ".join(names[j] for j in general))
    if binary:
        lines.append("Binary")
        lines.append(" " + " ".join(names[j] for j in binary))
    lines.append("End")
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"Exported model with {lp.num_vars} variables, {len(lp.rows)} rows to {path}")
    return path


def import_solution(path: Union[str, Path], lp: LinearProgram) -> LpSolution:
    """
    Reads a "name value" per line solution file for `lp`.

    Blank lines and lines starting with '#' are skipped; variables absent
    from the file are zero.
    """
    path = Path(path)
    index = {name: j for j, name in enumerate(lp.names)}
    x = np.zeros(lp.num_vars)
    with open(path, "r") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) != 2:
                raise ParseError(path, lineno, f"expected 'name value', got {line!r}")
            name, text = tokens
            if name not in index:
                raise ParseError(path, lineno, f"unknown variable {name!r}")
            try:
                x[index[name]] = float(text)
            except ValueError:
                raise ParseError(path, lineno, f"bad value {text!r} for {name}") from None
    value = lp.evaluate(x)
    return LpSolution(status=LpStatus.OPTIMAL, values=x, objective_value=value, bound=value)


def solve_external(
    lp: LinearProgram,
    command: str = config.EXTERNAL_SOLVER_CMD,
    workdir: Optional[Union[str, Path]] = None,
) -> LpSolution:
    """
    Exports the model, runs an external solver command and imports its answer.

    The command may use the placeholders {model} and {solution}.
    """
    if not command:
        raise ConfigError("no external solver command configured (EXTERNAL_SOLVER_CMD)")
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        model = Path(tmp) / "model.lp"
        solution = Path(tmp) / "model.sol"
        export_model(lp, model)
        argv = [part.format(model=model, solution=solution) for part in shlex.split(command)]
        logger.info(f"Running external solver: {' '.join(argv)}")
        try:
            subprocess.run(argv, check=True, timeout=config.ILP_TIME_LIMIT, capture_output=True)
        except (subprocess.CalledProcessError, subprocess.TimeoutExpired, OSError) as e:
            raise CardinalRoundingError(f"external solver failed: {e}") from e
        if not solution.exists():
            raise CardinalRoundingError(f"external solver wrote no solution to {solution}")
        return import_solution(solution, lp)
