import logging
from dataclasses import dataclass, field, replace
from typing import List, Literal, Optional, Sequence

import numpy as np

from . import config
from .errors import CardinalRoundingError, InstanceError
from .lp import LinearProgram, LpStatus, solve_ilp, solve_lp
from .rounding import (
    EstimatorOracle,
    RngLike,
    RoundingProblem,
    derandomize,
    gradient_round,
    resolve_rng,
    round_budget_preserving,
    round_budget_randomized,
    round_tree,
)

logger = logging.getLogger(__name__)

RoundingMode = Literal["random", "derand", "gradient"]


@dataclass
class CoverageInstance:
    """
    Weighted max-coverage instance.

    Set j covers the element indices in `sets[j]` at cost `costs[j]`; a
    selection is feasible when its total cost is at most `budget`.
    `points` optionally keeps planar coordinates for unit-disk instances.
    """

    num_elements: int
    sets: List[np.ndarray]
    costs: np.ndarray
    weights: np.ndarray
    budget: float
    name: str = ""
    points: Optional[np.ndarray] = None
    set_ids: np.ndarray = field(init=False, repr=False)
    elem_ids: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.sets = [np.unique(np.asarray(s, dtype=np.int64)) for s in self.sets]
        self.costs = np.asarray(self.costs, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.costs) != len(self.sets):
            raise InstanceError("one cost per set required")
        if len(self.weights) != self.num_elements:
            raise InstanceError("one weight per element required")
        if len(self.costs) and self.costs.min() <= 0:
            raise InstanceError("set costs must be positive")
        if len(self.weights) and self.weights.min() < 0:
            raise InstanceError("element weights must be non-negative")
        if self.budget <= 0:
            raise InstanceError(f"budget must be positive, got {self.budget}")
        for j, s in enumerate(self.sets):
            if len(s) and (s[0] < 0 or s[-1] >= self.num_elements):
                raise InstanceError(f"set {j} references an element out of range")
        sizes = [len(s) for s in self.sets]
        self.set_ids = np.repeat(np.arange(len(self.sets)), sizes)
        self.elem_ids = (
            np.concatenate(self.sets) if self.sets else np.zeros(0, dtype=np.int64)
        )

    @property
    def num_sets(self) -> int:
        return len(self.sets)

    @property
    def unit_cost(self) -> bool:
        return bool(np.all(self.costs == 1.0))

    def covered(self, chosen: Sequence[int]) -> np.ndarray:
        mask = np.zeros(self.num_elements, dtype=bool)
        for j in chosen:
            mask[self.sets[j]] = True
        return mask

    def evaluate(self, chosen: Sequence[int]) -> float:
        return float(self.weights[self.covered(chosen)].sum())

    def cost(self, chosen: Sequence[int]) -> float:
        return float(self.costs[list(chosen)].sum()) if len(chosen) else 0.0

    def restricted(
        self, weights: Optional[np.ndarray] = None, budget: Optional[float] = None
    ) -> "CoverageInstance":
        return replace(
            self,
            weights=self.weights if weights is None else weights,
            budget=self.budget if budget is None else budget,
        )

    def solution(self, chosen: Sequence[int], method: str, **extra) -> "CoverSolution":
        chosen = sorted(int(j) for j in set(chosen))
        return CoverSolution(
            chosen=chosen,
            value=self.evaluate(chosen),
            cost=self.cost(chosen),
            method=method,
            **extra,
        )


@dataclass
class FractionalCover:
    y: np.ndarray
    x: np.ndarray
    W_star: float


@dataclass
class CoverSolution:
    chosen: List[int]
    value: float
    cost: float
    method: str = ""
    expectation: Optional[float] = None
    integral_value: Optional[float] = None


def _factor_products(y: np.ndarray, instance: CoverageInstance):
    """Per element: product of the non-zero (1 - y_j) factors and the count of zero factors."""
    factors = 1.0 - np.asarray(y, dtype=float)[instance.set_ids]
    zero = factors <= 0.0
    prod = np.ones(instance.num_elements)
    np.multiply.at(prod, instance.elem_ids, np.where(zero, 1.0, factors))
    zeros = np.bincount(instance.elem_ids, weights=zero.astype(float), minlength=instance.num_elements)
    return factors, zero, prod, zeros


def eval_F(y: Sequence[float], instance: CoverageInstance) -> float:
    """Expected covered weight when every set j is taken independently with probability y_j."""
    _, _, prod, zeros = _factor_products(y, instance)
    uncovered = np.where(zeros > 0, 0.0, prod)
    return float(instance.weights @ (1.0 - uncovered))


def grad_F(y: Sequence[float], instance: CoverageInstance) -> np.ndarray:
    """dF/dy_j = sum over i in S_j of w_i * prod over other sets k containing i of (1 - y_k)."""
    factors, zero, prod, zeros = _factor_products(y, instance)
    p = prod[instance.elem_ids]
    z = zeros[instance.elem_ids]
    excluded = np.where(
        zero,
        np.where(z == 1, p, 0.0),
        np.where(z == 0, p / np.where(zero, 1.0, factors), 0.0),
    )
    contrib = instance.weights[instance.elem_ids] * excluded
    return np.bincount(instance.set_ids, weights=contrib, minlength=instance.num_sets)


def coverage_oracle(instance: CoverageInstance, n: Optional[int] = None) -> EstimatorOracle:
    """F as a maximizing oracle; entries past the first num_sets are ignored."""
    n = instance.num_sets if n is None else n
    return EstimatorOracle(evaluate=lambda y: eval_F(y[:n], instance), direction="maximize")


def greedy_cover(
    instance: CoverageInstance,
    rng: RngLike = None,
    budget: Optional[float] = None,
) -> CoverSolution:
    """
    Cost-effectiveness greedy.

    Repeatedly adds the affordable set with the best ratio of newly covered
    weight to cost. Ties go to the set that comes first in the scan order:
    index order when `rng` is None, otherwise a random permutation.
    """
    budget = instance.budget if budget is None else budget
    n = instance.num_sets
    if rng is None:
        order = np.arange(n)
    else:
        gen, seed = resolve_rng(rng)
        order = gen.permutation(n)
        if seed is not None:
            logger.debug(f"Greedy scan order seeded with {seed}")
    covered = np.zeros(instance.num_elements, dtype=bool)
    taken = np.zeros(n, dtype=bool)
    spent = 0.0
    chosen: List[int] = []
    while True:
        fresh = instance.weights[instance.elem_ids] * ~covered[instance.elem_ids]
        gains = np.bincount(instance.set_ids, weights=fresh, minlength=n)
        ratio = gains / instance.costs
        usable = (~taken) & (gains > 0) & (spent + instance.costs <= budget + config.FEAS_TOL)
        ratio = np.where(usable, ratio, -np.inf)[order]
        if len(ratio) == 0 or not np.isfinite(ratio.max()):
            break
        j = int(order[np.argmax(ratio)])
        taken[j] = True
        chosen.append(j)
        spent += instance.costs[j]
        covered[instance.sets[j]] = True
    return instance.solution(chosen, "greedy")


def build_cover_lp(instance: CoverageInstance, budget: Optional[float] = None) -> LinearProgram:
    """
    Max-coverage relaxation: variables y_0..y_{n-1} then x_0..x_{m-1}.

    maximize sum_i w_i x_i  s.t.  sum_j c_j y_j <= L,  x_i <= sum_{j: i in S_j} y_j,
    0 <= x, y <= 1. All variables are flagged integral for solve_ilp.
    """
    budget = instance.budget if budget is None else budget
    n, m = instance.num_sets, instance.num_elements
    objective = np.concatenate([np.zeros(n), instance.weights])
    lp = LinearProgram(
        objective=objective,
        sense="maximize",
        lower=np.zeros(n + m),
        upper=np.ones(n + m),
        integrality=np.ones(n + m, dtype=bool),
        names=[f"y{j}" for j in range(n)] + [f"x{i}" for i in range(m)],
    )
    lp.add_row(np.concatenate([instance.costs, np.zeros(m)]), "<=", budget)
    A = np.zeros((m, n + m))
    A[instance.elem_ids, instance.set_ids] = -1.0
    A[np.arange(m), n + np.arange(m)] = 1.0
    for i in range(m):
        lp.add_row(A[i], "<=", 0.0)
    return lp


def solve_cover_lp(instance: CoverageInstance) -> FractionalCover:
    sol = solve_lp(build_cover_lp(instance))
    if sol.status != LpStatus.OPTIMAL:
        raise CardinalRoundingError(f"coverage LP not solved: {sol.status.value}")
    n = instance.num_sets
    y = np.clip(sol.values[:n], 0.0, 1.0)
    x = np.clip(sol.values[n:], 0.0, 1.0)
    logger.info(f"Coverage LP solved: W* = {sol.objective_value:.4f}")
    return FractionalCover(y=y, x=x, W_star=float(sol.objective_value))


def integral_part(instance: CoverageInstance, y: Sequence[float]) -> float:
    """Weight covered by the sets the fractional solution already takes in full."""
    return instance.evaluate(np.flatnonzero(np.asarray(y) >= 1.0 - config.INT_TOL))


def solve_cover_ilp(
    instance: CoverageInstance, time_limit: float = config.ILP_TIME_LIMIT
) -> CoverSolution:
    sol = solve_ilp(build_cover_lp(instance), time_limit=time_limit)
    if sol.values is None:
        raise CardinalRoundingError(f"coverage ILP found no solution: {sol.status.value}")
    chosen = np.flatnonzero(sol.values[: instance.num_sets] > 0.5)
    return instance.solution(chosen, "ilp")


def _cardinality_problem(y: np.ndarray) -> RoundingProblem:
    """All sets in one group; a zero-effect slack variable makes the group sum integral."""
    total = float(y.sum())
    slack = np.ceil(total - config.SUM_TOL) - total
    values = np.append(y, slack) if slack > config.SUM_TOL else y
    return RoundingProblem(values=values, groups=[np.arange(len(values))])


def enforce_budget(chosen: Sequence[int], instance: CoverageInstance, method: str = "") -> CoverSolution:
    """
    Drops sets until the selection fits the budget.

    Each round removes the chosen set whose removal loses the least covered
    weight per unit cost; ties go to the lowest index.
    """
    current = sorted(set(int(j) for j in chosen))
    while current and instance.cost(current) > instance.budget + config.FEAS_TOL:
        value = instance.evaluate(current)
        best_j, best_ratio = None, np.inf
        for j in current:
            rest = [k for k in current if k != j]
            ratio = (value - instance.evaluate(rest)) / instance.costs[j]
            if ratio < best_ratio:
                best_j, best_ratio = j, ratio
        current.remove(best_j)
        logger.debug(f"Budget enforcement dropped set {best_j}")
    return instance.solution(current, method)


def best_of_k(
    instance: CoverageInstance,
    y_star: np.ndarray,
    k: int = config.BEST_OF_K,
    rng: RngLike = None,
) -> CoverSolution:
    """
    Best of k randomized roundings of y*.

    Unit costs use tree rounding with one cardinality group; general costs
    use the randomized budget-preserving pair step. Over-budget roundings are
    trimmed with `enforce_budget`. `expectation` is F(y*), the exact mean
    covered weight of a single independent rounding.
    """
    gen, _ = resolve_rng(rng)
    n = instance.num_sets
    y_star = np.asarray(y_star, dtype=float)
    problem = _cardinality_problem(y_star) if instance.unit_cost else None
    best: Optional[CoverSolution] = None
    for _ in range(k):
        if problem is not None:
            bits = round_tree(problem, gen).bits[:n]
        else:
            bits = round_budget_randomized(y_star, instance.costs, gen).bits
        sol = enforce_budget(np.flatnonzero(bits), instance, "best_of_k")
        if best is None or sol.value > best.value:
            best = sol
    if best is None:
        best = instance.solution([], "best_of_k")
    best.expectation = eval_F(y_star, instance)
    best.integral_value = integral_part(instance, y_star)
    return best


def derand_cover(instance: CoverageInstance, y_star: np.ndarray) -> CoverSolution:
    """
    Conditional-expectation rounding guided by F.

    Unit costs pair the variables in index order inside one cardinality
    group; general costs use budget-preserving rounding. F never decreases,
    so the result is worth at least F(y*) >= (1 - 1/e) W* before any
    budget trimming.
    """
    y_star = np.asarray(y_star, dtype=float)
    n = instance.num_sets
    oracle = coverage_oracle(instance, n)
    if instance.unit_cost:
        result = derandomize(_cardinality_problem(y_star), oracle, pairing="sequential")
    else:
        result = round_budget_preserving(y_star, instance.costs, instance.budget, oracle)
    sol = enforce_budget(np.flatnonzero(result.bits[:n]), instance, "derand")
    sol.expectation = result.trace[0] if result.trace else eval_F(y_star, instance)
    sol.integral_value = integral_part(instance, y_star)
    return sol


def gradient_cover(instance: CoverageInstance, y_star: np.ndarray) -> CoverSolution:
    """Gradient-guided pair rounding; the gradient is divided by set costs unless all costs are 1."""
    y_star = np.asarray(y_star, dtype=float)
    result = gradient_round(
        y_star,
        lambda y: grad_F(y, instance),
        costs=None if instance.unit_cost else instance.costs,
        oracle=coverage_oracle(instance),
    )
    sol = enforce_budget(np.flatnonzero(result.bits), instance, "gradient")
    sol.expectation = eval_F(y_star, instance)
    sol.integral_value = integral_part(instance, y_star)
    return sol


def round_cover(
    instance: CoverageInstance,
    y_star: np.ndarray,
    mode: RoundingMode,
    rng: RngLike = None,
    k: int = config.BEST_OF_K,
) -> CoverSolution:
    if mode == "random":
        return best_of_k(instance, y_star, k=k, rng=rng)
    if mode == "derand":
        return derand_cover(instance, y_star)
    if mode == "gradient":
        return gradient_cover(instance, y_star)
    raise ValueError(f"unknown rounding mode: {mode}")


def hybrid_cover(
    instance: CoverageInstance,
    rho: float,
    mode: RoundingMode = "gradient",
    rng: RngLike = None,
    k: int = config.BEST_OF_K,
) -> CoverSolution:
    """
    Greedy pre-selection followed by LP rounding on what is left.

    Greedy (index-order ties) spends up to rho * L; covered elements are then
    given zero weight and the LP with the unspent budget is rounded with
    `mode`. The union of both selections is returned; `integral_value` is the
    weight covered by the pre-selection plus the sets the LP already set to 1.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    pre = greedy_cover(instance, budget=rho * instance.budget)
    remaining = instance.budget - pre.cost
    if remaining <= config.FEAS_TOL:
        pre.method = f"hybrid_{mode}"
        pre.integral_value = pre.value
        return pre
    weights = instance.weights.copy()
    weights[instance.covered(pre.chosen)] = 0.0
    reduced = instance.restricted(weights=weights, budget=remaining)
    frac = solve_cover_lp(reduced)
    rest = round_cover(reduced, frac.y, mode, rng=rng, k=k)
    fixed = np.flatnonzero(frac.y >= 1.0 - config.INT_TOL)
    sol = enforce_budget(list(pre.chosen) + list(rest.chosen), instance, f"hybrid_{mode}")
    sol.integral_value = instance.evaluate(list(pre.chosen) + list(fixed))
    sol.expectation = pre.value + eval_F(frac.y, reduced)
    logger.info(
        f"Hybrid rho={rho}: pre-selection {pre.value:.1f} ({len(pre.chosen)} sets), "
        f"total {sol.value:.1f}"
    )
    return sol
