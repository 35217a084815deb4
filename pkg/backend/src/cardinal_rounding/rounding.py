import logging
import zlib
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from . import config
from .errors import BudgetViolationError, InfeasibleConstraintError

logger = logging.getLogger(__name__)

Direction = Literal["minimize", "maximize"]
Pairing = Literal["tree", "sequential", "bitwise"]
RngLike = Union[int, np.random.Generator, None]


def make_rng(seed: Optional[int] = None) -> np.random.Generator:
    """PCG64 generator with a 64-bit seed; the only RNG algorithm used in the toolkit."""
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(base: int, *keys: Union[int, str]) -> int:
    """
    Mixes a base seed with (experiment, run, ...) keys into an independent 64-bit seed.

    String keys are reduced with CRC32 so that experiment names can be used directly.
    """
    spawn_key = tuple(
        zlib.crc32(k.encode("utf-8")) if isinstance(k, str) else int(k) for k in keys
    )
    seq = np.random.SeedSequence(entropy=int(base), spawn_key=spawn_key)
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def resolve_rng(rng: RngLike) -> Tuple[np.random.Generator, Optional[int]]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    if rng is None:
        seed = int(np.random.SeedSequence().generate_state(1, dtype=np.uint64)[0])
        return make_rng(seed), seed
    return make_rng(int(rng)), int(rng)


def _is_fractional(v: float) -> bool:
    return config.SUM_TOL < v < 1.0 - config.SUM_TOL


def _snap(x: np.ndarray, *idx: int) -> None:
    for i in idx:
        if x[i] <= config.SUM_TOL:
            x[i] = 0.0
        elif x[i] >= 1.0 - config.SUM_TOL:
            x[i] = 1.0


@dataclass
class RoundingProblem:
    """Fractional vector with disjoint cardinality groups and optional budget weights."""

    values: np.ndarray
    groups: List[np.ndarray] = field(default_factory=list)
    costs: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).copy()
        n = len(self.values)
        if n and (
            self.values.min() < -config.SUM_TOL
            or self.values.max() > 1.0 + config.SUM_TOL
        ):
            raise ValueError("rounding values must lie in [0, 1]")
        self.values = np.clip(self.values, 0.0, 1.0)
        self.groups = [np.unique(np.asarray(g, dtype=np.int64)) for g in self.groups]
        members = (
            np.concatenate(self.groups) if self.groups else np.empty(0, dtype=np.int64)
        )
        if len(members) != len(np.unique(members)):
            raise ValueError("cardinality groups must be pairwise disjoint")
        if len(members) and (members.min() < 0 or members.max() >= n):
            raise ValueError("group index out of range")
        if self.costs is not None:
            self.costs = np.asarray(self.costs, dtype=float)
            if len(self.costs) != n:
                raise ValueError("costs must match values in length")
            if n and self.costs.min() <= 0:
                raise ValueError("costs must be strictly positive")

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def free_indices(self) -> np.ndarray:
        mask = np.ones(self.size, dtype=bool)
        for g in self.groups:
            mask[g] = False
        return np.flatnonzero(mask)

    def group_targets(self) -> List[int]:
        """Integral right-hand side of every group; raises when a sum is not integral."""
        targets = []
        for k, g in enumerate(self.groups):
            total = float(self.values[g].sum())
            if abs(total - round(total)) > config.SUM_TOL * max(1, len(g)):
                raise InfeasibleConstraintError(k, total)
            targets.append(int(round(total)))
        return targets

    def snapped_values(self) -> np.ndarray:
        x = self.values.copy()
        x[x <= config.SUM_TOL] = 0.0
        x[x >= 1.0 - config.SUM_TOL] = 1.0
        return x


@dataclass
class RoundingResult:
    bits: np.ndarray
    method_tag: str
    rng_seed: Optional[int] = None
    trace: List[float] = field(default_factory=list)


@dataclass(frozen=True)
class EstimatorOracle:
    """
    Scores a (partially) rounded point for conditional-expectation steps.

    `evaluate` receives the full current vector: integral entries are fixed,
    fractional entries are still open.
    """

    evaluate: Callable[[np.ndarray], float]
    direction: Direction = "maximize"

    def improves(self, candidate: float, incumbent: float) -> bool:
        """Strictly better in the oracle's direction."""
        if self.direction == "maximize":
            return candidate > incumbent
        return candidate < incumbent


def _push(xi: float, xj: float) -> Tuple[float, float]:
    """Moves mass from xj to xi until one of them is integral; the pair sum is kept."""
    total = xi + xj
    if total >= 1.0:
        return 1.0, total - 1.0
    return total, 0.0


def _weighted_push(
    ya: float, yb: float, ca: float, cb: float
) -> Tuple[float, float]:
    """Like `_push`, but keeps ca*ya + cb*yb constant instead of ya + yb."""
    room = (1.0 - ya) * ca
    avail = yb * cb
    if room <= avail:
        return 1.0, min(1.0, max(0.0, yb - room / cb))
    return min(1.0, ya + avail / ca), 0.0


def pair_round(xi: float, xj: float, rng: np.random.Generator) -> Tuple[float, float]:
    """
    Randomly resolves one of two fractional values while preserving their sum.

    With alpha = min(1 - xi, xj) and beta = min(xi, 1 - xj) the pair moves to
    (xi + alpha, xj - alpha) with probability beta / (alpha + beta) and to
    (xi - beta, xj + beta) otherwise, so E[xi'] = xi and E[xj'] = xj.
    """
    if not (0.0 < xi < 1.0 and 0.0 < xj < 1.0):
        raise ValueError(f"pair_round needs two fractional values, got {xi}, {xj}")
    alpha = min(1.0 - xi, xj)
    beta = min(xi, 1.0 - xj)
    if rng.random() < beta / (alpha + beta):
        return _push(xi, xj)
    new_j, new_i = _push(xj, xi)
    return new_i, new_j


def _tree_pairs(
    x: np.ndarray, members: np.ndarray, step: Callable[[int, int], None]
) -> Optional[int]:
    """
    Resolves fractional members bottom-up along a balanced binary tree.

    Leaves are the members in index order; every internal node hands the at most
    one index still fractional after pairing its children to its parent.
    Returns the index left fractional at the root, if any.
    """
    level: List[Optional[int]] = [int(i) if _is_fractional(x[i]) else None for i in members]
    while len(level) > 1:
        parents: List[Optional[int]] = []
        for k in range(0, len(level) - 1, 2):
            a, b = level[k], level[k + 1]
            if a is None or b is None:
                parents.append(b if a is None else a)
                continue
            step(a, b)
            if _is_fractional(x[a]):
                parents.append(a)
            elif _is_fractional(x[b]):
                parents.append(b)
            else:
                parents.append(None)
        if len(level) % 2:
            parents.append(level[-1])
        level = parents
    return level[0] if level else None


def _sequential_pairs(
    x: np.ndarray, members: np.ndarray, step: Callable[[int, int], None]
) -> Optional[int]:
    """Pairs the carried fractional index with the next fractional one in index order."""
    carry: Optional[int] = None
    for i in members:
        i = int(i)
        if not _is_fractional(x[i]):
            continue
        if carry is None:
            carry = i
            continue
        step(carry, i)
        if _is_fractional(x[carry]):
            continue
        carry = i if _is_fractional(x[i]) else None
    return carry


def round_tree(problem: RoundingProblem, rng: RngLike = None) -> RoundingResult:
    """
    Tree-based dependent rounding.

    Every group is rounded along a balanced binary tree over its members; the
    group sums are preserved exactly and each bit is 1 with probability equal to
    its fractional value. Indices outside all groups are rounded independently.
    """
    if problem.costs is not None:
        raise ValueError("round_tree works in cardinality mode only")
    gen, seed = resolve_rng(rng)
    targets = problem.group_targets()
    x = problem.snapped_values()

    def step(a: int, b: int) -> None:
        x[a], x[b] = pair_round(x[a], x[b], gen)
        _snap(x, a, b)

    for g in problem.groups:
        left = _tree_pairs(x, g, step)
        if left is not None:
            x[left] = round(x[left])

    free = problem.free_indices
    if len(free):
        x[free] = gen.random(len(free)) < x[free]
    bits = np.rint(x).astype(np.int8)
    _check_groups(bits, problem, targets)
    return RoundingResult(bits=bits, method_tag="tree", rng_seed=seed)


def _check_groups(bits: np.ndarray, problem: RoundingProblem, targets: Sequence[int]) -> None:
    for k, (g, target) in enumerate(zip(problem.groups, targets)):
        if int(bits[g].sum()) != target:
            raise InfeasibleConstraintError(k, float(bits[g].sum()))


def _compensate(a: np.ndarray, x: np.ndarray, members: np.ndarray, diff: int, scale: int, group: int) -> None:
    """Absorbs a snapping surplus (diff > 0) or deficit (diff < 0) in the largest fractional members."""
    fractional = [int(i) for i in members if 0.0 < x[i] < 1.0]
    for i in sorted(fractional, key=lambda i: (-x[i], i)):
        if diff == 0:
            break
        if diff > 0:
            move = min(diff, int(a[i]))
            a[i] -= move
            diff -= move
        else:
            move = min(-diff, scale - int(a[i]))
            a[i] += move
            diff += move
    if diff != 0:
        raise InfeasibleConstraintError(group, float(a[members].sum()) / scale)


def _snap_to_grid(
    problem: RoundingProblem,
    targets: Sequence[int],
    precision_bits: int,
    gen: Optional[np.random.Generator],
) -> np.ndarray:
    """
    Scales values to integers with `precision_bits` binary digits.

    The tail below the last digit is rounded randomly (or to nearest when no
    generator is given); group sums broken by this are repaired in place.
    """
    scale = 1 << precision_bits
    x = problem.snapped_values()
    scaled = x * scale
    a = np.floor(scaled).astype(np.int64)
    tail = scaled - a
    if gen is None:
        a += (tail >= 0.5).astype(np.int64)
    else:
        a += (gen.random(len(a)) < tail).astype(np.int64)
    for k, (g, target) in enumerate(zip(problem.groups, targets)):
        diff = int(a[g].sum()) - target * scale
        if diff:
            _compensate(a, x, g, diff, scale, k)
    return a


def round_bitwise(
    problem: RoundingProblem,
    rng: RngLike = None,
    precision_bits: int = config.BIT_PRECISION,
) -> RoundingResult:
    """
    Bit-wise dependent rounding.

    Values are snapped to `precision_bits` binary digits, then digits are
    eliminated from the least significant one upwards: inside every group the
    indices carrying the active digit are paired in index order and a fair coin
    decides which member of each pair carries the digit upward. Indices outside
    all groups form one implicit group per level; an odd leftover is rounded up
    or down by a fair coin.
    """
    if problem.costs is not None:
        raise ValueError("round_bitwise works in cardinality mode only")
    gen, seed = resolve_rng(rng)
    targets = problem.group_targets()
    a = _snap_to_grid(problem, targets, precision_bits, gen)
    free = problem.free_indices

    for level in range(precision_bits):
        bit = 1 << level
        for k, g in enumerate(problem.groups):
            active = g[(a[g] & bit) != 0]
            if len(active) % 2:
                raise InfeasibleConstraintError(k, float(a[g].sum()) / (1 << precision_bits))
            if len(active):
                up = gen.random(len(active) // 2) < 0.5
                delta = np.where(up, bit, -bit)
                a[active[0::2]] += delta
                a[active[1::2]] -= delta
        if len(free):
            active = free[(a[free] & bit) != 0]
            paired = len(active) - len(active) % 2
            if paired:
                up = gen.random(paired // 2) < 0.5
                delta = np.where(up, bit, -bit)
                a[active[0:paired:2]] += delta
                a[active[1:paired:2]] -= delta
            if len(active) % 2:
                last = active[-1]
                a[last] += bit if gen.random() < 0.5 else -bit

    bits = (a >> precision_bits).astype(np.int8)
    _check_groups(bits, problem, targets)
    return RoundingResult(bits=bits, method_tag="bitwise", rng_seed=seed)


def round_independent(values: Sequence[float], rng: RngLike = None) -> np.ndarray:
    """Classical independent randomized rounding; no group guarantee."""
    gen, _ = resolve_rng(rng)
    values = np.asarray(values, dtype=float)
    return (gen.random(len(values)) < values).astype(np.int8)


def sample_roundings(
    problem: RoundingProblem,
    method: Literal["tree", "bitwise", "independent"],
    rng: RngLike,
    trials: int,
) -> np.ndarray:
    """Draws `trials` roundings from one generator; returns a trials x n bit matrix."""
    gen, _ = resolve_rng(rng)
    out = np.empty((trials, problem.size), dtype=np.int8)
    for t in range(trials):
        if method == "tree":
            out[t] = round_tree(problem, gen).bits
        elif method == "bitwise":
            out[t] = round_bitwise(problem, gen).bits
        elif method == "independent":
            out[t] = round_independent(problem.values, gen)
        else:
            raise ValueError(f"unknown rounding method: {method}")
    return out


def derandomize(
    problem: RoundingProblem,
    oracle: EstimatorOracle,
    pairing: Pairing = "tree",
    precision_bits: int = config.BIT_PRECISION,
) -> RoundingResult:
    """
    Deterministic rounding by the method of conditional expectations.

    Walks the same pair structure as the randomized method selected by
    `pairing`; at every pair both extreme adjustments are scored by the oracle
    and the better one is kept. On a tie the corner that rounds the lower
    index up wins. Free indices are fixed one by one to the better endpoint.
    """
    targets = problem.group_targets()
    if pairing == "bitwise":
        return _derandomize_bitwise(problem, oracle, targets, precision_bits)

    x = problem.snapped_values()
    trace = [oracle.evaluate(x)]

    def step(a: int, b: int) -> None:
        lo, hi = (a, b) if a < b else (b, a)
        old_lo, old_hi = x[lo], x[hi]
        up_lo = _push(old_lo, old_hi)
        new_hi, new_lo = _push(old_hi, old_lo)
        x[lo], x[hi] = up_lo
        score_up = oracle.evaluate(x)
        x[lo], x[hi] = new_lo, new_hi
        score_down = oracle.evaluate(x)
        if oracle.improves(score_down, score_up):
            trace.append(score_down)
        else:
            x[lo], x[hi] = up_lo
            trace.append(score_up)
        _snap(x, lo, hi)

    walk = _tree_pairs if pairing == "tree" else _sequential_pairs
    for g in problem.groups:
        left = walk(x, g, step)
        if left is not None:
            x[left] = round(x[left])

    for i in problem.free_indices:
        if not _is_fractional(x[i]):
            continue
        x[i] = 1.0
        score_up = oracle.evaluate(x)
        x[i] = 0.0
        score_down = oracle.evaluate(x)
        if oracle.improves(score_down, score_up):
            trace.append(score_down)
        else:
            x[i] = 1.0
            trace.append(score_up)

    bits = np.rint(x).astype(np.int8)
    _check_groups(bits, problem, targets)
    return RoundingResult(bits=bits, method_tag=f"derand_{pairing}", trace=trace)


def _derandomize_bitwise(
    problem: RoundingProblem,
    oracle: EstimatorOracle,
    targets: Sequence[int],
    precision_bits: int,
) -> RoundingResult:
    scale = 1 << precision_bits
    a = _snap_to_grid(problem, targets, precision_bits, None)
    x = a / scale
    trace = [oracle.evaluate(x)]
    free = problem.free_indices

    def choose(u: int, v: int, bit: int) -> None:
        # u < v; the first candidate moves the digit up at u
        x[u], x[v] = (a[u] + bit) / scale, (a[v] - bit) / scale
        score_up = oracle.evaluate(x)
        x[u], x[v] = (a[u] - bit) / scale, (a[v] + bit) / scale
        score_down = oracle.evaluate(x)
        if oracle.improves(score_down, score_up):
            a[u] -= bit
            a[v] += bit
            trace.append(score_down)
        else:
            a[u] += bit
            a[v] -= bit
            trace.append(score_up)
        x[u], x[v] = a[u] / scale, a[v] / scale

    for level in range(precision_bits):
        bit = 1 << level
        for k, g in enumerate(problem.groups):
            active = g[(a[g] & bit) != 0]
            if len(active) % 2:
                raise InfeasibleConstraintError(k, float(a[g].sum()) / scale)
            for u, v in zip(active[0::2], active[1::2]):
                choose(int(u), int(v), bit)
        if len(free):
            active = free[(a[free] & bit) != 0]
            for u, v in zip(active[0::2], active[1::2]):
                choose(int(u), int(v), bit)
            if len(active) % 2:
                last = int(active[-1])
                x[last] = (a[last] + bit) / scale
                score_up = oracle.evaluate(x)
                x[last] = (a[last] - bit) / scale
                score_down = oracle.evaluate(x)
                if oracle.improves(score_down, score_up):
                    a[last] -= bit
                    trace.append(score_down)
                else:
                    a[last] += bit
                    trace.append(score_up)
                x[last] = a[last] / scale

    bits = (a >> precision_bits).astype(np.int8)
    _check_groups(bits, problem, targets)
    return RoundingResult(bits=bits, method_tag="derand_bitwise", trace=trace)


def _budget_start(y: Sequence[float], costs: Sequence[float], budget: Optional[float]) -> Tuple[np.ndarray, np.ndarray]:
    problem = RoundingProblem(values=y, costs=costs)
    c = problem.costs
    x = problem.snapped_values()
    if budget is not None and float(c @ x) > budget + config.FEAS_TOL:
        raise BudgetViolationError(
            f"fractional cost {float(c @ x):.6f} exceeds budget {budget}"
        )
    return x, c


def round_budget_preserving(
    y: Sequence[float],
    costs: Sequence[float],
    budget: float,
    objective: EstimatorOracle,
) -> RoundingResult:
    """
    Deterministic budget-preserving rounding.

    Fractional variables are paired in index order and moved along the line
    that keeps c_i y_i + c_j y_j constant; of the two endpoints the one with the
    better objective is taken (one of them never loses, by convexity of the
    objective along the line). At most one variable stays fractional and is
    rounded up, so the final cost is at most budget + max(costs) and the
    objective never decreases.
    """
    if objective.direction != "maximize":
        raise ValueError("budget-preserving rounding maximizes its objective")
    x, c = _budget_start(y, costs, budget)
    trace = [objective.evaluate(x)]

    def step(a: int, b: int) -> None:
        old_a, old_b = x[a], x[b]
        up = _weighted_push(old_a, old_b, c[a], c[b])
        down_b, down_a = _weighted_push(old_b, old_a, c[b], c[a])
        x[a], x[b] = up
        score_up = objective.evaluate(x)
        x[a], x[b] = down_a, down_b
        score_down = objective.evaluate(x)
        if objective.improves(score_down, score_up):
            trace.append(score_down)
        else:
            x[a], x[b] = up
            trace.append(score_up)
        _snap(x, a, b)

    left = _sequential_pairs(x, np.arange(len(x)), step)
    if left is not None:
        x[left] = 1.0
        trace.append(objective.evaluate(x))
    bits = np.rint(x).astype(np.int8)
    logger.debug(
        f"Budget-preserving rounding: cost {float(c @ bits):.4f} (budget {budget})"
    )
    return RoundingResult(bits=bits, method_tag="budget_preserving", trace=trace)


def round_budget_randomized(
    y: Sequence[float], costs: Sequence[float], rng: RngLike = None
) -> RoundingResult:
    """
    Randomized counterpart of `round_budget_preserving`.

    Each pair step picks one of the two endpoints of the weighted line with the
    probabilities that keep E[y_i] unchanged; the last fractional variable is
    rounded up with probability equal to its value.
    """
    gen, seed = resolve_rng(rng)
    x, c = _budget_start(y, costs, None)

    def step(a: int, b: int) -> None:
        old_a, old_b = x[a], x[b]
        t_up = min((1.0 - old_a) * c[a], old_b * c[b])
        t_down = min(old_a * c[a], (1.0 - old_b) * c[b])
        if gen.random() < t_down / (t_up + t_down):
            x[a], x[b] = _weighted_push(old_a, old_b, c[a], c[b])
        else:
            x[b], x[a] = _weighted_push(old_b, old_a, c[b], c[a])
        _snap(x, a, b)

    left = _sequential_pairs(x, np.arange(len(x)), step)
    if left is not None:
        x[left] = 1.0 if gen.random() < x[left] else 0.0
    bits = np.rint(x).astype(np.int8)
    return RoundingResult(bits=bits, method_tag="budget_randomized", rng_seed=seed)


def gradient_round(
    y: Sequence[float],
    grad: Callable[[np.ndarray], np.ndarray],
    costs: Optional[Sequence[float]] = None,
    oracle: Optional[EstimatorOracle] = None,
) -> RoundingResult:
    """
    Gradient-guided pair rounding.

    Each step pairs the fractional variables with the largest and the smallest
    partial derivative (divided by cost when costs are given) and moves mass
    from the small one to the large one until one of them is integral. The sum,
    or the weighted sum, is invariant per step. A single variable left
    fractional is rounded up.
    """
    x = np.clip(np.asarray(y, dtype=float).copy(), 0.0, 1.0)
    x[x <= config.SUM_TOL] = 0.0
    x[x >= 1.0 - config.SUM_TOL] = 1.0
    c = np.ones(len(x)) if costs is None else np.asarray(costs, dtype=float)
    trace = [oracle.evaluate(x)] if oracle is not None else []

    while True:
        frac = np.flatnonzero((x > config.SUM_TOL) & (x < 1.0 - config.SUM_TOL))
        if len(frac) < 2:
            break
        g = np.asarray(grad(x), dtype=float)[frac] / c[frac]
        top = int(np.argmax(g))
        g[top] = np.inf
        bottom = int(np.argmin(g))
        i, j = int(frac[top]), int(frac[bottom])
        x[i], x[j] = _weighted_push(x[i], x[j], c[i], c[j])
        _snap(x, i, j)
        if oracle is not None:
            trace.append(oracle.evaluate(x))

    frac = np.flatnonzero((x > config.SUM_TOL) & (x < 1.0 - config.SUM_TOL))
    for i in frac:
        x[i] = 1.0
        if oracle is not None:
            trace.append(oracle.evaluate(x))
    bits = np.rint(x).astype(np.int8)
    return RoundingResult(bits=bits, method_tag="gradient", trace=trace)
