import itertools
from pathlib import Path

import numpy as np
import pytest

from cardinal_rounding.coverage import CoverageInstance
from cardinal_rounding.rounding import RoundingProblem, make_rng

GOLDEN_DIR = Path(__file__).parent / "golden"


def random_problem(rng: np.random.Generator, n: int, num_groups: int) -> RoundingProblem:
    """Random fractional vector with `num_groups` disjoint groups of integral sum."""
    values = rng.random(n)
    perm = rng.permutation(n)
    cuts = np.sort(rng.choice(np.arange(1, n), size=num_groups, replace=False))
    groups = []
    for g in np.split(perm, cuts)[:num_groups]:
        if len(g) < 2:
            continue
        total = values[g].sum()
        target = np.floor(total)
        # rescale the group onto an integral sum without leaving [0, 1]
        if target == 0:
            values[g[0]] = 1.0
            target = 1.0
            total = values[g].sum()
        scaled = values[g] * (target / total)
        if scaled.max() > 1.0:
            continue
        values[g] = scaled
        groups.append(np.sort(g))
    return RoundingProblem(values=values, groups=groups)


def random_coverage(
    rng: np.random.Generator,
    n: int,
    m: int,
    unit_cost: bool = True,
    budget: float = None,
) -> CoverageInstance:
    sets = [np.flatnonzero(rng.random(m) < 0.3) for _ in range(n)]
    costs = np.ones(n) if unit_cost else rng.integers(1, 6, size=n).astype(float)
    weights = rng.integers(1, 10, size=m).astype(float)
    if budget is None:
        budget = float(max(1, n // 3)) if unit_cost else float(costs.sum() / 3)
    return CoverageInstance(
        num_elements=m, sets=sets, costs=costs, weights=weights, budget=budget
    )


def enumerate_optimum(instance: CoverageInstance) -> float:
    best = 0.0
    for r in range(instance.num_sets + 1):
        for combo in itertools.combinations(range(instance.num_sets), r):
            if instance.cost(combo) <= instance.budget + 1e-9:
                best = max(best, instance.evaluate(combo))
    return best


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def small_cover():
    """Three overlapping sets over six elements."""
    return CoverageInstance(
        num_elements=6,
        sets=[np.array([0, 1, 2]), np.array([2, 3]), np.array([3, 4, 5])],
        costs=np.ones(3),
        weights=np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
        budget=2.0,
    )
