import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.neighbors import NearestNeighbors

from . import config
from .coverage import CoverageInstance, CoverSolution, solve_cover_ilp
from .errors import InstanceError

logger = logging.getLogger(__name__)


@dataclass
class PointSet:
    """Planar points with profits; two points are adjacent iff their distance is at most d."""

    points: np.ndarray
    profits: np.ndarray
    d: float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.profits = np.asarray(self.profits, dtype=float)
        if len(self.profits) != len(self.points):
            raise InstanceError("one profit per point required")
        if not np.all(np.isfinite(self.points)):
            raise InstanceError("point coordinates must be finite")
        if len(self.profits) and self.profits.min() < 0:
            raise InstanceError("profits must be non-negative")
        if self.d <= 0:
            raise InstanceError(f"diameter must be positive, got {self.d}")

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def from_file(cls, path: Union[str, Path], d: float) -> "PointSet":
        from .instances import read_points

        return read_points(path, d)


@dataclass
class SubgridProfile:
    """Best payoff inside one framed block for every budget t = 0..len(payoffs)-1."""

    payoffs: np.ndarray
    selections: List[List[int]] = field(default_factory=list)


@dataclass
class PtasResult:
    solution: CoverSolution
    shift: Tuple[int, int]
    shift_values: Dict[Tuple[int, int], float]


def build_udg(points: PointSet, budget: float = 1.0) -> CoverageInstance:
    """
    Max-domination instance of the unit disk graph.

    Every point is both an element (weighted by its profit) and a set, the
    closed neighborhood of the point; costs are 1.
    """
    if len(points) == 0:
        sets: List[np.ndarray] = []
    else:
        nn = NearestNeighbors(radius=points.d).fit(points.points)
        sets = list(nn.radius_neighbors(points.points, return_distance=False))
    return CoverageInstance(
        num_elements=len(points),
        sets=sets,
        costs=np.ones(len(points)),
        weights=points.profits,
        budget=budget,
        points=points.points,
    )


def grid_cells(points: PointSet) -> np.ndarray:
    """Cell (column, row) of every point for cells of side d; intervals are half-open."""
    return np.floor(points.points / points.d).astype(np.int64).reshape(-1, 2)


def shift_blocks(
    cells: np.ndarray, shift: Tuple[int, int], ell: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Marks every ell-th cell column (offset shift[0]) and row (offset shift[1]).

    Returns the per-point marked flag and the (column, row) block index.
    """
    h, v = shift
    cx, cy = cells[:, 0], cells[:, 1]
    marked = ((cx - h) % ell == 0) | ((cy - v) % ell == 0)
    keys = np.stack([np.floor_divide(cx - h, ell), np.floor_divide(cy - v, ell)], axis=1)
    return marked, keys


def knapsack_combine(
    profiles: Sequence[SubgridProfile], budget: int
) -> Tuple[float, List[int]]:
    """
    Splits the budget over blocks to maximize the summed payoffs.

    f[i][t] is the best payoff of the first i blocks with at most t sets;
    ties prefer giving the later block fewer sets.

    Returns:
        (best value, budget allotted to each block)
    """
    budget = int(budget)
    f = np.zeros((len(profiles) + 1, budget + 1))
    pick = np.zeros((len(profiles) + 1, budget + 1), dtype=np.int64)
    for i, prof in enumerate(profiles, start=1):
        for t in range(budget + 1):
            best, best_s = -np.inf, 0
            for s in range(min(t, len(prof.payoffs) - 1) + 1):
                value = f[i - 1][t - s] + prof.payoffs[s]
                if value > best:
                    best, best_s = value, s
            f[i][t], pick[i][t] = best, best_s
    allocation = [0] * len(profiles)
    t = budget
    for i in range(len(profiles), 0, -1):
        allocation[i - 1] = int(pick[i][t])
        t -= allocation[i - 1]
    return float(f[-1][budget]), allocation


def _block_profile(
    instance: CoverageInstance,
    elements: np.ndarray,
    profits: np.ndarray,
    budget: int,
    time_limit: float,
) -> SubgridProfile:
    candidates = np.unique(np.concatenate([instance.sets[i] for i in elements]))
    local_sets = [
        np.searchsorted(elements, np.intersect1d(instance.sets[j], elements)) for j in candidates
    ]
    total = float(profits[elements].sum())
    payoffs = [0.0]
    selections: List[List[int]] = [[]]
    for t in range(1, min(budget, len(candidates)) + 1):
        sub = CoverageInstance(
            num_elements=len(elements),
            sets=local_sets,
            costs=np.ones(len(candidates)),
            weights=profits[elements],
            budget=t,
        )
        sol = solve_cover_ilp(sub, time_limit=time_limit)
        payoffs.append(max(sol.value, payoffs[-1]))
        selections.append([int(candidates[j]) for j in sol.chosen])
        if sol.value >= total - config.FEAS_TOL:
            break
    return SubgridProfile(payoffs=np.array(payoffs), selections=selections)


def ptas_solve(
    points: PointSet,
    budget: int,
    ell: int,
    costs: Optional[Sequence[float]] = None,
    time_limit: float = config.ILP_TIME_LIMIT,
) -> PtasResult:
    """
    Shifting-grid approximation for unit-disk max-domination with unit costs.

    The plane is cut into cells of side d. For every shift (h, v) in
    {0..ell-1}^2 every ell-th cell column and row is marked and points on
    marked lines lose their profit; each block between marked lines is solved
    exactly for every budget and the blocks are combined by a knapsack DP.
    The best shift is at least (1 - 2/ell) times the optimum.

    Args:
        points: point set with profits and diameter.
        budget: number of sets L.
        ell: shift period, at least 3.
        costs: optional set costs; anything but all ones is rejected.
        time_limit: per block ILP time limit in seconds.

    Returns:
        PtasResult with the best solution (true value, full profits).
    """
    if ell < 3:
        raise ValueError(f"ell must be at least 3, got {ell}")
    if costs is not None and not np.all(np.asarray(costs, dtype=float) == 1.0):
        raise InstanceError("PTAS requires unit costs")
    instance = build_udg(points, max(budget, 1))
    cells = grid_cells(points)

    best: Optional[PtasResult] = None
    shift_values: Dict[Tuple[int, int], float] = {}
    for h in range(ell):
        for v in range(ell):
            marked, keys = shift_blocks(cells, (h, v), ell)
            profits = np.where(marked, 0.0, points.profits)
            live = np.flatnonzero(profits > 0)
            blocks: Dict[Tuple[int, int], List[int]] = {}
            for i in live:
                blocks.setdefault((int(keys[i, 0]), int(keys[i, 1])), []).append(int(i))
            profiles = [
                _block_profile(instance, np.array(blocks[key]), profits, budget, time_limit)
                for key in sorted(blocks)
            ]
            dp_value, allocation = knapsack_combine(profiles, budget)
            chosen = sorted(
                {j for prof, s in zip(profiles, allocation) for j in prof.selections[s]}
            )
            sol = instance.solution(chosen, f"ptas_{ell}")
            shift_values[(h, v)] = sol.value
            logger.debug(
                f"Shift ({h}, {v}): {len(profiles)} blocks, DP {dp_value:.1f}, value {sol.value:.1f}"
            )
            if best is None or sol.value > best.solution.value:
                best = PtasResult(solution=sol, shift=(h, v), shift_values=shift_values)
    logger.info(
        f"PTAS ell={ell}, L={budget}: best shift {best.shift}, value {best.solution.value:.1f}"
    )
    return best
