import itertools

import numpy as np
import pytest

from cardinal_rounding.errors import InstanceError
from cardinal_rounding.ptas import (
    PointSet,
    SubgridProfile,
    build_udg,
    grid_cells,
    knapsack_combine,
    ptas_solve,
    shift_blocks,
)
from cardinal_rounding.rounding import make_rng

from conftest import enumerate_optimum


def _profile(*payoffs) -> SubgridProfile:
    return SubgridProfile(payoffs=np.array(payoffs, dtype=float))


class TestUnitDiskGraph:
    def test_neighborhoods(self):
        points = PointSet(points=[(0, 0), (0.5, 0), (2, 0)], profits=[1, 2, 3], d=1.0)
        udg = build_udg(points, budget=1)
        assert [s.tolist() for s in udg.sets] == [[0, 1], [0, 1], [2]]
        assert udg.weights.tolist() == [1.0, 2.0, 3.0]

    def test_distance_equal_to_d_is_adjacent(self):
        points = PointSet(points=[(0, 0), (1, 0)], profits=[1, 1], d=1.0)
        assert [s.tolist() for s in build_udg(points).sets] == [[0, 1], [0, 1]]

    def test_point_validation(self):
        with pytest.raises(InstanceError):
            PointSet(points=[(0, 0)], profits=[1, 2], d=1.0)
        with pytest.raises(InstanceError):
            PointSet(points=[(0, 0)], profits=[1], d=0.0)


class TestShifting:
    def test_cells(self):
        points = PointSet(points=[(-0.5, 1.5), (2.0, 0.99)], profits=[1, 1], d=1.0)
        assert grid_cells(points).tolist() == [[-1, 1], [2, 0]]

    @pytest.mark.parametrize("ell", [3, 4, 5])
    def test_each_point_marked_by_2ell_minus_1_shifts(self, ell):
        gen = make_rng(ell)
        points = PointSet(points=gen.uniform(-10, 10, size=(50, 2)), profits=np.ones(50), d=1.0)
        cells = grid_cells(points)
        counts = np.zeros(50, dtype=int)
        for h, v in itertools.product(range(ell), repeat=2):
            marked, _ = shift_blocks(cells, (h, v), ell)
            counts += marked
        assert np.all(counts == 2 * ell - 1)

    def test_unmarked_points_in_one_block_share_a_key(self):
        cells = np.array([[1, 1], [2, 2], [4, 1]])
        marked, keys = shift_blocks(cells, (0, 0), 3)
        assert marked.tolist() == [False, False, False]
        assert keys.tolist() == [[0, 0], [0, 0], [1, 0]]


class TestKnapsack:
    def test_split(self):
        value, allocation = knapsack_combine([_profile(0, 5, 6), _profile(0, 4, 8)], 2)
        assert value == 9.0
        assert allocation == [1, 1]

    def test_tie_gives_later_block_fewer_sets(self):
        value, allocation = knapsack_combine([_profile(0, 3), _profile(0, 3)], 1)
        assert value == 3.0
        assert allocation == [1, 0]

    def test_no_blocks(self):
        assert knapsack_combine([], 3) == (0.0, [])

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        gen = make_rng(seed)
        profiles = [
            _profile(*np.concatenate([[0.0], np.cumsum(gen.integers(0, 5, size=gen.integers(0, 4)))]))
            for _ in range(3)
        ]
        budget = 4
        best = max(
            sum(p.payoffs[s] for p, s in zip(profiles, alloc))
            for alloc in itertools.product(*(range(len(p.payoffs)) for p in profiles))
            if sum(alloc) <= budget
        )
        value, allocation = knapsack_combine(profiles, budget)
        assert value == pytest.approx(best)
        assert sum(allocation) <= budget


class TestPtas:
    def test_small_ell_rejected(self):
        points = PointSet(points=[(0, 0)], profits=[1], d=1.0)
        with pytest.raises(ValueError):
            ptas_solve(points, budget=1, ell=2)

    def test_weighted_costs_rejected(self):
        points = PointSet(points=[(0, 0), (3, 3)], profits=[1, 1], d=1.0)
        with pytest.raises(InstanceError, match="unit costs"):
            ptas_solve(points, budget=1, ell=3, costs=[1.0, 2.0])

    def test_single_cell_is_exact(self):
        gen = make_rng(3)
        points = PointSet(
            points=gen.uniform(0.05, 0.95, size=(8, 2)) * 0.25,
            profits=gen.integers(1, 10, size=8).astype(float),
            d=0.3,
        )
        result = ptas_solve(points, budget=2, ell=3)
        assert result.solution.value == pytest.approx(enumerate_optimum(build_udg(points, 2)))
        assert len(result.shift_values) == 9

    @pytest.mark.parametrize("ell", [3, 4])
    def test_approximation_guarantee(self, ell):
        gen = make_rng(10 + ell)
        points = PointSet(
            points=gen.uniform(0, 4, size=(12, 2)),
            profits=gen.integers(1, 10, size=12).astype(float),
            d=1.0,
        )
        result = ptas_solve(points, budget=2, ell=ell)
        opt = enumerate_optimum(build_udg(points, 2))
        assert result.solution.cost <= 2
        assert result.solution.value <= opt + 1e-9
        assert result.solution.value >= (1 - 2 / ell) * opt - 1e-9
