import math

import numpy as np
import pytest

from cardinal_rounding.errors import InstanceError, NotAFlowError
from cardinal_rounding.instances import gen_routing_instance
from cardinal_rounding.lp import solve_ilp
from cardinal_rounding.rounding import derandomize
from cardinal_rounding.routing import (
    GridNetwork,
    PathDecomposition,
    RoutingRequest,
    RoutingSolution,
    build_routing_ilp,
    build_slack_lp,
    congestion_estimator,
    decompose_all,
    measure_congestion,
    path_strip,
    round_decomposition,
    rounding_problem,
    solution_to_ilp_point,
    solve_routing_lp,
    solve_slack_lp,
)


def _edge(net: GridNetwork, u, v) -> int:
    return net.edge_index[(u, v)]


def _is_walk(net: GridNetwork, path, s, t) -> bool:
    edges = [net.edges[e] for e in path]
    if not edges or edges[0][0] != s or edges[-1][1] != t:
        return False
    return all(a[1] == b[0] for a, b in zip(edges, edges[1:]))


@pytest.fixture(scope="module")
def lp_instance():
    net, requests = gen_routing_instance(5, 5, 4, "fixed3", seed=31)
    c_star, flows = solve_routing_lp(net, requests)
    return net, requests, c_star, flows


class TestGrid:
    @pytest.mark.parametrize("w, h", [(1, 2), (2, 2), (3, 5), (5, 5)])
    def test_edge_count(self, w, h):
        net = GridNetwork(w, h)
        assert net.num_edges == 2 * ((w - 1) * h + w * (h - 1))
        assert len(net.vertices) == w * h

    def test_neighbor_order(self):
        net = GridNetwork(3, 3)
        assert net.neighbors((1, 1)) == [(0, 1), (1, 2), (2, 1), (1, 0)]
        assert net.neighbors((0, 0)) == [(0, 1), (1, 0)]

    def test_bad_dimensions(self):
        with pytest.raises(InstanceError):
            GridNetwork(0, 3)

    def test_request_validation(self):
        with pytest.raises(InstanceError):
            RoutingRequest((0, 0), (0, 0), 1)
        with pytest.raises(InstanceError):
            RoutingRequest((0, 0), (0, 1), 0)


class TestModel:
    def test_two_vertex_grid(self):
        net = GridNetwork(2, 1)
        requests = [RoutingRequest((0, 0), (0, 1), 1)]
        lp = build_routing_ilp(net, requests)
        assert lp.num_vars == 3
        sol = solve_ilp(lp)
        assert sol.objective_value == pytest.approx(1.0)

    def test_endpoint_outside_grid(self):
        net = GridNetwork(2, 2)
        with pytest.raises(InstanceError, match="outside"):
            build_routing_ilp(net, [RoutingRequest((0, 0), (5, 5), 1)])

    @pytest.mark.parametrize("relax", [False, True])
    def test_edge_variables_are_unit_bounded(self, relax):
        lp = build_routing_ilp(GridNetwork(2, 1), [RoutingRequest((0, 0), (0, 1), 1)], relax=relax)
        assert lp.upper.tolist() == [1.0, 1.0, math.inf]
        assert lp.integrality.tolist() == [not relax] * 3

    @pytest.mark.parametrize("relax", [False, True])
    def test_demand_beyond_disjoint_paths_is_rejected(self, relax):
        with pytest.raises(InstanceError, match="edge-disjoint"):
            build_routing_ilp(GridNetwork(2, 1), [RoutingRequest((0, 0), (0, 1), 3)], relax=relax)

    def test_corner_allows_two_disjoint_paths(self):
        net = GridNetwork(3, 3)
        assert net.disjoint_paths((0, 0), (2, 2)) == 2
        assert net.disjoint_paths((1, 1), (0, 1)) == 3
        with pytest.raises(InstanceError, match="edge-disjoint"):
            build_routing_ilp(net, [RoutingRequest((0, 0), (2, 2), 3)])
        lp = build_routing_ilp(net, [RoutingRequest((0, 0), (2, 2), 2)])
        assert solve_ilp(lp).objective_value == pytest.approx(1.0)

    def test_ilp_not_below_rounded_lp(self):
        net, requests = gen_routing_instance(3, 3, 2, "fixed3", seed=4)
        c_star, flows = solve_routing_lp(net, requests)
        rounded = round_decomposition(net, decompose_all(net, requests, flows), "tree", rng=1)
        start = solution_to_ilp_point(net, requests, rounded)
        opt = solve_ilp(build_routing_ilp(net, requests), time_limit=60, incumbent=start)
        assert opt.objective_value >= math.ceil(c_star - 1e-6) - 1e-9


class TestPathStrip:
    def test_single_edge(self):
        net = GridNetwork(2, 1)
        req = RoutingRequest((0, 0), (0, 1), 1)
        flow = np.zeros(net.num_edges)
        flow[_edge(net, (0, 0), (0, 1))] = 1.0
        d = path_strip(net, req, flow)
        assert d.paths == [(_edge(net, (0, 0), (0, 1)),)]
        assert d.weights.tolist() == [1.0]

    def test_split_flow_takes_east_first(self):
        net = GridNetwork(2, 2)
        req = RoutingRequest((0, 0), (1, 1), 1)
        east = [_edge(net, (0, 0), (0, 1)), _edge(net, (0, 1), (1, 1))]
        south = [_edge(net, (0, 0), (1, 0)), _edge(net, (1, 0), (1, 1))]
        flow = np.zeros(net.num_edges)
        flow[east + south] = 0.5
        d = path_strip(net, req, flow)
        assert d.paths == [tuple(east), tuple(south)]
        assert d.weights == pytest.approx([0.5, 0.5])

    def test_demand_above_one_repeats_paths(self):
        net = GridNetwork(2, 1)
        req = RoutingRequest((0, 0), (0, 1), 2)
        flow = np.zeros(net.num_edges)
        flow[_edge(net, (0, 0), (0, 1))] = 2.0
        d = path_strip(net, req, flow)
        assert len(d.paths) == 2
        assert d.weights.tolist() == [1.0, 1.0]

    def test_conservation_violation(self):
        net = GridNetwork(2, 2)
        req = RoutingRequest((0, 0), (1, 1), 1)
        flow = np.zeros(net.num_edges)
        flow[_edge(net, (0, 0), (0, 1))] = 1.0
        with pytest.raises(NotAFlowError, match="not a flow"):
            path_strip(net, req, flow)

    def test_negative_flow(self):
        net = GridNetwork(2, 1)
        req = RoutingRequest((0, 0), (0, 1), 1)
        flow = np.array([-1.0, 0.0])
        with pytest.raises(NotAFlowError):
            path_strip(net, req, flow)

    def test_cycles_are_cancelled(self):
        net = GridNetwork(2, 2)
        req = RoutingRequest((0, 0), (0, 1), 1)
        flow = np.zeros(net.num_edges)
        flow[_edge(net, (0, 0), (0, 1))] = 1.0
        loop = [((0, 0), (1, 0)), ((1, 0), (1, 1)), ((1, 1), (0, 1)), ((0, 1), (0, 0))]
        for u, v in loop:
            flow[_edge(net, u, v)] += 0.5
        d = path_strip(net, req, flow)
        assert d.weights.sum() == pytest.approx(1.0)
        for path in d.paths:
            assert _is_walk(net, path, (0, 0), (0, 1))
        assert np.all(d.edge_loads(net.num_edges) <= flow + 1e-9)

    def test_lp_decomposition(self, lp_instance):
        net, requests, _, flows = lp_instance
        for i, (req, d) in enumerate(zip(requests, decompose_all(net, requests, flows))):
            assert d.weights.sum() == pytest.approx(req.demand, abs=1e-6)
            assert np.all((d.weights > 0) & (d.weights <= 1.0))
            for path in d.paths:
                assert _is_walk(net, path, req.source, req.target)
            assert np.all(d.edge_loads(net.num_edges) <= flows[i] + 1e-6)


class TestRounding:
    @pytest.mark.parametrize("method", ["tree", "bitwise", "derand_tree", "derand_bitwise"])
    def test_dependent_methods_serve_every_demand(self, lp_instance, method):
        net, requests, c_star, flows = lp_instance
        decomps = decompose_all(net, requests, flows)
        sol = round_decomposition(net, decomps, method, rng=8)
        assert sol.feasible
        assert [len(p) for p in sol.paths] == [r.demand for r in requests]
        assert sol.congestion >= math.ceil(c_star - 1e-6)

    def test_independent_flags_wrong_counts(self, lp_instance):
        net, requests, _, flows = lp_instance
        decomps = decompose_all(net, requests, flows)
        for seed in range(20):
            sol = round_decomposition(net, decomps, "independent", rng=seed)
            counts_ok = [len(p) for p in sol.paths] == [r.demand for r in requests]
            assert sol.feasible == counts_ok

    def test_unknown_method(self, lp_instance):
        net, requests, _, flows = lp_instance
        with pytest.raises(ValueError):
            round_decomposition(net, decompose_all(net, requests, flows), "nope")

    def test_derandomized_estimator_never_rises(self, lp_instance):
        net, requests, c_star, flows = lp_instance
        decomps = decompose_all(net, requests, flows)
        oracle = congestion_estimator(net, decomps, target=math.ceil(c_star) + 2, lam=0.7)
        sol = round_decomposition(net, decomps, "derand_tree", oracle=oracle)
        assert sol.feasible
        # same walk through the rounding layer, to read the trace
        trace = derandomize(rounding_problem(decomps), oracle, "tree").trace
        assert all(b <= a * (1 + 1e-9) for a, b in zip(trace, trace[1:]))

    def test_empty_estimator(self):
        net = GridNetwork(3, 3)
        oracle = congestion_estimator(net, [], target=2.0, lam=0.5)
        assert oracle.evaluate(np.zeros(0)) == pytest.approx(net.num_edges * math.exp(-1.0))

    def test_solution_point_is_ilp_feasible(self):
        net = GridNetwork(2, 2)
        requests = [RoutingRequest((0, 0), (1, 1), 2)]
        east = (_edge(net, (0, 0), (0, 1)), _edge(net, (0, 1), (1, 1)))
        south = (_edge(net, (0, 0), (1, 0)), _edge(net, (1, 0), (1, 1)))
        sol = RoutingSolution(paths=[[east, south]], num_edges=net.num_edges)
        point = solution_to_ilp_point(net, requests, sol)
        assert point[-1] == 1.0
        assert build_routing_ilp(net, requests).is_feasible(point)

    def test_repeated_path_is_not_an_ilp_point(self):
        net = GridNetwork(2, 2)
        requests = [RoutingRequest((0, 0), (1, 1), 2)]
        east = (_edge(net, (0, 0), (0, 1)), _edge(net, (0, 1), (1, 1)))
        sol = RoutingSolution(paths=[[east, east]], num_edges=net.num_edges)
        assert sol.congestion == 2
        assert solution_to_ilp_point(net, requests, sol) is None


class TestSlackLp:
    def test_delta_range(self, lp_instance):
        net, requests, c_star, _ = lp_instance
        with pytest.raises(ValueError):
            build_slack_lp(net, requests, c_star, delta=-0.1)
        with pytest.raises(ValueError):
            build_slack_lp(net, requests, c_star, delta=c_star + 1.0)

    def test_load_stays_below_c_star(self, lp_instance):
        net, requests, c_star, _ = lp_instance
        _, flows = solve_slack_lp(net, requests, c_star, delta=c_star / 2)
        assert flows.sum(axis=0).max() <= c_star + 1e-6

    def test_zero_delta_has_zero_overflow(self, lp_instance):
        net, requests, c_star, _ = lp_instance
        overflow, _ = solve_slack_lp(net, requests, c_star, delta=0.0)
        assert overflow == pytest.approx(0.0, abs=1e-7)


def test_measure_congestion():
    sol = RoutingSolution(paths=[[(0, 1), (1, 2)], [(1,)]], num_edges=4)
    assert sol.congestion == 3
    assert measure_congestion(RoutingSolution(paths=[], num_edges=4)) == 0


def test_rounding_problem_groups():
    req = RoutingRequest((0, 0), (0, 1), 1)
    decomps = [
        PathDecomposition(req, [(0,), (1,)], np.array([0.5, 0.5])),
        PathDecomposition(req, [(2,)], np.array([1.0])),
    ]
    problem = rounding_problem(decomps)
    assert [g.tolist() for g in problem.groups] == [[0, 1], [2]]
    assert problem.group_targets() == [1, 1]
