import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from . import config
from .errors import CardinalRoundingError, InstanceError, NotAFlowError
from .lp import LinearProgram, LpStatus, solve_lp
from .rounding import (
    EstimatorOracle,
    RngLike,
    RoundingProblem,
    derandomize,
    round_bitwise,
    round_independent,
    round_tree,
)

logger = logging.getLogger(__name__)

Vertex = Tuple[int, int]
Edge = Tuple[Vertex, Vertex]
RoundingMethod = Literal["tree", "bitwise", "derand_tree", "derand_bitwise", "independent"]

# (row, col) offsets: north, east, south, west
_NEIGHBOR_ORDER = ((-1, 0), (0, 1), (1, 0), (0, -1))


class GridNetwork:
    """
    Bi-directed width x height grid.

    Vertices are (row, col) pairs; every pair of 4-neighbors is joined by one
    edge in each direction. Edges are indexed in sorted order.
    """

    def __init__(self, width: int, height: int):
        if width < 1 or height < 1:
            raise InstanceError(f"grid dimensions must be positive, got {width}x{height}")
        self.width = width
        self.height = height
        self.graph = nx.grid_2d_graph(height, width).to_directed()
        self.vertices: List[Vertex] = sorted(self.graph.nodes)
        self.edges: List[Edge] = sorted(self.graph.edges)
        self.edge_index: Dict[Edge, int] = {e: k for k, e in enumerate(self.edges)}
        self._out: Dict[Vertex, List[int]] = {v: [] for v in self.vertices}
        self._in: Dict[Vertex, List[int]] = {v: [] for v in self.vertices}
        for k, (u, v) in enumerate(self.edges):
            self._out[u].append(k)
            self._in[v].append(k)
        nx.set_edge_attributes(self.graph, 1, "capacity")
        self._paths: Dict[Tuple[Vertex, Vertex], int] = {}

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def contains(self, v: Vertex) -> bool:
        return 0 <= v[0] < self.height and 0 <= v[1] < self.width

    def out_edges(self, v: Vertex) -> List[int]:
        return self._out[v]

    def in_edges(self, v: Vertex) -> List[int]:
        return self._in[v]

    def disjoint_paths(self, s: Vertex, t: Vertex) -> int:
        """Maximum number of edge-disjoint s-t paths (unit-capacity max-flow)."""
        key = (tuple(s), tuple(t))
        if key not in self._paths:
            self._paths[key] = int(nx.maximum_flow_value(self.graph, *key))
        return self._paths[key]

    def neighbors(self, v: Vertex) -> List[Vertex]:
        """Neighbors in fixed north, east, south, west order."""
        result = []
        for dr, dc in _NEIGHBOR_ORDER:
            w = (v[0] + dr, v[1] + dc)
            if self.contains(w):
                result.append(w)
        return result


@dataclass(frozen=True)
class RoutingRequest:
    source: Vertex
    target: Vertex
    demand: int

    def __post_init__(self):
        if tuple(self.source) == tuple(self.target):
            raise InstanceError(f"request source equals target: {self.source}")
        if self.demand < 1:
            raise InstanceError(f"request demand must be positive, got {self.demand}")


@dataclass
class PathDecomposition:
    """Weighted s-t paths of one request; paths are tuples of edge indices."""

    request: RoutingRequest
    paths: List[Tuple[int, ...]] = field(default_factory=list)
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def edge_loads(self, num_edges: int) -> np.ndarray:
        loads = np.zeros(num_edges)
        for path, w in zip(self.paths, self.weights):
            loads[list(path)] += w
        return loads


@dataclass
class RoutingSolution:
    paths: List[List[Tuple[int, ...]]]
    num_edges: int
    method: str = ""
    feasible: bool = True
    congestion: int = 0

    def __post_init__(self):
        self.congestion = measure_congestion(self)


def measure_congestion(solution: RoutingSolution) -> int:
    """Largest number of chosen paths sharing one edge."""
    loads = np.zeros(solution.num_edges, dtype=np.int64)
    for request_paths in solution.paths:
        for path in request_paths:
            loads[list(path)] += 1
    return int(loads.max(initial=0))


def _check_requests(net: GridNetwork, requests: Sequence[RoutingRequest]) -> None:
    for i, req in enumerate(requests):
        for v in (req.source, req.target):
            if not net.contains(tuple(v)):
                raise InstanceError(
                    f"request {i} endpoint {v} lies outside the {net.width}x{net.height} grid"
                )


def _check_unit_capacity(net: GridNetwork, requests: Sequence[RoutingRequest]) -> None:
    """Rejects requests whose demand exceeds the number of edge-disjoint s-t paths."""
    for i, req in enumerate(requests):
        value = net.disjoint_paths(req.source, req.target)
        if value < req.demand:
            raise InstanceError(
                f"request {i} needs {req.demand} edge-disjoint paths, grid allows {value}"
            )


def _add_flow_rows(
    lp: LinearProgram, net: GridNetwork, requests: Sequence[RoutingRequest]
) -> None:
    m = net.num_edges
    for i, req in enumerate(requests):
        base = i * m
        s, t = tuple(req.source), tuple(req.target)
        for v in net.vertices:
            if v == t:
                continue
            row = {base + e: 1.0 for e in net.out_edges(v)}
            for e in net.in_edges(v):
                row[base + e] = -1.0
            lp.add_row(row, "=", req.demand if v == s else 0.0)


def build_routing_ilp(
    net: GridNetwork,
    requests: Sequence[RoutingRequest],
    relax: bool = False,
) -> LinearProgram:
    """
    Minimum-congestion multicommodity flow model.

    Variables are x[i * |E| + e] (flow of request i on edge e) followed by C.
    Edge variables lie in {0, 1}, or [0, 1] when relaxed, so a request with
    demand r needs r edge-disjoint s-t paths; a max-flow pre-check rejects
    requests the grid cannot serve that way.

    Args:
        net: the grid.
        requests: routing requests with positive demands.
        relax: drop integrality.

    Returns:
        LinearProgram minimizing C.

    Raises:
        InstanceError: an endpoint is off the grid or a demand exceeds the
            number of edge-disjoint paths between its endpoints.
    """
    _check_requests(net, requests)
    _check_unit_capacity(net, requests)
    m, k = net.num_edges, len(requests)
    n = k * m + 1
    objective = np.zeros(n)
    objective[-1] = 1.0
    upper = np.full(n, np.inf)
    upper[:-1] = 1.0
    names = [f"x_{i}_{e}" for i in range(k) for e in range(m)] + ["C"]
    lp = LinearProgram(
        objective=objective,
        sense="minimize",
        upper=upper,
        integrality=np.full(n, not relax),
        names=names,
    )
    for e in range(m):
        row = {i * m + e: 1.0 for i in range(k)}
        row[n - 1] = -1.0
        lp.add_row(row, "<=", 0.0)
    _add_flow_rows(lp, net, requests)
    return lp


def solve_routing_lp(
    net: GridNetwork, requests: Sequence[RoutingRequest]
) -> Tuple[float, np.ndarray]:
    """Fractional optimum: returns (C*, flows) with flows shaped (k, |E|)."""
    lp = build_routing_ilp(net, requests, relax=True)
    sol = solve_lp(lp)
    if sol.status != LpStatus.OPTIMAL:
        raise CardinalRoundingError(f"routing LP not solved: {sol.status.value}")
    m = net.num_edges
    flows = sol.values[:-1].reshape(len(requests), m)
    c_star = float(flows.sum(axis=0).max(initial=0.0))
    logger.info(f"Routing LP solved: C* = {c_star:.4f}")
    return c_star, flows


def build_slack_lp(
    net: GridNetwork,
    requests: Sequence[RoutingRequest],
    c_star: float,
    delta: float = config.SLACK_DELTA,
) -> LinearProgram:
    """
    Second LP that spreads load below C* - delta.

    Adds one overflow variable z_e in [0, delta] per edge, replaces the
    congestion rows by sum_i x_ie - z_e <= C* - delta and minimizes sum_e z_e.
    Edge variables keep the [0, 1] bounds of the routing LP.
    """
    if not 0.0 <= delta <= c_star:
        raise ValueError(f"delta must lie in [0, C*={c_star}], got {delta}")
    _check_requests(net, requests)
    _check_unit_capacity(net, requests)
    m, k = net.num_edges, len(requests)
    n = k * m + m
    objective = np.zeros(n)
    objective[k * m:] = 1.0
    upper = np.ones(n)
    upper[k * m:] = delta
    names = [f"x_{i}_{e}" for i in range(k) for e in range(m)] + [f"z_{e}" for e in range(m)]
    lp = LinearProgram(objective=objective, sense="minimize", upper=upper, names=names)
    for e in range(m):
        row = {i * m + e: 1.0 for i in range(k)}
        row[k * m + e] = -1.0
        lp.add_row(row, "<=", c_star - delta)
    _add_flow_rows(lp, net, requests)
    return lp


def solve_slack_lp(
    net: GridNetwork,
    requests: Sequence[RoutingRequest],
    c_star: float,
    delta: float = config.SLACK_DELTA,
) -> Tuple[float, np.ndarray]:
    """Returns (total overflow, flows shaped (k, |E|))."""
    lp = build_slack_lp(net, requests, c_star, delta)
    sol = solve_lp(lp)
    if sol.status != LpStatus.OPTIMAL:
        raise CardinalRoundingError(f"slack LP not solved: {sol.status.value}")
    m = net.num_edges
    flows = sol.values[: len(requests) * m].reshape(len(requests), m)
    logger.info(
        f"Slack LP solved: overflow {sol.objective_value:.4f}, "
        f"max load {flows.sum(axis=0).max(initial=0.0):.4f}"
    )
    return sol.objective_value, flows


def _support_graph(net: GridNetwork, flow: np.ndarray) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(net.vertices)
    g.add_edges_from(net.edges[e] for e in np.flatnonzero(flow > config.SUM_TOL))
    return g


def _cancel_cycles(net: GridNetwork, flow: np.ndarray) -> int:
    cancelled = 0
    while True:
        try:
            cycle = nx.find_cycle(_support_graph(net, flow))
        except nx.NetworkXNoCycle:
            return cancelled
        idx = [net.edge_index[(u, v)] for u, v in cycle]
        flow[idx] -= flow[idx].min()
        flow[flow <= config.SUM_TOL] = 0.0
        cancelled += 1


def _dfs_path(
    net: GridNetwork, flow: np.ndarray, s: Vertex, t: Vertex
) -> Optional[List[int]]:
    stack = [(s, iter(net.neighbors(s)))]
    visited = {s}
    path: List[int] = []
    while stack:
        v, it = stack[-1]
        if v == t:
            return path
        for w in it:
            e = net.edge_index[(v, w)]
            if w not in visited and flow[e] > config.SUM_TOL:
                visited.add(w)
                path.append(e)
                stack.append((w, iter(net.neighbors(w))))
                break
        else:
            stack.pop()
            if path:
                path.pop()
    return None


def path_strip(
    net: GridNetwork, request: RoutingRequest, edge_flow: Sequence[float]
) -> PathDecomposition:
    """
    Decomposes one request's edge flow into weighted s-t paths.

    Cycles in the positive support are cancelled first; afterwards DFS paths
    (neighbors in north, east, south, west order) are stripped one at a time,
    each by its bottleneck capped at 1, so weights stay in [0, 1] and a path
    may be listed more than once.

    Raises:
        NotAFlowError: when conservation fails or a flow value is negative.
    """
    flow = np.asarray(edge_flow, dtype=float).copy()
    if len(flow) != net.num_edges:
        raise NotAFlowError(f"expected {net.num_edges} edge values, got {len(flow)}")
    if flow.min(initial=0.0) < -config.FEAS_TOL:
        raise NotAFlowError(f"negative edge flow {flow.min():.3e}")
    flow[flow <= config.SUM_TOL] = 0.0
    s, t = tuple(request.source), tuple(request.target)
    tol = 1e-6 * max(1.0, float(request.demand))
    for v in net.vertices:
        net_out = flow[net.out_edges(v)].sum() - flow[net.in_edges(v)].sum()
        expected = request.demand if v == s else (-request.demand if v == t else 0.0)
        if abs(net_out - expected) > tol:
            raise NotAFlowError(
                f"net outflow {net_out:.6f} at {v}, expected {expected}"
            )

    cycles = _cancel_cycles(net, flow)
    if cycles:
        logger.debug(f"Cancelled {cycles} flow cycles for request {s}->{t}")

    paths: List[Tuple[int, ...]] = []
    weights: List[float] = []
    remaining = float(request.demand)
    while remaining > 1e-6:
        path = _dfs_path(net, flow, s, t)
        if path is None:
            break
        amount = min(float(flow[path].min()), 1.0, remaining)
        flow[path] -= amount
        flow[flow <= config.SUM_TOL] = 0.0
        paths.append(tuple(path))
        weights.append(amount)
        remaining -= amount

    w = np.array(weights)
    total = float(w.sum())
    if abs(total - request.demand) > tol:
        raise NotAFlowError(f"stripped {total:.6f} of demand {request.demand}")
    w = np.minimum(w * (request.demand / total), 1.0)
    return PathDecomposition(request=request, paths=paths, weights=w)


def decompose_all(
    net: GridNetwork, requests: Sequence[RoutingRequest], flows: np.ndarray
) -> List[PathDecomposition]:
    return [path_strip(net, req, flows[i]) for i, req in enumerate(requests)]


def _incidence(net: GridNetwork, decomps: Sequence[PathDecomposition]) -> np.ndarray:
    paths = [p for d in decomps for p in d.paths]
    A = np.zeros((net.num_edges, len(paths)))
    for col, path in enumerate(paths):
        for e in path:
            A[e, col] += 1.0
    return A


def _log_score(A: np.ndarray, y: np.ndarray, target: float, lam: float) -> float:
    factors = A @ np.log1p(np.expm1(lam) * y)
    return float(logsumexp(factors - lam * target))


def congestion_estimator(
    net: GridNetwork,
    decomps: Sequence[PathDecomposition],
    target: float,
    lam: float,
) -> EstimatorOracle:
    """
    Pessimistic estimator for "some edge carries at least `target` paths".

    score(y) = sum_e exp(-lam * target) * prod_P (1 - y_P + y_P * exp(lam * [e in P]))
    over all path variables in request-major order; lower is better.
    """
    A = _incidence(net, decomps)
    return EstimatorOracle(
        evaluate=lambda y: float(np.exp(_log_score(A, np.asarray(y, dtype=float), target, lam))),
        direction="minimize",
    )


def tune_estimator(
    net: GridNetwork,
    decomps: Sequence[PathDecomposition],
    c_star: float,
) -> EstimatorOracle:
    """
    Picks the estimator target and exponent.

    The target doubles from ceil(C*) until the best lambda (bounded scalar
    search) brings the initial score below 1.
    """
    A = _incidence(net, decomps)
    y = np.concatenate([d.weights for d in decomps]) if decomps else np.zeros(0)
    target = float(max(1, int(np.ceil(c_star - config.FEAS_TOL))))
    for _ in range(64):
        res = minimize_scalar(
            lambda lam: _log_score(A, y, target, lam),
            bounds=(1e-4, 10.0),
            method="bounded",
        )
        if res.fun < 0.0:
            lam = float(res.x)
            logger.debug(f"Estimator tuned: T={target}, lambda={lam:.4f}, log score {res.fun:.4f}")
            return congestion_estimator(net, decomps, target, lam)
        target *= 2.0
    raise CardinalRoundingError("could not tune the congestion estimator")


def rounding_problem(decomps: Sequence[PathDecomposition]) -> RoundingProblem:
    """One cardinality group per request over its path weights."""
    values = np.concatenate([d.weights for d in decomps]) if decomps else np.zeros(0)
    groups = []
    start = 0
    for d in decomps:
        groups.append(np.arange(start, start + len(d.weights)))
        start += len(d.weights)
    return RoundingProblem(values=values, groups=groups)


def round_decomposition(
    net: GridNetwork,
    decomps: Sequence[PathDecomposition],
    method: RoundingMethod,
    rng: RngLike = None,
    oracle: Optional[EstimatorOracle] = None,
) -> RoutingSolution:
    """
    Selects integral paths from the decompositions.

    Dependent methods keep exactly r_i paths per request; "independent"
    rounds each path on its own and flags the solution infeasible when some
    request got the wrong number of paths.
    """
    problem = rounding_problem(decomps)
    if method == "tree":
        bits = round_tree(problem, rng).bits
    elif method == "bitwise":
        bits = round_bitwise(problem, rng).bits
    elif method in ("derand_tree", "derand_bitwise"):
        if oracle is None:
            loads = sum((d.edge_loads(net.num_edges) for d in decomps), np.zeros(net.num_edges))
            oracle = tune_estimator(net, decomps, float(loads.max(initial=0.0)))
        pairing = "tree" if method == "derand_tree" else "bitwise"
        result = derandomize(problem, oracle, pairing=pairing)
        bits = result.bits
        logger.debug(f"{method}: estimator {result.trace[0]:.4g} -> {result.trace[-1]:.4g}")
    elif method == "independent":
        bits = round_independent(problem.values, rng)
    else:
        raise ValueError(f"unknown rounding method: {method}")

    chosen: List[List[Tuple[int, ...]]] = []
    feasible = True
    for d, g in zip(decomps, problem.groups):
        picked = [d.paths[k] for k, b in enumerate(bits[g]) if b]
        feasible &= len(picked) == d.request.demand
        chosen.append(picked)
    return RoutingSolution(paths=chosen, num_edges=net.num_edges, method=method, feasible=feasible)


def solution_to_ilp_point(
    net: GridNetwork, requests: Sequence[RoutingRequest], solution: RoutingSolution
) -> Optional[np.ndarray]:
    """
    Edge usage of a rounded solution in the variable layout of build_routing_ilp.

    Returns None when some request runs two of its chosen paths over the same
    edge, since the model allows one unit per request and edge.
    """
    m = net.num_edges
    x = np.zeros(len(requests) * m + 1)
    for i, request_paths in enumerate(solution.paths):
        for path in request_paths:
            for e in path:
                x[i * m + e] += 1.0
    if x[:-1].max(initial=0.0) > 1.0:
        return None
    x[-1] = solution.congestion
    return x
