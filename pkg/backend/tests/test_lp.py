import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from cardinal_rounding.errors import ConfigError, ParseError
from cardinal_rounding.lp import (
    LinearProgram,
    LpStatus,
    export_model,
    import_solution,
    solve_external,
    solve_ilp,
    solve_lp,
)
from cardinal_rounding.rounding import make_rng
from cardinal_rounding.routing import GridNetwork, RoutingRequest, build_routing_ilp


def _knapsack(values, weights, capacity) -> LinearProgram:
    n = len(values)
    lp = LinearProgram(
        objective=values,
        sense="maximize",
        upper=np.ones(n),
        integrality=np.ones(n, dtype=bool),
    )
    lp.add_row(weights, "<=", capacity)
    return lp


class TestSimplex:
    def test_single_bound_row(self):
        lp = LinearProgram(objective=[1.0], sense="maximize")
        lp.add_row({0: 1.0}, "<=", 3.0)
        sol = solve_lp(lp)
        assert sol.optimal
        assert sol.objective_value == pytest.approx(3.0)

    def test_infeasible(self):
        lp = LinearProgram(objective=[1.0])
        lp.add_row([1.0], "<=", 1.0)
        lp.add_row([1.0], ">=", 2.0)
        assert solve_lp(lp).status == LpStatus.INFEASIBLE

    def test_unbounded(self):
        lp = LinearProgram(objective=[1.0, 0.0], sense="maximize")
        lp.add_row([0.0, 1.0], "<=", 1.0)
        assert solve_lp(lp).status == LpStatus.UNBOUNDED

    def test_free_variable(self):
        lp = LinearProgram(objective=[1.0], lower=[-np.inf])
        lp.add_row([1.0], ">=", -5.0)
        sol = solve_lp(lp)
        assert sol.optimal
        assert sol.values[0] == pytest.approx(-5.0)

    def test_fixed_and_upper_only_variables(self):
        lp = LinearProgram(
            objective=[1.0, 1.0, 1.0],
            sense="maximize",
            lower=[2.0, -np.inf, 0.0],
            upper=[2.0, 4.0, 1.5],
        )
        sol = solve_lp(lp)
        assert sol.values == pytest.approx([2.0, 4.0, 1.5])

    def test_equality_rows(self):
        lp = LinearProgram(objective=[1.0, 2.0, 3.0])
        lp.add_row([1.0, 1.0, 1.0], "=", 2.0)
        lp.add_row([1.0, 0.0, 0.0], "<=", 1.0)
        sol = solve_lp(lp)
        assert sol.objective_value == pytest.approx(1.0 + 2.0)
        assert lp.is_feasible(sol.values)

    def test_redundant_equalities(self):
        lp = LinearProgram(objective=[1.0, 1.0])
        lp.add_row([1.0, 1.0], "=", 1.0)
        lp.add_row([2.0, 2.0], "=", 2.0)
        sol = solve_lp(lp)
        assert sol.optimal
        assert sol.objective_value == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_reference_solver(self, seed):
        gen = make_rng(seed)
        n, m = 8, 6
        c = gen.uniform(-1.0, 2.0, size=n)
        A = gen.uniform(0.0, 1.0, size=(m, n))
        b = gen.uniform(1.0, 3.0, size=m)
        ub = gen.uniform(0.5, 2.0, size=n)
        lp = LinearProgram(objective=c, sense="maximize", upper=ub)
        for row, rhs in zip(A, b):
            lp.add_row(row, "<=", rhs)
        lp.add_row(np.ones(n), ">=", 0.5)
        ours = solve_lp(lp)
        ref = linprog(
            -c,
            A_ub=np.vstack([A, -np.ones(n)]),
            b_ub=np.concatenate([b, [-0.5]]),
            bounds=list(zip(np.zeros(n), ub)),
            method="highs",
        )
        assert ours.optimal
        assert ours.objective_value == pytest.approx(-ref.fun, rel=1e-6, abs=1e-8)
        assert lp.is_feasible(ours.values)


class TestBranchAndBound:
    @pytest.mark.parametrize("seed", range(5))
    def test_knapsack_matches_enumeration(self, seed):
        gen = make_rng(100 + seed)
        n = 10
        values = gen.integers(1, 20, size=n).astype(float)
        weights = gen.integers(1, 10, size=n).astype(float)
        capacity = float(weights.sum() // 2)
        best = max(
            float(values @ np.array(bits))
            for bits in itertools.product([0, 1], repeat=n)
            if float(weights @ np.array(bits)) <= capacity
        )
        sol = solve_ilp(_knapsack(values, weights, capacity))
        assert sol.optimal
        assert sol.objective_value == pytest.approx(best)
        assert np.all(np.isin(sol.values, [0.0, 1.0]))
        assert sol.gap == pytest.approx(0.0)

    def test_integral_root_needs_one_node(self):
        lp = LinearProgram(objective=[1.0, 1.0], sense="maximize", integrality=[True, True])
        lp.add_row([1.0, 1.0], "<=", 3.0)
        sol = solve_ilp(lp)
        assert sol.optimal
        assert sol.nodes == 1
        assert sol.objective_value == pytest.approx(3.0)

    def test_infeasible_ilp(self):
        lp = LinearProgram(objective=[1.0], integrality=[True])
        lp.add_row([2.0], "=", 1.0)
        assert solve_ilp(lp).status == LpStatus.INFEASIBLE

    def test_infeasible_incumbent_is_ignored(self):
        lp = _knapsack([5.0, 4.0, 3.0], [2.0, 2.0, 2.0], 4.0)
        sol = solve_ilp(lp, incumbent=np.ones(3))
        assert sol.optimal
        assert sol.objective_value == pytest.approx(9.0)

    def test_feasible_incumbent_used(self):
        lp = _knapsack([5.0, 4.0, 3.0], [2.0, 2.0, 2.0], 4.0)
        sol = solve_ilp(lp, incumbent=np.array([1.0, 1.0, 0.0]))
        assert sol.objective_value == pytest.approx(9.0)


class TestModelFiles:
    def test_export_layout(self, tmp_path):
        lp = LinearProgram(
            objective=[1.0, -2.0, 0.5],
            sense="maximize",
            upper=[1.0, np.inf, 1.0],
            integrality=[True, True, False],
            names=["a", "b", "c"],
        )
        lp.add_row([1.0, 1.0, 0.0], "<=", 4.0)
        lp.add_row({2: 1.0}, ">=", 0.25)
        path = export_model(lp, tmp_path / "m.lp")
        lines = path.read_text().splitlines()
        # header 4, rows 2, Bounds 1 + 3, General 2, Binary 2, End 1
        assert len(lines) == 4 + 2 + 1 + 3 + 2 + 2 + 1
        assert lines[1] == "Maximize"
        assert lines[2] == " obj: 1 a - 2 b + 0.5 c"
        assert lines[4] == " c0: 1 a + 1 b <= 4"
        assert lines[-5:] == ["General", " b", "Binary", " a", "End"]

    @pytest.mark.parametrize("relax", [False, True])
    def test_routing_export_line_count(self, tmp_path, relax):
        net = GridNetwork(5, 5)
        requests = [RoutingRequest((1, 1), (3, 3), 3), RoutingRequest((2, 0), (2, 4), 3)]
        lp = build_routing_ilp(net, requests, relax=relax)
        lines = export_model(lp, tmp_path / "routing.lp").read_text().splitlines()
        m, k = net.num_edges, len(requests)
        num_rows = m + k * (len(net.vertices) - 1)
        assert m == 80
        assert lp.num_vars == k * m + 1
        assert len(lp.rows) == num_rows
        # x variables binary, C general
        integer_sections = 0 if relax else 4
        assert len(lines) == 4 + num_rows + 1 + lp.num_vars + integer_sections + 1
        assert " C >= 0" in lines
        assert " 0 <= x_1_79 <= 1" in lines

    def test_import(self, tmp_path):
        lp = LinearProgram(objective=[1.0, 1.0])
        sol_file = tmp_path / "x.sol"
        sol_file.write_text("# solution\nx0 3\n\nx1 0\n")
        sol = import_solution(sol_file, lp)
        assert sol.objective_value == pytest.approx(3.0)

    def test_import_unknown_variable(self, tmp_path):
        lp = LinearProgram(objective=[1.0])
        sol_file = tmp_path / "x.sol"
        sol_file.write_text("x0 1\nzz 2\n")
        with pytest.raises(ParseError, match=r"x\.sol:2: unknown variable 'zz'"):
            import_solution(sol_file, lp)

    def test_import_bad_value(self, tmp_path):
        lp = LinearProgram(objective=[1.0])
        sol_file = tmp_path / "x.sol"
        sol_file.write_text("x0 one\n")
        with pytest.raises(ParseError, match=":1:"):
            import_solution(sol_file, lp)

    def test_external_solver_roundtrip(self, tmp_path):
        lp = LinearProgram(objective=[1.0], sense="maximize")
        lp.add_row([1.0], "<=", 3.0)
        sol = solve_external(lp, "sh -c \"echo 'x0 3' > {solution}\"", workdir=tmp_path)
        assert sol.values.tolist() == [3.0]

    def test_external_solver_requires_command(self):
        with pytest.raises(ConfigError):
            solve_external(LinearProgram(objective=[1.0]), "")
