import numpy as np
import pytest
from scipy.optimize import linprog

from gepower import lp, model, solver
from gepower.lp import LPError

from conftest import make_spec


def _small_problem(spec, resolution=5):
    grid = solver.build_grid(spec, resolution)
    return grid, lp.build_lp(spec, grid)


class TestBuildLP:
    def test_reference_counts(self, base_spec):
        grid = solver.build_grid(base_spec, 11)
        prob = lp.build_lp(base_spec, grid)
        assert prob.n_vars == 1331
        assert prob.n_cons == 10648

    def test_weights_are_convex_combinations(self, base_spec):
        _, prob = _small_problem(base_spec)
        sums = np.add.reduceat(prob.data, prob.indptr[:-1])
        assert np.all(prob.data >= 0)
        assert np.max(np.abs(sums - 1.0)) <= 1e-12

    def test_row_ordering(self, base_spec):
        _, prob = _small_problem(base_spec)
        assert prob.point_index[5] == 0 and prob.action_index[5] == 5
        assert prob.point_index[8] == 1 and prob.action_index[8] == 0

    def test_constraint_cap(self, base_spec):
        grid = solver.build_grid(base_spec, 11)
        with pytest.raises(ValueError, match="cap"):
            lp.build_lp(base_spec, grid, max_constraints=100)

    def test_merged_rows_when_parameters_coincide(self):
        spec = make_spec(lam0=0.4, lam1=0.4)
        _, prob = _small_problem(spec)
        sums = np.add.reduceat(prob.data, prob.indptr[:-1])
        assert np.max(np.abs(sums - 1.0)) <= 1e-12
        # observation slices coincide, so duplicate indices must be merged
        for row in range(min(64, prob.n_cons)):
            s, e = prob.indptr[row], prob.indptr[row + 1]
            idx = prob.indices[s:e]
            assert len(np.unique(idx)) == idx.size


class TestSolveLP:
    def test_zero_discount_decouples(self):
        spec = make_spec(beta=0.0)
        grid, prob = _small_problem(spec)
        sol = lp.solve_lp(prob)
        acts = model.enumerate_actions(3)
        expect = np.array([
            max(model.immediate_reward(spec, a, p) for a in acts)
            for p in grid.points()])
        assert np.max(np.abs(sol.values - expect)) <= 1e-9

    def test_always_good_corner_value(self):
        spec = make_spec(lam0=1.0, lam1=1.0)
        grid, prob = _small_problem(spec)
        sol = lp.solve_lp(prob)
        v = solver.value_iterate(spec, grid, 1e-9)
        assert np.max(np.abs(sol.values - v.values.ravel())) <= 1e-7
        assert sol.values[-1] == pytest.approx(53.4, abs=1e-7)

    def test_agrees_with_value_iteration(self, base_spec):
        grid, prob = _small_problem(base_spec, resolution=7)
        sol = lp.solve_lp(prob, tol=1e-9)
        v = solver.value_iterate(base_spec, grid, 1e-8)
        rep = lp.cross_check(v, sol.values, 1e-6)
        assert rep.passed, rep.to_json()

    def test_superharmonic_at_optimum(self, base_spec):
        grid, prob = _small_problem(base_spec)
        sol = lp.solve_lp(prob)
        v = solver.ValueFunction(grid, sol.values.reshape(grid.shape))
        backed, _ = solver.bellman_backup(base_spec, v)
        assert np.all(sol.values.reshape(grid.shape) >= backed.values - 1e-8)

    def test_matches_external_solver(self, base_spec):
        grid, prob = _small_problem(base_spec, resolution=4)
        sol = lp.solve_lp(prob)
        res = linprog(
            c=np.ones(prob.n_vars),
            A_ub=-_dense_rows(prob),
            b_ub=-prob.g,
            bounds=[(None, None)] * prob.n_vars,
            method="highs")
        assert res.status == 0
        assert sol.objective == pytest.approx(res.fun, abs=1e-6)
        assert np.max(np.abs(sol.values - res.x)) <= 1e-6

    def test_basis_identifies_policy(self, base_spec, solved11):
        grid, prob = _small_problem(base_spec, resolution=5)
        sol = lp.solve_lp(prob)
        v = solver.value_iterate(base_spec, grid, 1e-9)
        pol = solver.extract_policy(base_spec, v, tie_epsilon=1e-7)
        binding = sol.basis_actions
        ok = sum(
            bool(pol.ties[(int(binding[i]),) + np.unravel_index(i, grid.shape)])
            for i in range(grid.size) if binding[i] >= 0)
        assert ok >= 0.99 * np.count_nonzero(binding >= 0)

    def test_pivot_limit_raises(self, base_spec):
        _, prob = _small_problem(base_spec)
        with pytest.raises(LPError):
            lp.solve_lp(prob, max_pivots=1)

    def test_bland_pricing_also_solves(self, base_spec):
        grid, prob = _small_problem(base_spec, resolution=4)
        a = lp.solve_lp(prob, pricing="bland")
        b = lp.solve_lp(prob, pricing="dantzig")
        assert np.max(np.abs(a.values - b.values)) <= 1e-7


def _dense_rows(prob):
    """Materialize the primal constraint matrix V[p] - beta * w . V."""
    A = np.zeros((prob.n_cons, prob.n_vars))
    for row in range(prob.n_cons):
        s, e = prob.indptr[row], prob.indptr[row + 1]
        A[row, prob.indices[s:e]] -= prob.beta * prob.data[s:e]
        A[row, prob.point_index[row]] += 1.0
    return A


def _parse_lp_file(path):
    """Minimal reader for the exported format: returns (A_rows, rhs, n_vars)."""
    with open(path) as fh:
        text = fh.read()
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("\\")]
    n_vars = sum(1 for ln in lines if ln.strip().endswith("free"))
    body = text[text.index("Subject To") + len("Subject To"):text.index("Bounds")]
    # glue continuation lines back onto their constraint
    chunks = []
    for raw in body.splitlines():
        if not raw.strip():
            continue
        if raw.startswith(" c_"):
            chunks.append(raw.strip())
        else:
            chunks[-1] += " " + raw.strip()
    rows, rhs, names = [], [], []
    for chunk in chunks:
        name, rest = chunk.split(":", 1)
        expr, bound = rest.split(">=")
        coefs = np.zeros(n_vars)
        tokens = expr.split()
        sign = 1.0
        i = 0
        while i < len(tokens):
            tok = tokens[i]
            if tok == "+":
                sign = 1.0
            elif tok == "-":
                sign = -1.0
            else:
                value = float(tok)
                var = tokens[i + 1]
                coefs[int(var[2:])] = sign * value
                sign = 1.0
                i += 1
            i += 1
        rows.append(coefs)
        rhs.append(float(bound))
        names.append(name.strip())
    return np.array(rows), np.array(rhs), n_vars, names


class TestExportLP:
    def test_toy_skeleton(self, tmp_path):
        spec = model.ProblemSpec(
            model.ChannelParams(0.0, 1.0),
            model.RewardSchedule((3.0,), (1.5,)), 0.9)
        grid = solver.BeliefGrid(axis=np.array([0.0, 1.0]), n=1)
        prob = lp.build_lp(spec, grid)
        path = lp.export_lp(prob, str(tmp_path / "toy.lp"))
        text = open(path).read()
        assert text.startswith("\\")
        assert "Minimize" in text and "Subject To" in text and text.rstrip().endswith("End")
        assert text.count(" free") == 2

    def test_constraint_naming(self, base_spec, tmp_path):
        grid = solver.build_grid(base_spec, 2)
        prob = lp.build_lp(base_spec, grid)
        path = lp.export_lp(prob, str(tmp_path / "m.lp"))
        text = open(path).read()
        assert " c_0_5:" in text
        assert " c_7_0:" in text

    def test_round_trip_through_external_solver(self, base_spec, tmp_path):
        grid, prob = _small_problem(base_spec, resolution=4)
        internal = lp.solve_lp(prob)
        path = lp.export_lp(prob, str(tmp_path / "m.lp"))
        A, b, n_vars, names = _parse_lp_file(path)
        assert n_vars == prob.n_vars
        assert len(names) == prob.n_cons
        res = linprog(c=np.ones(n_vars), A_ub=-A, b_ub=-b,
                      bounds=[(None, None)] * n_vars, method="highs")
        assert res.status == 0
        assert res.fun == pytest.approx(internal.objective, abs=1e-6)


class TestCrossCheck:
    def test_identical_passes(self, solved11):
        v, _ = solved11
        rep = lp.cross_check(v, v.values.ravel(), 1e-12)
        assert rep.passed and rep.max_abs_diff == 0.0

    def test_perturbation_located(self, solved11):
        v, _ = solved11
        arr = v.values.ravel().copy()
        arr[137] += 1.0
        rep = lp.cross_check(v, arr, 1e-6)
        assert not rep.passed
        assert rep.worst_index == 137
        assert rep.max_abs_diff == pytest.approx(1.0)

    def test_grid_mismatch(self, solved11):
        v, _ = solved11
        with pytest.raises(ValueError, match="mismatch"):
            lp.cross_check(v, np.zeros(10), 1e-6)

    def test_json_keys(self, solved11):
        v, _ = solved11
        obj = lp.cross_check(v, v.values.ravel(), 1e-9).to_json()
        assert {"max_abs_diff", "mean_abs_diff", "pass"} <= set(obj)
