import numpy as np
import pytest

from gepower import analysis, model, solver
from gepower.analysis import StructuralViolationError
from gepower.model import Action
from gepower.solver import Policy

from conftest import make_spec


def _synthetic_policy(grid, choice, n_actions=8):
    ties = np.zeros((n_actions,) + grid.shape, dtype=bool)
    for a in range(n_actions):
        ties[a] = choice == a
    return Policy(grid=grid, choice=choice.astype(np.int64), ties=ties,
                  tie_epsilon=1e-9)


class TestDecisionRegions:
    def test_reference_policy(self, solved21):
        _, pol = solved21
        rep = analysis.decision_regions(pol)
        assert sum(r.volume for r in rep.regions.values()) == pytest.approx(1.0, abs=1e-12)
        for a, region in rep.regions.items():
            assert region.count > 0
            assert region.components == 1
            assert all(region.contiguous_by_axis)
            assert region.contains_vertex

    def test_zero_discount_null_region(self):
        spec = make_spec(beta=0.0)
        grid = solver.build_grid(spec, 9)
        v = solver.value_iterate(spec, grid, 1e-10)
        pol = solver.extract_policy(spec, v)
        rep = analysis.decision_regions(pol)
        acts = model.enumerate_actions(3)
        expect = sum(
            1 for p in grid.points()
            if max(model.immediate_reward(spec, a, p) for a in acts) <= 1e-12)
        assert rep.regions[0].count == expect

    def test_static_channels_match_myopic(self):
        # with lambda0 == lambda1 the future is belief-independent, so the
        # optimal choice reduces to the best immediate action everywhere
        spec = make_spec(lam0=0.4, lam1=0.4)
        grid = solver.build_grid(spec, 9)
        v = solver.value_iterate(spec, grid, 1e-9)
        pol = solver.extract_policy(spec, v)
        acts = model.enumerate_actions(3)
        priority = solver.action_priority(3)
        for flat, p in enumerate(grid.points()):
            best = max(range(8), key=lambda a: (model.immediate_reward(spec, acts[a], p)))
            g_best = model.immediate_reward(spec, acts[best], p)
            tie = [a for a in priority
                   if model.immediate_reward(spec, acts[a], p) >= g_best - 1e-9]
            idx = np.unravel_index(flat, grid.shape)
            assert pol.choice[idx] == tie[0]


class TestContiguity:
    def test_reference_clean(self, solved21):
        _, pol = solved21
        for axis in range(3):
            assert analysis.check_contiguity(pol, axis).ok

    def test_synthetic_violation(self, base_spec):
        grid = solver.build_grid(base_spec, 5)
        choice = np.zeros(grid.shape, dtype=np.int64)
        choice[0, 0, 0] = 1
        choice[0, 0, 2] = 1  # two separated runs of action 1 on one line
        pol = _synthetic_policy(grid, choice)
        res = analysis.check_contiguity(pol, axis=2)
        assert not res.ok
        assert (1, (0, 0)) in res.violations

    def test_single_action_trivially_contiguous(self, base_spec):
        grid = solver.build_grid(base_spec, 5)
        pol = _synthetic_policy(grid, np.full(grid.shape, 3, dtype=np.int64))
        assert analysis.check_contiguity_all(pol).ok

    def test_axis_bounds(self, solved21):
        _, pol = solved21
        with pytest.raises(ValueError):
            analysis.check_contiguity(pol, 3)


class TestSymmetry:
    def test_reference_symmetric(self, base_spec, solved21):
        v, _ = solved21
        res = analysis.check_symmetry(base_spec, v)
        assert res.ok
        assert res.n_permutations == 6
        assert res.max_value_dev <= 1e-9 and res.max_q_dev <= 1e-9

    def test_perturbation_detected(self, base_spec, solved21):
        v, _ = solved21
        bad = solver.ValueFunction(v.grid, v.values.copy())
        bad.values[3, 7, 11] += 1e-3
        res = analysis.check_symmetry(base_spec, bad)
        assert not res.ok
        assert res.max_value_dev > 1e-4
        assert res.worst_permutation != (0, 1, 2)

    def test_two_channel_group(self):
        spec = make_spec(R=(3.0, 2.0), C=(1.5, 1.0))
        grid = solver.build_grid(spec, 7)
        v = solver.value_iterate(spec, grid, 1e-8)
        res = analysis.check_symmetry(spec, v)
        assert res.ok and res.n_permutations == 2


class TestConnectivity:
    def test_reference_single_components(self, solved21):
        _, pol = solved21
        for a in range(8):
            res = analysis.check_connectivity(pol, a)
            assert res.components == 1 and not res.empty

    def test_empty_region_flagged(self, base_spec):
        grid = solver.build_grid(base_spec, 4)
        pol = _synthetic_policy(grid, np.zeros(grid.shape, dtype=np.int64))
        res = analysis.check_connectivity(pol, Action((1, 1, 1)))
        assert res.empty and res.components == 0

    def test_two_blobs(self, base_spec):
        grid = solver.build_grid(base_spec, 5)
        choice = np.zeros(grid.shape, dtype=np.int64)
        choice[0, 0, 0] = 7
        choice[4, 4, 4] = 7
        pol = _synthetic_policy(grid, choice)
        assert analysis.check_connectivity(pol, 7).components == 2


class TestConvexityMonotonicity:
    def test_reference_convex(self, solved21):
        v, _ = solved21
        assert analysis.check_convexity(v).ok

    def test_bump_detected(self, solved21):
        v, _ = solved21
        bad = solver.ValueFunction(v.grid, v.values.copy())
        bad.values[10, 10, 10] += 0.5
        res = analysis.check_convexity(bad)
        assert not res.ok
        assert res.worst_index == (10, 10, 10)

    def test_affine_field_passes_with_zero_slack(self, base_spec):
        grid = solver.build_grid(base_spec, 9)
        pts = grid.points()
        vals = (pts @ np.array([1.0, 2.0, 3.0])).reshape(grid.shape)
        res = analysis.check_convexity(solver.ValueFunction(grid, vals))
        assert res.ok
        assert abs(res.worst_excess) <= 1e-12

    def test_reference_monotone(self, solved21):
        v, _ = solved21
        assert analysis.check_monotonicity(v).ok

    def test_decreasing_field_fails(self, base_spec):
        grid = solver.build_grid(base_spec, 5)
        pts = grid.points()
        vals = (-pts[:, 0]).reshape(grid.shape)
        res = analysis.check_monotonicity(solver.ValueFunction(grid, vals))
        assert not res.ok


class TestEdgeThreshold:
    def test_zero_discount_closed_forms(self):
        # without continuation value the switch points are pure reward algebra
        spec = make_spec(beta=0.0)
        grid = solver.build_grid(spec, 5)
        v = solver.value_iterate(spec, grid, 1e-10)
        R, C = spec.schedule.rewards, spec.schedule.penalties
        expected = {
            1: C[0] / (R[0] + C[0]),
            2: (R[0] - R[1] + C[1]) / (R[1] + C[1]),
            3: (2 * R[1] - 2 * R[2] + C[2]) / (R[2] + C[2]),
        }
        for edge, lo, hi, kind in analysis.canonical_edges():
            res = analysis.edge_threshold(spec, v, edge, lo, hi)
            assert res.threshold == pytest.approx(expected[kind], abs=1e-9)

    def test_always_good_channels_still_interior(self):
        # identical continuations cancel, leaving the same reward algebra
        spec = make_spec(lam0=1.0, lam1=1.0)
        grid = solver.build_grid(spec, 5)
        v = solver.value_iterate(spec, grid, 1e-9)
        edge, lo, hi, _ = analysis.canonical_edges()[0]
        res = analysis.edge_threshold(spec, v, edge, lo, hi)
        assert res.threshold == pytest.approx(1.5 / 4.5, abs=1e-9)

    def test_dominated_action_degenerates(self, base_spec, solved21):
        v, _ = solved21
        # on this edge, using the surely-bad third channel is always worse
        res = analysis.edge_threshold(base_spec, v, {0: 0.0, 2: 0.0},
                                      Action((0, 0, 0)), Action((0, 0, 1)))
        assert res.threshold == 1.0

    def test_reference_thresholds_interior(self, base_spec, solved21):
        v, _ = solved21
        for edge, lo, hi, kind in analysis.canonical_edges():
            res = analysis.edge_threshold(base_spec, v, edge, lo, hi)
            assert 0.0 < res.threshold < 1.0
            assert res.bisection_residual <= 1e-8

    def test_self_consistency_residuals(self, base_spec, solved21):
        v, _ = solved21
        for edge, lo, hi, kind in analysis.canonical_edges():
            res = analysis.edge_threshold(base_spec, v, edge, lo, hi)
            resid = analysis.threshold_self_consistency(base_spec, v, kind,
                                                        res.threshold)
            assert resid <= 1e-6

    def test_multiple_crossings_rejected(self, base_spec):
        # rig the stored values along the unobserved-update line so the
        # action gap oscillates: the sweep guard must refuse to bisect
        grid = solver.build_grid(base_spec, 5)
        vals = np.zeros(grid.shape)
        i0 = int(np.flatnonzero(grid.axis == 0.1)[0])
        for k in range(grid.axis.size):
            vals[i0, k, i0] = 200.0 * (-1) ** k
        v = solver.ValueFunction(grid, vals)
        with pytest.raises(StructuralViolationError):
            analysis.edge_threshold(base_spec, v, {0: 0.0, 2: 0.0},
                                    Action((0, 0, 0)), Action((0, 1, 0)))

    def test_edge_validation(self, base_spec, solved21):
        v, _ = solved21
        with pytest.raises(ValueError):
            analysis.edge_threshold(base_spec, v, {0: 0.5, 2: 0.0},
                                    Action((0, 0, 0)), Action((0, 1, 0)))
        with pytest.raises(ValueError):
            analysis.edge_threshold(base_spec, v, {0: 0.0},
                                    Action((0, 0, 0)), Action((0, 1, 0)))


class TestBoundaryPlanes:
    def test_low_faces_exclude_that_channel(self, base_spec, solved21):
        v, _ = solved21
        rep = analysis.boundary_plane_policy(base_spec, v, axis=2, side=0)
        assert rep.ok
        assert set(rep.present_masks) <= {0, 2, 4, 6}

    def test_high_faces_require_that_channel(self, base_spec, solved21):
        v, _ = solved21
        rep = analysis.boundary_plane_policy(base_spec, v, axis=2, side=1)
        assert rep.ok
        assert set(rep.present_masks) <= {1, 3, 5, 7}

    def test_all_six_faces(self, base_spec, solved21):
        v, _ = solved21
        for axis in range(3):
            for side in (0, 1):
                assert analysis.boundary_plane_policy(base_spec, v, axis, side).ok


class TestSweep:
    def test_instantiate_lambda(self, base_spec):
        inst = analysis.instantiate_spec(base_spec, "lambda0", 0.3)
        assert inst.channels.lambda0 == 0.3
        assert inst.channels.lambda1 == base_spec.channels.lambda1

    def test_instantiate_penalty_ratio(self, base_spec):
        inst = analysis.instantiate_spec(base_spec, "reward_penalty_ratio", 4.0)
        assert inst.schedule.penalties == tuple(r / 4 for r in base_spec.schedule.rewards)

    def test_instantiate_reward_ratio(self, base_spec):
        r = 1.2
        inst = analysis.instantiate_spec(base_spec, "reward_ratio_k2k1", r)
        R = inst.schedule.rewards
        assert R[0] == 3.0
        assert R[1] == pytest.approx(r * 3.0 / 2)
        assert R[2] == pytest.approx(r * r * 3.0 / 3)
        # consecutive total-reward ratios are constant and C tracks R/C = 2
        assert 2 * R[1] / R[0] == pytest.approx(3 * R[2] / (2 * R[1]))
        assert inst.schedule.penalties == tuple(x / 2 for x in R)

    def test_unknown_parameter(self, base_spec):
        with pytest.raises(ValueError):
            analysis.instantiate_spec(base_spec, "bandwidth", 1.0)

    def test_rows_and_skips(self, base_spec):
        rows = analysis.sweep(base_spec, "lambda0", [0.1, 0.95], resolution=5)
        assert rows[0].status == "ok"
        assert rows[0].contiguity_pass and rows[0].symmetry_pass and rows[0].vertex_pass
        assert rows[1].status == "skipped"
        assert "lambda0 <= lambda1" in rows[1].reason
        assert sum(rows[0].volumes) == pytest.approx(
            (rows[0].volumes[0] + 3 * rows[0].volumes[1]
             + 3 * rows[0].volumes[2] + rows[0].volumes[3])
            - 2 * (rows[0].volumes[1] + rows[0].volumes[2]), abs=1e-9)

    def test_csv_format(self, base_spec):
        rows = analysis.sweep(base_spec, "lambda0", [0.1, 0.95], resolution=5)
        text = analysis.sweep_csv(rows)
        lines = text.strip().split("\n")
        assert lines[0] == ("param_value,vol_B0,vol_B1,vol_B2,vol_B3,"
                            "components_B0,components_B1,components_B2,"
                            "components_B3,contiguity_pass,symmetry_pass,"
                            "vertex_pass,status,reason")
        assert len(lines) == 3
        assert lines[2].split(",")[0] == "0.95"
        assert "skipped" in lines[2]

    def test_representatives(self):
        assert analysis.representative_masks(3) == (0, 4, 6, 7)
        assert analysis.representative_masks(2) == (0, 2, 3, 3)
