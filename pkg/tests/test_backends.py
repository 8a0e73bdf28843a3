"""Agreement and selection tests for the paired kernel backends."""
import numpy as np
import pytest

from gepower import kernels, sim, solver
from gepower.kernels import rng

from conftest import make_spec

numba_missing = not kernels._numba_available()
needs_numba = pytest.mark.skipif(numba_missing, reason="numba not installed")


class TestSelection:
    def test_env_forces_numpy(self, monkeypatch):
        monkeypatch.setenv(kernels.ENV_VAR, "numpy")
        kernels.reset_backend_cache()
        assert kernels.backend_name() == "numpy"
        kernels.reset_backend_cache()

    @needs_numba
    def test_auto_prefers_numba(self, monkeypatch):
        monkeypatch.delenv(kernels.ENV_VAR, raising=False)
        kernels.reset_backend_cache()
        assert kernels.backend_name() == "numba"
        kernels.reset_backend_cache()

    def test_invalid_value_rejected(self, monkeypatch):
        monkeypatch.setenv(kernels.ENV_VAR, "cuda")
        kernels.reset_backend_cache()
        with pytest.raises(ValueError):
            kernels.backend_name()
        kernels.reset_backend_cache()


class TestRngParity:
    def test_scalar_vs_vector(self):
        keys = rng.episode_keys_np(99, np.arange(32, dtype=np.uint64))
        for e in (0, 1, 7, 31):
            assert int(keys[e]) == rng.episode_key(99, e)
        for ctr in (0, 5, 1000):
            vec = rng.draws_u01_np(keys, ctr)
            for e in (0, 3, 31):
                assert vec[e] == rng.draw_u01(int(keys[e]), ctr)

    @needs_numba
    def test_compiled_matches_python(self):
        from gepower.kernels import numba_backend as nb
        for seed, e in [(0, 0), (42, 7), (2**63, 12345)]:
            key = rng.episode_key(seed, e)
            assert nb.episode_key(seed, e) == key
            for ctr in (0, 17, 999):
                assert nb.draw_u01(key, ctr) == rng.draw_u01(key, ctr)

    def test_uniform_range(self):
        keys = rng.episode_keys_np(7, np.arange(2000, dtype=np.uint64))
        u = rng.draws_u01_np(keys, 0)
        assert np.all(u >= 0.0) and np.all(u < 1.0)
        assert abs(u.mean() - 0.5) < 0.02


@needs_numba
class TestSweepAgreement:
    def test_single_sweep(self, base_spec):
        grid = solver.build_grid(base_spec, 9)
        tables = solver.sweep_tables(base_spec, grid)
        rng_ = np.random.default_rng(11)
        values = rng_.uniform(0, 30, grid.shape)
        q_np = kernels.action_values(values, tables, base_spec.beta, backend="numpy")
        q_nb = kernels.action_values(values, tables, base_spec.beta, backend="numba")
        assert np.max(np.abs(q_np - q_nb)) <= 1e-10

    def test_full_solve(self, base_spec):
        grid = solver.build_grid(base_spec, 7)
        v_np = solver.value_iterate(base_spec, grid, 1e-8, backend="numpy")
        v_nb = solver.value_iterate(base_spec, grid, 1e-8, backend="numba")
        assert np.max(np.abs(v_np.values - v_nb.values)) <= 1e-8

    def test_two_channel_problem(self):
        spec = make_spec(R=(3.0, 2.0), C=(1.5, 1.0))
        grid = solver.build_grid(spec, 9)
        tables = solver.sweep_tables(spec, grid)
        values = np.random.default_rng(12).uniform(0, 10, grid.shape)
        q_np = kernels.action_values(values, tables, spec.beta, backend="numpy")
        q_nb = kernels.action_values(values, tables, spec.beta, backend="numba")
        assert np.max(np.abs(q_np - q_nb)) <= 1e-10


@needs_numba
class TestSimulationAgreement:
    @pytest.mark.parametrize("name", ["all_on", "best_single", "uniform_random",
                                      "none", "myopic", "optimal"])
    def test_bitwise_identical_rewards(self, base_spec, solved11, name):
        policies = dict(sim.baseline_policies(base_spec))
        policies["myopic"] = sim.myopic_policy(base_spec)
        policies["optimal"] = solved11[1]
        p0 = (0.5, 0.25, 0.75)
        r_np = sim.simulate_rewards(base_spec, policies[name], p0, 64, 45, 2024,
                                    backend="numpy")
        r_nb = sim.simulate_rewards(base_spec, policies[name], p0, 64, 45, 2024,
                                    backend="numba")
        assert np.array_equal(r_np, r_nb)

    def test_reference_episode_matches_batch(self, base_spec, solved11):
        pol = solved11[1]
        p0 = (0.5, 0.5, 0.5)
        batch = sim.simulate_rewards(base_spec, pol, p0, 16, 30, 555,
                                     backend="numba")
        for e in range(16):
            ref = sim.run_episode(base_spec, pol, p0, 30, sim.EpisodeStream(555, e))
            assert ref.discounted_reward == batch[e]
