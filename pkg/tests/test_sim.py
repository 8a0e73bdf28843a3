import numpy as np
import pytest

from gepower import model, sim, solver
from gepower.model import Action, ChannelParams
from gepower.sim import EpisodeStream

from conftest import make_spec


class TestStepChannels:
    def test_absorbing_states(self):
        params = ChannelParams(0.0, 1.0)
        rng = np.random.default_rng(0)
        state = np.array([True, False, True])
        for _ in range(50):
            state2 = sim.step_channels(params, state, rng)
            assert np.array_equal(state2, state)
            state = state2

    def test_always_recovers(self):
        params = ChannelParams(1.0, 1.0)
        rng = np.random.default_rng(1)
        out = sim.step_channels(params, np.array([False, False, True]), rng)
        assert np.all(out)

    def test_long_run_occupancy(self):
        # empirical good-state frequency approaches the stationary belief
        params = ChannelParams(0.1, 0.9)
        rng = np.random.default_rng(12345)
        state = np.array([False])
        good = 0
        steps = 1_000_000
        for _ in range(steps):
            state = sim.step_channels(params, state, rng)
            good += int(state[0])
        assert good / steps == pytest.approx(0.5, abs=0.002)


class TestRunEpisode:
    def test_deterministic_always_good(self):
        spec = make_spec(lam0=1.0, lam1=1.0)
        pol = sim.AllOnPolicy(3)
        res = sim.run_episode(spec, pol, (1.0, 1.0, 1.0), 200, EpisodeStream(0, 0))
        expect = sum(0.9**t * 5.34 for t in range(200))
        assert res.discounted_reward == pytest.approx(expect, abs=1e-10)

    def test_null_policy_exact_zero(self, base_spec):
        res = sim.run_episode(base_spec, sim.NonePolicy(3), (0.5, 0.5, 0.5), 100,
                              EpisodeStream(42, 0))
        assert res.discounted_reward == 0.0

    def test_horizon_validation(self, base_spec):
        with pytest.raises(ValueError):
            sim.run_episode(base_spec, sim.NonePolicy(3), (0.5, 0.5, 0.5), 0,
                            EpisodeStream(0, 0))

    def test_one_step_expectation(self, base_spec):
        # beta = 0, horizon 1: mean realized reward estimates the expected
        # immediate reward of the fixed action
        spec = make_spec(beta=0.0)
        p0 = (0.4, 0.7, 0.2)
        rewards = sim.simulate_rewards(spec, sim.AllOnPolicy(3), p0, 40_000, 1, 99)
        g = model.immediate_reward(spec, Action((1, 1, 1)), p0)
        se = rewards.std(ddof=1) / np.sqrt(rewards.size)
        assert abs(rewards.mean() - g) <= 4 * se

    def test_belief_tracking_under_full_observation(self, base_spec):
        res = sim.run_episode(base_spec, sim.AllOnPolicy(3), (0.3, 0.6, 0.9), 40,
                              EpisodeStream(7, 3), record_log=True)
        lam = (base_spec.channels.lambda0, base_spec.channels.lambda1)
        for prev, cur in zip(res.steps[:-1], res.steps[1:]):
            revealed = prev[2]
            belief = cur[0]
            assert belief == tuple(lam[int(s)] for s in revealed)

    def test_envelope(self, base_spec, solved11):
        lo, hi = sim.reward_envelope(base_spec)
        rewards = sim.simulate_rewards(base_spec, solved11[1], (0.5, 0.5, 0.5),
                                       5000, 120, 31337)
        assert np.all(rewards <= hi) and np.all(rewards >= lo)


class TestEvaluatePolicy:
    def test_reproducible(self, base_spec, solved11):
        a = sim.evaluate_policy(base_spec, solved11[1], (0.5, 0.5, 0.5), 500, 60, 11)
        b = sim.evaluate_policy(base_spec, solved11[1], (0.5, 0.5, 0.5), 500, 60, 11)
        assert a == b

    def test_null_policy_summary(self, base_spec):
        s = sim.evaluate_policy(base_spec, sim.NonePolicy(3), (0.5, 0.5, 0.5),
                                200, 50, 5)
        assert s.mean == 0.0 and s.stderr == 0.0 and s.ci99 == 0.0

    def test_needs_two_episodes(self, base_spec):
        with pytest.raises(ValueError):
            sim.evaluate_policy(base_spec, sim.NonePolicy(3), (0.5, 0.5, 0.5),
                                1, 10, 0)

    def test_summary_json(self, base_spec):
        s = sim.evaluate_policy(base_spec, sim.NonePolicy(3), (0.5, 0.5, 0.5),
                                100, 10, 0)
        obj = s.to_json("none", (0.5, 0.5, 0.5), 10, 0)
        assert obj["policy_name"] == "none" and obj["episodes"] == 100


class TestPolicies:
    def test_myopic_examples(self, base_spec):
        pol = sim.myopic_policy(base_spec)
        assert pol.action_at((1.0, 1.0, 1.0)).mask == (1, 1, 1)
        assert pol.action_at((0.0, 0.0, 0.0)).mask == (0, 0, 0)
        assert pol.action_at((1.0, 0.0, 0.0)).mask == (1, 0, 0)

    def test_best_single_tie_to_lowest_index(self, base_spec):
        pol = sim.BestSinglePolicy(3)
        assert pol.action_at((0.2, 0.9, 0.9)).mask == (0, 1, 0)

    def test_uniform_reproducible(self, base_spec):
        a = sim.simulate_rewards(base_spec, sim.UniformRandomPolicy(3),
                                 (0.5, 0.5, 0.5), 100, 30, 77)
        b = sim.simulate_rewards(base_spec, sim.UniformRandomPolicy(3),
                                 (0.5, 0.5, 0.5), 100, 30, 77)
        assert np.array_equal(a, b)

    def test_baseline_names(self, base_spec):
        names = set(sim.baseline_policies(base_spec))
        assert names == {"all_on", "best_single", "uniform_random", "none"}

    def test_reachable_policy_evaluates(self, base_spec):
        sol = solver.solve_reachable(base_spec, (0.9, 0.9, 0.9), 8, 1e-6)
        s = sim.evaluate_policy(base_spec, sol.policy, (0.9, 0.9, 0.9), 2000,
                                120, 13)
        assert abs(s.mean - sol.value) <= max(4 * s.stderr, 0.02 * abs(sol.value))


class TestStreamLayout:
    def test_unused_policy_draw_does_not_shift_transitions(self, base_spec):
        # all_on never consumes the policy draw; its channel transitions must
        # match those of a policy that does consume it, draw for draw
        s1 = sim.run_episode(base_spec, sim.AllOnPolicy(3), (1.0, 1.0, 1.0), 5,
                             EpisodeStream(21, 0), record_log=True)
        s2 = sim.run_episode(base_spec, sim.UniformRandomPolicy(3), (1.0, 1.0, 1.0), 5,
                             EpisodeStream(21, 0), record_log=True)
        assert s1.steps[0][0] == s2.steps[0][0]
        # same initial states regardless of policy
        assert s1.steps[0][2] == s2.steps[0][2]
