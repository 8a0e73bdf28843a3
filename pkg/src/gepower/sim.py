"""Ground-truth Monte Carlo: simulate true channel states, run any policy
with feedback-driven belief tracking, and estimate discounted reward.

Episodes are driven by counter-based random streams keyed on
(seed, episode index), so results are reproducible bit for bit, independent
of execution order and identical across kernel backends.  The scalar
``run_episode`` is the reference implementation the batched kernels are
tested against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels, model
from .kernels import rng
from .model import Action, ProblemSpec

__all__ = [
    "EpisodeStream",
    "EpisodeResult",
    "PolicyEvalSummary",
    "MyopicPolicy",
    "AllOnPolicy",
    "BestSinglePolicy",
    "NonePolicy",
    "UniformRandomPolicy",
    "myopic_policy",
    "baseline_policies",
    "step_channels",
    "run_episode",
    "simulate_rewards",
    "evaluate_policy",
    "reward_envelope",
]

Z99 = 2.5758293035489004  # two-sided 99% normal quantile


def reward_envelope(spec: ProblemSpec) -> tuple[float, float]:
    """Analytic bounds on any discounted episode reward."""
    n = spec.n
    hi = n * spec.schedule.rewards[0] / (1.0 - spec.beta)
    lo = -n * spec.schedule.penalties[0] / (1.0 - spec.beta)
    return lo, hi


def step_channels(params: model.ChannelParams, state, rng_gen) -> np.ndarray:
    """Advance every channel one slot: good stays good w.p. lambda1,
    bad recovers w.p. lambda0."""
    st = np.asarray(state, dtype=bool)
    u = rng_gen.random(st.size)
    return np.where(st, u < params.lambda1, u < params.lambda0)


@dataclass(frozen=True)
class EpisodeStream:
    """Deterministic uniform stream for one (seed, episode) pair."""

    seed: int
    episode: int

    @cached_property
    def key(self) -> int:
        return rng.episode_key(self.seed, self.episode)

    def uniform(self, counter: int) -> float:
        return rng.draw_u01(self.key, counter)


@dataclass(frozen=True)
class EpisodeResult:
    discounted_reward: float
    steps: tuple = ()  # optional (belief, mask_int, revealed, reward) records


@dataclass(frozen=True)
class PolicyEvalSummary:
    episodes: int
    mean: float
    stderr: float
    ci99: float

    def to_json(self, policy_name: str, p0, horizon: int, seed: int) -> dict:
        return {"policy_name": policy_name, "p0": [float(x) for x in p0],
                "episodes": self.episodes, "horizon": horizon, "seed": seed,
                "mean": self.mean, "stderr": self.stderr, "ci99": self.ci99}


# --- policies ---------------------------------------------------------------


@dataclass(frozen=True)
class MyopicPolicy:
    """Maximize the expected bits of the current slot only."""

    spec: ProblemSpec
    kind = "myopic"

    def action_at(self, belief) -> Action:
        p = model.as_belief(belief, self.spec.n)
        actions = model.enumerate_actions(self.spec.n)
        best = -math.inf
        pick = 0
        for a in _priority(self.spec.n):
            g = model.immediate_reward(self.spec, actions[a], p)
            if g > best:
                best = g
                pick = a
        return actions[pick]


@dataclass(frozen=True)
class AllOnPolicy:
    n: int
    kind = "all_on"

    def action_at(self, belief) -> Action:
        return Action((1,) * self.n)


@dataclass(frozen=True)
class BestSinglePolicy:
    """Transmit on the single channel with the highest belief (ties: lowest index)."""

    n: int
    kind = "best_single"

    def action_at(self, belief) -> Action:
        p = model.as_belief(belief, self.n)
        j = int(np.argmax(p))
        return Action(tuple(1 if i == j else 0 for i in range(self.n)))


@dataclass(frozen=True)
class NonePolicy:
    n: int
    kind = "none"

    def action_at(self, belief) -> Action:
        return Action((0,) * self.n)


@dataclass(frozen=True)
class UniformRandomPolicy:
    """Uniform over all 2^n actions, consuming the per-step policy draw."""

    n: int
    kind = "uniform"

    def action_at(self, belief, u: float = 0.0) -> Action:
        a = min(int(u * (1 << self.n)), (1 << self.n) - 1)
        return Action.from_mask_int(a, self.n)


def myopic_policy(spec: ProblemSpec) -> MyopicPolicy:
    return MyopicPolicy(spec)


def baseline_policies(spec: ProblemSpec) -> dict:
    return {
        "all_on": AllOnPolicy(spec.n),
        "best_single": BestSinglePolicy(spec.n),
        "uniform_random": UniformRandomPolicy(spec.n),
        "none": NonePolicy(spec.n),
    }


_KIND_CODES = {
    "grid": kernels.POLICY_GRID,
    "myopic": kernels.POLICY_MYOPIC,
    "all_on": kernels.POLICY_ALL_ON,
    "best_single": kernels.POLICY_BEST_SINGLE,
    "none": kernels.POLICY_NONE,
    "uniform": kernels.POLICY_UNIFORM,
}


def _priority(n: int) -> list[int]:
    acts = model.enumerate_actions(n)
    return sorted(range(len(acts)), key=lambda i: (acts[i].cardinality, i))


def _action_tables(spec: ProblemSpec):
    actions = model.enumerate_actions(spec.n)
    A = len(actions)
    masks = np.array([a.mask for a in actions], dtype=np.uint8)
    kcard = np.array([a.cardinality for a in actions], dtype=np.int64)
    gain = np.zeros(A)
    offset = np.zeros(A)
    rew_good = np.zeros(A)
    pen_bad = np.zeros(A)
    for i, a in enumerate(actions):
        k = a.cardinality
        if k:
            gain[i] = spec.schedule.rewards[k - 1] + spec.schedule.penalties[k - 1]
            offset[i] = k * spec.schedule.penalties[k - 1]
            rew_good[i] = spec.schedule.rewards[k - 1]
            pen_bad[i] = spec.schedule.penalties[k - 1]
    priority = np.array(_priority(spec.n), dtype=np.int64)
    return masks, kcard, gain, offset, rew_good, pen_bad, priority


def _policy_dispatch(spec: ProblemSpec, policy):
    kind = getattr(policy, "kind", None)
    if kind not in _KIND_CODES:
        raise ValueError(f"unsupported policy object {policy!r}")
    if kind == "grid":
        ax = np.asarray(policy.lookup_axis, dtype=np.float64)
        table = np.asarray(policy.lookup_table, dtype=np.int64)
    else:
        ax = np.array([0.0, 1.0])
        table = np.zeros(2**spec.n, dtype=np.int64)
    return _KIND_CODES[kind], ax, table


# --- scalar reference episode ------------------------------------------------


def run_episode(spec: ProblemSpec, policy, p0, horizon: int,
                stream: EpisodeStream, record_log: bool = False) -> EpisodeResult:
    """One episode, op-for-op identical to the batched kernels.

    Slot timeline: act on the current belief, collect the realized reward,
    learn the used channels' states from feedback, propagate the unused
    ones, then let the true states transition into the next slot.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    n = spec.n
    p0 = model.as_belief(p0, n)
    masks, kcard, gain, offset, rew_good, pen_bad, priority = _action_tables(spec)
    code, ax, table = _policy_dispatch(spec, policy)
    lam0, lam1 = spec.channels.lambda0, spec.channels.lambda1
    sigma = spec.channels.sigma
    lam_lo, lam_hi = min(lam0, lam1), max(lam0, lam1)
    A = masks.shape[0]
    G = ax.size

    b = [float(x) for x in p0]
    st = []
    for j in range(n):
        u = stream.uniform(rng.init_draw_index(j))
        st.append(u < b[j])
    acc = 0.0
    disc = 1.0
    log = []
    for t in range(horizon):
        if code == kernels.POLICY_NONE:
            aidx = 0
        elif code == kernels.POLICY_ALL_ON:
            aidx = A - 1
        elif code == kernels.POLICY_BEST_SINGLE:
            jm, bm = 0, b[0]
            for j in range(1, n):
                if b[j] > bm:
                    bm, jm = b[j], j
            aidx = 1 << (n - 1 - jm)
        elif code == kernels.POLICY_UNIFORM:
            u = stream.uniform(rng.policy_draw_index(n, t))
            aidx = min(int(u * A), A - 1)
        elif code == kernels.POLICY_MYOPIC:
            best = -math.inf
            aidx = 0
            for a in priority:
                if kcard[a] == 0:
                    q = 0.0
                else:
                    s = 0.0
                    for j in range(n):
                        if masks[a, j]:
                            s = s + b[j]
                    q = gain[a] * s - offset[a]
                if q > best:
                    best = q
                    aidx = int(a)
        else:  # grid lookup, nearest axis point per coordinate, ties low
            flat = 0
            for j in range(n):
                x = b[j]
                pos = int(np.searchsorted(ax, x))
                pos = min(pos, G - 1)
                low = max(pos - 1, 0)
                idx = low if (x - ax[low]) <= (ax[pos] - x) else pos
                flat = flat * G + idx
            aidx = int(table[flat])

        r = 0.0
        for j in range(n):
            if masks[aidx, j]:
                r = r + (rew_good[aidx] if st[j] else -pen_bad[aidx])
            else:
                r = r + 0.0
        acc = acc + disc * r
        if record_log:
            log.append((tuple(b), aidx, tuple(bool(s) for s in st), r))
        for j in range(n):
            prop = sigma * b[j] + lam0
            prop = min(max(prop, lam_lo), lam_hi)
            b[j] = (lam1 if st[j] else lam0) if masks[aidx, j] else prop
        for j in range(n):
            u = stream.uniform(rng.step_draw_index(n, t, j))
            st[j] = (u < lam1) if st[j] else (u < lam0)
        disc = disc * spec.beta
    return EpisodeResult(discounted_reward=acc, steps=tuple(log))


# --- batched evaluation -------------------------------------------------------


def simulate_rewards(spec: ProblemSpec, policy, p0, episodes: int, horizon: int,
                     seed: int, backend: str | None = None) -> np.ndarray:
    """Discounted reward of every episode, via the active kernel backend."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    n = spec.n
    p0 = model.as_belief(p0, n)
    masks, kcard, gain, offset, rew_good, pen_bad, priority = _action_tables(spec)
    code, ax, table = _policy_dispatch(spec, policy)
    return kernels.simulate_batch(
        episodes, horizon, n, spec.channels.lambda0, spec.channels.lambda1,
        spec.channels.sigma, spec.beta, masks, kcard, gain, offset,
        rew_good, pen_bad, priority, code, ax, table, p0, seed,
        backend=backend)


def evaluate_policy(spec: ProblemSpec, policy, p0, episodes: int, horizon: int,
                    seed: int, backend: str | None = None) -> PolicyEvalSummary:
    """Mean discounted reward with standard error and 99% half-width.

    Intended for episode counts of 100 and up; at least 2 are required for
    the standard error.
    """
    if episodes < 2:
        raise ValueError("need at least 2 episodes for a standard error")
    rewards = simulate_rewards(spec, policy, p0, episodes, horizon, seed,
                               backend=backend)
    mean = float(np.mean(rewards))
    stderr = float(np.std(rewards, ddof=1) / math.sqrt(episodes))
    return PolicyEvalSummary(episodes=episodes, mean=mean, stderr=stderr,
                             ci99=Z99 * stderr)
