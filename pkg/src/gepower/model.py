"""Problem-instance types, belief dynamics, and immediate rewards.

A system transmits over N statistically identical two-state Markov
(Gilbert-Elliott) channels.  Each slot it picks a subset of channels
(an action), splits the power budget equally among them, earns R_k bits
per good used channel and loses C_k bits per bad one, where k is the
number of used channels.  Channel states are hidden at decision time;
the per-channel posterior probability of being good (the belief) is the
sufficient statistic, so the control problem is a continuous-state MDP
on [0,1]^N.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ChannelParams",
    "RewardSchedule",
    "ProblemSpec",
    "Action",
    "OutcomeDistribution",
    "enumerate_actions",
    "propagate_belief",
    "propagate_belief_n",
    "stationary_belief",
    "immediate_reward",
    "successor_outcomes",
    "validate_spec",
    "as_belief",
    "spec_to_json",
    "spec_from_json",
]


@dataclass(frozen=True)
class ChannelParams:
    """Transition probabilities of one channel.

    lambda0 = P(good next slot | bad now), lambda1 = P(good | good).
    Positive correlation (lambda0 <= lambda1) is assumed by the theory;
    it is reported by validate_spec rather than enforced on construction.
    """

    lambda0: float
    lambda1: float

    @property
    def sigma(self) -> float:
        return self.lambda1 - self.lambda0


@dataclass(frozen=True)
class RewardSchedule:
    """Per-cardinality rewards R[k] and penalties C[k], index 0 = one used channel.

    The economics the analysis relies on: using more channels lowers the
    per-channel stakes but raises the total, i.e. for k1 < k2
    R[k2] < R[k1] < (k2/k1) R[k2] and likewise for C, with R[k] > C[k] > 0.
    """

    rewards: tuple[float, ...]
    penalties: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "rewards", tuple(float(x) for x in self.rewards))
        object.__setattr__(self, "penalties", tuple(float(x) for x in self.penalties))
        if len(self.rewards) != len(self.penalties):
            raise ValueError("rewards and penalties must have equal length")
        if not self.rewards:
            raise ValueError("schedule needs at least one cardinality")

    @property
    def n_channels(self) -> int:
        return len(self.rewards)


@dataclass(frozen=True)
class ProblemSpec:
    """Full problem instance: channel statistics, reward schedule, discount.

    total_power is carried for bookkeeping only; the equal power split means
    only the number of used channels enters the numbers.
    """

    channels: ChannelParams
    schedule: RewardSchedule
    beta: float
    total_power: float = 1.0

    @property
    def n(self) -> int:
        return self.schedule.n_channels


@dataclass(frozen=True, order=True)
class Action:
    """Channel-selection mask (a_1, ..., a_N), 1 = channel used."""

    mask: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "mask", tuple(int(b) for b in self.mask))
        if any(b not in (0, 1) for b in self.mask):
            raise ValueError("mask bits must be 0 or 1")

    @property
    def cardinality(self) -> int:
        return sum(self.mask)

    @property
    def mask_int(self) -> int:
        """Integer encoding; channel 1 is the most significant bit."""
        v = 0
        for b in self.mask:
            v = (v << 1) | b
        return v

    @classmethod
    def from_mask_int(cls, value: int, n: int) -> "Action":
        if not 0 <= value < (1 << n):
            raise ValueError(f"mask int {value} out of range for {n} channels")
        return cls(tuple((value >> (n - 1 - j)) & 1 for j in range(n)))

    def used_channels(self) -> tuple[int, ...]:
        return tuple(j for j, b in enumerate(self.mask) if b)


def enumerate_actions(n: int) -> list[Action]:
    """All 2^n actions in ascending mask order."""
    if n < 1:
        raise ValueError("need at least one channel")
    return [Action.from_mask_int(i, n) for i in range(1 << n)]


@dataclass(frozen=True)
class OutcomeDistribution:
    """Successor-belief lottery after one action: 2^k (probability, belief) pairs.

    Zero-probability entries are kept so the shape depends only on the
    action's cardinality.
    """

    probs: np.ndarray
    beliefs: np.ndarray

    def items(self):
        return zip(self.probs, self.beliefs)

    def __len__(self) -> int:
        return len(self.probs)


def as_belief(p, n: int) -> np.ndarray:
    """Validate and convert a belief vector to a float64 array."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.shape != (n,):
        raise ValueError(f"belief must have shape ({n},), got {arr.shape}")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("belief coordinates must lie in [0, 1]")
    return arr


def propagate_belief(params: ChannelParams, p):
    """One-slot belief update for an unobserved channel: sigma*p + lambda0.

    Accepts a scalar or an ndarray; the result is clamped to the
    [min(lambda0, lambda1), max(lambda0, lambda1)] envelope so rounding can
    never push it outside.
    """
    arr = np.asarray(p, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("belief must lie in [0, 1]")
    lo = min(params.lambda0, params.lambda1)
    hi = max(params.lambda0, params.lambda1)
    out = np.clip(params.sigma * arr + params.lambda0, lo, hi)
    return float(out) if np.isscalar(p) or arr.ndim == 0 else out


def propagate_belief_n(params: ChannelParams, p: float, n: int) -> float:
    """n-slot belief update in closed form.

    For sigma < 1: (lambda0/(1-sigma))(1-sigma^n) + sigma^n * p.
    sigma == 1 makes the update the identity, so p is returned for all n.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("belief must lie in [0, 1]")
    if n < 0:
        raise ValueError("step count must be nonnegative")
    if n == 0:
        return float(p)
    sigma = params.sigma
    if sigma == 1.0:
        return float(p)
    sn = sigma**n
    out = (params.lambda0 / (1.0 - sigma)) * (1.0 - sn) + sn * p
    return float(min(max(out, 0.0), 1.0))


def stationary_belief(params: ChannelParams) -> float:
    """Fixed point of the unobserved update: lambda0 / (1 - sigma)."""
    if params.sigma == 1.0:
        raise ValueError("no unique stationary belief when lambda0=0, lambda1=1")
    out = params.lambda0 / (1.0 - params.sigma)
    return float(min(max(out, 0.0), 1.0))


def immediate_reward(spec: ProblemSpec, action: Action, belief) -> float:
    """Expected bits this slot: sum over used j of p_j (R_k + C_k), minus k C_k."""
    k = action.cardinality
    if k == 0:
        return 0.0
    p = as_belief(belief, spec.n)
    r = spec.schedule.rewards[k - 1]
    c = spec.schedule.penalties[k - 1]
    total = 0.0
    for j in action.used_channels():
        total += p[j] * (r + c)
    return total - k * c


def successor_outcomes(
    params: ChannelParams, action: Action, belief
) -> OutcomeDistribution:
    """Enumerate the 2^k revealed good/bad patterns of the used channels.

    Pattern i is read bitwise: bit b (LSB) is the state of the b-th used
    channel in ascending channel order, 1 = good.  Used channels jump to
    lambda1/lambda0 in the successor belief; unused ones follow the
    unobserved update.
    """
    n = len(action.mask)
    p = as_belief(belief, n)
    used = action.used_channels()
    k = len(used)
    base = np.empty(n, dtype=np.float64)
    for j in range(n):
        base[j] = propagate_belief(params, p[j])
    count = 1 << k
    probs = np.empty(count, dtype=np.float64)
    beliefs = np.empty((count, n), dtype=np.float64)
    for i in range(count):
        w = 1.0
        succ = base.copy()
        for b, j in enumerate(used):
            if (i >> b) & 1:
                w *= p[j]
                succ[j] = params.lambda1
            else:
                w *= 1.0 - p[j]
                succ[j] = params.lambda0
        probs[i] = w
        beliefs[i] = succ
    return OutcomeDistribution(probs=probs, beliefs=beliefs)


def validate_spec(spec: ProblemSpec) -> list[str]:
    """Check every model assumption; returns the violated ones (empty if valid)."""
    v: list[str] = []
    lam0, lam1 = spec.channels.lambda0, spec.channels.lambda1
    if not 0.0 <= lam0 <= 1.0:
        v.append(f"0 <= lambda0 <= 1 violated (lambda0={lam0})")
    if not 0.0 <= lam1 <= 1.0:
        v.append(f"0 <= lambda1 <= 1 violated (lambda1={lam1})")
    if lam0 > lam1:
        v.append(f"lambda0 <= lambda1 violated (lambda0={lam0}, lambda1={lam1})")
    if not 0.0 <= spec.beta < 1.0:
        v.append(f"0 <= beta < 1 violated (beta={spec.beta})")
    if spec.n < 1:
        v.append(f"n_channels >= 1 violated (n={spec.n})")
    if spec.total_power <= 0.0:
        v.append(f"total_power > 0 violated (total_power={spec.total_power})")
    R = spec.schedule.rewards
    C = spec.schedule.penalties
    for k in range(1, spec.n + 1):
        if not C[k - 1] > 0.0:
            v.append(f"C[{k}] > 0 violated (C[{k}]={C[k - 1]})")
        if not R[k - 1] > C[k - 1]:
            v.append(f"R[{k}] > C[{k}] violated (R[{k}]={R[k - 1]}, C[{k}]={C[k - 1]})")
    for k1 in range(1, spec.n + 1):
        for k2 in range(k1 + 1, spec.n + 1):
            ratio = k2 / k1
            if not R[k2 - 1] < R[k1 - 1]:
                v.append(f"R[{k2}] < R[{k1}] violated (R[{k1}]={R[k1 - 1]}, R[{k2}]={R[k2 - 1]})")
            if not R[k1 - 1] < ratio * R[k2 - 1]:
                v.append(f"R[{k1}] < ({k2}/{k1})*R[{k2}] violated (R[{k1}]={R[k1 - 1]}, R[{k2}]={R[k2 - 1]})")
            if not C[k2 - 1] < C[k1 - 1]:
                v.append(f"C[{k2}] < C[{k1}] violated (C[{k1}]={C[k1 - 1]}, C[{k2}]={C[k2 - 1]})")
            if not C[k1 - 1] < ratio * C[k2 - 1]:
                v.append(f"C[{k1}] < ({k2}/{k1})*C[{k2}] violated (C[{k1}]={C[k1 - 1]}, C[{k2}]={C[k2 - 1]})")
    return v


def spec_to_json(spec: ProblemSpec) -> dict:
    """JSON object with the contract keys n, lambda0, lambda1, beta, R, C, total_power."""
    return {
        "n": spec.n,
        "lambda0": spec.channels.lambda0,
        "lambda1": spec.channels.lambda1,
        "beta": spec.beta,
        "R": list(spec.schedule.rewards),
        "C": list(spec.schedule.penalties),
        "total_power": spec.total_power,
    }


def spec_from_json(obj) -> ProblemSpec:
    """Inverse of spec_to_json; accepts a dict or a JSON string."""
    if isinstance(obj, str):
        obj = json.loads(obj)
    try:
        n = int(obj["n"])
        lam0 = float(obj["lambda0"])
        lam1 = float(obj["lambda1"])
        beta = float(obj["beta"])
        R = [float(x) for x in obj["R"]]
        C = [float(x) for x in obj["C"]]
    except KeyError as e:
        raise ValueError(f"problem spec is missing required key {e}") from None
    total_power = float(obj.get("total_power", 1.0))
    if len(R) != n or len(C) != n:
        raise ValueError(f"R and C must each have n={n} entries")
    return ProblemSpec(
        channels=ChannelParams(lam0, lam1),
        schedule=RewardSchedule(tuple(R), tuple(C)),
        beta=beta,
        total_power=total_power,
    )
