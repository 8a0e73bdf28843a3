"""Belief-grid discretization and Bellman-equation solvers.

Two solution routes are provided.  ``value_iterate`` runs fixed-point
iteration on a uniform-plus-augmented grid with multilinear interpolation;
``solve_reachable`` solves the finite sub-MDP spanned by the truncated
orbits of the post-observation beliefs, where every successor lands exactly
on a known state, and therefore needs no interpolation at all.  The second
route is the oracle the first is tested against.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels, model
from .model import Action, ProblemSpec

__all__ = [
    "BeliefGrid",
    "ValueFunction",
    "Policy",
    "TablePolicy",
    "ReachableSet",
    "ReachableSolution",
    "ConvergenceError",
    "build_grid",
    "sweep_tables",
    "interpolate",
    "q_value",
    "bellman_backup",
    "value_iterate",
    "extract_policy",
    "action_priority",
    "build_reachable_set",
    "solve_reachable",
    "solution_csv",
    "solution_meta",
    "write_solution",
    "load_solution",
]


class ConvergenceError(RuntimeError):
    """Raised when fixed-point iteration hits its iteration cap."""


@dataclass(frozen=True, eq=False)
class BeliefGrid:
    """Product grid over [0,1]^n with one shared axis per dimension.

    The axis always contains 0, 1, lambda0 and lambda1 exactly, so
    post-observation beliefs sit on grid planes and permutation symmetry
    can be checked by transposing the value tensor.
    """

    axis: np.ndarray
    n: int

    def __post_init__(self):
        ax = np.asarray(self.axis, dtype=np.float64)
        if ax.ndim != 1 or ax.size < 2:
            raise ValueError("axis must be a 1-D array with at least 2 points")
        if np.any(np.diff(ax) <= 0):
            raise ValueError("axis coordinates must be strictly increasing")
        object.__setattr__(self, "axis", ax)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.axis.size,) * self.n

    @property
    def size(self) -> int:
        return self.axis.size**self.n

    @property
    def axes(self) -> tuple[np.ndarray, ...]:
        return (self.axis,) * self.n

    def points(self) -> np.ndarray:
        """All grid points, C order, shape (size, n)."""
        mesh = np.meshgrid(*([self.axis] * self.n), indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.n)

    def nearest_index(self, belief) -> tuple[int, ...]:
        """Per-axis nearest grid index, ties to the lower coordinate."""
        p = model.as_belief(belief, self.n)
        ax = self.axis
        out = []
        for x in p:
            pos = int(np.searchsorted(ax, x))
            pos = min(pos, ax.size - 1)
            low = max(pos - 1, 0)
            out.append(low if (x - ax[low]) <= (ax[pos] - x) else pos)
        return tuple(out)

    def flat_index(self, idx: tuple[int, ...]) -> int:
        return int(np.ravel_multi_index(idx, self.shape))


def grids_equal(a: BeliefGrid, b: BeliefGrid) -> bool:
    return a.n == b.n and a.axis.size == b.axis.size and bool(np.all(a.axis == b.axis))


def build_grid(spec: ProblemSpec, resolution: int) -> BeliefGrid:
    """Uniform grid of `resolution` points per axis, augmented so that
    lambda0 and lambda1 are exact members."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    base = np.arange(resolution, dtype=np.float64) / (resolution - 1)
    specials = []
    for v in (spec.channels.lambda0, spec.channels.lambda1):
        if not 0.0 <= v <= 1.0:
            raise ValueError("channel parameters must lie in [0, 1]")
        if v not in specials:
            specials.append(v)
    keep = []
    for u in base:
        # drop uniform points that nearly collide with an inserted special
        # coordinate (the special one wins; endpoints always stay)
        if u in (0.0, 1.0) or all(abs(u - v) > 1e-9 or u == v for v in specials):
            keep.append(float(u))
    coords = sorted(set(keep) | set(specials))
    return BeliefGrid(axis=np.array(coords), n=spec.n)


@dataclass(eq=False)
class ValueFunction:
    """Values on a belief grid, extended off-grid by multilinear interpolation."""

    grid: BeliefGrid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} != grid shape {self.grid.shape}")
        self.values = vals


def action_priority(n: int) -> list[int]:
    """Action indices in tie-break order: fewest used channels, then smallest mask."""
    acts = model.enumerate_actions(n)
    return sorted(range(len(acts)), key=lambda i: (acts[i].cardinality, i))


def sweep_tables(spec: ProblemSpec, grid: BeliefGrid) -> kernels.SweepTables:
    if grid.n != spec.n:
        raise ValueError("grid dimension does not match the problem")
    ax = grid.axis
    G = ax.size
    params = spec.channels
    lam_lo = min(params.lambda0, params.lambda1)
    lam_hi = max(params.lambda0, params.lambda1)
    i0 = np.flatnonzero(ax == params.lambda0)
    i1 = np.flatnonzero(ax == params.lambda1)
    if i0.size == 0 or i1.size == 0:
        raise ValueError("grid axis must contain lambda0 and lambda1 exactly")
    prop = np.clip(params.sigma * ax + params.lambda0, lam_lo, lam_hi)
    lo = np.clip(np.searchsorted(ax, prop, side="right") - 1, 0, G - 2).astype(np.int64)
    frac = (prop - ax[lo]) / (ax[lo + 1] - ax[lo])
    actions = model.enumerate_actions(spec.n)
    A = len(actions)
    masks = np.array([a.mask for a in actions], dtype=np.uint8)
    kcard = np.array([a.cardinality for a in actions], dtype=np.int64)
    gain = np.zeros(A)
    offset = np.zeros(A)
    for i, a in enumerate(actions):
        k = a.cardinality
        if k:
            gain[i] = spec.schedule.rewards[k - 1] + spec.schedule.penalties[k - 1]
            offset[i] = k * spec.schedule.penalties[k - 1]
    shape = grid.shape
    digits = np.stack(np.unravel_index(np.arange(grid.size), shape), axis=1).astype(np.int64)
    strides = np.array([G ** (spec.n - 1 - j) for j in range(spec.n)], dtype=np.int64)
    return kernels.SweepTables(ax=ax, lo=lo, frac=frac, i0=int(i0[0]), i1=int(i1[0]),
                               masks=masks, kcard=kcard, gain=gain, offset=offset,
                               digits=digits, strides=strides, shape=shape)


def interpolate(v: ValueFunction, p) -> float | np.ndarray:
    """Multilinear interpolation; exact at grid points.

    Accepts one point (n,) or a batch (m, n); weights are nonnegative and
    sum to one by construction.
    """
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    n = v.grid.n
    if pts.shape[1] != n:
        raise ValueError(f"points must have {n} coordinates")
    if np.any(pts < -1e-12) or np.any(pts > 1.0 + 1e-12):
        raise ValueError("interpolation points must lie in [0, 1]")
    pts = np.clip(pts, 0.0, 1.0)
    ax = v.grid.axis
    G = ax.size
    pos = np.clip(np.searchsorted(ax, pts, side="right") - 1, 0, G - 2)
    t = (pts - ax[pos]) / (ax[pos + 1] - ax[pos])
    flat = v.values.ravel()
    out = np.zeros(pts.shape[0])
    for corner in range(1 << n):
        w = np.ones(pts.shape[0])
        idx = np.zeros(pts.shape[0], dtype=np.int64)
        for j in range(n):
            bit = (corner >> j) & 1
            w = w * (t[:, j] if bit else (1.0 - t[:, j]))
            idx = idx * G + (pos[:, j] + bit)
        out += w * flat[idx]
    return float(out[0]) if single else out


def q_value(spec: ProblemSpec, v: ValueFunction, p, a: Action) -> float:
    """One-step lookahead value of action `a` at belief `p` (scalar reference path)."""
    g = model.immediate_reward(spec, a, p)
    if spec.beta == 0.0:
        return g
    dist = model.successor_outcomes(spec.channels, a, p)
    vals = interpolate(v, dist.beliefs)
    return g + spec.beta * float(np.dot(dist.probs, vals))


def bellman_backup(spec: ProblemSpec, v: ValueFunction,
                   tables: kernels.SweepTables | None = None,
                   backend: str | None = None) -> tuple[ValueFunction, float]:
    """One max-over-actions sweep; the input field is left untouched."""
    tables = tables or sweep_tables(spec, v.grid)
    q = kernels.action_values(v.values, tables, spec.beta, backend=backend)
    new = q.max(axis=0)
    residual = float(np.max(np.abs(new - v.values)))
    return ValueFunction(v.grid, new), residual


def value_iterate(spec: ProblemSpec, grid: BeliefGrid, epsilon: float,
                  max_iter: int = 100_000, backend: str | None = None) -> ValueFunction:
    """Iterate from V=0 until the sup-norm optimality gap is below epsilon.

    Stopping rule: residual <= epsilon (1-beta) / (2 beta), the standard
    contraction bound (one sweep suffices when beta = 0).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    beta = spec.beta
    tables = sweep_tables(spec, grid)
    threshold = epsilon * (1.0 - beta) / (2.0 * beta) if beta > 0 else np.inf
    values = np.zeros(grid.shape)
    residual = np.inf
    for it in range(1, max_iter + 1):
        q = kernels.action_values(values, tables, beta, backend=backend)
        new = q.max(axis=0)
        residual = float(np.max(np.abs(new - values)))
        values = new
        if residual <= threshold:
            return ValueFunction(grid, values, meta={
                "iterations": it,
                "residual": residual,
                "epsilon": epsilon,
                "backend": kernels.backend_name() if backend is None else backend,
            })
    raise ConvergenceError(
        f"no convergence within {max_iter} sweeps (last residual {residual:g})")


@dataclass(eq=False)
class Policy:
    """Tie-broken action choice per grid point plus the full argmax sets.

    `choice` holds action indices (== mask integers); `ties` is the boolean
    argmax-set membership per action, computed with an absolute tolerance.
    """

    grid: BeliefGrid
    choice: np.ndarray          # int64, grid shape
    ties: np.ndarray            # bool, (A,) + grid shape
    tie_epsilon: float

    kind = "grid"

    @property
    def n_actions(self) -> int:
        return self.ties.shape[0]

    @property
    def tie_count(self) -> np.ndarray:
        return self.ties.sum(axis=0)

    @property
    def lookup_axis(self) -> np.ndarray:
        return self.grid.axis

    @property
    def lookup_table(self) -> np.ndarray:
        return self.choice.ravel()

    @property
    def n(self) -> int:
        return self.grid.n

    def action_at(self, belief) -> Action:
        idx = self.grid.nearest_index(belief)
        return Action.from_mask_int(int(self.choice[idx]), self.grid.n)

    def argmax_actions(self, idx: tuple[int, ...]) -> tuple[Action, ...]:
        a_ids = np.flatnonzero(self.ties[(slice(None),) + tuple(idx)])
        return tuple(Action.from_mask_int(int(i), self.grid.n) for i in a_ids)


@dataclass(frozen=True, eq=False)
class TablePolicy:
    """Minimal nearest-lookup policy over an arbitrary shared axis."""

    axis: np.ndarray
    table: np.ndarray  # flat int64, len(axis)**n entries of action indices
    n: int

    kind = "grid"

    @property
    def lookup_axis(self) -> np.ndarray:
        return self.axis

    @property
    def lookup_table(self) -> np.ndarray:
        return self.table

    def action_at(self, belief) -> Action:
        p = model.as_belief(belief, self.n)
        flat = 0
        for x in p:
            pos = int(np.searchsorted(self.axis, x))
            pos = min(pos, self.axis.size - 1)
            low = max(pos - 1, 0)
            idx = low if (x - self.axis[low]) <= (self.axis[pos] - x) else pos
            flat = flat * self.axis.size + idx
        return Action.from_mask_int(int(self.table[flat]), self.n)


def extract_policy(spec: ProblemSpec, v: ValueFunction, tie_epsilon: float = 1e-9,
                   tables: kernels.SweepTables | None = None,
                   backend: str | None = None) -> Policy:
    """Greedy policy of a converged field with deterministic tie-breaking."""
    if tie_epsilon < 0:
        raise ValueError("tie_epsilon must be nonnegative")
    tables = tables or sweep_tables(spec, v.grid)
    q = kernels.action_values(v.values, tables, spec.beta, backend=backend)
    maxq = q.max(axis=0)
    ties = q >= (maxq - tie_epsilon)
    choice = np.full(v.grid.shape, -1, dtype=np.int64)
    for a in action_priority(spec.n):
        choice = np.where((choice < 0) & ties[a], a, choice)
    return Policy(grid=v.grid, choice=choice, ties=ties, tie_epsilon=tie_epsilon)


@dataclass(eq=False)
class ReachableSet:
    """Per-channel belief alphabet closed under the slot dynamics.

    Orbits of lambda0, lambda1 and the start coordinates are followed for
    n_trunc slots; one step past the horizon they snap to the stationary
    belief, which bounds the coordinate error by sigma**n_trunc.
    """

    alphabet: np.ndarray      # sorted unique belief values
    image: np.ndarray         # int64 index of the unobserved one-step image
    i_lam0: int
    i_lam1: int
    i_star: int
    n_trunc: int


def build_reachable_set(spec: ProblemSpec, p0, n_trunc: int) -> ReachableSet:
    params = spec.channels
    if params.sigma == 1.0:
        raise ValueError("orbit truncation is invalid when lambda0=0, lambda1=1")
    if n_trunc < 1:
        raise ValueError("n_trunc must be at least 1")
    p0 = model.as_belief(p0, spec.n)
    lam_lo = min(params.lambda0, params.lambda1)
    lam_hi = max(params.lambda0, params.lambda1)
    star = model.stationary_belief(params)

    def step(x: float) -> float:
        return min(max(params.sigma * x + params.lambda0, lam_lo), lam_hi)

    values = {star}
    for head in [params.lambda0, params.lambda1, *p0.tolist()]:
        cur = float(head)
        for _ in range(n_trunc + 1):
            values.add(cur)
            cur = step(cur)
    alphabet = np.array(sorted(values))
    index = {val: i for i, val in enumerate(alphabet)}
    image = np.empty(alphabet.size, dtype=np.int64)
    for i, val in enumerate(alphabet):
        image[i] = index.get(step(float(val)), index[star])
    image[index[star]] = index[star]
    return ReachableSet(alphabet=alphabet, image=image,
                        i_lam0=index[params.lambda0], i_lam1=index[params.lambda1],
                        i_star=index[star], n_trunc=n_trunc)


@dataclass(eq=False)
class ReachableSolution:
    value: float
    values: np.ndarray        # flat over alphabet**n product states
    choice: np.ndarray        # flat int64 action indices
    reachable: ReachableSet
    n: int
    meta: dict

    @property
    def policy(self) -> TablePolicy:
        return TablePolicy(axis=self.reachable.alphabet, table=self.choice, n=self.n)


def solve_reachable(spec: ProblemSpec, p0, n_trunc: int, epsilon: float,
                    max_iter: int = 100_000, state_cap: int = 10**7,
                    tie_epsilon: float = 1e-9) -> ReachableSolution:
    """Exact value iteration on the truncated reachable product space.

    Every successor is an alphabet member by construction (modulo the
    stationary snap), so no interpolation enters; this is the oracle for the
    grid solver.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rs = build_reachable_set(spec, p0, n_trunc)
    n = spec.n
    Asize = rs.alphabet.size
    S = Asize**n
    if S > state_cap:
        raise ValueError(
            f"{S} product states exceed the cap {state_cap}; lower n_trunc")
    shape = (Asize,) * n
    digits = np.stack(np.unravel_index(np.arange(S), shape), axis=1)
    strides = np.array([Asize ** (n - 1 - j) for j in range(n)], dtype=np.int64)
    P = rs.alphabet[digits]                    # (S, n) belief coordinates
    TD = rs.image[digits]                      # (S, n) unobserved image indices
    actions = model.enumerate_actions(n)
    R = spec.schedule.rewards
    C = spec.schedule.penalties
    beta = spec.beta

    unobserved_base = []
    g_fields = []
    for a in actions:
        used = a.used_channels()
        k = a.cardinality
        base = np.zeros(S, dtype=np.int64)
        for j in range(n):
            if j not in used:
                base += TD[:, j] * strides[j]
        unobserved_base.append(base)
        if k == 0:
            g_fields.append(np.zeros(S))
        else:
            g_fields.append((R[k - 1] + C[k - 1]) * P[:, list(used)].sum(axis=1)
                            - k * C[k - 1])

    def all_q(V: np.ndarray) -> np.ndarray:
        q = np.empty((len(actions), S))
        for ai, a in enumerate(actions):
            used = a.used_channels()
            cont = np.zeros(S)
            for pattern in range(1 << a.cardinality):
                w = np.ones(S)
                succ = unobserved_base[ai].copy()
                for b, j in enumerate(used):
                    if (pattern >> b) & 1:
                        w = w * P[:, j]
                        succ += strides[j] * rs.i_lam1
                    else:
                        w = w * (1.0 - P[:, j])
                        succ += strides[j] * rs.i_lam0
                cont += w * V[succ]
            q[ai] = g_fields[ai] + beta * cont
        return q

    threshold = epsilon * (1.0 - beta) / (2.0 * beta) if beta > 0 else np.inf
    V = np.zeros(S)
    residual = np.inf
    for it in range(1, max_iter + 1):
        q = all_q(V)
        new = q.max(axis=0)
        residual = float(np.max(np.abs(new - V)))
        V = new
        if residual <= threshold:
            break
    else:
        raise ConvergenceError(
            f"no convergence within {max_iter} sweeps (last residual {residual:g})")

    q = all_q(V)
    maxq = q.max(axis=0)
    ties = q >= (maxq - tie_epsilon)
    choice = np.full(S, -1, dtype=np.int64)
    for a in action_priority(n):
        choice = np.where((choice < 0) & ties[a], a, choice)

    flat0 = 0
    for j, x in enumerate(model.as_belief(p0, n)):
        hits = np.flatnonzero(rs.alphabet == x)
        if hits.size == 0:
            raise ValueError("start belief coordinate missing from the alphabet")
        flat0 = flat0 * Asize + int(hits[0])
    return ReachableSolution(value=float(V[flat0]), values=V, choice=choice,
                             reachable=rs, n=n,
                             meta={"iterations": it, "residual": residual,
                                   "states": S, "alphabet": Asize})


# ---------------------------------------------------------------------------
# artifact serialization


def solution_csv(v: ValueFunction, policy: Policy) -> str:
    """One row per grid point: p1..pN, value, action_mask, tie_count."""
    n = v.grid.n
    header = ",".join([f"p{j + 1}" for j in range(n)] + ["value", "action_mask", "tie_count"])
    pts = v.grid.points()
    vals = v.values.ravel()
    choice = policy.choice.ravel()
    tcount = policy.tie_count.ravel()
    lines = [header]
    for i in range(pts.shape[0]):
        coords = ",".join(repr(float(x)) for x in pts[i])
        lines.append(f"{coords},{float(vals[i])!r},{int(choice[i])},{int(tcount[i])}")
    return "\n".join(lines) + "\n"


def solution_meta(v: ValueFunction, policy: Policy, extra: dict | None = None) -> dict:
    meta = {
        "n": v.grid.n,
        "axis": [float(x) for x in v.grid.axis],
        "tie_epsilon": policy.tie_epsilon,
        "solver": dict(v.meta),
    }
    if extra:
        meta.update(extra)
    return meta


def write_solution(outdir: str, v: ValueFunction, policy: Policy,
                   extra_meta: dict | None = None) -> tuple[str, str]:
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, "solution.csv")
    meta_path = os.path.join(outdir, "solution_meta.json")
    with open(csv_path, "w") as fh:
        fh.write(solution_csv(v, policy))
    with open(meta_path, "w") as fh:
        json.dump(solution_meta(v, policy, extra_meta), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, meta_path


def load_solution(outdir: str) -> tuple[ValueFunction, np.ndarray, dict]:
    """Read back (value function, stored action choices, metadata)."""
    meta_path = os.path.join(outdir, "solution_meta.json")
    csv_path = os.path.join(outdir, "solution.csv")
    with open(meta_path) as fh:
        meta = json.load(fh)
    grid = BeliefGrid(axis=np.array(meta["axis"], dtype=np.float64), n=int(meta["n"]))
    raw = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    if raw.shape[0] != grid.size:
        raise ValueError(f"{csv_path} has {raw.shape[0]} rows, expected {grid.size}")
    values = raw[:, grid.n].reshape(grid.shape)
    choice = raw[:, grid.n + 1].astype(np.int64).reshape(grid.shape)
    return ValueFunction(grid, values, meta=dict(meta.get("solver", {}))), choice, meta
