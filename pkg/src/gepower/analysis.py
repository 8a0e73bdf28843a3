"""Structural analysis of solved policies.

Turns a converged value field and its greedy policy into the structural
facts the theory predicts for this problem family: each action's decision
region is contiguous along every axis, simply connected, anchored at its own
corner of the belief cube, symmetric under channel permutations, and
separated from its neighbors on cube edges by a single threshold belief.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels, model, solver
from .model import Action, ProblemSpec
from .solver import BeliefGrid, Policy, ValueFunction

__all__ = [
    "ActionRegion",
    "RegionReport",
    "ContiguityResult",
    "SymmetryResult",
    "ConnectivityResult",
    "ConvexityResult",
    "MonotonicityResult",
    "ThresholdResult",
    "PlaneReport",
    "SweepRow",
    "StructuralViolationError",
    "decision_regions",
    "check_contiguity",
    "check_contiguity_all",
    "check_symmetry",
    "check_connectivity",
    "check_convexity",
    "check_monotonicity",
    "edge_threshold",
    "canonical_edges",
    "threshold_self_consistency",
    "boundary_plane_policy",
    "representative_masks",
    "vertex_index",
    "sweep",
    "instantiate_spec",
    "sweep_csv",
    "SWEEP_PARAMETERS",
]


class StructuralViolationError(RuntimeError):
    """A solved policy contradicts a structural assumption it relies on."""


def vertex_index(grid: BeliefGrid, mask: tuple[int, ...]) -> tuple[int, ...]:
    """Grid index of the cube corner whose coordinates equal the mask bits."""
    last = grid.axis.size - 1
    return tuple(last if b else 0 for b in mask)


@dataclass(frozen=True)
class ActionRegion:
    mask_int: int
    count: int
    volume: float
    components: int
    contiguous_by_axis: tuple[bool, ...]
    contains_vertex: bool


@dataclass(eq=False)
class RegionReport:
    regions: dict[int, ActionRegion]
    total_points: int

    def volume(self, mask_int: int) -> float:
        return self.regions[mask_int].volume


def _runs_per_line(arr: np.ndarray, axis: int) -> np.ndarray:
    """Number of contiguous runs of True along `axis`, one entry per line."""
    a = np.moveaxis(arr, axis, -1)
    flat = a.reshape(-1, a.shape[-1])
    rises = ((~flat[:, :-1]) & flat[:, 1:]).sum(axis=1)
    return rises + flat[:, 0].astype(np.int64)


def decision_regions(policy: Policy) -> RegionReport:
    """Partition the grid by tie-broken choice and report per-action shape facts."""
    choice = policy.choice
    A = policy.n_actions
    n = policy.grid.n
    total = policy.grid.size
    counts = np.bincount(choice.ravel(), minlength=A)
    regions = {}
    for a in range(A):
        mask_arr = choice == a
        if counts[a]:
            _, n_comp = ndimage.label(mask_arr)
        else:
            n_comp = 0
        contig = tuple(bool(np.all(_runs_per_line(mask_arr, ax) <= 1))
                       for ax in range(n))
        act = Action.from_mask_int(a, n)
        vidx = vertex_index(policy.grid, act.mask)
        regions[a] = ActionRegion(
            mask_int=a,
            count=int(counts[a]),
            volume=float(counts[a] / total),
            components=int(n_comp),
            contiguous_by_axis=contig,
            contains_vertex=bool(policy.ties[(a,) + vidx]),
        )
    return RegionReport(regions=regions, total_points=total)


@dataclass(eq=False)
class ContiguityResult:
    ok: bool
    axis: int | None
    violations: list[tuple[int, tuple[int, ...]]]  # (mask_int, line index)

    def to_json(self) -> dict:
        return {"pass": self.ok, "axis": self.axis,
                "violations": [[m, list(ix)] for m, ix in self.violations[:20]],
                "violation_count": len(self.violations)}


def check_contiguity(policy: Policy, axis: int) -> ContiguityResult:
    """Along every grid line parallel to `axis`, each action's argmax-set
    membership must form a single contiguous run."""
    n = policy.grid.n
    if not 0 <= axis < n:
        raise ValueError(f"axis must be in [0, {n})")
    violations = []
    for a in range(policy.n_actions):
        runs = _runs_per_line(policy.ties[a], axis)
        bad = np.flatnonzero(runs > 1)
        if bad.size:
            line_shape = tuple(s for i, s in enumerate(policy.grid.shape) if i != axis)
            for b in bad:
                violations.append((a, tuple(int(x) for x in np.unravel_index(b, line_shape))))
    return ContiguityResult(ok=not violations, axis=axis, violations=violations)


def check_contiguity_all(policy: Policy) -> ContiguityResult:
    violations = []
    for ax in range(policy.grid.n):
        violations.extend(check_contiguity(policy, ax).violations)
    return ContiguityResult(ok=not violations, axis=None, violations=violations)


@dataclass(frozen=True)
class SymmetryResult:
    ok: bool
    max_value_dev: float
    max_q_dev: float
    n_permutations: int
    worst_permutation: tuple[int, ...]
    tolerance: float

    def to_json(self) -> dict:
        return {"pass": self.ok, "max_value_dev": self.max_value_dev,
                "max_q_dev": self.max_q_dev,
                "worst_permutation": list(self.worst_permutation),
                "permutations": self.n_permutations, "tolerance": self.tolerance}


def check_symmetry(spec: ProblemSpec, v: ValueFunction,
                   tolerance: float = 1e-9, backend: str | None = None) -> SymmetryResult:
    """Swapping channels must leave values unchanged and permute lookahead
    values along with the action mask; checked over all n! permutations."""
    n = v.grid.n
    if v.values.shape != v.grid.shape:
        raise ValueError("value field is not a symmetric hypercube")
    tables = solver.sweep_tables(spec, v.grid)
    q = kernels.action_values(v.values, tables, spec.beta, backend=backend)
    actions = model.enumerate_actions(n)
    worst_v = 0.0
    worst_q = 0.0
    worst_perm = tuple(range(n))
    count = 0
    for perm in itertools.permutations(range(n)):
        count += 1
        dev_v = float(np.max(np.abs(v.values - v.values.transpose(perm))))
        dev_q = 0.0
        for ai, act in enumerate(actions):
            pmask = tuple(act.mask[perm[k]] for k in range(n))
            bi = Action(pmask).mask_int
            dev_q = max(dev_q, float(np.max(np.abs(q[bi] - q[ai].transpose(perm)))))
        if max(dev_v, dev_q) > max(worst_v, worst_q):
            worst_perm = perm
        worst_v = max(worst_v, dev_v)
        worst_q = max(worst_q, dev_q)
    return SymmetryResult(ok=worst_v <= tolerance and worst_q <= tolerance,
                          max_value_dev=worst_v, max_q_dev=worst_q,
                          n_permutations=count, worst_permutation=worst_perm,
                          tolerance=tolerance)


@dataclass(frozen=True)
class ConnectivityResult:
    mask_int: int
    components: int
    empty: bool

    def to_json(self) -> dict:
        return {"mask": self.mask_int, "components": self.components,
                "empty": self.empty}


def check_connectivity(policy: Policy, action: Action | int) -> ConnectivityResult:
    """Connected components (face adjacency) of the action's tie-broken cells."""
    a = action.mask_int if isinstance(action, Action) else int(action)
    mask_arr = policy.choice == a
    if not mask_arr.any():
        return ConnectivityResult(mask_int=a, components=0, empty=True)
    _, n_comp = ndimage.label(mask_arr)
    return ConnectivityResult(mask_int=a, components=int(n_comp), empty=False)


@dataclass(frozen=True)
class ConvexityResult:
    ok: bool
    worst_excess: float       # most positive bulge of V above the local chord
    worst_index: tuple[int, ...]
    worst_axis: int
    tolerance: float

    def to_json(self) -> dict:
        return {"pass": self.ok, "worst_excess": self.worst_excess,
                "worst_axis": self.worst_axis,
                "worst_index": list(self.worst_index), "tolerance": self.tolerance}


def check_convexity(v: ValueFunction, rel_tol: float = 1e-6) -> ConvexityResult:
    """Along every axis-parallel grid line, interior values must not rise
    above the chord of their neighbors by more than rel_tol * (1 + |V|)."""
    n = v.grid.n
    x = v.grid.axis
    worst_margin = -np.inf
    worst_excess = -np.inf
    worst_idx: tuple[int, ...] = (0,) * n
    worst_axis = 0
    ok = True
    for ax in range(n):
        w = np.moveaxis(v.values, ax, -1)
        v0, v1, v2 = w[..., :-2], w[..., 1:-1], w[..., 2:]
        x0, x1, x2 = x[:-2], x[1:-1], x[2:]
        chord = ((x2 - x1) * v0 + (x1 - x0) * v2) / (x2 - x0)
        excess = v1 - chord
        allowed = rel_tol * (1.0 + np.abs(v1))
        margin = excess - allowed
        if np.any(margin > 0):
            ok = False
        i = np.unravel_index(np.argmax(margin), margin.shape)
        if margin[i] > worst_margin:
            worst_margin = float(margin[i])
            worst_excess = float(excess[i])
            # moveaxis put `ax` last; undo it for the reported index
            full = i[:-1][:ax] + (i[-1] + 1,) + i[:-1][ax:]
            worst_idx = tuple(int(z) for z in full)
            worst_axis = ax
    return ConvexityResult(ok=ok, worst_excess=worst_excess, worst_index=worst_idx,
                           worst_axis=worst_axis, tolerance=rel_tol)


@dataclass(frozen=True)
class MonotonicityResult:
    ok: bool
    worst_drop: float
    tolerance: float

    def to_json(self) -> dict:
        return {"pass": self.ok, "worst_drop": self.worst_drop,
                "tolerance": self.tolerance}


def check_monotonicity(v: ValueFunction, tol: float = 1e-9) -> MonotonicityResult:
    """Converged values must be nondecreasing along every axis."""
    ok = True
    worst = -np.inf
    for ax in range(v.grid.n):
        w = np.moveaxis(v.values, ax, -1)
        drop = w[..., :-1] - w[..., 1:]
        allowed = tol * (1.0 + np.abs(w[..., :-1]))
        if np.any(drop > allowed):
            ok = False
        worst = max(worst, float(drop.max()))
    return MonotonicityResult(ok=ok, worst_drop=worst, tolerance=tol)


@dataclass(frozen=True)
class ThresholdResult:
    edge: tuple[tuple[int, float], ...]   # pinned (axis, value) pairs
    free_axis: int
    threshold: float
    action_lo: int
    action_hi: int
    bisection_residual: float             # |q_hi - q_lo| at the threshold

    def to_json(self) -> dict:
        return {"edge": {str(a): val for a, val in self.edge},
                "free_axis": self.free_axis, "threshold": self.threshold,
                "action_lo": self.action_lo, "action_hi": self.action_hi,
                "bisection_residual": self.bisection_residual}


def edge_threshold(spec: ProblemSpec, v: ValueFunction, edge: dict[int, float],
                   action_lo: Action, action_hi: Action, tol: float = 1e-10,
                   sweep_points: int = 257) -> ThresholdResult:
    """Bisection for the belief where the optimal action switches on a cube edge.

    The edge pins all but one coordinate to 0 or 1.  A verification sweep
    guards the single-crossing assumption; with no sign change the dominant
    action owns the whole edge and the threshold degenerates to 0 or 1.
    """
    n = spec.n
    if len(edge) != n - 1:
        raise ValueError("an edge must pin exactly n-1 coordinates")
    for a, valp in edge.items():
        if not 0 <= a < n or valp not in (0.0, 1.0):
            raise ValueError("edge coordinates must pin axes to 0 or 1")
    free = [j for j in range(n) if j not in edge][0]

    def point(x: float) -> np.ndarray:
        p = np.empty(n)
        for a, valp in edge.items():
            p[a] = valp
        p[free] = x
        return p

    def h(x: float) -> float:
        p = point(x)
        return solver.q_value(spec, v, p, action_hi) - solver.q_value(spec, v, p, action_lo)

    xs = np.linspace(0.0, 1.0, sweep_points)
    hs = np.array([h(x) for x in xs])
    signs = np.sign(hs)
    nz = signs[signs != 0]
    changes = int(np.sum(nz[1:] != nz[:-1])) if nz.size else 0
    if changes > 1:
        raise StructuralViolationError(
            f"{changes} sign changes of the action gap on edge {edge}")
    if changes == 0:
        th = 1.0 if (nz.size == 0 or nz[0] < 0) else 0.0
        return ThresholdResult(edge=tuple(sorted(edge.items())), free_axis=free,
                               threshold=th, action_lo=action_lo.mask_int,
                               action_hi=action_hi.mask_int,
                               bisection_residual=float(abs(h(th))))
    k = int(np.flatnonzero(np.sign(hs[1:]) != np.sign(hs[:-1]))[0])
    a, b = float(xs[k]), float(xs[k + 1])
    ha = hs[k]
    for _ in range(200):
        if b - a <= tol:
            break
        midp = 0.5 * (a + b)
        hm = h(midp)
        if hm == 0.0:
            a = b = midp
            break
        if (hm < 0) == (ha < 0):
            a, ha = midp, hm
        else:
            b = midp
    th = 0.5 * (a + b)
    return ThresholdResult(edge=tuple(sorted(edge.items())), free_axis=free,
                           threshold=float(th), action_lo=action_lo.mask_int,
                           action_hi=action_hi.mask_int,
                           bisection_residual=float(abs(h(th))))


def canonical_edges(n: int = 3) -> list[tuple[dict[int, float], Action, Action, int]]:
    """The three representative cube edges (others follow by symmetry):
    on each, exactly two actions can be optimal and one threshold separates
    them."""
    if n != 3:
        raise ValueError("canonical edges are defined for the 3-channel cube")
    return [
        ({0: 0.0, 2: 0.0}, Action((0, 0, 0)), Action((0, 1, 0)), 1),
        ({0: 1.0, 2: 0.0}, Action((1, 0, 0)), Action((1, 1, 0)), 2),
        ({0: 1.0, 1: 1.0}, Action((1, 1, 0)), Action((1, 1, 1)), 3),
    ]


def threshold_self_consistency(spec: ProblemSpec, v: ValueFunction,
                               kind: int, th: float) -> float:
    """Residual of the fixed-point form of each canonical threshold.

    Setting the two actions' lookahead values equal on the edge and solving
    for the free belief expresses the threshold through the solved field
    itself; plugging the bisection threshold back in must reproduce it.
    """
    if spec.n != 3:
        raise ValueError("canonical thresholds are defined for 3 channels")
    lam0, lam1 = spec.channels.lambda0, spec.channels.lambda1
    R, C = spec.schedule.rewards, spec.schedule.penalties
    beta = spec.beta
    tp = model.propagate_belief(spec.channels, th)

    def V(*coords: float) -> float:
        return solver.interpolate(v, np.array(coords))

    if kind == 1:
        num = C[0] + beta * (V(lam0, tp, lam0) - V(lam0, lam0, lam0))
        den = R[0] + C[0] + beta * (V(lam0, lam1, lam0) - V(lam0, lam0, lam0))
    elif kind == 2:
        num = R[0] - R[1] + C[1] + beta * (V(lam1, tp, lam0) - V(lam1, lam0, lam0))
        den = R[1] + C[1] + beta * (V(lam1, lam1, lam0) - V(lam1, lam0, lam0))
    elif kind == 3:
        num = 2 * R[1] - 2 * R[2] + C[2] + beta * (V(lam1, lam1, tp) - V(lam1, lam1, lam0))
        den = R[2] + C[2] + beta * (V(lam1, lam1, lam1) - V(lam1, lam1, lam0))
    else:
        raise ValueError("kind must be 1, 2, or 3")
    return abs(num / den - th)


@dataclass(eq=False)
class PlaneReport:
    axis: int
    side: int
    present_masks: tuple[int, ...]
    allowed_masks: tuple[int, ...]
    ok: bool
    violations: list[tuple[tuple[int, ...], int]]
    choice: np.ndarray        # tie-broken actions on the 2-D slice

    def to_json(self) -> dict:
        return {"axis": self.axis, "side": self.side, "pass": self.ok,
                "present": list(self.present_masks),
                "allowed": list(self.allowed_masks),
                "violation_count": len(self.violations)}


def boundary_plane_policy(spec: ProblemSpec, v: ValueFunction, axis: int,
                          side: int, tie_epsilon: float = 1e-9,
                          backend: str | None = None) -> PlaneReport:
    """Tie-broken policy on one face of the belief cube.

    On the face p_axis = 0, no optimal action uses that channel (adding a
    surely-bad channel strictly lowers the value); on p_axis = 1 every
    optimal action does.  Violations indicate a solver bug or an invalid
    reward schedule.
    """
    if side not in (0, 1):
        raise ValueError("side must be 0 or 1")
    n = spec.n
    tables = solver.sweep_tables(spec, v.grid)
    q = kernels.action_values(v.values, tables, spec.beta, backend=backend)
    sl = [slice(None)] * (n + 1)
    sl[axis + 1] = -1 if side else 0
    q_slice = q[tuple(sl)]
    maxq = q_slice.max(axis=0)
    ties = q_slice >= (maxq - tie_epsilon)
    choice = np.full(maxq.shape, -1, dtype=np.int64)
    for a in solver.action_priority(n):
        choice = np.where((choice < 0) & ties[a], a, choice)
    actions = model.enumerate_actions(n)
    allowed = tuple(a.mask_int for a in actions if a.mask[axis] == side)
    present = tuple(int(x) for x in np.unique(choice))
    violations = []
    bad = ~np.isin(choice, allowed)
    if bad.any():
        for flat in np.flatnonzero(bad.ravel())[:1000]:
            idx = np.unravel_index(flat, choice.shape)
            violations.append((tuple(int(z) for z in idx), int(choice[idx])))
    return PlaneReport(axis=axis, side=side, present_masks=present,
                       allowed_masks=allowed, ok=not violations,
                       violations=violations, choice=choice)


# ---------------------------------------------------------------------------
# parameter sweeps

SWEEP_PARAMETERS = ("lambda0", "lambda1", "reward_penalty_ratio", "reward_ratio_k2k1")


def representative_masks(n: int) -> tuple[int, int, int, int]:
    """B0..B3: no channel, one channel, two channels, all channels."""
    b1 = 1 << (n - 1)
    b2 = b1 | (1 << (n - 2)) if n >= 2 else b1
    return 0, b1, b2, (1 << n) - 1


def instantiate_spec(template: ProblemSpec, parameter: str, value: float) -> ProblemSpec:
    """Derive a concrete instance by moving one (possibly composite) knob.

    reward_penalty_ratio rescales every C[k] = R[k] / value.
    reward_ratio_k2k1 sets the common ratio r of total rewards between
    consecutive cardinalities, i.e. R[k] = r**(k-1) * R[1] / k, keeping
    R[k]/C[k] at the template's R[1]/C[1].
    """
    if parameter == "lambda0":
        return ProblemSpec(model.ChannelParams(float(value), template.channels.lambda1),
                           template.schedule, template.beta, template.total_power)
    if parameter == "lambda1":
        return ProblemSpec(model.ChannelParams(template.channels.lambda0, float(value)),
                           template.schedule, template.beta, template.total_power)
    if parameter == "reward_penalty_ratio":
        R = template.schedule.rewards
        C = tuple(r / float(value) for r in R)
        return ProblemSpec(template.channels, model.RewardSchedule(R, C),
                           template.beta, template.total_power)
    if parameter == "reward_ratio_k2k1":
        r1 = template.schedule.rewards[0]
        rho = r1 / template.schedule.penalties[0]
        R = tuple(float(value) ** k * r1 / (k + 1) for k in range(template.n))
        C = tuple(x / rho for x in R)
        return ProblemSpec(template.channels, model.RewardSchedule(R, C),
                           template.beta, template.total_power)
    raise ValueError(f"unknown sweep parameter {parameter!r}; "
                     f"choose from {SWEEP_PARAMETERS}")


@dataclass(frozen=True)
class SweepRow:
    param_value: float
    status: str                     # "ok" or "skipped"
    reason: str
    volumes: tuple[float, float, float, float]
    components: tuple[int, int, int, int]
    contiguity_pass: bool
    symmetry_pass: bool
    vertex_pass: bool


def sweep(spec_template: ProblemSpec, parameter: str, values,
          resolution: int = 15, epsilon: float = 1e-6, tie_epsilon: float = 1e-9,
          backend: str | None = None) -> list[SweepRow]:
    """Solve once per parameter value and tabulate region volumes and checks."""
    rows = []
    for value in values:
        inst = instantiate_spec(spec_template, parameter, float(value))
        violations = model.validate_spec(inst)
        if violations:
            rows.append(SweepRow(param_value=float(value), status="skipped",
                                 reason="; ".join(violations),
                                 volumes=(np.nan,) * 4, components=(0,) * 4,
                                 contiguity_pass=False, symmetry_pass=False,
                                 vertex_pass=False))
            continue
        grid = solver.build_grid(inst, resolution)
        v = solver.value_iterate(inst, grid, epsilon, backend=backend)
        pol = solver.extract_policy(inst, v, tie_epsilon, backend=backend)
        report = decision_regions(pol)
        reps = representative_masks(inst.n)
        contig = check_contiguity_all(pol).ok
        sym = check_symmetry(inst, v, backend=backend).ok
        vertex_ok = all(
            bool(pol.ties[(a,) + vertex_index(grid, Action.from_mask_int(a, inst.n).mask)])
            for a in range(pol.n_actions))
        rows.append(SweepRow(
            param_value=float(value), status="ok", reason="",
            volumes=tuple(report.volume(b) for b in reps),
            components=tuple(report.regions[b].components for b in reps),
            contiguity_pass=contig, symmetry_pass=sym, vertex_pass=vertex_ok))
    return rows


def sweep_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["param_value", "vol_B0", "vol_B1", "vol_B2", "vol_B3",
                     "components_B0", "components_B1", "components_B2",
                     "components_B3", "contiguity_pass", "symmetry_pass",
                     "vertex_pass", "status", "reason"])
    for row in rows:
        if row.status == "ok":
            writer.writerow([repr(row.param_value)]
                            + [repr(x) for x in row.volumes]
                            + [str(c) for c in row.components]
                            + [str(row.contiguity_pass).lower(),
                               str(row.symmetry_pass).lower(),
                               str(row.vertex_pass).lower(), row.status, ""])
        else:
            writer.writerow([repr(row.param_value)] + [""] * 8
                            + ["", "", "", row.status, row.reason])
    return buf.getvalue()
