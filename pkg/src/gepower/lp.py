"""Linear-programming route to the same fixed point as value iteration.

The discounted Bellman equation on the grid is equivalent to minimizing the
sum of point values subject to one superharmonicity constraint per
(point, action): V(p) >= g_a(p) + beta * sum_y w_a(p, y) V(y), where the
w_a(p, y) smear each exact successor onto grid vertices with its multilinear
interpolation weights.  Because both routes use identical weights, the LP
optimum and the value-iteration fixed point agree by construction, making
this an independent cross-check of the solver.

The internal solver runs the simplex method on the standard-form dual (the
occupancy LP), which has an obvious starting basis (any fixed policy) and is
never degenerate here, with a dense maintained basis inverse.  Dantzig
pricing is the default; Bland's rule is available and engaged automatically
if progress ever stalls, guaranteeing termination.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import solver
from .model import ProblemSpec
from .solver import BeliefGrid, ValueFunction

__all__ = [
    "LPProblem",
    "LPSolution",
    "LPError",
    "CrossCheckReport",
    "build_lp",
    "solve_lp",
    "export_lp",
    "cross_check",
]


class LPError(RuntimeError):
    """Infeasibility/unboundedness or pivot-limit failure: for this problem
    class any of these signals a construction bug, not a property of the
    instance."""


@dataclass(eq=False)
class LPProblem:
    """min sum V  s.t.  V[point] - beta * (w . V) >= g, one row per (point, action).

    Rows are ordered point-major, action-minor, so row id = point * A + action.
    ``indptr``/``indices``/``data`` hold the raw successor weights w (each row
    a convex combination); the unit coefficient on V[point] is implicit.
    """

    grid: BeliefGrid
    beta: float
    n_vars: int
    n_actions: int
    g: np.ndarray            # (n_cons,)
    indptr: np.ndarray       # (n_cons + 1,)
    indices: np.ndarray      # successor variable ids
    data: np.ndarray         # successor weights, nonnegative, sum 1 per row
    point_index: np.ndarray  # (n_cons,)
    action_index: np.ndarray  # (n_cons,)

    @property
    def n_cons(self) -> int:
        return self.g.size


def build_lp(spec: ProblemSpec, grid: BeliefGrid,
             max_constraints: int = 2_000_000) -> LPProblem:
    t = solver.sweep_tables(spec, grid)
    S = grid.size
    n = grid.n
    G = t.ax.size
    A = t.masks.shape[0]
    n_cons = S * A
    if n_cons > max_constraints:
        raise ValueError(
            f"{n_cons} constraints exceed the cap {max_constraints}; "
            "use a coarser grid")
    corners = 1 << n
    idx_all = np.empty((A, S, corners), dtype=np.int64)
    w_all = np.empty((A, S, corners))
    g_all = np.empty((A, S))
    for a in range(A):
        for c in range(corners):
            w = np.ones(S)
            idx = np.zeros(S, dtype=np.int64)
            for j in range(n):
                d = t.digits[:, j]
                bit = (c >> j) & 1
                if t.masks[a, j]:
                    if bit:
                        w = w * t.ax[d]
                        col = np.full(S, t.i1, dtype=np.int64)
                    else:
                        w = w * (1.0 - t.ax[d])
                        col = np.full(S, t.i0, dtype=np.int64)
                else:
                    if bit:
                        w = w * t.frac[d]
                        col = t.lo[d] + 1
                    else:
                        w = w * (1.0 - t.frac[d])
                        col = t.lo[d]
                idx = idx * G + col
            idx_all[a, :, c] = idx
            w_all[a, :, c] = w
        if t.kcard[a] == 0:
            g_all[a] = 0.0
        else:
            s = np.zeros(S)
            for j in range(n):
                if t.masks[a, j]:
                    s = s + t.ax[t.digits[:, j]]
            g_all[a] = t.gain[a] * s - t.offset[a]

    # (point, action, corner) order gives point-major rows
    idx_pa = idx_all.transpose(1, 0, 2)
    w_pa = w_all.transpose(1, 0, 2)
    if spec.channels.lambda0 == spec.channels.lambda1:
        # observation slices coincide, so corner indices can collide: merge
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for p in range(S):
            for a in range(A):
                row: dict[int, float] = {}
                for ix, wv in zip(idx_pa[p, a].tolist(), w_pa[p, a].tolist()):
                    if wv != 0.0:
                        row[ix] = row.get(ix, 0.0) + wv
                for ix in sorted(row):
                    indices.append(ix)
                    data.append(row[ix])
                indptr.append(len(indices))
        indptr_arr = np.array(indptr, dtype=np.int64)
        indices_arr = np.array(indices, dtype=np.int64)
        data_arr = np.array(data)
    else:
        keep = w_pa != 0.0
        counts = keep.sum(axis=2).reshape(-1)
        indptr_arr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        indices_arr = idx_pa[keep].astype(np.int64)
        data_arr = w_pa[keep]

    return LPProblem(
        grid=grid, beta=spec.beta, n_vars=S, n_actions=A,
        g=g_all.T.reshape(-1).copy(),
        indptr=indptr_arr, indices=indices_arr, data=data_arr,
        point_index=np.repeat(np.arange(S, dtype=np.int64), A),
        action_index=np.tile(np.arange(A, dtype=np.int64), S),
    )


@dataclass(eq=False)
class LPSolution:
    values: np.ndarray        # optimal V per grid point
    objective: float
    pivots: int
    basis_actions: np.ndarray  # binding action per point (-1 if not in basis)
    max_violation: float
    duality_gap: float


def _column_times(Binv_or_vec, lp: LPProblem, col: int, beta: float):
    """B^-1 (or a row vector) applied to dual column `col` = e_p - beta w."""
    s, e = lp.indptr[col], lp.indptr[col + 1]
    idx = lp.indices[s:e]
    w = lp.data[s:e]
    p = lp.point_index[col]
    if Binv_or_vec.ndim == 2:
        return Binv_or_vec[:, p] - beta * (Binv_or_vec[:, idx] @ w)
    return Binv_or_vec[p] - beta * float(Binv_or_vec[idx] @ w)


def _basis_inverse(lp: LPProblem, basis: np.ndarray) -> np.ndarray:
    m = lp.n_vars
    B = np.zeros((m, m))
    for slot, col in enumerate(basis):
        s, e = lp.indptr[col], lp.indptr[col + 1]
        B[lp.point_index[col], slot] += 1.0
        np.add.at(B[:, slot], lp.indices[s:e], -lp.beta * lp.data[s:e])
    return np.linalg.inv(B)


def solve_lp(lp: LPProblem, tol: float = 1e-9, max_pivots: int = 200_000,
             pricing: str = "dantzig", refactor_every: int = 200) -> LPSolution:
    """Solve to optimality; returns the grid values (dual multipliers).

    The starting basis is the myopic policy.  Every basic occupancy stays
    strictly positive for this constraint structure, so each pivot strictly
    increases the dual objective; the Bland fallback is a safety net.
    """
    if pricing not in ("dantzig", "bland"):
        raise ValueError("pricing must be dantzig or bland")
    m = lp.n_vars
    A = lp.n_actions
    beta = lp.beta
    pivot_tol = max(tol, 1e-12)

    g_mat = lp.g.reshape(m, A)
    n = int(round(np.log2(A)))
    priority = solver.action_priority(n)
    myopic = np.zeros(m, dtype=np.int64)
    best = np.full(m, -np.inf)
    for a in priority:
        qa = g_mat[:, a]
        better = qa > best
        myopic = np.where(better, a, myopic)
        best = np.where(better, qa, best)
    basis = (np.arange(m, dtype=np.int64) * A + myopic)

    Binv = _basis_inverse(lp, basis)
    use_bland = pricing == "bland"
    stall = 0
    pivots = 0
    while True:
        cB = lp.g[basis]
        y = cB @ Binv
        smear = np.add.reduceat(lp.data * y[lp.indices], lp.indptr[:-1])
        d = lp.g - (y[lp.point_index] - beta * smear)
        if use_bland:
            cand = np.flatnonzero(d > pivot_tol)
            if cand.size == 0:
                break
            enter = int(cand[0])
        else:
            enter = int(np.argmax(d))
            if d[enter] <= pivot_tol:
                break
        if pivots >= max_pivots:
            raise LPError(f"pivot limit {max_pivots} reached")
        u = _column_times(Binv, lp, enter, beta)
        xB = Binv.sum(axis=1)
        pos = u > 1e-11
        if not np.any(pos):
            raise LPError("dual unbounded (primal infeasible): construction bug")
        ratios = np.full(m, np.inf)
        ratios[pos] = xB[pos] / u[pos]
        theta = ratios.min()
        if use_bland:
            ties = np.flatnonzero(ratios <= theta * (1 + 1e-12))
            leave = int(ties[np.argmin(basis[ties])])
        else:
            leave = int(np.argmin(ratios))
        if theta <= 1e-13:
            stall += 1
            if stall > 30 and not use_bland:
                use_bland = True
        else:
            stall = 0
        basis[leave] = enter
        pivots += 1
        if pivots % refactor_every == 0:
            Binv = _basis_inverse(lp, basis)
        else:
            piv = u[leave]
            row = Binv[leave] / piv
            Binv = Binv - np.outer(u, row)
            Binv[leave] = row

    cB = lp.g[basis]
    y = cB @ Binv
    smear = np.add.reduceat(lp.data * y[lp.indices], lp.indptr[:-1])
    viol = lp.g - (y[lp.point_index] - beta * smear)
    max_violation = float(viol.max())
    xB = Binv.sum(axis=1)
    obj_dual = float(cB @ xB)
    obj_primal = float(y.sum())
    gap = abs(obj_primal - obj_dual)
    scale = 1.0 + abs(obj_primal)
    if max_violation > max(1e-7, 10 * tol) * scale or gap > max(1e-6, 10 * tol) * scale:
        raise LPError(
            f"simplex finished with violation {max_violation:g}, gap {gap:g}")
    basis_actions = np.full(m, -1, dtype=np.int64)
    for col in basis:
        basis_actions[lp.point_index[col]] = lp.action_index[col]
    return LPSolution(values=y.copy(), objective=obj_primal, pivots=pivots,
                      basis_actions=basis_actions, max_violation=max_violation,
                      duality_gap=gap)


def _fmt(x: float) -> str:
    return repr(float(x))


def export_lp(lp: LPProblem, path: str) -> str:
    """Write the primal problem in CPLEX LP text format (free variables)."""
    lines = [
        f"\\ discounted belief-MDP LP: {lp.n_vars} grid points, "
        f"{lp.n_actions} actions, beta={_fmt(lp.beta)}",
        "Minimize",
    ]
    obj_terms = [f"v_{i}" for i in range(lp.n_vars)]
    line = " obj:"
    for i, term in enumerate(obj_terms):
        piece = f" {term}" if i == 0 else f" + {term}"
        if len(line) + len(piece) > 70:
            lines.append(line)
            line = "   "
        line += piece
    lines.append(line)
    lines.append("Subject To")
    for row in range(lp.n_cons):
        p = int(lp.point_index[row])
        a = int(lp.action_index[row])
        s, e = lp.indptr[row], lp.indptr[row + 1]
        coef: dict[int, float] = {}
        for ix, w in zip(lp.indices[s:e].tolist(), lp.data[s:e].tolist()):
            coef[ix] = coef.get(ix, 0.0) - lp.beta * w
        coef[p] = coef.get(p, 0.0) + 1.0
        terms = []
        for ix in sorted(coef):
            cv = coef[ix]
            if cv == 0.0:
                continue
            if not terms:
                terms.append(f"{_fmt(cv)} v_{ix}")
            elif cv < 0:
                terms.append(f"- {_fmt(-cv)} v_{ix}")
            else:
                terms.append(f"+ {_fmt(cv)} v_{ix}")
        body = f" c_{p}_{a}:"
        for term in terms:
            if len(body) + len(term) > 70:
                lines.append(body)
                body = "   "
            body += " " + term
        lines.append(f"{body} >= {_fmt(lp.g[row])}")
    lines.append("Bounds")
    for i in range(lp.n_vars):
        lines.append(f" v_{i} free")
    lines.append("End")
    text = "\n".join(lines) + "\n"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)
    return path


@dataclass(frozen=True)
class CrossCheckReport:
    max_abs_diff: float
    mean_abs_diff: float
    passed: bool
    worst_index: int
    worst_point: tuple[float, ...]

    def to_json(self) -> dict:
        return {
            "max_abs_diff": self.max_abs_diff,
            "mean_abs_diff": self.mean_abs_diff,
            "pass": self.passed,
            "worst_index": self.worst_index,
            "worst_point": list(self.worst_point),
        }


def cross_check(v_vi: ValueFunction, v_lp, tol: float) -> CrossCheckReport:
    """Pointwise comparison of the two solution routes."""
    arr = np.asarray(v_lp, dtype=np.float64).ravel()
    if arr.size != v_vi.grid.size:
        raise ValueError(
            f"grid mismatch: {arr.size} LP values vs {v_vi.grid.size} grid points")
    diff = np.abs(arr - v_vi.values.ravel())
    worst = int(np.argmax(diff))
    point = tuple(float(x) for x in v_vi.grid.points()[worst])
    return CrossCheckReport(
        max_abs_diff=float(diff[worst]),
        mean_abs_diff=float(diff.mean()),
        passed=bool(diff[worst] <= tol),
        worst_index=worst,
        worst_point=point,
    )
