"""Command-line entry point: solve, check, sweep, simulate, export-lp.

All commands read a JSON config (see README for the schema), write
machine-readable CSV/JSON artifacts, and are deterministic given the config
and seed; wall-clock times live only in metadata files.

Exit codes: 0 success, 1 structural-check or convergence failure,
2 usage/config errors.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import analysis, lp, model, sim, solver

DEFAULTS = {
    "resolution": 21,
    "epsilon": 1e-6,
    "tie_epsilon": 1e-9,
    "seed": 12345,
}
EXPORT_CONSTRAINT_CAP = 200_000


class UsageError(Exception):
    """Bad flags, config, or problem parameters (exit code 2)."""


def _load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as e:
        raise UsageError(f"config is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    cfg["_dir"] = os.path.dirname(os.path.abspath(path))
    return cfg


def _load_problem(cfg: dict) -> model.ProblemSpec:
    if "problem" not in cfg:
        raise UsageError("config is missing the 'problem' entry")
    prob = cfg["problem"]
    if isinstance(prob, str):
        path = prob if os.path.isabs(prob) else os.path.join(cfg["_dir"], prob)
        if not os.path.exists(path):
            raise UsageError(f"problem file not found: {path}")
        with open(path) as fh:
            prob = json.load(fh)
    try:
        spec = model.spec_from_json(prob)
    except (ValueError, TypeError) as e:
        raise UsageError(f"invalid problem: {e}") from None
    violations = model.validate_spec(spec)
    if violations:
        raise UsageError("problem violates model assumptions:\n  "
                         + "\n  ".join(violations))
    return spec


def _opt(cfg: dict, args, name: str):
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    return cfg.get(name, DEFAULTS.get(name))


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _solve(spec, resolution, epsilon, tie_epsilon):
    if resolution < 2:
        raise UsageError("resolution must be at least 2")
    if epsilon <= 0:
        raise UsageError("epsilon must be positive")
    grid = solver.build_grid(spec, resolution)
    v = solver.value_iterate(spec, grid, epsilon)
    pol = solver.extract_policy(spec, v, tie_epsilon)
    return v, pol


def cmd_solve(cfg: dict, args) -> int:
    spec = _load_problem(cfg)
    out = _opt(cfg, args, "out") or "out"
    resolution = int(_opt(cfg, args, "resolution"))
    epsilon = float(_opt(cfg, args, "epsilon"))
    tie_epsilon = float(_opt(cfg, args, "tie_epsilon"))
    t0 = time.time()
    try:
        v, pol = _solve(spec, resolution, epsilon, tie_epsilon)
    except solver.ConvergenceError as e:
        print(f"solve failed: {e}", file=sys.stderr)
        return 1
    wall = time.time() - t0
    csv_path, meta_path = solver.write_solution(
        out, v, pol, extra_meta={"problem": model.spec_to_json(spec),
                                 "wall_time_s": wall})
    print(f"solved {v.grid.size} grid points in {v.meta['iterations']} sweeps "
          f"(residual {v.meta['residual']:.3e}); wrote {csv_path}, {meta_path}")
    return 0


def cmd_check(cfg: dict, args) -> int:
    spec = _load_problem(cfg)
    out = _opt(cfg, args, "out") or "out"
    tie_epsilon = float(_opt(cfg, args, "tie_epsilon"))
    sol_dir = cfg.get("solution_dir")
    if sol_dir is not None:
        sol_dir = sol_dir if os.path.isabs(sol_dir) else os.path.join(cfg["_dir"], sol_dir)
        if not (os.path.exists(os.path.join(sol_dir, "solution.csv"))
                and os.path.exists(os.path.join(sol_dir, "solution_meta.json"))):
            raise UsageError(f"no solve artifacts in {sol_dir}")
        v, _, _ = solver.load_solution(sol_dir)
    else:
        resolution = int(_opt(cfg, args, "resolution"))
        epsilon = float(_opt(cfg, args, "epsilon"))
        v, _ = _solve(spec, resolution, epsilon, tie_epsilon)
    pol = solver.extract_policy(spec, v, tie_epsilon)

    n = spec.n
    checks: dict[str, dict] = {}
    conv = analysis.check_convexity(v)
    checks["convexity"] = {**conv.to_json(), "asserted": True}
    sym = analysis.check_symmetry(spec, v)
    checks["symmetry"] = {**sym.to_json(), "asserted": True}
    contig = analysis.check_contiguity_all(pol)
    checks["contiguity"] = {**contig.to_json(), "asserted": True}

    connected_scope = n == 3 and spec.channels.lambda0 < spec.channels.lambda1
    per_action = [analysis.check_connectivity(pol, a).to_json()
                  for a in range(pol.n_actions)]
    conn_ok = all(r["components"] == 1 for r in per_action)
    checks["connectivity"] = {"pass": conn_ok, "per_action": per_action,
                              "asserted": connected_scope}

    missing = [a for a in range(pol.n_actions)
               if not pol.ties[(a,) + analysis.vertex_index(
                   pol.grid, model.Action.from_mask_int(a, n).mask)]]
    checks["vertex_membership"] = {"pass": not missing, "missing": missing,
                                   "asserted": True}

    planes = []
    planes_ok = True
    for axis in range(n):
        for side in (0, 1):
            pr = analysis.boundary_plane_policy(spec, v, axis, side, tie_epsilon)
            planes.append(pr.to_json())
            planes_ok = planes_ok and pr.ok
    checks["boundary_planes"] = {"pass": planes_ok, "planes": planes,
                                 "asserted": True}

    ok = all(c["pass"] for c in checks.values() if c["asserted"])
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "check.json")
    _write_json(path, {"pass": ok, "checks": checks})
    for name, c in checks.items():
        tag = "PASS" if c["pass"] else ("FAIL" if c["asserted"] else "report-only")
        print(f"{name}: {tag}")
    print(f"wrote {path}")
    return 0 if ok else 1


def cmd_sweep(cfg: dict, args) -> int:
    spec = _load_problem(cfg)
    out = _opt(cfg, args, "out") or "out"
    section = cfg.get("sweep")
    if not isinstance(section, dict):
        raise UsageError("config is missing the 'sweep' section")
    parameter = section.get("parameter")
    if parameter not in analysis.SWEEP_PARAMETERS:
        raise UsageError(f"sweep parameter must be one of {analysis.SWEEP_PARAMETERS}")
    values = section.get("values")
    if not values:
        raise UsageError("sweep needs a non-empty 'values' list")
    resolution = int(section.get("resolution", _opt(cfg, args, "resolution")))
    epsilon = float(section.get("epsilon", _opt(cfg, args, "epsilon")))
    tie_epsilon = float(_opt(cfg, args, "tie_epsilon"))
    rows = analysis.sweep(spec, parameter, [float(x) for x in values],
                          resolution=resolution, epsilon=epsilon,
                          tie_epsilon=tie_epsilon)
    if all(r.status == "skipped" for r in rows):
        print("every sweep row was skipped:", file=sys.stderr)
        for r in rows:
            print(f"  {r.param_value}: {r.reason}", file=sys.stderr)
        return 2
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "sweep.csv")
    with open(path, "w") as fh:
        fh.write(analysis.sweep_csv(rows))
    skipped = sum(r.status == "skipped" for r in rows)
    print(f"swept {parameter} over {len(rows)} values ({skipped} skipped); wrote {path}")
    return 0


def cmd_simulate(cfg: dict, args) -> int:
    spec = _load_problem(cfg)
    out = _opt(cfg, args, "out") or "out"
    seed = int(_opt(cfg, args, "seed"))
    section = cfg.get("simulate")
    if not isinstance(section, dict):
        raise UsageError("config is missing the 'simulate' section")
    episodes = int(section.get("episodes", 0))
    if episodes < 2:
        raise UsageError("simulate needs at least 2 episodes")
    horizon = int(section.get("horizon", 200))
    if horizon < 1:
        raise UsageError("horizon must be at least 1")
    p0 = section.get("p0", [0.5] * spec.n)
    try:
        p0 = model.as_belief(p0, spec.n)
    except ValueError as e:
        raise UsageError(f"bad p0: {e}") from None
    names = section.get("policies", ["optimal", "myopic", "all_on",
                                     "best_single", "none"])
    trace = bool(section.get("trace", False)) or bool(getattr(args, "trace", False))

    known = set(sim.baseline_policies(spec)) | {"myopic", "optimal"}
    for name in names:
        if name not in known:
            raise UsageError(f"unknown policy {name!r}; choose from {sorted(known)}")

    resolution = int(_opt(cfg, args, "resolution"))
    epsilon = float(_opt(cfg, args, "epsilon"))
    tie_epsilon = float(_opt(cfg, args, "tie_epsilon"))
    v, pol_opt = _solve(spec, resolution, epsilon, tie_epsilon)
    solver_value = solver.interpolate(v, p0)

    policies = dict(sim.baseline_policies(spec))
    policies["myopic"] = sim.myopic_policy(spec)
    policies["optimal"] = pol_opt

    os.makedirs(out, exist_ok=True)
    results = []
    for name in names:
        rewards = sim.simulate_rewards(spec, policies[name], p0, episodes,
                                       horizon, seed)
        mean = float(np.mean(rewards))
        stderr = float(np.std(rewards, ddof=1) / np.sqrt(episodes))
        summary = sim.PolicyEvalSummary(episodes=episodes, mean=mean,
                                        stderr=stderr, ci99=sim.Z99 * stderr)
        results.append(summary.to_json(name, p0, horizon, seed))
        if trace:
            tpath = os.path.join(out, f"trace_{name}.csv")
            with open(tpath, "w") as fh:
                fh.write("episode,discounted_reward\n")
                for e, r in enumerate(rewards):
                    fh.write(f"{e},{float(r)!r}\n")
    payload = {"solver_value_at_p0": solver_value, "p0": [float(x) for x in p0],
               "episodes": episodes, "horizon": horizon, "seed": seed,
               "resolution": resolution, "policies": results}
    path = os.path.join(out, "evaluation.json")
    _write_json(path, payload)
    for r in results:
        print(f"{r['policy_name']}: mean={r['mean']:.4f} +- {r['ci99']:.4f} (99%)")
    print(f"solver value at p0: {solver_value:.4f}; wrote {path}")
    return 0


def cmd_export_lp(cfg: dict, args) -> int:
    spec = _load_problem(cfg)
    out = _opt(cfg, args, "out") or "out"
    resolution = int(_opt(cfg, args, "resolution"))
    if resolution < 2:
        raise UsageError("resolution must be at least 2")
    lp_cfg = cfg.get("lp", {})
    cap = int(lp_cfg.get("max_constraints", EXPORT_CONSTRAINT_CAP))
    grid = solver.build_grid(spec, resolution)
    n_cons = grid.size * (2**spec.n)
    if n_cons > cap:
        # suggest the largest uniform resolution that fits
        fit = resolution
        while fit > 2 and (fit + 2) ** spec.n * 2**spec.n > cap:
            fit -= 1
        raise UsageError(
            f"{n_cons} constraints exceed the export cap {cap}; "
            f"try --resolution {fit} or raise lp.max_constraints")
    prob = lp.build_lp(spec, grid, max_constraints=cap)
    os.makedirs(out, exist_ok=True)
    path = lp.export_lp(prob, os.path.join(out, "model.lp"))
    varmap = {f"v_{i}": [float(x) for x in pt]
              for i, pt in enumerate(grid.points())}
    map_path = os.path.join(out, "varmap.json")
    _write_json(map_path, varmap)
    print(f"wrote {path} ({prob.n_cons} constraints, {prob.n_vars} variables) "
          f"and {map_path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gepower",
        description="Optimal power allocation over identical two-state Markov "
                    "channels: solve the belief MDP, verify the policy "
                    "structure, sweep parameters, and validate by simulation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("solve", "value-iterate and write the value/policy CSV"),
        ("check", "run structural checks on a solve"),
        ("sweep", "region volumes across a parameter range"),
        ("simulate", "Monte Carlo policy evaluation"),
        ("export-lp", "write the LP-format cross-check file"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default=None, help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--resolution", type=int, default=None)
        p.add_argument("--epsilon", type=float, default=None)
        if name == "simulate":
            p.add_argument("--trace", action="store_true",
                           help="also write per-episode reward CSVs")
    return parser


_COMMANDS = {
    "solve": cmd_solve,
    "check": cmd_check,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "export-lp": cmd_export_lp,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        return _COMMANDS[args.command](cfg, args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
