"""Command-line front end: solve | policy | verify | simulate | sweep.

Exit codes: 0 success, 1 verification failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import iterate, oracle, strategy
from .config import SolverOptions, build_problem, load_config
from .model import ConfigError, Problem

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

SWEEP_PARAMS = {
    "r": ("grid", "discount_rate", float),
    "k": ("impulses", "fixed_cost", float),
    "dt": ("grid", "dt", float),
    "delay_steps": ("grid", "delay_steps", int),
    "theta": ("solver", "theta", float),
}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    raw: dict
    problem: Problem
    options: SolverOptions
    out: Path
    seed: int = 0
    paths: int = 100_000

    @property
    def theta(self) -> float | None:
        return self.options.risk_theta


def _fmt(v) -> str:
    return repr(float(v))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _apply_mode(opts: SolverOptions, mode: str | None, theta: float | None) -> SolverOptions:
    if mode is not None:
        opts.mode = mode
    if theta is not None:
        opts.theta = theta
    if opts.mode == "sensitive" and not (opts.theta is not None and opts.theta > 0):
        raise ConfigError("risk-sensitive mode needs theta > 0 (--theta or solver.theta)")
    return opts


def prepare(raw: dict, args) -> RunConfig:
    problem, opts = build_problem(raw)
    opts = _apply_mode(opts, getattr(args, "mode", None), getattr(args, "theta", None))
    report = problem.validate()
    if not report.ok:
        raise ConfigError("invalid config:\n  " + "\n  ".join(report.violations))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return RunConfig(raw=raw, problem=problem, options=opts, out=out, seed=args.seed,
                     paths=getattr(args, "paths", 100_000))


def _solve(rc: RunConfig, mutated: bool = False) -> iterate.ValueStack:
    d = rc.problem.grid.delay_steps + 1 if mutated else None
    return iterate.solve(rc.problem, rc.options.n_max, rc.options.tolerance, rc.theta, delay_steps=d)


def write_tables(stack: iterate.ValueStack, out: Path) -> None:
    N = stack.problem.grid.num_steps
    S, C = stack.problem.chain.num_states, stack.problem.lattice.num_points
    with open(out / "values.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "state_index", "lattice_index", "m", "value"])
        for i in range(N + 1):
            for x in range(S):
                for c in range(C):
                    for m, Y in enumerate(stack.Y):
                        w.writerow([i, x, c, m, _fmt(Y[i, x, c])])
    with open(out / "obstacles.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "state_index", "lattice_index", "m", "obstacle"])
        for i in range(N):
            for x in range(S):
                for c in range(C):
                    for m in range(1, len(stack.O)):
                        w.writerow([i, x, c, m, _fmt(stack.O[m][i, x, c])])


def cmd_solve(rc: RunConfig) -> int:
    stack = _solve(rc)
    write_tables(stack, rc.out)
    conv = stack.report.to_dict()
    conv.update(mode=stack.mode, theta=rc.theta, value=stack.value())
    _write_json(rc.out / "convergence.json", conv)
    return EXIT_OK


def cmd_policy(rc: RunConfig) -> int:
    stack = _solve(rc)
    pol = strategy.extract_policy(stack)
    (rc.out / "policy.csv").write_text(pol.to_csv())
    return EXIT_OK


def invariant_suite(stack: iterate.ValueStack) -> dict:
    """Monotonicity, bounds, dominance, start-time consistency and policy optimality."""
    p = stack.problem
    theta = stack.theta
    Y = stack.Y
    res = {}
    res["monotone"] = all(bool(np.all(Y[m] <= Y[m + 1] + 1e-12)) for m in range(len(Y) - 1))
    if theta is None:
        lo = 0.0
        hi = p.grid.discrete_value_bound(p.reward.bound)[:, None, None]
    else:
        lo = Y[0]
        hi = np.exp(theta * p.grid.discrete_value_bound(p.reward.bound))[:, None, None]
    res["bounds"] = all(bool(np.all(y >= lo - 1e-12) and np.all(y <= hi * (1 + 1e-12) + 1e-12)) for y in Y)
    with np.errstate(invalid="ignore"):
        res["dominance"] = all(
            bool(np.all(np.where(np.isfinite(stack.O[m]), Y[m][:-1] >= stack.O[m] - 1e-12, True)))
            and bool(np.all(Y[m] >= Y[0] - 1e-12))
            for m in range(1, len(Y)))
    N = p.grid.num_steps
    nu, nu2 = min(1, N), min(2, N)
    a = iterate.solve(p, stack.top, 1e-300, theta, start_step=nu)
    b = iterate.solve(p, stack.top, 1e-300, theta, start_step=nu2)
    res["start_time_consistency"] = all(
        np.array_equal(a.Y[m][nu2:], b.Y[m][nu2:]) for m in range(min(a.top, b.top) + 1))
    if stack.top >= 1:
        pol = strategy.extract_policy(stack)
        val = strategy.evaluate_exact(pol, theta).value
        res["policy_optimal"] = abs(val - stack.value(p.n_max)) <= 1e-9 * max(1.0, abs(val))
    else:
        res["policy_optimal"] = True
    return res


def cmd_verify(rc: RunConfig) -> int:
    mutated = rc.options.mutate == "delay_off_by_one"
    stack = _solve(rc, mutated=mutated)
    xc = oracle.cross_check(rc.problem, rc.options.n_max, 1e-9, rc.theta, stack=stack)
    inv = invariant_suite(stack)
    passed = xc.passed and all(inv.values())
    _write_json(rc.out / "verify.json", {"passed": passed, "cross_check": xc.to_dict(), "invariants": inv,
                                        "mutated": mutated})
    return EXIT_OK if passed else EXIT_FAIL


def cmd_simulate(rc: RunConfig) -> int:
    if rc.paths < 1:
        raise UsageError("--paths must be >= 1")
    stack = _solve(rc)
    pol = strategy.extract_policy(stack)
    exact = strategy.evaluate_exact(pol, rc.theta).value
    est = strategy.simulate(pol, rc.paths, rc.seed, rc.theta)
    if est.std_error > 0:
        z = (est.value - exact) / est.std_error
    else:
        z = 0.0 if est.value == exact else None
    _write_json(rc.out / "simulate.json", {"mean": est.value, "std_error": est.std_error, "exact": exact,
                                          "z": z, "num_paths": est.num_paths, "seed": rc.seed,
                                          "mode": est.mode})
    return EXIT_OK


def cmd_sweep(rc: RunConfig, param: str, values: list[str]) -> int:
    if param not in SWEEP_PARAMS:
        raise UsageError(f"unknown sweep parameter {param!r}; choose from {sorted(SWEEP_PARAMS)}")
    section, key, cast = SWEEP_PARAMS[param]
    rows = []
    for text in values:
        try:
            v = cast(text)
        except ValueError:
            raise UsageError(f"bad value {text!r} for {param}") from None
        raw = copy.deepcopy(rc.raw)
        raw[section][key] = v
        problem, opts = build_problem(raw)
        mode = "sensitive" if param == "theta" else rc.options.mode
        opts = _apply_mode(opts, mode, v if param == "theta" else rc.options.theta)
        report = problem.validate()
        if not report.ok:
            raise ConfigError(f"{param}={text}: " + "; ".join(report.violations))
        stack = iterate.solve(problem, opts.n_max, opts.tolerance, opts.risk_theta)
        pol = strategy.extract_policy(stack)
        ev = strategy.evaluate_exact(pol, opts.risk_theta)
        rows.append([param, _fmt(v), _fmt(stack.value()), _fmt(ev.expected_impulses)])
    with open(rc.out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "value", "Y0", "expected_impulses"])
        w.writerows(rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="delayimpulse",
                                 description="Impulse control with execution delay on a finite Markov chain.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "policy", "verify", "simulate", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--mode", choices=("neutral", "sensitive"))
        sp.add_argument("--theta", type=float)
        if name == "simulate":
            sp.add_argument("--paths", type=int, default=100_000)
        if name == "sweep":
            sp.add_argument("--param", required=True)
            sp.add_argument("--values", required=True, help="comma-separated list")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if not 0 <= args.seed < 2 ** 64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        rc = prepare(load_config(args.config), args)
        if args.command == "solve":
            return cmd_solve(rc)
        if args.command == "policy":
            return cmd_policy(rc)
        if args.command == "verify":
            return cmd_verify(rc)
        if args.command == "simulate":
            return cmd_simulate(rc)
        return cmd_sweep(rc, args.param, [v for v in args.values.split(",") if v.strip()])
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
