"""Iterated optimal stopping: Y^0, obstacles O^m, reflected steps Y^m and the outer loop.

Y[m][i, x, c] is the best value from step i with the chain at x, executed
cumulative impulse c and at most m impulses left. Y[0] runs the reward with no
intervention; Y[m] is the Snell envelope of the running reward against O[m],
where O[m] pays the delay window on the current shift, then the best impulse's
cost and Y[m-1] at the execution step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import snell
from .model import Problem


@dataclass
class ConvergenceReport:
    increments: list[float] = field(default_factory=list)
    stopped_at: int = 0
    reason: str = "n_max_reached"
    tail_bound: float = 0.0

    def to_dict(self) -> dict:
        return {"increments": list(self.increments), "stopped_at": self.stopped_at,
                "reason": self.reason, "tail_bound": self.tail_bound}


@dataclass(eq=False)
class ValueStack:
    """Tables of one solve. ``O``, ``regions`` and ``best_beta`` hold None at index 0."""

    problem: Problem
    theta: float | None
    Y: list[np.ndarray]
    O: list[np.ndarray | None]
    regions: list[snell.StoppingRegion | None]
    best_beta: list[np.ndarray | None]
    report: ConvergenceReport

    @property
    def mode(self) -> str:
        return "risk_neutral" if self.theta is None else "risk_sensitive"

    @property
    def top(self) -> int:
        """Largest iteration index actually computed."""
        return len(self.Y) - 1

    def value(self, m: int | None = None) -> float:
        """Y[m] at step 0, initial state, origin of the lattice."""
        m = self.top if m is None else min(m, self.top)
        p = self.problem
        return float(self.Y[m][0, p.chain.initial_state, p.lattice.origin])


def _check_theta(theta):
    if theta is not None and not (theta > 0 and math.isfinite(theta)):
        raise ValueError(f"theta must be a positive finite number, got {theta}")


def running_table(problem: Problem, start_step: int = 0) -> np.ndarray:
    run = problem.running_reward()
    if start_step > 0:
        run = run.copy()
        run[:start_step] = 0.0
    return run


def terminal_table(problem: Problem, theta: float | None = None) -> np.ndarray:
    shape = (problem.chain.num_states, problem.lattice.num_points)
    tail = problem.grid.tail()
    return np.full(shape, tail if theta is None else math.exp(theta * tail))


def compute_Y0(problem: Problem, theta: float | None = None, start_step: int = 0) -> np.ndarray:
    """Expected discounted reward without intervention, shape (N + 1, S, C).

    ``start_step`` gates the reward to steps >= start_step (start-time check only).
    """
    _check_theta(theta)
    run = running_table(problem, start_step)
    P = problem.chain.transition
    N = problem.grid.num_steps
    Y = np.empty((N + 1,) + run.shape[1:])
    Y[N] = terminal_table(problem, theta)
    if theta is None:
        for i in range(N - 1, -1, -1):
            Y[i] = run[i] + snell.expect(P, Y[i + 1])
    else:
        g = np.exp(theta * run)
        for i in range(N - 1, -1, -1):
            Y[i] = g[i] * snell.expect(P, Y[i + 1])
    return Y


def compute_obstacle(m: int, Y_prev: np.ndarray, problem: Problem, theta: float | None = None,
                     start_step: int = 0, delay_steps: int | None = None):
    """Intervention value O[m] and first-index argmax impulse, both (N, S, C).

    Entries with no executable impulse (too close to the horizon, or every
    shift leaves the lattice) hold -inf and best impulse -1.
    ``delay_steps`` overrides the grid delay; it exists for mutation tests.
    """
    if m < 1:
        raise ValueError("obstacles start at iteration 1")
    _check_theta(theta)
    grid, lat = problem.grid, problem.lattice
    N = grid.num_steps
    d = grid.delay_steps if delay_steps is None else delay_steps
    S, C = problem.chain.num_states, lat.num_points
    p = problem.impulses.num_impulses
    if Y_prev.shape != (N + 1, S, C):
        raise ValueError(f"previous value table has shape {Y_prev.shape}, expected {(N + 1, S, C)}")

    run = running_table(problem, start_step)
    costs = problem.discounted_costs()
    shift = lat.shift_index
    valid = shift >= 0  # (C, p)
    cols = np.where(valid, shift, 0)
    O = np.full((N, S, C), snell.NEG_INF)
    best = np.full((N, S, C), -1, dtype=np.int64)
    if theta is None:
        zero = np.zeros((d, S, C * p))
    else:
        g = np.exp(theta * run)
        g_wide = np.concatenate([g] * p, axis=2)  # column b*C + c sees g(., c)

    for i in range(0, N - d + 1):
        nxt = Y_prev[i + d]
        # boundary[:, b*C + c] = value after executing impulse b from point c
        if theta is None:
            boundary = np.concatenate([nxt[:, cols[:, b]] for b in range(p)], axis=1)
            boundary[:, ~valid.T.ravel()] = 0.0
            folded = snell.delay_fold_additive(problem.chain, zero, boundary, 0, d)
            branch = -costs[i + d][:, None, None] + folded.reshape(S, p, C).transpose(1, 0, 2)
            window = snell.delay_fold_additive(problem.chain, run, np.zeros((S, C)), i, d)
        else:
            scale = np.exp(-theta * costs[i + d])
            boundary = np.concatenate([scale[b] * nxt[:, cols[:, b]] for b in range(p)], axis=1)
            boundary[:, ~valid.T.ravel()] = 0.0
            folded = snell.delay_fold_multiplicative(problem.chain, g_wide, boundary, i, d)
            branch = folded.reshape(S, p, C).transpose(1, 0, 2)
        for b in range(p):
            branch[b][:, ~valid[:, b]] = snell.NEG_INF
        k = np.argmax(branch, axis=0)
        top = np.take_along_axis(branch, k[None], axis=0)[0]
        has = np.isfinite(top)
        best[i] = np.where(has, k, -1)
        O[i] = (window + top) if theta is None else top
    return O, best


def reflected_step(m: int, obstacle: np.ndarray, problem: Problem, theta: float | None = None,
                   start_step: int = 0):
    """Snell envelope of the running reward (or step factor) against ``obstacle``."""
    run = running_table(problem, start_step)
    term = terminal_table(problem, theta)
    if theta is None:
        return snell.additive_snell(run, obstacle, term, problem.chain)
    return snell.multiplicative_snell(np.exp(theta * run), obstacle, term, problem.chain)


def solve(problem: Problem, n_max: int | None = None, tolerance: float = 1e-12,
          theta: float | None = None, start_step: int = 0,
          delay_steps: int | None = None) -> ValueStack:
    """Run the monotone iteration Y[0] <= Y[1] <= ... up to ``n_max``.

    Stops early once the sup-norm increment drops below ``tolerance``.
    """
    n_max = problem.n_max if n_max is None else n_max
    if n_max < 0 or n_max > problem.n_max:
        raise ValueError(f"n_max must be in [0, {problem.n_max}] (the lattice budget)")
    if not tolerance > 0:
        raise ValueError("tolerance must be > 0")
    _check_theta(theta)
    Y = [compute_Y0(problem, theta, start_step)]
    O: list = [None]
    regions: list = [None]
    best: list = [None]
    report = ConvergenceReport(tail_bound=problem.grid.tail_bound(problem.reward.bound))
    for m in range(1, n_max + 1):
        obs, b = compute_obstacle(m, Y[m - 1], problem, theta, start_step, delay_steps)
        val, reg = reflected_step(m, obs, problem, theta, start_step)
        Y.append(val)
        O.append(obs)
        regions.append(reg)
        best.append(b)
        inc = float(np.max(val - Y[m - 1]))
        report.increments.append(inc)
        if inc < tolerance:
            report.reason = "tolerance_met"
            break
    report.stopped_at = len(Y) - 1
    return ValueStack(problem=problem, theta=theta, Y=Y, O=O, regions=regions, best_beta=best,
                      report=report)
