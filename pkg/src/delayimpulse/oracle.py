"""Ground-truth solvers that do not use the obstacle/Snell machinery.

``bellman_oracle`` runs backward induction over the augmented state
(step, chain state, executed shift, pending impulse and countdown, budget).
``enumerate_tiny`` tries every action table on the decision nodes reachable
from the start and evaluates each one by memoised forward recursion.
Both use the same quadrature and execution timing as the iterative scheme.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .model import Problem

ENUMERATION_GUARD = 10 ** 6


class InstanceTooLarge(RuntimeError):
    """The enumerator's action-table count exceeds the guard; use bellman_oracle."""


@dataclass(eq=False)
class OracleResult:
    value: float
    actions: np.ndarray | None = None  # (N, budget + 1, S, C): -1 wait, else impulse index
    values: np.ndarray | None = None  # (N + 1, budget + 1, S, C) at no-pending nodes
    strategy_count: int | None = None

    def action(self, step: int, state: int, point: int, budget: int) -> int | None:
        a = int(self.actions[step, budget, state, point])
        return None if a < 0 else a


def _inputs(problem: Problem, theta):
    g = problem.grid
    t = np.arange(g.num_steps + 1) * g.dt
    disc = np.exp(-g.discount_rate * t)
    run = disc[:-1, None, None] * problem.reward_table * g.dt
    cost = disc[:, None] * (problem.impulses.fixed_cost + problem.impulses.variable_costs)[None, :]
    tail = g.tail()
    if theta is not None:
        return np.exp(theta * run), np.exp(-theta * cost), math.exp(theta * tail)
    return run, -cost, tail


def bellman_oracle(problem: Problem, budget: int | None = None, theta: float | None = None) -> OracleResult:
    budget = problem.n_max if budget is None else budget
    if budget > problem.n_max:
        raise ValueError("budget exceeds the lattice built for the problem")
    mult = theta is not None
    run, exec_term, tail = _inputs(problem, theta)
    N, d = problem.grid.num_steps, problem.grid.delay_steps
    P = problem.chain.transition
    S, C = run.shape[1], run.shape[2]
    nb = problem.impulses.num_impulses
    shift = problem.lattice.shift_index

    def combine(a, b):
        return a * b if mult else a + b

    vals = np.empty((N + 1, budget + 1, S, C))
    acts = np.full((N, budget + 1, S, C), -1, dtype=np.int64)
    vals[N] = tail
    # pend_next[m][b][s - 1]: value at the next step with impulse b executing s steps later
    pend_next = [[[np.full((S, C), tail) for _ in range(d)] for _ in range(nb)] for _ in range(budget + 1)]
    for i in range(N - 1, -1, -1):
        pend_now = [[[None] * d for _ in range(nb)] for _ in range(budget + 1)]
        for m in range(budget + 1):
            wait = combine(run[i], P @ vals[i + 1, m])
            best = wait.copy()
            choice = np.full((S, C), -1, dtype=np.int64)
            if m == 0:
                vals[i, m] = best
                continue
            for b in range(nb):
                landed = np.zeros((S, C))
                ok = shift[:, b] >= 0
                landed[:, ok] = combine(exec_term[i + 1, b], vals[i + 1, m - 1][:, shift[ok, b]])
                pend_now[m][b][0] = combine(run[i], P @ landed)
                for s in range(2, d + 1):
                    pend_now[m][b][s - 1] = combine(run[i], P @ pend_next[m][b][s - 2])
                if i <= N - d:
                    start = np.where(ok[None, :], pend_now[m][b][d - 1], -np.inf)
                    better = start > best
                    best = np.where(better, start, best)
                    choice = np.where(better, b, choice)
            vals[i, m] = best
            acts[i, m] = choice
        for m in range(1, budget + 1):
            pend_next[m] = pend_now[m]
    x0, c0 = problem.chain.initial_state, problem.lattice.origin
    return OracleResult(value=float(vals[0, budget, x0, c0]), actions=acts, values=vals)


def _decision_nodes(problem: Problem, budget: int):
    """Decision nodes (step, state, point, budget) reachable under some strategy, with their choices."""
    N, d = problem.grid.num_steps, problem.grid.delay_steps
    P = problem.chain.transition
    shift = problem.lattice.shift_index
    nb = problem.impulses.num_impulses
    start = (0, problem.chain.initial_state, problem.lattice.origin, -1, -1, budget)
    seen = {start}
    stack = [start]
    nodes = {}
    while stack:
        i, x, c, pb, pat, m = stack.pop()
        if i == N:
            continue
        moves = [(pb, pat)]
        if pb < 0 and m > 0 and i <= N - d:
            opts = [b for b in range(nb) if shift[c, b] >= 0]
            if opts:
                nodes[(i, x, c, m)] = [-1] + opts
                moves += [(b, i + d) for b in opts]
        for b, at in moves:
            for y in np.flatnonzero(P[x] > 0):
                if b >= 0 and at == i + 1:
                    nxt = (i + 1, int(y), int(shift[c, b]), -1, -1, m - 1)
                else:
                    nxt = (i + 1, int(y), c, b, at, m)
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
    return nodes


def enumerate_tiny(problem: Problem, budget: int | None = None, theta: float | None = None,
                   guard: int = ENUMERATION_GUARD) -> OracleResult:
    """Best payoff over every deterministic Markov action table, by brute force."""
    budget = problem.n_max if budget is None else budget
    nodes = _decision_nodes(problem, budget)
    keys = sorted(nodes)
    count = 1
    for k in keys:
        count *= len(nodes[k])
        if count > guard:
            raise InstanceTooLarge(f"more than {guard} action tables; use bellman_oracle")

    mult = theta is not None
    run, exec_term, tail = _inputs(problem, theta)
    N, d = problem.grid.num_steps, problem.grid.delay_steps
    P = problem.chain.transition
    shift = problem.lattice.shift_index
    succ = [[(int(y), float(P[x, y])) for y in np.flatnonzero(P[x] > 0)] for x in range(P.shape[0])]
    run_l = run.tolist()
    exec_l = exec_term.tolist()

    def payoff(table):
        memo = {}

        def f(i, x, c, pb, pat, m):
            if i == N:
                return tail
            key = (i, x, c, pb, pat, m)
            if key in memo:
                return memo[key]
            if pb < 0:
                a = table.get((i, x, c, m), -1)
                if a >= 0:
                    pb, pat = a, i + d
            total = 0.0
            for y, q in succ[x]:
                if pb >= 0 and pat == i + 1:
                    w = f(i + 1, y, int(shift[c, pb]), -1, -1, m - 1)
                    w = exec_l[i + 1][pb] * w if mult else exec_l[i + 1][pb] + w
                else:
                    w = f(i + 1, y, c, pb, pat, m)
                total += q * w
            r = run_l[i][x][c]
            out = r * total if mult else r + total
            memo[key] = out
            return out

        return f(0, problem.chain.initial_state, problem.lattice.origin, -1, -1, budget)

    best = -math.inf
    n = 0
    for choice in itertools.product(*(nodes[k] for k in keys)):
        v = payoff(dict(zip(keys, choice)))
        n += 1
        if v > best:
            best = v
    return OracleResult(value=best, strategy_count=n)


@dataclass
class CrossCheckReport:
    tol: float
    rows: list[dict] = field(default_factory=list)

    @property
    def max_discrepancy(self) -> float:
        worst = 0.0
        for r in self.rows:
            for k in ("root_discrepancy", "entrywise_discrepancy", "enumerate_discrepancy"):
                if r.get(k) is not None:
                    worst = max(worst, r[k])
        return worst

    @property
    def passed(self) -> bool:
        return self.max_discrepancy <= self.tol

    def to_dict(self) -> dict:
        return {"tol": self.tol, "passed": self.passed, "max_discrepancy": self.max_discrepancy,
                "rows": self.rows}


def cross_check(problem: Problem, n_max: int | None = None, tol: float = 1e-9,
                theta: float | None = None, stack=None, enumerate_guard: int = 20000) -> CrossCheckReport:
    """Compare iterate's Y[m] with the Bellman oracle (and the enumerator when small enough).

    Pass ``stack`` to check a precomputed (possibly corrupted) solve.
    """
    from .iterate import solve

    n_max = problem.n_max if n_max is None else n_max
    if stack is None:
        stack = solve(problem, n_max, tolerance=1e-300, theta=theta)
    orc = bellman_oracle(problem, n_max, theta)
    x0, c0 = problem.chain.initial_state, problem.lattice.origin
    rep = CrossCheckReport(tol=tol)
    for m in range(n_max + 1):
        Y = stack.Y[min(m, stack.top)]
        ref = orc.values[:, m]
        row = {
            "m": m,
            "iterate": float(Y[0, x0, c0]),
            "oracle": float(ref[0, x0, c0]),
            "root_discrepancy": abs(float(Y[0, x0, c0]) - float(ref[0, x0, c0])),
            "entrywise_discrepancy": float(np.max(np.abs(Y - ref))),
            "enumerate": None,
            "enumerate_discrepancy": None,
        }
        try:
            en = enumerate_tiny(problem, m, theta, guard=enumerate_guard)
        except InstanceTooLarge:
            pass
        else:
            row["enumerate"] = en.value
            row["enumerate_discrepancy"] = abs(en.value - float(ref[0, x0, c0]))
        rep.rows.append(row)
    return rep
