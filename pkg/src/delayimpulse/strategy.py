"""Optimal policy extraction, exact policy evaluation and Monte Carlo simulation.

Timing convention, shared with ``iterate`` and ``oracle``: an impulse decided at
step i shifts the reward argument from step i + d on and its discounted cost
e^{-r t_{i+d}} psi(beta) is charged at step i + d. A new decision is allowed at
i + d itself. Costs falling at step N are still charged; later ones are not.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from . import snell
from .iterate import ValueStack, running_table, terminal_table
from .model import Problem

WAIT = -1


@dataclass(frozen=True, eq=False)
class Policy:
    """Feedback rule over (step, state, lattice point, remaining budget).

    ``actions[m, i, x, c]`` is -1 for wait or the index of the impulse to start.
    """

    problem: Problem
    actions: np.ndarray
    stop_tol: float | None = None

    @property
    def budget(self) -> int:
        return self.actions.shape[0] - 1

    def decide(self, step: int, state: int, point: int, budget: int) -> int | None:
        """Impulse index to launch now, or None to wait."""
        if budget <= 0 or step >= self.actions.shape[1]:
            return None
        a = int(self.actions[min(budget, self.budget), step, state, point])
        return None if a == WAIT else a

    def with_action(self, budget: int, step: int, state: int, point: int, action: int) -> "Policy":
        acts = self.actions.copy()
        acts[budget, step, state, point] = action
        return Policy(self.problem, acts, self.stop_tol)

    @classmethod
    def never(cls, problem: Problem, budget: int | None = None) -> "Policy":
        budget = problem.n_max if budget is None else budget
        shape = (budget + 1, problem.grid.num_steps, problem.chain.num_states, problem.lattice.num_points)
        return cls(problem, np.full(shape, WAIT, dtype=np.int64))

    def check(self):
        """Raise if the table impulses where it must not."""
        p = self.problem
        N, d = p.grid.num_steps, p.grid.delay_steps
        acts = self.actions
        if np.any(acts[0] != WAIT):
            raise ValueError("policy impulses with zero budget")
        if np.any(acts[:, N - d + 1:] != WAIT):
            raise ValueError("policy impulses after the last executable step")
        m, i, x, c = np.nonzero(acts != WAIT)
        if np.any(p.lattice.shift_index[c, acts[m, i, x, c]] < 0):
            raise ValueError("policy references an off-lattice shift")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "state_index", "lattice_index", "budget", "action", "beta_index"])
        M, N, S, C = self.actions.shape
        for i in range(N):
            for x in range(S):
                for c in range(C):
                    for m in range(M):
                        a = int(self.actions[m, i, x, c])
                        w.writerow([i, x, c, m, "wait" if a == WAIT else "impulse", a])
        return buf.getvalue()


def extract_policy(stack: ValueStack, stop_tol: float | None = None) -> Policy:
    """Impulse wherever O[m] >= Y[m] - tol, with the first maximising impulse.

    The default tolerance is relative, 1e-9 * (1 + |Y|). Budgets beyond the last
    computed iteration reuse that iteration's tables.
    """
    p = stack.problem
    N, d = p.grid.num_steps, p.grid.delay_steps
    M = p.n_max
    acts = np.full((M + 1, N, p.chain.num_states, p.lattice.num_points), WAIT, dtype=np.int64)
    for m in range(1, M + 1):
        k = min(m, stack.top)
        if k == 0:
            continue
        Y, O = stack.Y[k][:-1], stack.O[k]
        tol = snell.stop_tolerance(Y) if stop_tol is None else stop_tol
        with np.errstate(invalid="ignore"):
            hit = np.isfinite(O) & (O >= Y - tol)
        hit[N - d + 1:] = False
        acts[m] = np.where(hit, stack.best_beta[k], WAIT)
    pol = Policy(p, acts, stop_tol)
    pol.check()
    return pol


@dataclass(frozen=True)
class PayoffEstimate:
    value: float
    std_error: float
    num_paths: int
    mode: str
    expected_impulses: float | None = None


def _expect_stack(P: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Apply E[. | x] to an array whose second-to-last axis is the chain state."""
    S = A.shape[-2]
    moved = np.moveaxis(A, -2, 0).reshape(S, -1)
    out = snell.expect(P, moved).reshape((S,) + A.shape[:-2] + A.shape[-1:])
    return np.moveaxis(out, 0, -2)


def _sweep(policy: Policy, run, term, exec_term, multiplicative: bool, budget: int) -> float:
    """Backward expectation over (budget, pending impulse, countdown, state, point).

    ``exec_term[j, b]`` is added (or multiplied) when impulse b executes at step j.
    """
    p = policy.problem
    N, d = p.grid.num_steps, p.grid.delay_steps
    S, C = p.chain.num_states, p.lattice.num_points
    nb = p.impulses.num_impulses
    P = p.chain.transition
    shift = p.lattice.shift_index
    valid = shift >= 0
    cols = np.where(valid, shift, 0)
    acts = policy.actions[np.minimum(np.arange(budget + 1), policy.budget)]
    acts[0] = WAIT

    none = np.broadcast_to(term, (budget + 1, S, C)).copy()
    pend = np.broadcast_to(term, (budget + 1, nb, d, S, C)).copy()
    for i in range(N - 1, -1, -1):
        # pending impulse whose countdown hits zero at i + 1 executes there
        execd = np.zeros((budget + 1, nb, S, C))
        for b in range(nb):
            shifted = none[:-1][:, :, cols[:, b]]
            shifted[:, :, ~valid[:, b]] = 0.0
            if multiplicative:
                execd[1:, b] = exec_term[i + 1, b] * shifted
            else:
                execd[1:, b] = exec_term[i + 1, b] + shifted
        nxt = np.concatenate([execd[:, :, None], pend[:, :, :-1]], axis=2)
        if multiplicative:
            new_pend = run[i] * _expect_stack(P, nxt)
            wait = run[i] * _expect_stack(P, none)
        else:
            new_pend = run[i] + _expect_stack(P, nxt)
            wait = run[i] + _expect_stack(P, none)
        a = acts[:, i]
        started = np.take_along_axis(new_pend[:, :, d - 1], np.maximum(a, 0)[:, None], axis=1)[:, 0]
        none = np.where(a == WAIT, wait, started)
        pend = new_pend
    return float(none[budget, p.chain.initial_state, p.lattice.origin])


def evaluate_exact(policy: Policy, theta: float | None = None, budget: int | None = None,
                   count_impulses: bool = True) -> PayoffEstimate:
    """Exact expected payoff of ``policy`` from step 0, initial state, no shift.

    Also reports the expected number of impulses executed by step N, unless
    ``count_impulses`` is False (that halves the cost).
    """
    p = policy.problem
    budget = policy.budget if budget is None else budget
    policy.check()
    run = running_table(p)
    term = terminal_table(p, theta)
    costs = p.discounted_costs()
    count = None
    if count_impulses:
        count = _sweep(policy, np.zeros_like(run), np.zeros_like(term), np.ones_like(costs), False, budget)
    if theta is None:
        value = _sweep(policy, run, term, -costs, False, budget)
        return PayoffEstimate(value, 0.0, 0, "risk_neutral", count)
    value = _sweep(policy, np.exp(theta * run), term, np.exp(-theta * costs), True, budget)
    return PayoffEstimate(value, 0.0, 0, "risk_sensitive", count)


def _rng(seed: int, batch: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed).jumped(batch))


def simulate(policy: Policy, num_paths: int, seed: int, theta: float | None = None,
             batch_size: int = 20000, return_decisions: bool = False):
    """Monte Carlo estimate of the policy payoff.

    Batch b draws from an independent Philox stream keyed by ``seed`` and
    jumped b times, and batches are merged in order, so the result depends
    only on (policy, num_paths, seed, batch_size).
    With ``return_decisions`` also returns an int array (num_paths, budget)
    of decision steps, -1 padded.
    """
    if num_paths < 1:
        raise ValueError("num_paths must be >= 1")
    p = policy.problem
    policy.check()
    N, d = p.grid.num_steps, p.grid.delay_steps
    S = p.chain.num_states
    M = policy.budget
    cdf = np.cumsum(p.chain.transition, axis=1)
    shift = p.lattice.shift_index
    costs = p.discounted_costs()
    run = running_table(p)
    term = float(terminal_table(p, theta)[0, 0])
    if theta is not None:
        g = np.exp(theta * run)
        scale = np.exp(-theta * costs)

    samples = []
    decisions = []
    done = 0
    batch = 0
    while done < num_paths:
        n = min(batch_size, num_paths - done)
        rng = _rng(seed, batch)
        x = np.full(n, p.chain.initial_state, dtype=np.int64)
        c = np.full(n, p.lattice.origin, dtype=np.int64)
        m = np.full(n, M, dtype=np.int64)
        pend_b = np.full(n, -1, dtype=np.int64)
        pend_at = np.full(n, -1, dtype=np.int64)
        last = np.full(n, -(10 ** 9), dtype=np.int64)
        count = np.zeros(n, dtype=np.int64)
        dec = np.full((n, max(M, 1)), -1, dtype=np.int64)
        rewards = np.empty((N, n))
        exec_b = np.full((N + 1, n), -1, dtype=np.int64)
        rows = np.arange(n)
        for j in range(N + 1):
            ex = pend_at == j
            if ex.any():
                exec_b[j, ex] = pend_b[ex]
                c[ex] = shift[c[ex], pend_b[ex]]
                m[ex] -= 1
                pend_b[ex] = -1
                pend_at[ex] = -1
            if j == N:
                break
            a = policy.actions[np.minimum(m, M), j, x, c]
            start = (pend_b == -1) & (m > 0) & (a != WAIT)
            if start.any():
                if np.any(j - last[start] < d):
                    raise RuntimeError("delay lock violated")
                pend_b[start] = a[start]
                pend_at[start] = j + d
                last[start] = j
                dec[rows[start], count[start]] = j
                count[start] += 1
            if theta is None:
                rewards[j] = run[j, x, c]
            else:
                rewards[j] = g[j, x, c]
            u = rng.random(n)
            x = np.minimum((cdf[x] <= u[:, None]).sum(axis=1), S - 1)
        acc = np.full(n, term)
        for j in range(N, -1, -1):
            if j < N:
                acc = rewards[j] * acc if theta is not None else rewards[j] + acc
            e = exec_b[j]
            hit = e >= 0
            if hit.any():
                if theta is None:
                    acc[hit] = -costs[j, e[hit]] + acc[hit]
                else:
                    acc[hit] = scale[j, e[hit]] * acc[hit]
        samples.append(acc)
        decisions.append(dec[:, :M] if M else dec[:, :0])
        done += n
        batch += 1

    vals = np.concatenate(samples)
    if np.all(vals == vals[0]):
        mean, se = float(vals[0]), 0.0
    else:
        mean = float(np.mean(vals))
        se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    est = PayoffEstimate(mean, se, int(num_paths), "risk_neutral" if theta is None else "risk_sensitive")
    if return_decisions:
        return est, np.concatenate(decisions)
    return est
