"""Discrete Snell envelopes and delay-window folds on a finite chain.

Tables are numpy arrays indexed ``[step, state, lattice point]``. Conditional
expectations are exact transition sums taken in a fixed order, so results do
not depend on BLAS threading.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ChainModel

NEG_INF = -np.inf


class ShapeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StoppingRegion:
    mask: np.ndarray  # (N, S, C) bool, True where the obstacle attains the envelope


def expect(transition: np.ndarray, values: np.ndarray) -> np.ndarray:
    """E[values(X_{i+1}) | X_i = x] for every x, summed over next states in index order."""
    out = transition[:, 0, None] * values[0][None, :]
    for y in range(1, transition.shape[1]):
        out = out + transition[:, y, None] * values[y][None, :]
    return out


def stop_tolerance(values: np.ndarray) -> np.ndarray:
    return 1e-9 * (1.0 + np.abs(values))


def _region(values: np.ndarray, obstacle: np.ndarray, stop_tol=None) -> StoppingRegion:
    v = values[:-1]
    tol = stop_tolerance(v) if stop_tol is None else stop_tol
    with np.errstate(invalid="ignore"):
        mask = np.isfinite(obstacle) & (obstacle >= v - tol)
    return StoppingRegion(mask=mask)


def _check(chain: ChainModel, step_table: np.ndarray, obstacle: np.ndarray, terminal: np.ndarray):
    S = chain.num_states
    if step_table.ndim != 3 or step_table.shape[1] != S:
        raise ShapeError(f"per-step table must be (N, {S}, C), got {step_table.shape}")
    if obstacle.shape != step_table.shape:
        raise ShapeError(f"obstacle shape {obstacle.shape} != {step_table.shape}")
    if terminal.shape != step_table.shape[1:]:
        raise ShapeError(f"terminal shape {terminal.shape} != {step_table.shape[1:]}")
    if np.isnan(step_table).any() or np.isnan(obstacle).any() or np.isnan(terminal).any():
        raise ValueError("NaN in Snell inputs")
    if not np.all(np.isfinite(terminal)):
        raise ValueError("terminal values must be finite")
    if np.isposinf(obstacle).any():
        raise ValueError("obstacle may use -inf as a sentinel but never +inf")


def additive_snell(running, obstacle, terminal, chain: ChainModel, stop_tol=None):
    """V_N = terminal, V_i = max(obstacle_i, running_i + E[V_{i+1}]).

    ``-inf`` obstacle entries forbid stopping. Returns ``(V, region)`` with V of
    shape (N + 1, S, C).
    """
    running = np.asarray(running, dtype=float)
    obstacle = np.asarray(obstacle, dtype=float)
    terminal = np.asarray(terminal, dtype=float)
    _check(chain, running, obstacle, terminal)
    N = running.shape[0]
    V = np.empty((N + 1,) + terminal.shape)
    V[N] = terminal
    P = chain.transition
    for i in range(N - 1, -1, -1):
        V[i] = np.maximum(obstacle[i], running[i] + expect(P, V[i + 1]))
    return V, _region(V, obstacle, stop_tol)


def multiplicative_snell(step_factor, obstacle, terminal, chain: ChainModel, stop_tol=None):
    """V_N = terminal, V_i = max(obstacle_i, g_i * E[V_{i+1}]) with g >= 1."""
    g = np.asarray(step_factor, dtype=float)
    obstacle = np.asarray(obstacle, dtype=float)
    terminal = np.asarray(terminal, dtype=float)
    _check(chain, g, obstacle, terminal)
    if np.any(g < 1.0):
        raise ValueError("step factor below 1: a negative reward leaked into the exponential")
    N = g.shape[0]
    V = np.empty((N + 1,) + terminal.shape)
    V[N] = terminal
    P = chain.transition
    for i in range(N - 1, -1, -1):
        V[i] = np.maximum(obstacle[i], g[i] * expect(P, V[i + 1]))
    return V, _region(V, obstacle, stop_tol)


def _window(table: np.ndarray, i: int, d: int):
    if d < 1 or i < 0 or i + d > table.shape[0]:
        raise ValueError(f"delay window [{i}, {i + d}) exceeds the horizon of {table.shape[0]} steps")


def delay_fold_additive(chain: ChainModel, rewards, boundary, i: int, d: int) -> np.ndarray:
    """E[sum_{j=i}^{i+d-1} rewards_j(X_j) + boundary(X_{i+d}) | X_i], one table per state.

    ``rewards`` is the full per-step table (N, S, C); only rows i..i+d-1 are read.
    """
    rewards = np.asarray(rewards, dtype=float)
    _window(rewards, i, d)
    acc = np.asarray(boundary, dtype=float)
    P = chain.transition
    for j in range(i + d - 1, i - 1, -1):
        acc = rewards[j] + expect(P, acc)
    return acc


def delay_fold_multiplicative(chain: ChainModel, step_factor, boundary, i: int, d: int) -> np.ndarray:
    """E[prod_{j=i}^{i+d-1} g_j(X_j) * boundary(X_{i+d}) | X_i]."""
    g = np.asarray(step_factor, dtype=float)
    _window(g, i, d)
    if np.any(g[i:i + d] < 1.0):
        raise ValueError("step factor below 1 in delay window")
    acc = np.asarray(boundary, dtype=float)
    P = chain.transition
    for j in range(i + d - 1, i - 1, -1):
        acc = g[j] * expect(P, acc)
    return acc
