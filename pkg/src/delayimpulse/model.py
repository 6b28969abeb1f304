"""Configuration and domain types for delayed impulse control on a finite chain.

The controlled process is ``L + c`` where ``L`` is a finite-state Markov chain
and ``c`` is the cumulative executed impulse, a point of a finite lattice of
sums of impulse vectors. Everything here is immutable after construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

ROW_SUM_TOL = 1e-12


class ConfigError(ValueError):
    """Raised when a model object cannot be built from the given parameters."""


@dataclass(frozen=True)
class GridSpec:
    dt: float
    num_steps: int
    delay_steps: int
    discount_rate: float
    tail_mode: str = "zero"
    tail_value: float = 0.0

    @property
    def horizon(self) -> float:
        return self.num_steps * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.num_steps + 1) * self.dt

    def discounts(self) -> np.ndarray:
        """e^{-r t_i} for i = 0..N."""
        return np.exp(-self.discount_rate * self.times())

    def tail(self) -> float:
        """Risk-neutral value assigned to everything after the truncation horizon."""
        if self.tail_mode == "constant":
            return self.tail_value * math.exp(-self.discount_rate * self.horizon) / self.discount_rate
        return 0.0

    def tail_bound(self, gamma: float) -> float:
        return gamma / self.discount_rate * math.exp(-self.discount_rate * self.horizon)

    def value_bound(self, gamma: float) -> np.ndarray:
        """(gamma / r) e^{-r t_i} for i = 0..N, the continuous-time a priori bound."""
        return gamma / self.discount_rate * self.discounts()

    def discrete_value_bound(self, gamma: float) -> np.ndarray:
        """gamma dt sum_{j=i}^{N-1} e^{-r t_j} plus the tail: what the left-endpoint rule can reach."""
        disc = self.discounts()
        rest = np.concatenate([np.cumsum((gamma * self.dt * disc[:-1])[::-1])[::-1], [0.0]])
        return rest + self.tail()

    def left_rule_within_bound(self) -> bool:
        """True when the discrete bound never exceeds the continuous one on this grid."""
        a = self.discount_rate * self.dt
        return a * -math.expm1(-a * self.num_steps) <= -math.expm1(-a)


@dataclass(frozen=True, eq=False)
class ChainModel:
    """Finite Markov chain: ``transition[x, y]`` is the one-step probability x -> y."""

    state_values: np.ndarray
    transition: np.ndarray
    initial_state: int = 0

    def __post_init__(self):
        sv = np.asarray(self.state_values, dtype=float)
        if sv.ndim == 1:
            sv = sv[:, None]
        object.__setattr__(self, "state_values", sv)
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=float))
        sv.flags.writeable = False
        self.transition.flags.writeable = False

    @property
    def num_states(self) -> int:
        return self.state_values.shape[0]

    @property
    def dim(self) -> int:
        return self.state_values.shape[1]


@dataclass(frozen=True, eq=False)
class ImpulseSpec:
    impulses: np.ndarray
    fixed_cost: float
    variable_costs: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.impulses, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        object.__setattr__(self, "impulses", u)
        object.__setattr__(self, "variable_costs", np.asarray(self.variable_costs, dtype=float))

    @property
    def num_impulses(self) -> int:
        return self.impulses.shape[0]

    @property
    def costs(self) -> np.ndarray:
        """psi(beta) = k + phi(beta), one entry per impulse."""
        return self.fixed_cost + self.variable_costs


@dataclass(frozen=True)
class RewardSpec:
    """Instantaneous reward ``evaluator(step, point)`` bounded by ``bound``."""

    evaluator: Callable[[int, np.ndarray], float]
    bound: float


@dataclass(frozen=True, eq=False)
class CumulativeLattice:
    points: np.ndarray
    shift_index: np.ndarray  # (num_points, num_impulses), -1 where c + beta is off-lattice
    depth: np.ndarray  # fewest impulses needed to reach each point

    origin: int = 0

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    def shift(self, point: int, impulse: int) -> int:
        j = int(self.shift_index[point, impulse])
        if j < 0:
            raise KeyError(f"lattice point {point} shifted by impulse {impulse} leaves the lattice")
        return j


def _key(point: np.ndarray) -> tuple:
    # round so that 0.1 + 0.2 and 0.3 land on one lattice point
    return tuple(np.round(point, 12) + 0.0)


def build_lattice(impulses: ImpulseSpec, n_max: int) -> CumulativeLattice:
    """All distinct sums of at most ``n_max`` impulses, origin first, in breadth-first order."""
    if n_max < 0:
        raise ConfigError("n_max must be >= 0")
    u = impulses.impulses
    origin = np.zeros(u.shape[1])
    points = [origin]
    depth = [0]
    index = {_key(origin): 0}
    frontier = [0]
    for level in range(1, n_max + 1):
        nxt = []
        for j in frontier:
            for b in range(u.shape[0]):
                q = points[j] + u[b]
                k = _key(q)
                if k not in index:
                    index[k] = len(points)
                    points.append(q)
                    depth.append(level)
                    nxt.append(index[k])
        frontier = nxt
    pts = np.array(points)
    shift = np.full((len(points), u.shape[0]), -1, dtype=np.int64)
    for j, c in enumerate(points):
        for b in range(u.shape[0]):
            shift[j, b] = index.get(_key(c + u[b]), -1)
    return CumulativeLattice(points=pts, shift_index=shift, depth=np.array(depth, dtype=np.int64))


def build_random_walk_chain(
    drift: Callable[[int, float], float],
    volatility: Callable[[int, float], float],
    x0: float,
    grid: GridSpec,
    space_grid: Sequence[float],
    step: int = 0,
) -> ChainModel:
    """Moment-matched trinomial chain on a sorted 1-D grid.

    Interior rows match mean ``b dt`` and variance ``sigma^2 dt`` using the two
    neighbours and the node itself. The end nodes reflect: mass that would leave
    the grid is sent to the single interior neighbour. Coefficients are frozen at
    ``step`` since the chain is time-homogeneous.
    """
    xs = np.asarray(space_grid, dtype=float).ravel()
    if xs.size == 0:
        raise ConfigError("space_grid is empty")
    if np.any(np.diff(xs) <= 0):
        raise ConfigError("space_grid must be strictly increasing")
    hits = np.flatnonzero(np.isclose(xs, x0, rtol=0, atol=1e-12))
    if hits.size == 0:
        raise ConfigError(f"x0={x0} is not a grid point")
    n = xs.size
    P = np.zeros((n, n))
    dt = grid.dt
    for j in range(n):
        b = float(drift(step, xs[j]))
        s = float(volatility(step, xs[j]))
        if s < 0:
            raise ConfigError(f"negative volatility at grid point {xs[j]}")
        if n == 1:
            P[0, 0] = 1.0
            continue
        if j == 0:
            hl = hr = xs[1] - xs[0]
        elif j == n - 1:
            hl = hr = xs[-1] - xs[-2]
        else:
            hl, hr = xs[j] - xs[j - 1], xs[j + 1] - xs[j]
        m1 = b * dt
        m2 = s * s * dt + m1 * m1
        pu = (m2 + m1 * hl) / (hr * (hl + hr))
        pd = (m2 - m1 * hr) / (hl * (hl + hr))
        p0 = 1.0 - pu - pd
        if min(pu, pd, p0) < -1e-14:
            raise ConfigError(
                f"moment matching gives negative probabilities at x={xs[j]} "
                f"(up={pu:.4g}, down={pd:.4g}, stay={p0:.4g}); reduce dt or coarsen the grid"
            )
        pu, pd, p0 = max(pu, 0.0), max(pd, 0.0), max(p0, 0.0)
        P[j, j] += p0
        if j == 0:
            P[j, 1] += pu + pd
        elif j == n - 1:
            P[j, j - 1] += pu + pd
        else:
            P[j, j + 1] += pu
            P[j, j - 1] += pd
    return ChainModel(state_values=xs[:, None], transition=P, initial_state=int(hits[0]))


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    tail_bound: float = float("nan")

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(grid: GridSpec, chain: ChainModel, impulses: ImpulseSpec, reward: RewardSpec,
             n_max: int) -> ValidationReport:
    """Check every structural invariant; collect all problems instead of raising."""
    v: list[str] = []
    if not (grid.dt > 0 and math.isfinite(grid.dt)):
        v.append(f"grid.dt must be > 0 (got {grid.dt})")
    if int(grid.num_steps) != grid.num_steps or grid.num_steps < 1:
        v.append(f"grid.num_steps must be an integer >= 1 (got {grid.num_steps})")
    if int(grid.delay_steps) != grid.delay_steps or grid.delay_steps < 1:
        v.append(f"grid.delay_steps must be an integer >= 1 (got {grid.delay_steps})")
    elif grid.num_steps < grid.delay_steps:
        v.append(f"grid.num_steps ({grid.num_steps}) must be >= delay_steps ({grid.delay_steps})")
    if not (grid.discount_rate > 0 and math.isfinite(grid.discount_rate)):
        v.append(f"grid.discount_rate must be > 0 (got {grid.discount_rate})")
    if grid.tail_mode not in ("zero", "constant"):
        v.append(f"grid.tail_mode must be 'zero' or 'constant' (got {grid.tail_mode!r})")
    elif grid.tail_mode == "constant" and not (0 <= grid.tail_value <= reward.bound):
        v.append(f"grid.tail_value must lie in [0, gamma] (got {grid.tail_value})")

    P = chain.transition
    S = chain.num_states
    if S < 1:
        v.append("chain has no states")
    if P.shape != (S, S):
        v.append(f"transition shape {P.shape} does not match {S} states")
    else:
        if not np.all(np.isfinite(P)):
            v.append("transition has non-finite entries")
        for i in np.flatnonzero(np.any(P < 0, axis=1)):
            v.append(f"transition has negative entries at row {i}")
        for i in np.flatnonzero(np.abs(P.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            v.append(f"transition not stochastic at row {i} (sum {P[i].sum()!r})")
    if not (0 <= chain.initial_state < max(S, 0)):
        v.append(f"initial_state {chain.initial_state} is not a valid index")

    p = impulses.num_impulses
    if p < 1:
        v.append("impulse set is empty")
    if impulses.impulses.shape[1] != chain.dim:
        v.append(f"impulse dimension {impulses.impulses.shape[1]} != state dimension {chain.dim}")
    if not impulses.fixed_cost > 0:
        v.append(f"fixed_cost must be > 0 (got {impulses.fixed_cost})")
    if impulses.variable_costs.shape != (p,):
        v.append(f"need one variable cost per impulse ({p}), got shape {impulses.variable_costs.shape}")
    elif np.any(impulses.variable_costs < 0):
        v.append("variable costs must be >= 0")
    if int(n_max) != n_max or n_max < 0:
        v.append(f"n_max must be an integer >= 0 (got {n_max})")
    if not reward.bound >= 0:
        v.append(f"reward bound gamma must be >= 0 (got {reward.bound})")

    if not v:
        lattice = build_lattice(impulses, int(n_max))
        seen = 0
        for i in range(grid.num_steps):
            for x in chain.state_values:
                for c in lattice.points:
                    try:
                        h = float(reward.evaluator(i, x + c))
                    except Exception as exc:  # noqa: BLE001 - report, never crash
                        v.append(f"reward evaluation failed at step {i}, point {tuple((x + c).tolist())}: {exc}")
                        seen += 1
                        continue
                    if not (0.0 <= h <= reward.bound):
                        v.append(f"reward {h!r} outside [0, {reward.bound}] at step {i}, point {tuple((x + c).tolist())}")
                        seen += 1
                    if seen >= 20:
                        break
                if seen >= 20:
                    break
            if seen >= 20:
                v.append("further reward violations suppressed")
                break
    tail = grid.tail_bound(reward.bound) if grid.discount_rate > 0 else float("inf")
    return ValidationReport(violations=v, tail_bound=tail)


@dataclass(frozen=True, eq=False)
class Problem:
    """A fully specified instance: grid, chain, impulses, reward and lattice budget."""

    grid: GridSpec
    chain: ChainModel
    impulses: ImpulseSpec
    reward: RewardSpec
    n_max: int

    def validate(self) -> ValidationReport:
        return validate(self.grid, self.chain, self.impulses, self.reward, self.n_max)

    @cached_property
    def lattice(self) -> CumulativeLattice:
        return build_lattice(self.impulses, self.n_max)

    @cached_property
    def reward_table(self) -> np.ndarray:
        """h(t_i, x + c) with shape (N, S, C)."""
        N = self.grid.num_steps
        xs, cs = self.chain.state_values, self.lattice.points
        out = np.empty((N, xs.shape[0], cs.shape[0]))
        for i in range(N):
            for a, x in enumerate(xs):
                for b, c in enumerate(cs):
                    out[i, a, b] = self.reward.evaluator(i, x + c)
        out.flags.writeable = False
        return out

    def running_reward(self) -> np.ndarray:
        """Left-endpoint quadrature of e^{-rs} h over each step, shape (N, S, C)."""
        disc = self.grid.discounts()[:-1]
        return disc[:, None, None] * self.reward_table * self.grid.dt

    def step_factor(self, theta: float) -> np.ndarray:
        """exp(theta * running reward), the multiplicative analogue, shape (N, S, C)."""
        return np.exp(theta * self.running_reward())

    def discounted_costs(self) -> np.ndarray:
        """e^{-r t_j} psi(beta), shape (N + 1, p): cost of an impulse executed at step j."""
        return self.grid.discounts()[:, None] * self.impulses.costs[None, :]

    def replace(self, **changes) -> "Problem":
        kw = dict(grid=self.grid, chain=self.chain, impulses=self.impulses, reward=self.reward,
                  n_max=self.n_max)
        kw.update(changes)
        return Problem(**kw)
