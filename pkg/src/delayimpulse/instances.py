"""Small reference instances: the E1 config, the h=0 and constant-h configs, and random instances."""
from __future__ import annotations

import copy

import numpy as np

from .config import build_problem
from .model import (ChainModel, GridSpec, ImpulseSpec, Problem, RewardSpec, build_lattice)

E1_CONFIG = {
    "grid": {"dt": 1.0, "num_steps": 6, "delay_steps": 2, "discount_rate": 0.1, "tail_mode": "zero"},
    "chain": {"explicit": {"states": [0.0, 1.0],
                           "transition": [[0.6, 0.4], [0.4, 0.6]],
                           "initial": 0}},
    "impulses": {"vectors": [[1.0]], "fixed_cost": 0.2, "variable_costs": [0.05]},
    "reward": {"kind": "expression", "data": "min(x, 2.0) * (1.0 + 0.1 * i)", "bound_gamma": 3.0},
    "solver": {"n_max": 2, "tolerance": 1e-12},
}


def e1_config(**solver) -> dict:
    cfg = copy.deepcopy(E1_CONFIG)
    cfg["solver"].update(solver)
    return cfg


def zero_reward_config() -> dict:
    cfg = e1_config()
    cfg["reward"] = {"kind": "expression", "data": "0", "bound_gamma": 1.0}
    return cfg


def constant_reward_config(gamma: float = 1.5) -> dict:
    cfg = e1_config()
    cfg["reward"] = {"kind": "expression", "data": repr(gamma), "bound_gamma": gamma}
    return cfg


def deterministic_config() -> dict:
    cfg = e1_config()
    cfg["chain"]["explicit"]["transition"] = [[1.0, 0.0], [0.0, 1.0]]
    return cfg


def e1() -> Problem:
    return build_problem(e1_config())[0]


def random_instance(rng: np.random.Generator, max_states: int = 6, max_steps: int = 40,
                    max_impulses: int = 3, max_budget: int = 4, dim: int | None = None,
                    sparse: bool = True, within_bound: bool = True) -> Problem:
    """A random well-formed instance within the given size caps; see ``sized_instance``."""
    S = int(rng.integers(1, max_states + 1))
    N = int(rng.integers(2, max_steps + 1))
    d = int(rng.integers(1, min(4, N) + 1))
    p = int(rng.integers(1, max_impulses + 1))
    n_max = int(rng.integers(1, max_budget + 1))
    dim = int(rng.integers(1, 3)) if dim is None else dim
    return sized_instance(rng, S, N, d, p, n_max, dim, sparse, within_bound)


def sized_instance(rng: np.random.Generator, S: int, N: int, d: int, p: int, n_max: int, dim: int = 1,
                   sparse: bool = True, within_bound: bool = True, dt: float | None = None,
                   cost_scale: float = 1.0) -> Problem:
    """Random chain, impulses and rewards with the given sizes.

    Rewards are an i.i.d. uniform table over (step, reachable point), scaled so
    the largest entry equals the declared bound. With ``within_bound`` the
    discount rate is redrawn until the left-endpoint sums stay under
    (gamma / r) e^{-r t}.
    """
    dt = float(rng.choice([0.1, 0.25, 0.5, 1.0])) if dt is None else dt
    r = float(rng.uniform(0.05, 1.0))
    while within_bound and not GridSpec(dt, N, d, r).left_rule_within_bound():
        r = float(rng.uniform(0.05, 1.0)) * 0.5 ** rng.integers(1, 4)

    P = rng.random((S, S))
    if sparse and S > 1:
        P[rng.random((S, S)) < 0.4] = 0.0
    P[np.arange(S), rng.integers(0, S, S)] += 0.1  # every row keeps some mass
    P /= P.sum(axis=1, keepdims=True)
    states = rng.integers(-2, 3, size=(S, dim)).astype(float)
    moves = set()
    while len(moves) < p:
        v = tuple(int(a) for a in rng.integers(-2, 3, size=dim))
        if any(v):
            moves.add(v)
    U = np.array(sorted(moves), dtype=float)
    imp = ImpulseSpec(impulses=U, fixed_cost=cost_scale * float(rng.uniform(0.01, 0.5)),
                      variable_costs=cost_scale * rng.uniform(0.0, 0.3, size=p))
    gamma = float(rng.uniform(0.5, 3.0))
    lat = build_lattice(imp, n_max)
    pts = {tuple(x + c) for x in states for c in lat.points}
    keys = sorted(pts)
    table = rng.random((N, len(keys)))
    table *= gamma / table.max()
    col = {k: j for j, k in enumerate(keys)}

    def h(i, y, table=table, col=col):
        return float(table[i, col[tuple(float(a) for a in y)]])

    grid = GridSpec(dt=dt, num_steps=N, delay_steps=d, discount_rate=r)
    chain = ChainModel(state_values=states, transition=P, initial_state=int(rng.integers(0, S)))
    return Problem(grid=grid, chain=chain, impulses=imp, reward=RewardSpec(h, gamma), n_max=n_max)


# (S, N, d, p, n_max): the largest shapes the exhaustive enumerator handles quickly
TINY_SIZES = [(2, 4, 1, 1, 2), (2, 4, 2, 2, 2), (1, 4, 1, 2, 2), (2, 4, 1, 2, 1), (2, 4, 2, 2, 1)]


def tiny_instances(seed: int = 1) -> list[Problem]:
    """Five tiny instances; the default seed makes impulses strictly profitable in all of them."""
    rng = np.random.default_rng(seed)
    return [sized_instance(rng, *sizes, sparse=False, dt=1.0, cost_scale=0.1) for sizes in TINY_SIZES]
