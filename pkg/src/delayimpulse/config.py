"""JSON config documents -> Problem plus solver options."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import (ChainModel, ConfigError, GridSpec, ImpulseSpec, Problem, RewardSpec,
                    build_random_walk_chain)

_MATH = {name: getattr(math, name) for name in
         ("exp", "log", "sqrt", "sin", "cos", "tan", "tanh", "atan", "floor", "ceil", "pi", "e")}
_MATH.update(abs=abs, min=min, max=max)

MUTATIONS = ("delay_off_by_one",)


@dataclass
class SolverOptions:
    n_max: int
    tolerance: float = 1e-12
    mode: str = "neutral"
    theta: float | None = None
    mutate: str | None = None

    @property
    def risk_theta(self) -> float | None:
        """theta when solving the risk-sensitive problem, None otherwise."""
        return self.theta if self.mode == "sensitive" else None


def _need(section: dict, key: str, where: str):
    if not isinstance(section, dict) or key not in section:
        raise ConfigError(f"missing field {where}.{key}")
    return section[key]


def _expression(src: str, where: str):
    try:
        code = compile(src, f"<{where}>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"{where}: bad expression {src!r}: {exc.msg}") from None

    def fn(i, point, dt):
        point = np.atleast_1d(np.asarray(point, dtype=float))
        env = dict(_MATH, i=i, t=i * dt, x=float(point[0]) if point.size == 1 else point)
        env.update({f"x{k}": float(v) for k, v in enumerate(point)})
        return float(eval(code, {"__builtins__": {}}, env))

    return fn


def _scalar_fn(spec, where: str, dt: float):
    if isinstance(spec, (int, float)):
        value = float(spec)
        return lambda i, x: value
    if isinstance(spec, str):
        fn = _expression(spec, where)
        return lambda i, x: fn(i, x, dt)
    raise ConfigError(f"{where} must be a number or an expression string")


def _grid(cfg: dict) -> GridSpec:
    g = _need(cfg, "grid", "config")
    tail_mode = g.get("tail_mode", "zero")
    tail_value = 0.0
    if isinstance(tail_mode, dict):  # {"constant": h_tail}
        (tail_mode, tail_value), = tail_mode.items()
    elif tail_mode == "constant":
        tail_value = float(_need(g, "tail_value", "grid"))
    num_steps = _need(g, "num_steps", "grid")
    delay = _need(g, "delay_steps", "grid")
    return GridSpec(dt=float(_need(g, "dt", "grid")), num_steps=int(num_steps), delay_steps=int(delay),
                    discount_rate=float(_need(g, "discount_rate", "grid")), tail_mode=tail_mode,
                    tail_value=float(tail_value))


def _chain(cfg: dict, grid: GridSpec) -> ChainModel:
    c = _need(cfg, "chain", "config")
    if "explicit" in c:
        e = c["explicit"]
        return ChainModel(state_values=np.asarray(_need(e, "states", "chain.explicit"), dtype=float),
                          transition=np.asarray(_need(e, "transition", "chain.explicit"), dtype=float),
                          initial_state=int(e.get("initial", 0)))
    if "random_walk" in c:
        rw = c["random_walk"]
        return build_random_walk_chain(
            _scalar_fn(_need(rw, "drift", "chain.random_walk"), "chain.random_walk.drift", grid.dt),
            _scalar_fn(_need(rw, "volatility", "chain.random_walk"), "chain.random_walk.volatility", grid.dt),
            float(_need(rw, "x0", "chain.random_walk")),
            grid,
            _need(rw, "space_grid", "chain.random_walk"),
        )
    raise ConfigError("chain needs an 'explicit' or 'random_walk' section")


def _impulses(cfg: dict) -> ImpulseSpec:
    u = _need(cfg, "impulses", "config")
    vectors = np.asarray(_need(u, "vectors", "impulses"), dtype=float)
    p = vectors.shape[0] if vectors.ndim else 0
    var = u.get("variable_costs", [0.0] * p)
    return ImpulseSpec(impulses=vectors, fixed_cost=float(_need(u, "fixed_cost", "impulses")),
                       variable_costs=np.asarray(var, dtype=float))


def _table_reward(data, num_steps: int):
    pts = np.asarray(_need(data, "points", "reward.data"), dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    values = np.asarray(_need(data, "values", "reward.data"), dtype=float)
    default = data.get("default")
    index = {tuple(np.round(p, 12) + 0.0): k for k, p in enumerate(pts)}

    def fn(i, point):
        k = index.get(tuple(np.round(np.atleast_1d(point), 12) + 0.0))
        if k is None:
            if default is None:
                raise KeyError(f"no reward entry for point {tuple(np.atleast_1d(point))}")
            return float(default)
        return float(values[k] if values.ndim == 1 else values[i, k])

    return fn


def _reward(cfg: dict, grid: GridSpec) -> RewardSpec:
    r = _need(cfg, "reward", "config")
    kind = _need(r, "kind", "reward")
    data = _need(r, "data", "reward")
    if kind == "table":
        fn = _table_reward(data, grid.num_steps)
    elif kind == "expression":
        ex = _expression(str(data), "reward.data")
        fn = lambda i, x: ex(i, x, grid.dt)  # noqa: E731
    else:
        raise ConfigError(f"reward.kind must be 'table' or 'expression', got {kind!r}")
    return RewardSpec(evaluator=fn, bound=float(_need(r, "bound_gamma", "reward")))


def solver_options(cfg: dict) -> SolverOptions:
    s = _need(cfg, "solver", "config")
    theta = s.get("theta")
    mode = s.get("mode", "neutral")
    if mode not in ("neutral", "sensitive"):
        raise ConfigError(f"solver.mode must be 'neutral' or 'sensitive', got {mode!r}")
    mutate = s.get("mutate")
    if mutate is not None and mutate not in MUTATIONS:
        raise ConfigError(f"unknown solver.mutate {mutate!r}")
    return SolverOptions(n_max=int(_need(s, "n_max", "solver")), tolerance=float(s.get("tolerance", 1e-12)),
                         mode=mode, theta=None if theta is None else float(theta), mutate=mutate)


def build_problem(cfg: dict) -> tuple[Problem, SolverOptions]:
    """Parse a config document. Raises ConfigError on malformed or missing fields."""
    try:
        opts = solver_options(cfg)
        grid = _grid(cfg)
        chain = _chain(cfg, grid)
        problem = Problem(grid=grid, chain=chain, impulses=_impulses(cfg), reward=_reward(cfg, grid),
                          n_max=opts.n_max)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return problem, opts


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
