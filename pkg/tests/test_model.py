import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delayimpulse import instances
from delayimpulse.config import build_problem, load_config
from delayimpulse.model import (ChainModel, ConfigError, GridSpec, ImpulseSpec, RewardSpec, build_lattice,
                                build_random_walk_chain, validate)


def _imp(vectors, k=1.0):
    v = np.asarray(vectors, dtype=float)
    return ImpulseSpec(v, k, np.zeros(v.shape[0]))


def _point_set(lat):
    return {tuple(p) for p in lat.points}


class TestLattice:
    def test_single_impulse(self):
        lat = build_lattice(_imp([[1.0]]), 2)
        assert _point_set(lat) == {(0.0,), (1.0,), (2.0,)}

    def test_plus_minus_one_step(self):
        lat = build_lattice(_imp([[1.0], [-1.0]]), 1)
        assert _point_set(lat) == {(0.0,), (1.0,), (-1.0,)}

    def test_dedup(self):
        lat = build_lattice(_imp([[1.0], [-1.0]]), 2)
        assert sorted(p[0] for p in lat.points) == [-2.0, -1.0, 0.0, 1.0, 2.0]

    def test_origin_and_shift(self):
        lat = build_lattice(_imp([[1.0], [-1.0]]), 2)
        assert lat.origin == 0 and np.all(lat.points[0] == 0)
        for j in range(lat.num_points):
            for b in range(2):
                k = lat.shift_index[j, b]
                if k >= 0:
                    assert np.allclose(lat.points[k], lat.points[j] + [[1.0], [-1.0]][b])
        # every point reachable with <= n_max - 1 impulses can be shifted
        for j in np.flatnonzero(lat.depth <= 1):
            assert np.all(lat.shift_index[j] >= 0)
        with pytest.raises(KeyError):
            lat.shift(int(np.argmax(lat.points[:, 0])), 0)

    def test_zero_budget(self):
        lat = build_lattice(_imp([[1.0, 2.0]]), 0)
        assert lat.num_points == 1

    def test_float_sums_dedup(self):
        lat = build_lattice(_imp([[0.1], [0.2], [0.3]]), 2)
        # 0.1 + 0.2 and 0.3 must be one point
        assert len(_point_set(lat)) == len({round(p[0], 9) for p in lat.points})

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(-3, 3), st.integers(-3, 3)), min_size=1, max_size=4, unique=True),
           st.integers(0, 3), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, moves, n_max, rnd):
        shuffled = list(moves)
        rnd.shuffle(shuffled)
        a = build_lattice(_imp(moves), n_max)
        b = build_lattice(_imp(shuffled), n_max)
        assert _point_set(a) == _point_set(b)


class TestRandomWalk:
    grid = GridSpec(dt=1.0, num_steps=5, delay_steps=1, discount_rate=0.1)

    def test_degenerate_diffusion_is_identity(self):
        ch = build_random_walk_chain(lambda i, x: 0.0, lambda i, x: 0.0, 2.0, self.grid, [0, 1, 2, 3])
        assert np.array_equal(ch.transition, np.eye(4))
        assert ch.initial_state == 2

    def test_unit_grid_half_half(self):
        ch = build_random_walk_chain(lambda i, x: 0.0, lambda i, x: 1.0, 0.0, self.grid, [-2, -1, 0, 1, 2])
        for j in (1, 2, 3):
            assert ch.transition[j, j - 1] == pytest.approx(0.5)
            assert ch.transition[j, j + 1] == pytest.approx(0.5)
            assert ch.transition[j, j] == pytest.approx(0.0, abs=1e-15)
        # reflecting ends
        assert ch.transition[0, 1] == pytest.approx(1.0)
        assert ch.transition[4, 3] == pytest.approx(1.0)

    def test_negative_probability_rejected(self):
        with pytest.raises(ConfigError, match="negative"):
            build_random_walk_chain(lambda i, x: 0.0, lambda i, x: 1.0, 0.0, self.grid, [-1, -0.5, 0, 0.5, 1])

    def test_x0_must_be_on_grid(self):
        with pytest.raises(ConfigError):
            build_random_walk_chain(lambda i, x: 0.0, lambda i, x: 1.0, 0.3, self.grid, [0, 1, 2])

    def test_sampled_moments(self):
        grid = GridSpec(dt=0.1, num_steps=5, delay_steps=1, discount_rate=0.1)
        xs = np.linspace(-2, 2, 9)
        drift = lambda i, x: 0.5 - 0.3 * x  # noqa: E731
        vol = lambda i, x: 0.8 + 0.1 * abs(x)  # noqa: E731
        ch = build_random_walk_chain(drift, vol, 0.0, grid, xs)
        rng = np.random.default_rng(11)
        n = 100_000
        for j in range(1, len(xs) - 1):
            nxt = rng.choice(len(xs), size=n, p=ch.transition[j])
            inc = xs[nxt] - xs[j]
            mu, var = drift(0, xs[j]) * grid.dt, vol(0, xs[j]) ** 2 * grid.dt
            assert abs(inc.mean() - mu) <= 3 * np.sqrt(var / n)
            m4 = np.mean((inc - mu) ** 4)
            assert abs(inc.var() - var) <= 3 * np.sqrt((m4 - var ** 2) / n)


class TestValidate:
    def _parts(self, **kw):
        P = kw.get("P", [[0.5, 0.5], [0.5, 0.5]])
        h = kw.get("h", lambda i, y: 1.0)
        return (GridSpec(1.0, 4, 1, 0.5), ChainModel([0.0, 1.0], P, 0), _imp([[1.0]], kw.get("k", 1.0)),
                RewardSpec(h, 1.0), 1)

    def test_well_formed(self):
        rep = validate(*self._parts())
        assert rep.violations == []
        assert rep.tail_bound == pytest.approx(1.0 / 0.5 * np.exp(-0.5 * 4))

    def test_row_sum(self):
        rep = validate(*self._parts(P=[[0.5, 0.4], [0.5, 0.5]]))
        assert any("transition not stochastic at row 0" in v for v in rep.violations)

    def test_reward_above_bound(self):
        rep = validate(*self._parts(h=lambda i, y: 1.1 if (i == 2 and y[0] == 2.0) else 0.5))
        assert len(rep.violations) == 1
        assert "step 2" in rep.violations[0] and "(2.0,)" in rep.violations[0]

    def test_zero_fixed_cost_rejected(self):
        rep = validate(*self._parts(k=0.0))
        assert any("fixed_cost" in v for v in rep.violations)

    def test_aggregates_and_never_raises(self):
        grid = GridSpec(-1.0, 0, 0, -0.1)
        chain = ChainModel([0.0], [[2.0]], 3)

        def boom(i, y):
            raise RuntimeError("nope")

        rep = validate(grid, chain, _imp([[1.0]], 0.0), RewardSpec(boom, 1.0), 1)
        assert len(rep.violations) >= 5

    def test_pure(self):
        parts = self._parts(h=lambda i, y: 1.1 if i == 1 else 0.0)
        assert validate(*parts) == validate(*parts)

    def test_grid_delay(self):
        rep = validate(GridSpec(1.0, 2, 3, 0.1), *self._parts()[1:])
        assert any("delay_steps" in v for v in rep.violations)


class TestConfig:
    def test_e1_round_trip(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(instances.e1_config()))
        problem, opts = build_problem(load_config(path))
        assert problem.validate().ok
        assert opts.n_max == 2 and opts.mode == "neutral"
        assert problem.reward.evaluator(3, np.array([5.0])) == pytest.approx(2.0 * 1.3)

    def test_missing_field_named(self):
        cfg = instances.e1_config()
        del cfg["grid"]["discount_rate"]
        with pytest.raises(ConfigError, match="grid.discount_rate"):
            build_problem(cfg)

    def test_table_reward_and_random_walk(self):
        cfg = instances.e1_config()
        cfg["chain"] = {"random_walk": {"drift": 0.0, "volatility": "1.0", "x0": 0.0,
                                        "space_grid": [-2, -1, 0, 1, 2]}}
        cfg["reward"] = {"kind": "table", "bound_gamma": 1.0,
                         "data": {"points": [0, 1, 2], "values": [0.2, 0.5, 1.0], "default": 0.0}}
        problem, _ = build_problem(cfg)
        assert problem.chain.num_states == 5 and problem.chain.initial_state == 2
        assert problem.reward.evaluator(0, np.array([1.0])) == 0.5
        assert problem.reward.evaluator(0, np.array([-7.0])) == 0.0
        assert problem.validate().ok

    def test_bad_expression(self):
        cfg = instances.e1_config()
        cfg["reward"]["data"] = "x +* 2"
        with pytest.raises(ConfigError):
            build_problem(cfg)

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.json")


def test_discrete_bound_exceeds_continuous_on_coarse_grid():
    # left-endpoint sums overshoot (gamma / r) e^{-r t} once r dt is large and the horizon long
    g = GridSpec(dt=1.0, num_steps=40, delay_steps=1, discount_rate=1.0)
    assert not g.left_rule_within_bound()
    assert g.discrete_value_bound(1.0)[0] > g.value_bound(1.0)[0]
    fine = GridSpec(dt=0.01, num_steps=40, delay_steps=1, discount_rate=1.0)
    assert fine.left_rule_within_bound()
    assert np.all(fine.discrete_value_bound(1.0) <= fine.value_bound(1.0))
