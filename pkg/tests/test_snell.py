import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delayimpulse import snell
from delayimpulse.model import ChainModel

NEG = -np.inf


def chain(P):
    P = np.asarray(P, dtype=float)
    return ChainModel(np.arange(P.shape[0], dtype=float), P, 0)


def random_chain(rng, S):
    P = rng.random((S, S)) + 0.05
    P /= P.sum(axis=1, keepdims=True)
    return chain(P)


SYM = chain([[0.5, 0.5], [0.5, 0.5]])
ONE = chain([[1.0]])


class TestAdditive:
    def test_no_obstacle_is_plain_sum(self):
        rng = np.random.default_rng(0)
        ch = random_chain(rng, 3)
        run = rng.random((5, 3, 2))
        V, region = snell.additive_snell(run, np.full_like(run, NEG), np.zeros((3, 2)), ch)
        ref = np.zeros((3, 2))
        for i in range(4, -1, -1):
            ref = run[i] + ch.transition @ ref
        assert np.allclose(V[0], ref, rtol=0, atol=1e-14)
        assert not region.mask.any()

    def test_big_obstacle_stops_immediately(self):
        # with no running reward the obstacle is attained at every step
        M = 10.0
        run = np.zeros((4, 2, 1))
        obs = np.full((4, 2, 1), M)
        V, region = snell.additive_snell(run, obs, np.zeros((2, 1)), SYM)
        assert np.all(V[:-1] == M)
        assert region.mask.all()

    def test_hand_example(self):
        run = np.array([1.0, 1.0]).reshape(2, 1, 1)
        obs = np.array([1.5, NEG]).reshape(2, 1, 1)
        V, region = snell.additive_snell(run, obs, np.zeros((1, 1)), ONE)
        assert V[1, 0, 0] == 1.0 and V[0, 0, 0] == 2.0
        assert not region.mask[0, 0, 0]

    def test_errors(self):
        with pytest.raises(snell.ShapeError):
            snell.additive_snell(np.zeros((2, 2, 1)), np.zeros((3, 2, 1)), np.zeros((2, 1)), SYM)
        with pytest.raises(ValueError, match="NaN"):
            snell.additive_snell(np.full((2, 2, 1), np.nan), np.zeros((2, 2, 1)), np.zeros((2, 1)), SYM)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 6))
    def test_dominance_and_smallest(self, seed, S, N):
        rng = np.random.default_rng(seed)
        ch = random_chain(rng, S)
        C = 2
        run = rng.random((N, S, C))
        obs = np.where(rng.random((N, S, C)) < 0.3, NEG, rng.random((N, S, C)) * 3)
        term = rng.random((S, C))
        V, region = snell.additive_snell(run, obs, term, ch)
        fin = np.isfinite(obs)
        assert np.all(V[:-1][fin] >= obs[fin])
        for i in range(N):
            assert np.all(V[i] >= run[i] + ch.transition @ V[i + 1] - 1e-12)
        # any feasible dominating table is above V
        W = np.empty_like(V)
        W[N] = term + rng.random((S, C))
        for i in range(N - 1, -1, -1):
            W[i] = np.maximum(obs[i], run[i] + ch.transition @ W[i + 1]) + rng.random((S, C)) * 0.5
        assert np.all(V <= W + 1e-12)
        # region marks exactly where the obstacle is attained
        with np.errstate(invalid="ignore"):
            above = V[:-1] > obs + snell.stop_tolerance(V[:-1])
        assert not np.any(region.mask & above)
        assert np.all(np.abs(V[:-1][region.mask] - obs[region.mask]) <= snell.stop_tolerance(V[:-1])[region.mask])

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        ch = random_chain(rng, 6)
        run = rng.random((20, 6, 7))
        obs = rng.random((20, 6, 7)) * 5
        a, _ = snell.additive_snell(run, obs, np.zeros((6, 7)), ch)
        b, _ = snell.additive_snell(run.copy(), obs.copy(), np.zeros((6, 7)), ch)
        assert a.tobytes() == b.tobytes()


class TestMultiplicative:
    def test_unit_factor_no_obstacle(self):
        g = np.ones((5, 2, 3))
        V, _ = snell.multiplicative_snell(g, np.full_like(g, NEG), np.ones((2, 3)), SYM)
        assert np.all(V == 1.0)

    def test_obstacle_at_step_zero(self):
        g = np.ones((4, 2, 1))
        obs = np.full_like(g, NEG)
        obs[0] = 2.0
        V, region = snell.multiplicative_snell(g, obs, np.ones((2, 1)), SYM)
        assert np.all(V[0] == 2.0) and np.all(V[1:] == 1.0)
        assert region.mask[0].all()

    def test_single_fold(self):
        g = np.full((1, 1, 1), math.exp(0.3))
        V, _ = snell.multiplicative_snell(g, np.full_like(g, NEG), np.ones((1, 1)), ONE)
        assert V[0, 0, 0] == pytest.approx(math.exp(0.3), rel=1e-15)

    def test_single_state_exact_power(self):
        a, dt, N = 0.7, 0.1, 25
        g = np.full((N, 1, 1), math.exp(a * dt))
        V, _ = snell.multiplicative_snell(g, np.full_like(g, NEG), np.ones((1, 1)), ONE)
        assert V[0, 0, 0] == pytest.approx(math.exp(a * dt * N), rel=1e-13)

    def test_factor_below_one_rejected(self):
        g = np.full((2, 2, 1), 0.99)
        with pytest.raises(ValueError):
            snell.multiplicative_snell(g, np.full_like(g, NEG), np.ones((2, 1)), SYM)


def dense_fold(P, rewards, boundary, i, d):
    """Reference: sum_j P^{j-i} r_j + P^d boundary with explicit matrix powers."""
    out = np.linalg.matrix_power(P, d) @ boundary
    for j in range(i, i + d):
        out = out + np.linalg.matrix_power(P, j - i) @ rewards[j]
    return out


class TestFolds:
    def test_one_step_zero_reward(self):
        b = np.array([[1.0, 2.0], [3.0, 5.0]])
        out = snell.delay_fold_additive(SYM, np.zeros((3, 2, 2)), b, 1, 1)
        assert np.allclose(out, SYM.transition @ b)

    def test_identity_chain(self):
        ch = chain(np.eye(3))
        out = snell.delay_fold_additive(ch, np.ones((5, 3, 1)), np.full((3, 1), 5.0), 1, 3)
        assert np.all(out == 8.0)

    def test_two_state_two_steps(self):
        out = snell.delay_fold_additive(SYM, np.zeros((2, 2, 1)), np.array([[0.0], [1.0]]), 0, 2)
        assert np.allclose(out, 0.5)

    def test_window_exceeds_horizon(self):
        with pytest.raises(ValueError):
            snell.delay_fold_additive(SYM, np.zeros((3, 2, 1)), np.zeros((2, 1)), 2, 2)
        with pytest.raises(ValueError):
            snell.delay_fold_multiplicative(SYM, np.ones((3, 2, 1)), np.zeros((2, 1)), 1, 3)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 5))
    def test_matches_dense_power(self, seed, S, d):
        rng = np.random.default_rng(seed)
        ch = random_chain(rng, S)
        N = d + 3
        rewards = rng.random((N, S, 2))
        b = rng.random((S, 2))
        i = int(rng.integers(0, N - d + 1))
        out = snell.delay_fold_additive(ch, rewards, b, i, d)
        assert np.allclose(out, dense_fold(ch.transition, rewards, b, i, d), rtol=0, atol=1e-12)

    def test_multiplicative_reduces_to_additive(self):
        rng = np.random.default_rng(3)
        ch = random_chain(rng, 4)
        b = rng.random((4, 3))
        m = snell.delay_fold_multiplicative(ch, np.ones((6, 4, 3)), b, 2, 3)
        a = snell.delay_fold_additive(ch, np.zeros((6, 4, 3)), b, 2, 3)
        assert np.allclose(m, a, rtol=0, atol=1e-15)

    def test_multiplicative_identity_product(self):
        ch = chain(np.eye(2))
        g = np.empty((2, 2, 1))
        g[0], g[1] = math.exp(0.4), math.exp(0.9)
        out = snell.delay_fold_multiplicative(ch, g, np.full((2, 1), 3.0), 0, 2)
        assert np.allclose(out, math.exp(1.3) * 3.0, rtol=1e-15)

    def test_multiplicative_two_state_one_step(self):
        g = np.array([[math.e], [1.0]]).reshape(1, 2, 1)
        out = snell.delay_fold_multiplicative(SYM, g, np.ones((2, 1)), 0, 1)
        assert np.allclose(out[:, 0], [math.e, 1.0], rtol=1e-15)
