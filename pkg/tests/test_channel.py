import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dftsotfs.channel import (C0, CddsOperator, ChannelSpec, Mode, PathParams, add_awgn, apply_channel,
                              apply_channel_adjoint, apply_gamma, apply_theta, cyclic_shift_matrix,
                              dd_circular_shift_model, default_cp_len, delay_index, dense_channel, dense_gamma,
                              dense_theta, geometry_to_path, integer_reference_channel, paths_from, random_channel)
from dftsotfs.lattice import Domain, FrameParams, Grid, unvec, vec
from dftsotfs.modem import heisenberg, isfft, sfft, wigner

from conftest import crandn

P84 = FrameParams(8, 4, 1.92e6)


def random_path(rng, params):
    return PathParams(complex(crandn(rng)), rng.uniform(0, params.T), rng.uniform(-0.5, 0.5) / params.T)


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


class TestGeometry:
    def test_active_range(self):
        tau, _ = geometry_to_path(10.0, 0.0, 0.3e12, Mode.ACTIVE)
        assert tau == pytest.approx(66.713e-9, abs=1e-12)

    def test_active_velocity(self):
        _, nu = geometry_to_path(0.0, 30.0, 0.3e12, Mode.ACTIVE)
        assert nu == pytest.approx(60.04e3, rel=1e-4)

    def test_passive(self):
        tau, nu = geometry_to_path(10.0, 0.0, 0.3e12, Mode.PASSIVE)
        assert tau == pytest.approx(10.0 / C0) and nu == 0.0

    def test_ambiguity_errors(self):
        params = FrameParams(64, 16, 1.92e6)
        with pytest.raises(ValueError, match="unambiguous"):
            geometry_to_path(100.0, 0.0, 0.3e12, Mode.ACTIVE, params)
        with pytest.raises(ValueError, match="unambiguous"):
            geometry_to_path(1.0, 2000.0, 0.3e12, Mode.ACTIVE, params)

    def test_default_cp_len(self):
        params = FrameParams(64, 16, 1.92e6)
        assert default_cp_len(3 / (64 * 1.92e6), params) == 3
        assert default_cp_len(3.2 / (64 * 1.92e6), params) == 4

    def test_delay_index(self):
        assert delay_index(0.0, P84) == 0
        assert delay_index(0.3 * P84.delay_resolution, P84) == 1
        assert delay_index(2 * P84.delay_resolution, P84) == 2


class TestPathChecks:
    def test_ranges(self):
        with pytest.raises(ValueError):
            PathParams(1, P84.T, 0).check(P84)
        with pytest.raises(ValueError):
            PathParams(1, 0, 0.5 / P84.T).check(P84)
        PathParams(1, 0, -0.5 / P84.T).check(P84)

    def test_resolvability(self):
        dt, dn = P84.delay_resolution, P84.doppler_resolution
        assert paths_from([1, 1], [0, dt], [0, 0]).is_resolvable(P84)
        assert paths_from([1, 1], [0, 0], [0, dn]).is_resolvable(P84)
        assert not paths_from([1, 1], [0, 0.5 * dt], [0, 0.5 * dn]).is_resolvable(P84)


class TestTheta:
    def test_identity_path(self, rng):
        s = crandn(rng, 32)
        # exact up to FFT round-off
        assert np.max(np.abs(apply_theta(PathParams(1, 0.0, 0.0), s, P84) - s)) < 1e-15

    def test_one_sample_delay(self, rng):
        s = crandn(rng, 32)
        out = apply_theta(PathParams(1, P84.delay_resolution, 0.0), s, P84)
        assert np.max(np.abs(out - np.roll(s, 1))) < 1e-12

    def test_matches_dense(self, rng):
        for _ in range(20):
            path = random_path(rng, P84)
            s = crandn(rng, 32)
            assert rel(apply_theta(path, s, P84), dense_theta(path, P84) @ s) < 1e-10

    def test_norm_preserved(self, rng):
        for _ in range(20):
            s = crandn(rng, 32)
            assert abs(np.linalg.norm(apply_theta(random_path(rng, P84), s, P84)) - np.linalg.norm(s)) < 1e-12

    def test_stacked_input(self, rng):
        path = random_path(rng, P84)
        S = crandn(rng, 32, 3)
        out = CddsOperator(ChannelSpec((path,)), P84).theta(0, S)
        for j in range(3):
            assert np.max(np.abs(out[:, j] - apply_theta(path, S[:, j], P84))) < 1e-14

    def test_length_checked(self):
        with pytest.raises(ValueError):
            apply_theta(PathParams(1, 0, 0), np.zeros(31), P84)


class TestChannel:
    def test_identity(self, rng):
        s = crandn(rng, 32)
        assert np.allclose(apply_channel(paths_from([1], [0], [0]), s, P84), s)

    def test_cancelling_paths(self, rng):
        a = complex(crandn(rng))
        spec = paths_from([a, -a], [1e-8, 1e-8], [3e3, 3e3])
        assert np.max(np.abs(apply_channel(spec, crandn(rng, 32), P84))) < 1e-14

    def test_matches_dense(self, rng):
        spec = ChannelSpec(tuple(random_path(rng, P84) for _ in range(3)))
        s = crandn(rng, 32)
        assert rel(apply_channel(spec, s, P84), dense_channel(spec, P84) @ s) < 1e-10

    def test_adjoint_dense_and_inner_product(self, rng):
        spec = ChannelSpec(tuple(random_path(rng, P84) for _ in range(3)))
        s, r = crandn(rng, 32), crandn(rng, 32)
        H = dense_channel(spec, P84)
        assert rel(apply_channel_adjoint(spec, r, P84), H.conj().T @ r) < 1e-10
        lhs = np.vdot(apply_channel(spec, s, P84), r)
        rhs = np.vdot(s, apply_channel_adjoint(spec, r, P84))
        assert abs(lhs - rhs) < 1e-10

    def test_identity_adjoint(self, rng):
        r = crandn(rng, 32)
        assert np.allclose(apply_channel_adjoint(paths_from([1], [0], [0]), r, P84), r)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_linearity(self, seed):
        rng = np.random.default_rng(seed)
        op = CddsOperator(ChannelSpec(tuple(random_path(rng, P84) for _ in range(2))), P84)
        x, y = crandn(rng, 32), crandn(rng, 32)
        a, b = complex(crandn(rng)), complex(crandn(rng))
        lhs = op.apply(a * x + b * y)
        assert np.max(np.abs(lhs - (a * op.apply(x) + b * op.apply(y)))) < 1e-12 * (1 + np.max(np.abs(lhs)))
        lhs = op.apply_dd(a * x + b * y)
        assert np.max(np.abs(lhs - (a * op.apply_dd(x) + b * op.apply_dd(y)))) < 1e-12 * (1 + np.max(np.abs(lhs)))

    def test_dense_guard(self):
        with pytest.raises(ValueError):
            dense_theta(PathParams(1, 0, 0), FrameParams(16, 8, 1e6))


class TestGamma:
    def test_identity(self, rng):
        x = crandn(rng, 32)
        assert np.allclose(apply_gamma(PathParams(1, 0, 0), x, P84), x)

    def test_matches_dense(self, rng):
        for _ in range(20):
            path = random_path(rng, P84)
            x = crandn(rng, 32)
            assert rel(apply_gamma(path, x, P84), dense_gamma(path, P84) @ x) < 1e-10

    def test_matches_modem_chain(self, rng):
        path = random_path(rng, P84)
        X = crandn(rng, 8, 4)
        s = heisenberg(isfft(Grid(X, Domain.DD)))
        y = sfft(wigner(apply_theta(path, s, P84), 8, 4)).values
        assert np.max(np.abs(vec(y) - apply_gamma(path, vec(X), P84))) < 1e-12

    def test_operator_dd_adjoint(self, rng):
        op = CddsOperator(ChannelSpec(tuple(random_path(rng, P84) for _ in range(3))), P84)
        x, y = crandn(rng, 32), crandn(rng, 32)
        assert abs(np.vdot(op.apply_dd(x), y) - np.vdot(x, op.adjoint_dd(y))) < 1e-10


class TestIntegerCollapse:
    def test_identity(self):
        assert np.array_equal(integer_reference_channel(0, 0, P84), np.eye(32))

    @pytest.mark.parametrize("l,k", [(0, 1), (1, 0), (3, -2), (7, 1), (5, -1)])
    def test_theta_equals_reference(self, l, k):
        path = PathParams(1, l / (P84.M * P84.delta_f), k / (P84.N * P84.T))
        assert np.max(np.abs(dense_theta(path, P84) - integer_reference_channel(l, k, P84))) < 1e-12

    def test_shift_order(self):
        Pi = cyclic_shift_matrix(32)
        assert np.array_equal(np.linalg.matrix_power(Pi, 32), np.eye(32))


class TestAwgn:
    def test_zero_variance(self, rng):
        s = crandn(rng, 16)
        assert np.array_equal(add_awgn(s, 0.0, rng), s)

    def test_variance(self):
        w = add_awgn(np.zeros(1_000_000), 0.3, np.random.default_rng(5))
        assert np.mean(np.abs(w) ** 2) == pytest.approx(0.3, rel=0.01)
        assert np.var(w.real) == pytest.approx(0.15, rel=0.01)

    def test_seeded(self):
        a = add_awgn(np.zeros(8), 1.0, np.random.default_rng(3))
        b = add_awgn(np.zeros(8), 1.0, np.random.default_rng(3))
        assert np.array_equal(a, b)

    def test_negative(self, rng):
        with pytest.raises(ValueError):
            add_awgn(np.zeros(4), -1.0, rng)


class TestCircularShiftModel:
    def test_identity(self, rng):
        X = crandn(rng, 8, 4)
        assert np.allclose(dd_circular_shift_model(X, 0, 0), X)

    def test_pure_delay_rows(self, rng):
        X = crandn(rng, 8, 4)
        Y = dd_circular_shift_model(X, 2, 0)
        assert np.allclose(Y[2:], X[:-2])

    @pytest.mark.parametrize("l,k", [(2, 0), (3, 1), (2, -1), (5, 2)])
    def test_against_exact_chain(self, rng, l, k):
        X = crandn(rng, 8, 4)
        path = PathParams(1, l / (8 * P84.delta_f), k / (4 * P84.T))
        exact = unvec(apply_gamma(path, vec(X), P84), 8, 4)
        model = dd_circular_shift_model(X, l, k) * np.exp(2j * np.pi * l * k / 32)
        # rows that do not wrap are exact; wrapped rows within the stated approximation
        assert np.max(np.abs(exact[l:] - model[l:])) < 1e-12
        assert np.all(np.abs(exact[:l] - model[:l]) <= (10 / 4) * np.abs(model[:l]))


class TestRandomChannel:
    def test_power_and_support(self):
        params = FrameParams(64, 16, 1.92e6, cp_len=8)
        rng = np.random.default_rng(0)
        gains = []
        for _ in range(2000):
            spec = random_channel(params, 3, rng, max_doppler=params.doppler_resolution)
            assert spec.is_resolvable(params)
            assert all(0 <= p.tau < 8 * params.delay_resolution for p in spec.paths)
            assert all(abs(p.nu) <= params.doppler_resolution for p in spec.paths)
            gains.append(np.sum(np.abs(spec.alphas) ** 2))
        assert np.mean(gains) == pytest.approx(1.0, abs=0.05)
