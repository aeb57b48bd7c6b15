import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dftsotfs.lattice import (Domain, FrameParams, Grid, PilotConfig, QamAlphabet, build_pilot_grid, dft_despread,
                              dft_spread, qam_demap, qam_map, superimpose, unvec, vec)

from conftest import crandn


def direct_spread(X):
    M, N = X.shape
    n = np.arange(N)
    out = np.zeros_like(X, dtype=complex)
    for l in range(M):
        for k in range(N):
            out[l, k] = np.sum(X[l] * np.exp(-2j * np.pi * n * k / N)) / math.sqrt(N)
    return out


def direct_despread(X):
    M, N = X.shape
    k = np.arange(N)
    out = np.zeros_like(X, dtype=complex)
    for l in range(M):
        for n in range(N):
            out[l, n] = np.sum(X[l] * np.exp(2j * np.pi * n * k / N)) / math.sqrt(N)
    return out


class TestFrameParams:
    def test_derived_quantities(self):
        p = FrameParams(128, 32, 1.92e6)
        assert p.T * p.delta_f == 1.0
        assert p.frame_duration == pytest.approx(32 / 1.92e6)
        assert p.bandwidth == pytest.approx(128 * 1.92e6)
        assert p.default_pilot(0.06) == PilotConfig(64, 16, 0.06)

    @pytest.mark.parametrize("kw", [dict(M=1), dict(N=1), dict(delta_f=0.0), dict(cp_len=-1),
                                    dict(cp_len=32), dict(L=0)])
    def test_invalid(self, kw):
        base = dict(M=8, N=4, delta_f=1e6)
        with pytest.raises(ValueError):
            FrameParams(**{**base, **kw})


class TestQam:
    @pytest.mark.parametrize("Q", [4, 16, 64])
    def test_unit_energy(self, Q):
        a = QamAlphabet(Q)
        assert abs(np.mean(np.abs(a.points) ** 2) - 1) < 1e-12
        assert len(set(np.round(a.points, 12))) == Q

    @pytest.mark.parametrize("Q", [4, 16, 64])
    def test_gray_neighbours_differ_in_one_bit(self, Q):
        a = QamAlphabet(Q)
        labels = a.labels()
        d = a.min_distance
        pairs = 0
        for i, j in itertools.combinations(range(Q), 2):
            if abs(abs(a.points[i] - a.points[j]) - d) < 1e-9:
                assert np.sum(labels[i] != labels[j]) == 1
                pairs += 1
        side = int(math.isqrt(Q))
        assert pairs == 2 * side * (side - 1)

    def test_four_qam_examples(self):
        a = QamAlphabet(4)
        g = qam_map(np.array([0, 0, 1, 1] + [0] * 60, dtype=np.uint8), a, 1.0, 8, 4)
        assert g.domain is Domain.DATA
        assert g.values[0, 0] == pytest.approx((1 + 1j) / math.sqrt(2))
        assert g.values[1, 0] == pytest.approx((-1 - 1j) / math.sqrt(2))

    def test_sixteen_qam_full_alphabet_mean_power(self):
        a = QamAlphabet(16)
        bits = a.labels().ravel()
        g = qam_map(np.tile(bits, 2), a, 0.94, 8, 4)
        assert np.mean(np.abs(g.values) ** 2) == pytest.approx(0.94, abs=1e-12)

    def test_length_error(self):
        with pytest.raises(ValueError):
            qam_map(np.zeros(10, dtype=np.uint8), QamAlphabet(4), 1.0, 8, 4)

    def test_unsupported_order(self):
        with pytest.raises(ValueError):
            QamAlphabet(8)

    @settings(max_examples=50, deadline=None)
    @given(st.sampled_from([4, 16, 64]), st.floats(0.05, 1.0), st.integers(0, 2**32 - 1))
    def test_demap_inverts_map(self, Q, sd2, seed):
        a = QamAlphabet(Q)
        bits = np.random.default_rng(seed).integers(0, 2, 8 * 4 * a.bits_per_symbol, dtype=np.uint8)
        assert np.array_equal(qam_demap(qam_map(bits, a, sd2, 8, 4), a, sd2), bits)

    def test_small_perturbation_keeps_bits(self, rng):
        a = QamAlphabet(16)
        bits = rng.integers(0, 2, 8 * 4 * 4, dtype=np.uint8)
        g = qam_map(bits, a, 1.0, 8, 4).values
        noise = crandn(rng, 8, 4)
        noise *= 0.49 * a.min_distance / np.abs(noise)
        assert np.array_equal(qam_demap(g + noise, a, 1.0), bits)

    def test_decisions_match_exhaustive_search(self, rng):
        a = QamAlphabet(64)
        y = crandn(rng, 500) * 1.2
        brute = [min(range(64), key=lambda q: abs(v - a.points[q])) for v in y]
        assert np.array_equal(qam_demap(y, a, 1.0), a.labels()[brute].ravel())


class TestSpreading:
    def test_constant_row(self):
        X = np.ones((2, 8), dtype=complex)
        out = dft_spread(Grid(X, Domain.DATA)).values
        assert np.allclose(out[:, 0], math.sqrt(8)) and np.allclose(out[:, 1:], 0)

    def test_impulse_row(self):
        X = np.zeros((2, 8), dtype=complex)
        X[:, 0] = 1
        assert np.allclose(dft_spread(Grid(X, Domain.DATA)).values, 1 / math.sqrt(8))

    def test_matches_direct_sums(self, rng):
        X = crandn(rng, 8, 4)
        assert np.max(np.abs(dft_spread(Grid(X, Domain.DATA)).values - direct_spread(X))) < 1e-12
        assert np.max(np.abs(dft_despread(Grid(X, Domain.DD)).values - direct_despread(X))) < 1e-12

    def test_zero_grid(self):
        assert not np.any(dft_despread(Grid(np.zeros((4, 4)), Domain.DD)).values)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 16), st.integers(2, 16), st.integers(0, 2**32 - 1))
    def test_parseval_and_round_trip(self, M, N, seed):
        X = crandn(np.random.default_rng(seed), M, N)
        Y = dft_spread(Grid(X, Domain.DATA))
        assert abs(np.linalg.norm(Y.values) - np.linalg.norm(X)) < 1e-12 * max(1, np.linalg.norm(X))
        assert np.max(np.abs(dft_despread(Y).values - X)) < 1e-12

    def test_domain_enforced(self):
        with pytest.raises(ValueError):
            dft_spread(Grid(np.zeros((2, 2)), Domain.DD))


class TestPilot:
    def test_amplitude(self):
        g = build_pilot_grid(FrameParams(64, 16, 1e6), PilotConfig(32, 8, 0.01)).values
        assert g[32, 8] == pytest.approx(3.2)
        assert np.count_nonzero(g) == 1

    def test_zero_power(self):
        assert not np.any(build_pilot_grid(FrameParams(8, 4, 1e6), PilotConfig(0, 0, 0.0)).values)

    def test_energy(self):
        g = build_pilot_grid(FrameParams(128, 32, 1e6), PilotConfig(64, 16, 0.06)).values
        assert np.sum(np.abs(g) ** 2) == pytest.approx(245.76)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            build_pilot_grid(FrameParams(8, 4, 1e6), PilotConfig(8, 0, 0.1))

    def test_power_range(self):
        with pytest.raises(ValueError):
            PilotConfig(0, 0, 1.0)


class TestSuperimpose:
    def test_identities(self, rng):
        X = Grid(crandn(rng, 8, 4), Domain.DD)
        Z = Grid(np.zeros((8, 4)), Domain.DD)
        assert np.array_equal(superimpose(X, Z).values, X.values)
        assert np.array_equal(superimpose(Z, X).values, X.values)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            superimpose(Grid(np.zeros((8, 4)), Domain.DD), Grid(np.zeros((4, 8)), Domain.DD))

    def test_mean_frame_power(self, rng):
        params = FrameParams(8, 4, 1e6)
        a = QamAlphabet(4)
        X_p = build_pilot_grid(params, params.default_pilot(0.06))
        powers = []
        for _ in range(10_000):
            bits = rng.integers(0, 2, 64, dtype=np.uint8)
            X = superimpose(dft_spread(qam_map(bits, a, 0.94, 8, 4)), X_p)
            powers.append(np.mean(np.abs(X.values) ** 2))
        assert np.mean(powers) == pytest.approx(1.0, abs=4 * np.std(powers) / 100)


def test_vec_is_column_major():
    X = np.arange(6).reshape(2, 3)
    assert list(vec(X)) == [0, 3, 1, 4, 2, 5]
    assert np.array_equal(unvec(vec(X), 2, 3), X)
