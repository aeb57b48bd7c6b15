import math

import numpy as np
import pytest

from dftsotfs.analysis import papr
from dftsotfs.baselines import (UnsupportedCombination, WaveformKind, add_prefix, continuous_signal, demodulate,
                                frame_waveform, modulate, ofdm_channel, per_symbol_waveform, sense_with, strip_prefix,
                                symbol_period, time_matrix, transmit_sense)
from dftsotfs.channel import Mode, PathParams, geometry_to_path, paths_from
from dftsotfs.lattice import FrameParams, QamAlphabet, qam_map, vec
from dftsotfs.sensing import to_range_velocity

from conftest import crandn

KINDS = list(WaveformKind)
P = FrameParams(16, 8, 1.92e6, cp_len=4)


def bits_for(rng, params, alphabet):
    return rng.integers(0, 2, params.size * alphabet.bits_per_symbol, dtype=np.uint8)


class TestModulation:
    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("Q", [4, 16])
    def test_loopback(self, rng, kind, Q):
        a = QamAlphabet(Q)
        b = bits_for(rng, P, a)
        pilot = P.default_pilot(0.06) if kind.otfs_family else None
        assert np.array_equal(demodulate(kind, modulate(kind, b, P, a, pilot), P, a, pilot), b)

    def test_prefix_conventions(self, rng):
        S = crandn(rng, 16, 8)
        frame = add_prefix(WaveformKind.OTFS, S, 4)
        assert frame.size == 16 * 8 + 4 and np.array_equal(frame[:4], vec(S)[-4:])
        sym = add_prefix(WaveformKind.OFDM, S, 4).reshape((20, 8), order="F")
        assert np.array_equal(sym[:4], S[-4:])
        for kind in KINDS:
            assert np.array_equal(strip_prefix(kind, add_prefix(kind, S, 4), P), S)

    def test_otfs_plus_spreading_is_dfts_otfs(self, rng):
        X = crandn(rng, 16, 8)
        a = time_matrix(WaveformKind.OTFS, np.fft.fft(X, axis=1, norm="ortho"), P)
        b = time_matrix(WaveformKind.DFT_S_OTFS, X, P)
        assert np.array_equal(a, b)

    def test_ofdm_single_subcarrier(self):
        X = np.zeros((16, 8), dtype=complex)
        X[3] = 1.0
        S = time_matrix(WaveformKind.OFDM, X, P)
        ref = np.exp(2j * np.pi * 3 * np.arange(16) / 16) / 4
        assert np.allclose(S, ref[:, None])

    def test_dfts_ofdm_samples_are_symbols(self, rng):
        a = QamAlphabet(16)
        X = qam_map(bits_for(rng, P, a), a, 1.0, 16, 8).values
        S = time_matrix(WaveformKind.DFT_S_OFDM, X, P)
        assert np.max(np.abs(S - X)) < 1e-12
        assert papr(vec(S)) == pytest.approx(papr(vec(X)))

    def test_equal_mean_power(self, rng):
        X = crandn(rng, 16, 8)
        energies = [np.sum(np.abs(time_matrix(k, X, P)) ** 2) for k in KINDS]
        assert np.ptp(energies) < 1e-12 * energies[0]

    def test_pilot_only_for_otfs_family(self, rng):
        a = QamAlphabet(4)
        with pytest.raises(UnsupportedCombination):
            modulate(WaveformKind.OFDM, bits_for(rng, P, a), P, a, P.default_pilot(0.1))


class TestContinuous:
    def test_per_symbol_grid_hits_samples(self, rng):
        S = crandn(rng, 16, 8)
        u = per_symbol_waveform(S, 4, 2).reshape((4 * 18, 8), order="F")
        assert np.allclose(u[8::4], S)
        assert np.allclose(u[:8:4], S[-2:])

    def test_frame_waveform_hits_samples(self, rng):
        S = crandn(rng, 16, 8)
        u = frame_waveform(S, 4)
        assert np.allclose(np.abs(u[::4]), np.abs(vec(S)))

    def test_frame_prefix_continues_signal(self, rng):
        S = crandn(rng, 16, 8)
        with_cp = frame_waveform(S, 4, 3)
        body = frame_waveform(S, 4)
        assert np.allclose(with_cp[12:], body)
        # the prefix is the last samples up to the centring phase of the earlier time axis
        ratio = with_cp[:12] / body[-12:]
        assert np.allclose(ratio, ratio[0]) and abs(abs(ratio[0]) - 1) < 1e-12

    def test_dispatch(self, rng):
        S = crandn(rng, 16, 8)
        assert np.array_equal(continuous_signal(WaveformKind.OTFS, S, 2, 1), frame_waveform(S, 2, 1))
        assert np.array_equal(continuous_signal(WaveformKind.OFDM, S, 2, 1), per_symbol_waveform(S, 2, 1))


class TestOfdmChannel:
    def test_integer_static_delay_is_cyclic_within_symbol(self, rng):
        S = crandn(rng, 16, 8)
        out = ofdm_channel(paths_from([1], [2 * P.delay_resolution], [0.0]), S, P)
        assert np.allclose(out, np.roll(S, 2, axis=0))

    def test_doppler_ramp_on_absolute_time(self, rng):
        S = crandn(rng, 16, 8)
        nu = 1e4
        out = ofdm_channel(paths_from([1], [0.0], [nu]), S, P)
        t0 = 4 * P.T / 16
        assert out[0, 0] == pytest.approx(S[0, 0] * np.exp(2j * np.pi * nu * t0))
        assert out[0, 1] == pytest.approx(S[0, 1] * np.exp(2j * np.pi * nu * (symbol_period(P) + t0)))

    def test_delay_beyond_prefix(self, rng):
        with pytest.raises(ValueError):
            ofdm_channel(paths_from([1], [5 * P.delay_resolution], [0.0]), crandn(rng, 16, 8), P)


class TestSensing:
    @pytest.mark.parametrize("kind", KINDS)
    def test_static_target_recovered_noiselessly(self, kind):
        params = FrameParams(64, 16, 480e3, cp_len=8, f_c=0.3e12)
        rng = np.random.default_rng(8)
        a = QamAlphabet(4)
        X = qam_map(bits_for(rng, params, a), a, 1.0, 64, 16).values
        tau, nu = geometry_to_path(10.0, 0.0, params.f_c, Mode.ACTIVE, params)
        spec = paths_from([np.exp(0.4j)], [tau], [nu], mode=Mode.ACTIVE)
        y, x = transmit_sense(kind, X, spec, params, 0.0, rng)
        est = sense_with(kind, y, x, 1, params)
        r, _ = to_range_velocity(est, params.f_c, Mode.ACTIVE)
        resolution = 3e8 / (2 * params.bandwidth)
        assert abs(r[0] - 10.0) < resolution
