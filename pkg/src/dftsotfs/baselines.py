"""Reference waveforms sharing the channel, metrics and sensing harness.

OTFS-family frames carry one cyclic prefix per frame and pass through the
CDDS operator; OFDM-family frames carry one prefix per symbol and pass
through a per-symbol physical model that keeps the within-symbol Doppler
ramp (and hence inter-carrier interference).
"""

from __future__ import annotations

import enum
import math

import numpy as np

from .channel import CddsOperator, ChannelSpec
from .lattice import FrameParams, PilotConfig, QamAlphabet, build_pilot_grid, qam_demap, qam_map, unvec, vec
from .sensing import EstimationResult, SearchRegion, TpeConfig, golden_search_2d, tpe_estimate


class WaveformKind(enum.Enum):
    OFDM = "ofdm"
    DFT_S_OFDM = "dft-s-ofdm"
    OTFS = "otfs"
    DFT_S_OTFS = "dft-s-otfs"

    @property
    def otfs_family(self) -> bool:
        return self in (WaveformKind.OTFS, WaveformKind.DFT_S_OTFS)

    @property
    def spread(self) -> bool:
        return self in (WaveformKind.DFT_S_OFDM, WaveformKind.DFT_S_OTFS)


class UnsupportedCombination(ValueError):
    pass


def _pilot_values(kind: WaveformKind, params: FrameParams, pilot: PilotConfig | None) -> np.ndarray | None:
    if pilot is None or pilot.sigma_p2 == 0:
        return None
    if not kind.otfs_family:
        raise UnsupportedCombination(f"superimposed pilots are defined only for OTFS-family waveforms, not {kind.value}")
    return build_pilot_grid(params, pilot).values


def symbol_grid(kind: WaveformKind, bits: np.ndarray, params: FrameParams, alphabet: QamAlphabet,
                pilot: PilotConfig | None = None) -> np.ndarray:
    """QAM symbols (scaled by the data share) in the kind's native M x N grid."""
    sigma_d2 = 1.0 - (pilot.sigma_p2 if pilot is not None else 0.0)
    return qam_map(bits, alphabet, sigma_d2, params.M, params.N).values


def time_matrix(kind: WaveformKind, X: np.ndarray, params: FrameParams,
                pilot: PilotConfig | None = None) -> np.ndarray:
    """Column n holds the M samples of symbol n (prefix excluded).

    OFDM puts X on the TF grid; DFT-s-OFDM precodes each column with an
    M-point DFT first (so the samples are X itself); OTFS puts X on the DD
    grid; DFT-s-OTFS spreads along Doppler before superimposing the pilot.
    """
    X = np.asarray(X, dtype=complex)
    X_p = _pilot_values(kind, params, pilot)
    if kind is WaveformKind.OFDM:
        return np.fft.ifft(X, axis=0, norm="ortho")
    if kind is WaveformKind.DFT_S_OFDM:
        return np.fft.ifft(np.fft.fft(X, axis=0, norm="ortho"), axis=0, norm="ortho")
    X_dd = np.fft.fft(X, axis=1, norm="ortho") if kind.spread else X
    if X_p is not None:
        X_dd = X_dd + X_p
    return np.fft.ifft(X_dd, axis=1, norm="ortho")


def add_prefix(kind: WaveformKind, S: np.ndarray, cp_len: int) -> np.ndarray:
    if cp_len == 0:
        return vec(S).copy()
    if kind.otfs_family:
        s = vec(S)
        return np.concatenate([s[-cp_len:], s])
    return vec(np.vstack([S[-cp_len:], S]))


def strip_prefix(kind: WaveformKind, r: np.ndarray, params: FrameParams) -> np.ndarray:
    """Inverse of :func:`add_prefix`, returning the M x N sample matrix."""
    M, N, cp = params.M, params.N, params.cp_len
    r = np.asarray(r)
    if kind.otfs_family:
        if r.size != M * N + cp:
            raise ValueError(f"expected {M * N + cp} samples, got {r.size}")
        return unvec(r[cp:], M, N)
    if r.size != (M + cp) * N:
        raise ValueError(f"expected {(M + cp) * N} samples, got {r.size}")
    return unvec(r, M + cp, N)[cp:]


def modulate(kind: WaveformKind, bits: np.ndarray, params: FrameParams, alphabet: QamAlphabet,
             pilot: PilotConfig | None = None) -> np.ndarray:
    X = symbol_grid(kind, bits, params, alphabet, pilot)
    return add_prefix(kind, time_matrix(kind, X, params, pilot), params.cp_len)


def demodulate_symbols(kind: WaveformKind, S: np.ndarray, params: FrameParams,
                       pilot: PilotConfig | None = None) -> np.ndarray:
    """Invert :func:`time_matrix` (noiseless, identity channel)."""
    S = np.asarray(S, dtype=complex)
    if kind is WaveformKind.OFDM:
        return np.fft.fft(S, axis=0, norm="ortho")
    if kind is WaveformKind.DFT_S_OFDM:
        return np.fft.ifft(np.fft.fft(S, axis=0, norm="ortho"), axis=0, norm="ortho")
    X_dd = np.fft.fft(S, axis=1, norm="ortho")
    X_p = _pilot_values(kind, params, pilot)
    if X_p is not None:
        X_dd = X_dd - X_p
    return np.fft.ifft(X_dd, axis=1, norm="ortho") if kind.spread else X_dd


def demodulate(kind: WaveformKind, r: np.ndarray, params: FrameParams, alphabet: QamAlphabet,
               pilot: PilotConfig | None = None) -> np.ndarray:
    sigma_d2 = 1.0 - (pilot.sigma_p2 if pilot is not None else 0.0)
    X = demodulate_symbols(kind, strip_prefix(kind, r, params), params, pilot)
    return qam_demap(vec(X), alphabet, sigma_d2)


# --- continuous-time reconstruction ------------------------------------------

def per_symbol_waveform(S: np.ndarray, L: int, cp_len: int = 0) -> np.ndarray:
    """Each symbol's subcarrier sum on a grid of T/(L M), prefix included.

    The subcarriers occupy [0, M delta_f); samples are indexed from the start
    of each symbol's prefix.
    """
    M, N = S.shape
    spectrum = np.fft.fft(S, axis=0)
    t = np.arange(-cp_len * L, M * L) / (L * M)
    basis = np.exp(2j * np.pi * np.outer(t, np.arange(M))) / M
    return vec(basis @ spectrum)


def frame_waveform(S: np.ndarray, L: int, cp_len: int = 0) -> np.ndarray:
    """Band-limited interpolation of the whole frame treated as one cyclic block.

    The frame's ``M N`` samples are expanded on ``M N`` tones of spacing
    ``delta_f / N``, centred on the same band as the M subcarriers of a
    per-symbol waveform. The prefix is the tone sum continued backwards in
    time, so the only block boundary is the one at the frame start.
    """
    M, N = S.shape
    s = vec(S)
    K = s.size
    padded = np.zeros(K * L, dtype=complex)
    padded[:K] = np.fft.fft(s)
    body = np.fft.ifft(padded) * L
    if cp_len:
        body = np.concatenate([body[-cp_len * L:], body])
    t = np.arange(-cp_len * L, K * L) / (L * M)  # in units of T
    return body * np.exp(-2j * np.pi * (N - 1) / (2 * N) * t)


def continuous_signal(kind: WaveformKind, S: np.ndarray, L: int, cp_len: int) -> np.ndarray:
    """Oversampled transmit waveform following each family's prefix convention."""
    if kind.otfs_family:
        return frame_waveform(S, L, cp_len)
    return per_symbol_waveform(S, L, cp_len)


# --- OFDM-family physical channel and sensing ---------------------------------

def symbol_period(params: FrameParams) -> float:
    """Duration of one OFDM symbol including its prefix."""
    return params.T * (params.M + params.cp_len) / params.M


def ofdm_channel(spec: ChannelSpec, S: np.ndarray, params: FrameParams) -> np.ndarray:
    """Received samples (prefix removed) of a per-symbol-prefix frame.

    Every path delays the band-limited symbol by ``tau`` (which must fit in
    the prefix) and multiplies it by ``exp(j 2 pi nu t)`` on the absolute
    time axis, so the Doppler ramp runs inside each symbol as well.
    """
    M, N = params.M, params.N
    S = np.asarray(S, dtype=complex)
    spectrum = np.fft.fft(S, axis=0)
    m = np.arange(M)[:, None]
    p = np.arange(M)[:, None]
    n = np.arange(N)[None, :]
    Tsym = symbol_period(params)
    t = n * Tsym + (params.cp_len + p) * params.T / M  # absolute time of each retained sample
    out = np.zeros((M, N), dtype=complex)
    cp_time = params.cp_len * params.T / M
    for path in spec.paths:
        if path.tau > cp_time + 1e-15:
            raise ValueError(f"delay {path.tau:.4g} s exceeds the per-symbol prefix {cp_time:.4g} s")
        delayed = np.fft.ifft(spectrum * np.exp(-2j * np.pi * m * params.delta_f * path.tau), axis=0)
        out += path.alpha * delayed * np.exp(2j * np.pi * path.nu * t)
    return out


def _periodogram_model(tau: float, nu: float, params: FrameParams) -> np.ndarray:
    """ICI-free TF response of a unit path: ``exp(-j 2 pi m df tau) exp(j 2 pi nu n Tsym)``."""
    m = np.arange(params.M)[:, None]
    n = np.arange(params.N)[None, :]
    return np.exp(-2j * np.pi * m * params.delta_f * tau) * np.exp(2j * np.pi * nu * n * symbol_period(params))


def periodogram_estimate(Y_tf: np.ndarray, X_tf: np.ndarray, P: int, params: FrameParams,
                         cfg: TpeConfig | None = None) -> EstimationResult:
    """2-D FFT delay-Doppler profile of the TF quotient ``Y / X``.

    This is the classic OFDM radar estimator: it models each path as a pure
    phase progression across subcarriers and symbols and ignores ICI. Each
    quotient entry is weighted by ``|X|^2``, so the profile is computed from
    ``Y conj(X)``; for constant-modulus symbols this is the plain quotient up
    to scale, and it stays finite when a precoded grid has weak entries. The
    on-grid peak is refined by the same golden-section search and paths are
    removed one at a time.
    """
    cfg = cfg or TpeConfig()
    N = params.N
    X_tf = np.asarray(X_tf)
    W = np.abs(X_tf) ** 2
    if not W.sum() > 0:
        raise ZeroDivisionError("TF grid carries no energy")
    Z = np.asarray(Y_tf) * np.conj(X_tf)
    dt = params.delay_resolution
    dn = 1.0 / (N * symbol_period(params))
    K = cfg.iterations()
    alphas, taus, nus, ratios = [], [], [], []
    for _ in range(P):
        prof = np.abs(np.fft.fft(np.fft.ifft(Z, axis=0), axis=1)) ** 2
        # ifft over m peaks at l = tau M df, fft over n at k = nu N Tsym (mod N)
        prof = np.roll(prof, N // 2, axis=1)
        idx = int(np.argmax(prof))
        l_hat, j = divmod(idx, N)
        k_hat = j - N // 2
        ratios.append(float(prof.flat[idx] / prof.mean()) if prof.mean() > 0 else 0.0)
        region = SearchRegion((l_hat - 1) * dt, (l_hat + 1) * dt, (k_hat - 1) * dn, (k_hat + 1) * dn)

        def f(tau, nu, Z=Z):
            return abs(np.vdot(_periodogram_model(tau, nu, params), Z)) ** 2

        tau, nu = golden_search_2d(f, region, K)
        tau = tau % params.T
        g = _periodogram_model(tau, nu, params)
        alpha = np.vdot(g * W, Z) / np.vdot(g * W, g * W).real
        Z = Z - alpha * g * W
        alphas.append(complex(alpha))
        taus.append(tau)
        nus.append(nu)
    return EstimationResult(np.array(alphas), np.array(taus), np.array(nus), np.array(ratios))


def transmit_sense(kind: WaveformKind, X: np.ndarray, spec: ChannelSpec, params: FrameParams,
                   sigma_w2: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Send one frame through the kind's channel model; return (received, reference).

    OTFS-family: received DD vector ``y`` and transmit DD vector ``x``.
    OFDM-family: received TF grid and transmit TF grid.
    """
    M, N = params.M, params.N
    S = time_matrix(kind, X, params)
    if kind.otfs_family:
        r = CddsOperator(spec, params).apply(vec(S))
        noise = rng.standard_normal(r.shape) + 1j * rng.standard_normal(r.shape)
        r = r + math.sqrt(sigma_w2 / 2) * noise
        y = vec(np.fft.fft(unvec(r, M, N), axis=1, norm="ortho"))
        x = vec(np.fft.fft(S, axis=1, norm="ortho"))
        return y, x
    R = ofdm_channel(spec, S, params)
    noise = rng.standard_normal(R.shape) + 1j * rng.standard_normal(R.shape)
    R = R + math.sqrt(sigma_w2 / 2) * noise
    return np.fft.fft(R, axis=0, norm="ortho"), np.fft.fft(S, axis=0, norm="ortho")


def sense_with(kind: WaveformKind, y: np.ndarray, x: np.ndarray, P: int, params: FrameParams,
               cfg: TpeConfig | None = None) -> EstimationResult:
    """Dispatch to the kind's sensing estimator (see :func:`transmit_sense`)."""
    if kind.otfs_family:
        return tpe_estimate(y, x, P, params, cfg)
    return periodogram_estimate(y, x, P, params, cfg)

