"""Domain transforms of the transmit and receive chains.

Time signals are plain 1-D complex arrays at rate M/T (``M*N`` samples per
frame, ``M*N + cp_len`` with the prefix, ``L*M*N`` when oversampled).
"""

from __future__ import annotations

import numpy as np

from .lattice import Domain, FrameParams, Grid, unvec, vec


def isfft(X: Grid) -> Grid:
    """DD -> TF: ``F_M X F_N^H``."""
    values = X.expect(Domain.DD)
    return Grid(np.fft.ifft(np.fft.fft(values, axis=0, norm="ortho"), axis=1, norm="ortho"), Domain.TF)


def sfft(Y_tf: Grid) -> Grid:
    """TF -> DD: ``F_M^H Y F_N``."""
    values = Y_tf.expect(Domain.TF)
    return Grid(np.fft.fft(np.fft.ifft(values, axis=0, norm="ortho"), axis=1, norm="ortho"), Domain.DD)


def heisenberg(X_tf: Grid) -> np.ndarray:
    """Rectangular-pulse Heisenberg transform, returns ``vec(F_M^H X^TF)``."""
    return vec(np.fft.ifft(X_tf.expect(Domain.TF), axis=0, norm="ortho"))


def wigner(r: np.ndarray, M: int, N: int) -> Grid:
    r = np.asarray(r)
    if r.size != M * N:
        raise ValueError(f"expected {M * N} samples (CP removed), got {r.size}")
    return Grid(np.fft.fft(unvec(r, M, N), axis=0, norm="ortho"), Domain.TF)


def dd_to_time(x: np.ndarray, M: int, N: int) -> np.ndarray:
    """``(F_N^H kron I_M) x``; the ISFFT + Heisenberg shortcut ``S = X F_N^H``."""
    return vec(np.fft.ifft(unvec(x, M, N), axis=1, norm="ortho"))


def time_to_dd(r: np.ndarray, M: int, N: int) -> np.ndarray:
    """``(F_N kron I_M) r``; the Wigner + SFFT shortcut ``Y = R F_N``."""
    return vec(np.fft.fft(unvec(r, M, N), axis=1, norm="ortho"))


def add_cp(s: np.ndarray, cp_len: int) -> np.ndarray:
    s = np.asarray(s)
    if cp_len < 0 or cp_len >= s.size:
        raise ValueError(f"cp_len {cp_len} invalid for a {s.size}-sample frame")
    if cp_len == 0:
        return s.copy()
    return np.concatenate([s[-cp_len:], s])


def remove_cp(s_cp: np.ndarray, cp_len: int, size: int) -> np.ndarray:
    s_cp = np.asarray(s_cp)
    if s_cp.size != size + cp_len:
        raise ValueError(f"expected {size + cp_len} samples, got {s_cp.size}")
    return s_cp[cp_len:].copy()


def oversample(s: np.ndarray, M: int, N: int, L: int) -> np.ndarray:
    """Evaluate the per-symbol subcarrier sum at ``t = p T / (L M)``.

    Offset stream ``q`` is the frame advanced by ``q/L`` of a sample, which
    is the phase ramp ``exp(j 2 pi m q / (L M))`` on the per-symbol spectrum.
    """
    if L < 1:
        raise ValueError(f"oversampling factor must be >= 1, got {L}")
    s = np.asarray(s)
    if s.size != M * N:
        raise ValueError(f"expected {M * N} samples, got {s.size}")
    if L == 1:
        return s.copy()
    spectrum = np.fft.fft(unvec(s, M, N), axis=0)
    m = np.arange(M)[:, None]
    out = np.empty((L * M, N), dtype=complex)
    for q in range(L):
        out[q::L] = np.fft.ifft(spectrum * np.exp(2j * np.pi * m * q / (L * M)), axis=0)
    return vec(out)


def transmit(X: Grid, params: FrameParams) -> np.ndarray:
    """DD grid -> time samples with one CP per frame."""
    return add_cp(heisenberg(isfft(X)), params.cp_len)


def receive(r_cp: np.ndarray, params: FrameParams) -> Grid:
    """Time samples with CP -> received DD grid."""
    r = remove_cp(r_cp, params.cp_len, params.size)
    return sfft(wigner(r, params.M, params.N))
