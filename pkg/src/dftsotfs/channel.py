"""Continuous-delay-and-Doppler-shift (CDDS) channel as a matrix-free operator.

A path with delay ``tau`` and Doppler ``nu`` acts on a time frame ``s`` as

    Theta = Delta(nu) Pi_MN^l (I_N kron F_M^H B_tau F_M),

with ``l = ceil(tau M delta_f)``, ``B_tau = diag(b^m)``,
``b = exp(j 2 pi (l/M - tau/T))`` and ``Delta(nu) = diag(delta^p)``,
``delta = exp(j 2 pi nu T / M)``. Its delay-Doppler image is
``Gamma = (F_N kron I_M) Theta (F_N^H kron I_M)``.

All fast applications accept a vector of length ``M*N`` or a stack of such
vectors of shape ``(M*N, K)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lattice import FrameParams

C0 = 299_792_458.0


class Mode(enum.Enum):
    ACTIVE = "active"  # monostatic round trip
    PASSIVE = "passive"  # one-way propagation


def delay_index(tau: float, params: FrameParams) -> int:
    """``ceil(tau M delta_f)``, snapping values within 1e-9 of an integer."""
    x = tau * params.M * params.delta_f
    r = round(x)
    if abs(x - r) < 1e-9:
        return int(r)
    return int(math.ceil(x))


@dataclass(frozen=True)
class PathParams:
    alpha: complex
    tau: float
    nu: float

    def check(self, params: FrameParams) -> None:
        if not 0 <= self.tau < params.T:
            raise ValueError(f"delay {self.tau:.6g} s outside [0, {params.T:.6g}) s")
        half = 0.5 / params.T
        if not -half <= self.nu < half:
            raise ValueError(f"Doppler {self.nu:.6g} Hz outside [{-half:.6g}, {half:.6g}) Hz")


@dataclass(frozen=True)
class ChannelSpec:
    paths: tuple[PathParams, ...]
    sigma_h2: float = 1.0
    mode: Mode = Mode.PASSIVE

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))

    @property
    def P(self) -> int:
        return len(self.paths)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([p.alpha for p in self.paths], dtype=complex)

    @property
    def max_delay(self) -> float:
        return max((p.tau for p in self.paths), default=0.0)

    def is_resolvable(self, params: FrameParams) -> bool:
        for i, a in enumerate(self.paths):
            for b in self.paths[i + 1 :]:
                close_tau = abs(a.tau - b.tau) < params.delay_resolution * (1 - 1e-12)
                close_nu = abs(a.nu - b.nu) < params.doppler_resolution * (1 - 1e-12)
                if close_tau and close_nu:
                    return False
        return True


def geometry_to_path(r: float, v: float, f_c: float, mode: Mode,
                     params: FrameParams | None = None) -> tuple[float, float]:
    """Range (m) and radial velocity (m/s) to (delay, Doppler)."""
    factor = 2.0 if mode is Mode.ACTIVE else 1.0
    tau = factor * r / C0
    nu = factor * f_c * v / C0
    if params is not None:
        if not 0 <= tau < params.T:
            raise ValueError(f"range {r} m gives delay {tau:.4g} s beyond the unambiguous limit {params.T:.4g} s")
        half = 0.5 / params.T
        if not -half <= nu < half:
            raise ValueError(f"velocity {v} m/s gives Doppler {nu:.4g} Hz beyond the unambiguous limit +/-{half:.4g} Hz")
    return tau, nu


def default_cp_len(max_delay: float, params: FrameParams) -> int:
    return int(math.ceil(max_delay * params.M * params.delta_f - 1e-9))


# --- fast operator ---------------------------------------------------------

@dataclass(frozen=True)
class _PathKernel:
    l: int
    ramp: np.ndarray  # b^m, length M
    doppler: np.ndarray  # delta^p, length M*N


def _kernel(tau: float, nu: float, params: FrameParams) -> _PathKernel:
    M, N = params.M, params.N
    l = delay_index(tau, params)
    m = np.arange(M)
    ramp = np.exp(2j * np.pi * m * (l / M - tau * params.delta_f))
    p = np.arange(M * N)
    doppler = np.exp(2j * np.pi * (nu * params.T / M) * p)
    return _PathKernel(l, ramp, doppler)


def _as_cols(v: np.ndarray, M: int, N: int) -> np.ndarray:
    # (MN,) -> (M, N) and (MN, K) -> (M, N, K), column-major vec
    return v.reshape((M, N) + v.shape[1:], order="F")


def _bcast(d: np.ndarray, v: np.ndarray) -> np.ndarray:
    return d.reshape(d.shape + (1,) * (v.ndim - 1))


def _theta(k: _PathKernel, s: np.ndarray, M: int, N: int) -> np.ndarray:
    cols = _as_cols(s, M, N)
    cols = np.fft.ifft(_bcast(k.ramp, cols) * np.fft.fft(cols, axis=0), axis=0)
    out = np.roll(cols.reshape(s.shape, order="F"), k.l, axis=0)
    return _bcast(k.doppler, out) * out


def _theta_adjoint(k: _PathKernel, r: np.ndarray, M: int, N: int) -> np.ndarray:
    v = np.roll(_bcast(k.doppler.conj(), r) * r, -k.l, axis=0)
    cols = _as_cols(v, M, N)
    cols = np.fft.ifft(_bcast(k.ramp.conj(), cols) * np.fft.fft(cols, axis=0), axis=0)
    return cols.reshape(r.shape, order="F")


def _to_time(x: np.ndarray, M: int, N: int) -> np.ndarray:
    X = _as_cols(x, M, N)
    return np.fft.ifft(X, axis=1, norm="ortho").reshape(x.shape, order="F")


def _to_dd(s: np.ndarray, M: int, N: int) -> np.ndarray:
    S = _as_cols(s, M, N)
    return np.fft.fft(S, axis=1, norm="ortho").reshape(s.shape, order="F")


def _checked(v: np.ndarray, params: FrameParams) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    if v.shape[0] != params.size:
        raise ValueError(f"expected leading length {params.size}, got {v.shape[0]}")
    return v


def apply_theta(path: PathParams, s: np.ndarray, params: FrameParams) -> np.ndarray:
    """``Theta(tau, nu) s`` in O(MN log M). The path gain is not applied."""
    return _theta(_kernel(path.tau, path.nu, params), _checked(s, params), params.M, params.N)


def apply_gamma(path: PathParams, x: np.ndarray, params: FrameParams) -> np.ndarray:
    """``Gamma(tau, nu) x`` in O(MN log MN). The path gain is not applied."""
    M, N = params.M, params.N
    s = _to_time(_checked(x, params), M, N)
    return _to_dd(_theta(_kernel(path.tau, path.nu, params), s, M, N), M, N)


class CddsOperator:
    """``H = sum_i alpha_i Theta_i`` and its DD image ``A``, never materialised."""

    def __init__(self, spec: ChannelSpec, params: FrameParams):
        self.spec = spec
        self.params = params
        self._kernels = [_kernel(p.tau, p.nu, params) for p in spec.paths]
        self._alphas = spec.alphas

    def theta(self, i: int, s: np.ndarray) -> np.ndarray:
        return _theta(self._kernels[i], _checked(s, self.params), self.params.M, self.params.N)

    def theta_adjoint(self, i: int, r: np.ndarray) -> np.ndarray:
        return _theta_adjoint(self._kernels[i], _checked(r, self.params), self.params.M, self.params.N)

    def gamma(self, i: int, x: np.ndarray) -> np.ndarray:
        M, N = self.params.M, self.params.N
        return _to_dd(self.theta(i, _to_time(_checked(x, self.params), M, N)), M, N)

    def apply(self, s: np.ndarray) -> np.ndarray:
        s = _checked(s, self.params)
        out = np.zeros_like(s)
        for a, k in zip(self._alphas, self._kernels):
            out += a * _theta(k, s, self.params.M, self.params.N)
        return out

    def adjoint(self, r: np.ndarray) -> np.ndarray:
        r = _checked(r, self.params)
        out = np.zeros_like(r)
        for a, k in zip(self._alphas, self._kernels):
            out += np.conj(a) * _theta_adjoint(k, r, self.params.M, self.params.N)
        return out

    def apply_dd(self, x: np.ndarray) -> np.ndarray:
        M, N = self.params.M, self.params.N
        return _to_dd(self.apply(_to_time(_checked(x, self.params), M, N)), M, N)

    def adjoint_dd(self, y: np.ndarray) -> np.ndarray:
        M, N = self.params.M, self.params.N
        return _to_dd(self.adjoint(_to_time(_checked(y, self.params), M, N)), M, N)


def apply_channel(spec: ChannelSpec, s: np.ndarray, params: FrameParams) -> np.ndarray:
    return CddsOperator(spec, params).apply(s)


def apply_channel_adjoint(spec: ChannelSpec, r: np.ndarray, params: FrameParams) -> np.ndarray:
    return CddsOperator(spec, params).adjoint(r)


def add_awgn(s: np.ndarray, sigma_w2: float, rng: np.random.Generator) -> np.ndarray:
    """Circularly symmetric complex Gaussian noise of per-sample variance sigma_w2."""
    if sigma_w2 < 0:
        raise ValueError(f"noise variance must be non-negative, got {sigma_w2}")
    s = np.asarray(s, dtype=complex)
    if sigma_w2 == 0:
        return s.copy()
    noise = rng.standard_normal(s.shape) + 1j * rng.standard_normal(s.shape)
    return s + math.sqrt(sigma_w2 / 2) * noise


def random_channel(params: FrameParams, P: int, rng: np.random.Generator, sigma_h2: float = 1.0,
                   max_delay: float | None = None, max_doppler: float | None = None,
                   mode: Mode = Mode.PASSIVE, max_tries: int = 1000) -> ChannelSpec:
    """Rayleigh path gains of variance sigma_h2/P, uniform delays and Dopplers.

    Delays are drawn in ``[0, max_delay)`` (default: the CP duration) and
    Dopplers in ``[-max_doppler, max_doppler)`` (default: the unambiguous
    range). Draws are repeated until the paths are pairwise resolvable.
    """
    if max_delay is None:
        max_delay = params.cp_len * params.T / params.M
    if max_doppler is None:
        max_doppler = 0.5 / params.T
    for _ in range(max_tries):
        g = rng.standard_normal(P) + 1j * rng.standard_normal(P)
        alphas = g * math.sqrt(sigma_h2 / (2 * P))
        taus = rng.uniform(0, max_delay, P) if max_delay > 0 else np.zeros(P)
        nus = rng.uniform(-max_doppler, max_doppler, P) if max_doppler > 0 else np.zeros(P)
        spec = ChannelSpec(tuple(PathParams(complex(a), float(t), float(v)) for a, t, v in zip(alphas, taus, nus)),
                           sigma_h2, mode)
        if spec.is_resolvable(params):
            return spec
    raise RuntimeError(f"could not draw {P} resolvable paths in {max_tries} tries")


# --- dense constructions (small frames only) -------------------------------

_DENSE_LIMIT = 64


def _guard(params: FrameParams) -> None:
    if params.size > _DENSE_LIMIT:
        raise ValueError(f"dense construction limited to M*N <= {_DENSE_LIMIT}, got {params.size}")


def dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / math.sqrt(n)


def cyclic_shift_matrix(n: int) -> np.ndarray:
    """Forward cyclic shift: ``(Pi x)[i] = x[i-1]``."""
    return np.roll(np.eye(n), 1, axis=0)


def dense_theta(path: PathParams, params: FrameParams) -> np.ndarray:
    _guard(params)
    M, N = params.M, params.N
    l = delay_index(path.tau, params)
    F = dft_matrix(M)
    b = np.exp(2j * np.pi * (l / M - path.tau / params.T))
    B = np.diag(b ** np.arange(M))
    Pi = np.linalg.matrix_power(cyclic_shift_matrix(M * N), l)
    delta = np.exp(2j * np.pi * path.nu * params.T / M)
    D = np.diag(delta ** np.arange(M * N))
    return D @ Pi @ np.kron(np.eye(N), F.conj().T @ B @ F)


def dense_gamma(path: PathParams, params: FrameParams) -> np.ndarray:
    F_N = dft_matrix(params.N)
    I_M = np.eye(params.M)
    return np.kron(F_N, I_M) @ dense_theta(path, params) @ np.kron(F_N.conj().T, I_M)


def dense_channel(spec: ChannelSpec, params: FrameParams) -> np.ndarray:
    _guard(params)
    H = np.zeros((params.size, params.size), dtype=complex)
    for p in spec.paths:
        H += p.alpha * dense_theta(p, params)
    return H


def integer_reference_channel(l: int, k: int, params: FrameParams) -> np.ndarray:
    """Dense ``Delta^k Pi^l`` with ``Delta = diag(exp(j 2 pi p / MN))``."""
    _guard(params)
    n = params.size
    D = np.diag(np.exp(2j * np.pi * np.arange(n) / n) ** k)
    return D @ np.linalg.matrix_power(cyclic_shift_matrix(n), l % n)


# --- delay-Doppler approximation ------------------------------------------

def dd_circular_shift_model(X: np.ndarray, l_i: int, k_i: int) -> np.ndarray:
    """On-grid DD input-output approximation for one unit-gain path.

    Matches the exact chain up to the path-constant phase
    ``exp(j 2 pi l_i k_i / (M N))``, which is absorbed in the path gain.
    """
    X = np.asarray(X)
    M, N = X.shape
    if not 0 <= l_i < M:
        raise ValueError(f"delay index {l_i} outside [0, {M})")
    l = np.arange(M)[:, None]
    k = np.arange(N)[None, :]
    shifted = np.roll(np.roll(X, l_i, axis=0), k_i, axis=1)
    phase = np.exp(2j * np.pi * (l - l_i) / M * k_i / N)
    beta = np.where(l >= l_i, 1.0 + 0j,
                    (N - 1) / N * np.exp(-2j * np.pi * np.mod(k - k_i, N) / N))
    return phase * beta * shifted


def paths_from(alphas: Sequence[complex], taus: Sequence[float], nus: Sequence[float],
               sigma_h2: float = 1.0, mode: Mode = Mode.PASSIVE) -> ChannelSpec:
    return ChannelSpec(tuple(PathParams(complex(a), float(t), float(v)) for a, t, v in zip(alphas, taus, nus)),
                       sigma_h2, mode)
