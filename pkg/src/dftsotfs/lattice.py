"""Frame numerology, delay-Doppler grids, QAM alphabets, DFT spreading and
superimposed pilots.

Everything here works on M x N complex arrays. Vectorisation is column-major
(``vec`` stacks columns), so ``x = X.reshape(-1, order="F")``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class Domain(enum.Enum):
    DATA = "data"  # pre-spreading symbols X_d
    DD = "dd"  # delay-Doppler grid X
    TF = "tf"  # time-frequency grid X^TF
    TIME = "time"  # M x N matrix form of the time samples S


@dataclass(frozen=True)
class FrameParams:
    """Numerology of one frame.

    ``T`` is derived from ``delta_f`` and never stored separately.
    ``cp_len`` counts samples of period T/M.
    """

    M: int
    N: int
    delta_f: float
    cp_len: int = 0
    f_c: float = 0.3e12
    L: int = 4

    def __post_init__(self):
        if self.M < 2 or self.N < 2:
            raise ValueError(f"M and N must be >= 2, got M={self.M}, N={self.N}")
        if not self.delta_f > 0:
            raise ValueError(f"delta_f must be positive, got {self.delta_f}")
        if not 0 <= self.cp_len < self.M * self.N:
            raise ValueError(f"cp_len must lie in [0, M*N), got {self.cp_len}")
        if self.L < 1:
            raise ValueError(f"oversampling factor L must be >= 1, got {self.L}")

    @property
    def T(self) -> float:
        return 1.0 / self.delta_f

    @property
    def frame_duration(self) -> float:
        return self.N * self.T

    @property
    def bandwidth(self) -> float:
        return self.M * self.delta_f

    @property
    def delay_resolution(self) -> float:
        return 1.0 / (self.M * self.delta_f)

    @property
    def doppler_resolution(self) -> float:
        return 1.0 / (self.N * self.T)

    @property
    def size(self) -> int:
        return self.M * self.N

    def default_pilot(self, sigma_p2: float) -> "PilotConfig":
        return PilotConfig(self.M // 2, self.N // 2, sigma_p2)


@dataclass(frozen=True)
class Grid:
    """An M x N complex array tagged with the domain it lives in."""

    values: np.ndarray
    domain: Domain

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.ndim != 2:
            raise ValueError(f"grid must be 2-D, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def vec(self) -> np.ndarray:
        return self.values.reshape(-1, order="F")

    def expect(self, domain: Domain) -> np.ndarray:
        if self.domain is not domain:
            raise ValueError(f"expected a {domain.name} grid, got {self.domain.name}")
        return self.values


def unvec(x: np.ndarray, M: int, N: int) -> np.ndarray:
    return np.asarray(x).reshape((M, N), order="F")


def vec(X: np.ndarray) -> np.ndarray:
    return np.asarray(X).reshape(-1, order="F")


@dataclass(frozen=True)
class QamAlphabet:
    """Square Gray-coded QAM with unit average energy.

    Bits of one symbol are interleaved between the axes: even positions
    drive the in-phase level, odd positions the quadrature level, most
    significant first.
    """

    order: int
    points: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.order not in (4, 16, 64):
            raise ValueError(f"unsupported QAM order {self.order}")
        k = self.bits_per_symbol // 2
        pam = _gray_pam(k)
        pts = np.empty(self.order, dtype=complex)
        for word in range(self.order):
            bits = [(word >> (self.bits_per_symbol - 1 - i)) & 1 for i in range(self.bits_per_symbol)]
            i_word = int("".join(map(str, bits[0::2])), 2)
            q_word = int("".join(map(str, bits[1::2])), 2)
            pts[word] = pam[i_word] + 1j * pam[q_word]
        pts /= math.sqrt(2 * (self.order - 1) / 3)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def bits_per_symbol(self) -> int:
        return int(round(math.log2(self.order)))

    @cached_property
    def min_distance(self) -> float:
        d = np.abs(self.points[:, None] - self.points[None, :])
        return float(d[d > 0].min())

    def labels(self) -> np.ndarray:
        """Bit labels, shape (order, bits_per_symbol)."""
        k = self.bits_per_symbol
        words = np.arange(self.order)
        return ((words[:, None] >> np.arange(k - 1, -1, -1)) & 1).astype(np.uint8)


def _gray_pam(k: int) -> np.ndarray:
    """PAM levels for a k-bit Gray word: (1-2c0)(2^{k-1} - (1-2c1)(2^{k-2} - ...))."""
    out = np.empty(2**k)
    for word in range(2**k):
        c = [(word >> (k - 1 - i)) & 1 for i in range(k)]
        inner = 1.0
        for j in range(k - 1, 0, -1):
            inner = 2.0 ** (k - j) - (1 - 2 * c[j]) * inner
        out[word] = (1 - 2 * c[0]) * inner
    return out


def qam_map(bits: np.ndarray, alphabet: QamAlphabet, sigma_d2: float, M: int, N: int) -> Grid:
    """Map ``M*N*log2(Q)`` bits onto an M x N DATA grid (column-major fill)."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    k = alphabet.bits_per_symbol
    if bits.size != M * N * k:
        raise ValueError(f"expected {M * N * k} bits, got {bits.size}")
    words = bits.reshape(-1, k) @ (1 << np.arange(k - 1, -1, -1))
    symbols = math.sqrt(sigma_d2) * alphabet.points[words]
    return Grid(unvec(symbols, M, N), Domain.DATA)


def nearest_points(symbols: np.ndarray, alphabet: QamAlphabet, sigma_d2: float) -> np.ndarray:
    """Index of the nearest scaled constellation point for every symbol."""
    pts = math.sqrt(sigma_d2) * alphabet.points
    flat = np.asarray(symbols).ravel()
    return np.abs(flat[:, None] - pts[None, :]).argmin(axis=1).reshape(np.shape(symbols))


def qam_demap(symbols: Grid | np.ndarray, alphabet: QamAlphabet, sigma_d2: float) -> np.ndarray:
    """Hard nearest-neighbour decisions, returned as a flat bit array."""
    values = symbols.values if isinstance(symbols, Grid) else np.asarray(symbols)
    idx = nearest_points(vec(values) if values.ndim == 2 else values, alphabet, sigma_d2)
    return alphabet.labels()[idx].ravel()


def dft_spread(X_d: Grid) -> Grid:
    return Grid(np.fft.fft(X_d.expect(Domain.DATA), axis=1, norm="ortho"), Domain.DD)


def dft_despread(X_dd: Grid) -> Grid:
    return Grid(np.fft.ifft(X_dd.expect(Domain.DD), axis=1, norm="ortho"), Domain.DATA)


@dataclass(frozen=True)
class PilotConfig:
    l_p: int
    k_p: int
    sigma_p2: float

    def __post_init__(self):
        if not 0 <= self.sigma_p2 < 1:
            raise ValueError(f"sigma_p2 must lie in [0, 1), got {self.sigma_p2}")


def build_pilot_grid(params: FrameParams, pilot: PilotConfig) -> Grid:
    if not (0 <= pilot.l_p < params.M and 0 <= pilot.k_p < params.N):
        raise IndexError(f"pilot position ({pilot.l_p}, {pilot.k_p}) outside {params.M}x{params.N} grid")
    X_p = np.zeros((params.M, params.N), dtype=complex)
    X_p[pilot.l_p, pilot.k_p] = math.sqrt(params.M * params.N * pilot.sigma_p2)
    return Grid(X_p, Domain.DD)


def superimpose(X_dd: Grid, X_p: Grid) -> Grid:
    a = X_dd.expect(Domain.DD)
    b = X_p.expect(Domain.DD)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return Grid(a + b, Domain.DD)
