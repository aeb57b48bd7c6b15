"""Closed-form performance models and measured metrics.

Covers the SINR model of data-aided estimation and the pilot power that
maximises it, PAPR and PA efficiency, spectral leakage, BER, multi-target
RMSE and passive-sensing geometry.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.signal import welch

from .sensing import ETA


class ModelBreakdownError(ArithmeticError):
    """Inputs fall outside the region where the SINR approximation holds."""


class GeometryError(ValueError):
    pass


# --- SINR and pilot power ----------------------------------------------------

@dataclass(frozen=True)
class SinrModel:
    sigma_h2: float
    sigma_w2: float
    sigma_p2: float
    P: int
    M: int
    N: int

    def __post_init__(self):
        if self.sigma_h2 < 0 or self.sigma_w2 < 0:
            raise ValueError("powers must be non-negative")
        if not 0 <= self.sigma_p2 <= 1:
            raise ValueError(f"sigma_p2 must lie in [0, 1], got {self.sigma_p2}")
        if self.P < 1 or self.M < 1 or self.N < 1:
            raise ValueError("P, M and N must be positive")

    @property
    def sigma_d2(self) -> float:
        return 1.0 - self.sigma_p2

    @classmethod
    def at_snr(cls, snr_db: float, sigma_p2: float, P: int, M: int, N: int, sigma_h2: float = 1.0) -> "SinrModel":
        return cls(sigma_h2, 10 ** (-snr_db / 10), sigma_p2, P, M, N)


@dataclass(frozen=True)
class SinrTerms:
    sigma_0: float  # pilot-only channel error
    sigma_xe: float  # equalised-symbol error
    sigma_e: float  # data-aided channel error
    sinr: float


def sinr_terms(model: SinrModel) -> SinrTerms:
    """Evaluate the error chain sigma_0 -> sigma_xe -> sigma_e -> SINR."""
    sh, sw, sp, sd = model.sigma_h2, model.sigma_w2, model.sigma_p2, model.sigma_d2
    P, MN = model.P, model.M * model.N
    if sp == 0:
        raise ZeroDivisionError("no pilot: pilot-only estimation error is unbounded")
    s0 = P * (sh * sd + sw) / (MN * sp)
    if not s0 < sh:
        raise ModelBreakdownError(f"pilot-only error {s0:.4g} exceeds channel power {sh:.4g}")
    denom = s0 * (sd + sp) + sw
    inv = (1.0 / sd if sd > 0 else math.inf) + (sh - s0) / denom
    sxe = P / inv
    if not 0 < sxe < sp + sd:
        raise ModelBreakdownError(f"equalised-symbol error {sxe:.4g} outside (0, {sp + sd:.4g})")
    se = P * (sh * sxe + sw) / (MN * (sp + sd - sxe))
    if not 0 <= se < sh:
        raise ModelBreakdownError(f"data-aided error {se:.4g} outside [0, {sh:.4g})")
    return SinrTerms(s0, sxe, se, sinr_from_error(sd, sp, sh, se, sw))


def sinr_from_error(sigma_d2: float, sigma_p2: float, sigma_h2: float, sigma_e2: float, sigma_w2: float) -> float:
    den = (sigma_d2 + sigma_p2) * sigma_e2 + sigma_w2
    if den == 0:
        return math.inf
    return sigma_d2 * (sigma_h2 - sigma_e2) / den


def sinr_closed_form(model: SinrModel) -> float:
    return sinr_terms(model).sinr


def _objective(sigma_h2, sigma_w2, P, M, N) -> Callable[[float], float]:
    def f(sp: float) -> float:
        try:
            return sinr_closed_form(SinrModel(sigma_h2, sigma_w2, sp, P, M, N))
        except ModelBreakdownError:
            return -math.inf
    return f


def _valid(f, sp) -> bool:
    return f(sp) > -math.inf


def optimize_pilot_power(sigma_h2: float, sigma_w2: float, P: int, M: int, N: int, tol: float = 1e-5) -> float:
    """Pilot share maximising the closed-form SINR under unit total power.

    Small pilot shares put the model outside its validity region; the lower
    edge of the valid interval is located by bisection and the golden-section
    search runs from there to 1.
    """
    if sigma_h2 <= 0 or sigma_w2 <= 0:
        raise ValueError("sigma_h2 and sigma_w2 must be positive")
    f = _objective(sigma_h2, sigma_w2, P, M, N)
    hi = 1.0 - 1e-12
    if not _valid(f, hi):
        raise ModelBreakdownError("no valid pilot share")
    lo = 1e-12
    if not _valid(f, lo):
        a, b = lo, hi  # invalid at a, valid at b
        while b - a > 1e-12:
            mid = 0.5 * (a + b)
            if _valid(f, mid):
                b = mid
            else:
                a = mid
        lo = b
    a, b = lo, hi
    c, d = b - ETA * (b - a), a + ETA * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc == fd and fc == f(a) and fc == f(b):
            warnings.warn("flat SINR objective; returning the interval midpoint", RuntimeWarning)
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - ETA * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + ETA * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def grid_argmax_pilot_power(sigma_h2: float, sigma_w2: float, P: int, M: int, N: int,
                            points: int = 1_000_000) -> float:
    """Brute-force argmax over a uniform grid on (0, 1), vectorised."""
    sp = np.linspace(0, 1, points + 2)[1:-1]
    sd = 1 - sp
    MN = M * N
    with np.errstate(divide="ignore", invalid="ignore"):
        s0 = P * (sigma_h2 * sd + sigma_w2) / (MN * sp)
        sxe = P / (1 / sd + (sigma_h2 - s0) / (s0 * (sd + sp) + sigma_w2))
        se = P * (sigma_h2 * sxe + sigma_w2) / (MN * (sp + sd - sxe))
        v = sd * (sigma_h2 - se) / ((sd + sp) * se + sigma_w2)
    ok = (s0 < sigma_h2) & (sxe > 0) & (sxe < sp + sd) & (se >= 0) & (se < sigma_h2)
    return float(sp[np.argmax(np.where(ok, v, -np.inf))])


# --- PAPR and PA efficiency ------------------------------------------------

def papr(s: np.ndarray) -> float:
    """Linear peak-to-average power ratio."""
    p = np.abs(np.asarray(s)) ** 2
    mean = p.mean() if p.size else 0.0
    if mean == 0:
        raise ValueError("PAPR of an all-zero signal is undefined")
    return float(p.max() / mean)


def papr_db(s: np.ndarray) -> float:
    return 10 * math.log10(papr(s))


def papr_ccdf(paprs_db: Iterable[float], thresholds_db: Sequence[float], min_frames: int = 10_000) -> np.ndarray:
    """``P(PAPR > gamma)`` for each threshold."""
    v = np.asarray(list(paprs_db), dtype=float)
    if v.size < min_frames:
        warnings.warn(f"only {v.size} frames; CCDF tail below {1 / max(v.size, 1):.1e} is unresolved",
                      RuntimeWarning)
    th = np.asarray(thresholds_db, dtype=float)
    return (v[None, :] > th[:, None]).mean(axis=1)


def papr_at_ccdf(paprs_db: Iterable[float], prob: float) -> float:
    """PAPR level exceeded with probability ``prob``."""
    return float(np.quantile(np.asarray(list(paprs_db), dtype=float), 1 - prob))


@dataclass(frozen=True)
class PaModel:
    """Back-off efficiency law ``eta = G exp(-g gamma_dB)`` in percent.

    The presets are the ideal linear-amplifier laws: class A efficiency falls
    as 1/PAPR from 50 %, class B as 1/sqrt(PAPR) from pi/4.
    """

    G: float
    g: float

    def __post_init__(self):
        if not 0 < self.G <= 100 or not self.g > 0:
            raise ValueError(f"invalid PA model G={self.G}, g={self.g}")


CLASS_A = PaModel(50.0, math.log(10) / 10)
CLASS_B = PaModel(78.5, math.log(10) / 20)


def pa_efficiency(papr_db_value, model: PaModel):
    return model.G * np.exp(-model.g * np.asarray(papr_db_value, dtype=float))


# --- spectrum --------------------------------------------------------------

def oobe_psd(frames: Sequence[np.ndarray], fs: float, nperseg: int) -> tuple[np.ndarray, np.ndarray]:
    """Hann-window Welch PSD of the concatenated ensemble, peak-normalised (dB).

    Frequencies are two-sided and ascending.
    """
    x = np.concatenate([np.asarray(f, dtype=complex) for f in frames])
    nperseg = min(nperseg, x.size)
    f, p = welch(x, fs=fs, window="hann", nperseg=nperseg, return_onesided=False, detrend=False)
    f, p = np.fft.fftshift(f), np.fft.fftshift(p)
    with np.errstate(divide="ignore"):
        return f, 10 * np.log10(p / p.max())


def psd_level(freqs: np.ndarray, psd_db: np.ndarray, f0: float) -> float:
    return float(psd_db[np.argmin(np.abs(freqs - f0))])


def shoulder_level(freqs: np.ndarray, psd_db: np.ndarray, band: tuple[float, float], offset: float) -> float:
    """Mean PSD (dB) at ``offset`` beyond each edge of the occupied band."""
    lo, hi = band
    return 0.5 * (psd_level(freqs, psd_db, lo - offset) + psd_level(freqs, psd_db, hi + offset))


# --- error metrics ---------------------------------------------------------

def ber(tx_bits: np.ndarray, rx_bits: np.ndarray) -> float:
    a, b = np.asarray(tx_bits).ravel(), np.asarray(rx_bits).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("empty bit streams")
    return float(np.count_nonzero(a != b) / a.size)


def match_targets(true_ranges: Sequence[float], est_ranges: Sequence[float]) -> np.ndarray:
    """Greedy nearest-range assignment; ``out[i]`` is the estimate paired with target i."""
    t = np.asarray(true_ranges, dtype=float)
    e = np.asarray(est_ranges, dtype=float)
    if t.shape != e.shape:
        raise ValueError(f"length mismatch: {t.size} targets vs {e.size} estimates")
    d = np.abs(t[:, None] - e[None, :])
    out = np.full(t.size, -1)
    for _ in range(t.size):
        i, j = np.unravel_index(np.argmin(d), d.shape)
        out[i] = j
        d[i, :] = np.inf
        d[:, j] = np.inf
    return out


def squared_errors(true_ranges, est_ranges, true_values=None, est_values=None) -> np.ndarray:
    """Per-target squared errors of one trial after nearest-range matching.

    Without ``*_values`` the ranges themselves are scored.
    """
    idx = match_targets(true_ranges, est_ranges)
    tv = np.asarray(true_ranges if true_values is None else true_values, dtype=float)
    ev = np.asarray(est_ranges if est_values is None else est_values, dtype=float)
    return (tv - ev[idx]) ** 2


def rmse(truth: Sequence[Sequence[float]], estimates: Sequence[Sequence[float]],
         truth_values=None, est_values=None) -> float:
    """sqrt(mean over trials of (1/P) sum_i (x_i - x_hat_i)^2), targets matched by range.

    ``truth``/``estimates`` hold per-trial ranges. To score another quantity
    (e.g. velocity) pass it in ``truth_values``/``est_values``; matching still
    uses the ranges.
    """
    if len(truth) != len(estimates):
        raise ValueError(f"length mismatch: {len(truth)} trials vs {len(estimates)}")
    if not len(truth):
        raise ValueError("no trials")
    per_trial = []
    for k, (t, e) in enumerate(zip(truth, estimates)):
        tv = None if truth_values is None else truth_values[k]
        ev = None if est_values is None else est_values[k]
        per_trial.append(squared_errors(t, e, tv, ev).mean())
    return float(math.sqrt(np.mean(per_trial)))


def passive_target_range(r_L: float, r_N: float, theta: float) -> float:
    """Receiver-to-target distance from the LoS length, the reflected path
    length and the angle between the two arrivals."""
    den = 2 * r_N - 2 * r_L * math.cos(theta)
    if abs(den) < 1e-12 * max(1.0, abs(r_N), abs(r_L)):
        raise GeometryError("degenerate geometry: 2 r_N = 2 r_L cos(theta)")
    return (r_N ** 2 - r_L ** 2) / den


# --- mergeable aggregates --------------------------------------------------

@dataclass
class RunningStat:
    """Count, sum and sum of squares; merging is exact and order-free up to
    floating-point addition."""

    count: int = 0
    total: float = 0.0
    total_sq: float = 0.0

    def add(self, x: float) -> "RunningStat":
        self.count += 1
        self.total += float(x)
        self.total_sq += float(x) * float(x)
        return self

    def extend(self, xs: Iterable[float]) -> "RunningStat":
        for x in xs:
            self.add(x)
        return self

    def merge(self, other: "RunningStat") -> "RunningStat":
        return RunningStat(self.count + other.count, self.total + other.total, self.total_sq + other.total_sq)

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else math.nan

    @property
    def var(self) -> float:
        if self.count < 2:
            return math.nan
        return max(0.0, (self.total_sq - self.total ** 2 / self.count) / (self.count - 1))

    def ci95(self) -> float:
        """Half-width of the normal-approximation 95 % interval of the mean."""
        if self.count < 2:
            return math.nan
        return 1.959963984540054 * math.sqrt(self.var / self.count)
