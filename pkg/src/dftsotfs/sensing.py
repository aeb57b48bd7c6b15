"""Two-phase delay/Doppler/gain estimation with successive interference
cancellation.

Phase I correlates the residual against every 2-D circular shift of the
transmit grid (one FFT-based cross-correlation), or optionally against the
exact on-grid channel images. Phase II refines inside a
two-bin box around the Phase-I peak with a 2-D golden-section search on
``|(Gamma(tau, nu) x)^H y_res|^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import C0, CddsOperator, ChannelSpec, Mode, PathParams, _kernel, _theta, _to_dd, _to_time
from .lattice import FrameParams, unvec, vec

ETA = (math.sqrt(5) - 1) / 2


class SingularEstimateError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TpeConfig:
    """Phase-II stopping rule and gain estimator.

    The golden-section loop runs until both intervals are narrower than the
    requested fraction of a delay / Doppler bin.
    """

    delay_resolution: float = 1e-4  # fraction of 1/(M delta_f)
    doppler_resolution: float = 1e-4  # fraction of 1/(N T)
    alpha_method: str = "ls"  # "ls" or "printed"
    refine_passes: int = 0  # cyclic re-estimation rounds after the SIC sweep
    max_delay_bin: int | None = None  # Phase-I support: 0 <= l <= max_delay_bin
    max_doppler_bin: int | None = None  # Phase-I support: |k| <= max_doppler_bin
    exact_phase1: bool = False  # True: include the phase of wrapped delay rows

    def __post_init__(self):
        if self.alpha_method not in ("ls", "printed"):
            raise ValueError(f"unknown alpha_method {self.alpha_method!r}")
        if not (self.delay_resolution > 0 and self.doppler_resolution > 0):
            raise ValueError("resolutions must be positive")
        if self.refine_passes < 0:
            raise ValueError("refine_passes must be non-negative")
        for v in (self.max_delay_bin, self.max_doppler_bin):
            if v is not None and v < 0:
                raise ValueError("support bounds must be non-negative")

    def iterations(self) -> int:
        # initial width is 2 bins on both axes
        finest = min(self.delay_resolution, self.doppler_resolution)
        return max(1, math.ceil(math.log(finest / 2.0) / math.log(ETA)))


@dataclass(frozen=True)
class SearchRegion:
    tau_lo: float
    tau_hi: float
    nu_lo: float
    nu_hi: float

    @classmethod
    def around(cls, l_hat: int, k_hat: int, params: FrameParams) -> "SearchRegion":
        dt, dn = params.delay_resolution, params.doppler_resolution
        return cls((l_hat - 1) * dt, (l_hat + 1) * dt, (k_hat - 1) * dn, (k_hat + 1) * dn)

    @classmethod
    def centred(cls, tau: float, nu: float, params: FrameParams) -> "SearchRegion":
        dt, dn = params.delay_resolution, params.doppler_resolution
        return cls(tau - dt, tau + dt, nu - dn, nu + dn)

    @property
    def midpoint(self) -> tuple[float, float]:
        return 0.5 * (self.tau_lo + self.tau_hi), 0.5 * (self.nu_lo + self.nu_hi)


@dataclass(frozen=True)
class EstimationResult:
    alpha: np.ndarray
    tau: np.ndarray
    nu: np.ndarray
    peak_ratio: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def P(self) -> int:
        return len(self.alpha)

    def paths(self) -> tuple[PathParams, ...]:
        return tuple(PathParams(complex(a), float(t), float(v)) for a, t, v in zip(self.alpha, self.tau, self.nu))

    def to_spec(self, mode: Mode = Mode.PASSIVE) -> ChannelSpec:
        return ChannelSpec(self.paths(), float(np.sum(np.abs(self.alpha) ** 2)), mode)

    def reliable(self, params: FrameParams, factor: float = 4.0) -> np.ndarray:
        """Peaks below ``factor * ln(MN)`` times the mean look like noise maxima."""
        return self.peak_ratio >= factor * math.log(params.size)


def to_range_velocity(result: EstimationResult, f_c: float, mode: Mode) -> tuple[np.ndarray, np.ndarray]:
    factor = 2.0 if mode is Mode.ACTIVE else 1.0
    return result.tau * C0 / factor, result.nu * C0 / (factor * f_c)


def _shift_objective(Y: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``|vec(Pi_M^l X Pi_N^-k)^H y|^2`` for every (l, k), column k in FFT order."""
    return np.abs(np.fft.ifft2(np.fft.fft2(Y) * np.conj(np.fft.fft2(X)))) ** 2


def _exact_objective(Y: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``|(Delta^k Pi_MN^l s)^H r|^2`` for l < M and every k, column k in FFT order.

    This is the on-grid objective of the exact chain: rows that wrap into the
    previous symbol pick up the phase the plain circular shift leaves out.
    A Doppler shift by k bins is a shift by k in the MN-point spectrum.
    """
    M, N = X.shape
    S = np.fft.fft(np.fft.ifft(X, axis=1).reshape(-1, order="F"))
    R = np.fft.fft(np.fft.ifft(Y, axis=1).reshape(-1, order="F"))
    ks = np.arange(N)
    k_signed = np.where(ks < N - N // 2, ks, ks - N)
    idx = (np.arange(M * N)[None, :] + k_signed[:, None]) % (M * N)
    corr = np.fft.ifft(R[idx] * np.conj(S)[None, :], axis=1)[:, :M]
    return np.abs(corr.T) ** 2


def phase1_ongrid(y_res: np.ndarray, X: np.ndarray, max_delay_bin: int | None = None,
                  max_doppler_bin: int | None = None, exact: bool = False) -> tuple[int, int, float]:
    """Best integer (l, k) over the grid, with k in [-N/2, N/2).

    Returns ``(l_hat, k_hat, peak_ratio)``. Ties go to the lexicographically
    smallest (l, k) in that signed ordering. The optional bounds restrict the
    search to a known channel support; the ratio is still taken against the
    mean over the whole grid.

    By default every candidate is a plain 2-D circular shift of X. Delay rows
    that wrap into the previous symbol carry an extra per-column phase in the
    exact chain, so for long delays with Doppler the plain peak loses
    coherence; ``exact=True`` scores the exact on-grid channel image instead.
    """
    X = np.asarray(X)
    M, N = X.shape
    Y = unvec(y_res, M, N)
    obj = (_exact_objective if exact else _shift_objective)(Y, X)
    obj = np.roll(obj, N // 2, axis=1)  # column j holds k = j - N/2
    mean = obj.mean()
    if max_delay_bin is not None or max_doppler_bin is not None:
        mask = np.ones_like(obj, dtype=bool)
        if max_delay_bin is not None:
            mask[np.arange(M) > max_delay_bin, :] = False
        if max_doppler_bin is not None:
            mask[:, np.abs(np.arange(N) - N // 2) > max_doppler_bin] = False
        obj = np.where(mask, obj, -1.0)
    idx = int(np.argmax(obj))
    l_hat, j = divmod(idx, N)
    ratio = float(obj.flat[idx] / mean) if mean > 0 else 0.0
    return l_hat, j - N // 2, ratio


class _Probe:
    """Evaluates ``|(Gamma(tau, nu) x)^H y|^2`` in the time domain.

    ``Gamma`` is a unitary conjugate of ``Theta``, so the inner product can be
    taken between ``Theta s`` and the time image of ``y``.
    """

    def __init__(self, x: np.ndarray, y_res: np.ndarray, params: FrameParams):
        self.params = params
        M, N = params.M, params.N
        self.s = _to_time(x, M, N)
        self.r = _to_time(y_res, M, N)

    def __call__(self, tau: float, nu: float) -> float:
        M, N = self.params.M, self.params.N
        t = _theta(_kernel(tau, nu, self.params), self.s, M, N)
        return abs(np.vdot(t, self.r)) ** 2


def golden_search_2d(f, region: SearchRegion, iterations: int) -> tuple[float, float]:
    """Maximise ``f(tau, nu)`` on the box; both widths shrink by ETA per step."""
    a_l, a_u, b_l, b_u = region.tau_lo, region.tau_hi, region.nu_lo, region.nu_hi
    for _ in range(iterations):
        I_a, I_b = a_u - a_l, b_u - b_l
        a1, a2 = a_l + (1 - ETA) * I_a, a_l + ETA * I_a
        b1, b2 = b_l + (1 - ETA) * I_b, b_l + ETA * I_b
        vals = np.array([f(a1, b1), f(a1, b2), f(a2, b1), f(a2, b2)])
        if vals.max() == vals.min():
            # flat box: contract symmetrically about the centre
            a_l, a_u = a_l + 0.5 * (1 - ETA) * I_a, a_u - 0.5 * (1 - ETA) * I_a
            b_l, b_u = b_l + 0.5 * (1 - ETA) * I_b, b_u - 0.5 * (1 - ETA) * I_b
            continue
        case = int(np.argmax(vals))
        if case == 0:
            a_u, b_u = a2, b2
        elif case == 1:
            a_u, b_l = a2, b1
        elif case == 2:
            a_l, b_u = a1, b2
        else:
            a_l, b_l = a1, b1
    return 0.5 * (a_l + a_u), 0.5 * (b_l + b_u)


def phase2_golden(y_res: np.ndarray, x: np.ndarray, region: SearchRegion, params: FrameParams,
                  iterations: int) -> tuple[float, float]:
    return golden_search_2d(_Probe(x, y_res, params), region, iterations)


def estimate_alpha(tau: float, nu: float, x: np.ndarray, y_res: np.ndarray, params: FrameParams,
                   method: str = "ls") -> complex:
    """Path gain at (tau, nu).

    ``"ls"`` is the least-squares projection ``(Gx)^H y / ||Gx||^2``;
    ``"printed"`` is ``||Gx||^2 / ((Gx)^H y)``, its reciprocal-conjugate form.
    """
    g = _to_dd(_theta(_kernel(tau, nu, params), _to_time(x, params.M, params.N), params.M, params.N),
               params.M, params.N)
    energy = np.vdot(g, g).real
    corr = np.vdot(g, y_res)
    if method == "ls":
        if energy == 0:
            raise SingularEstimateError("probe signal has zero energy")
        return complex(corr / energy)
    if method == "printed":
        if corr == 0:
            raise SingularEstimateError("correlation with the residual is zero")
        return complex(energy / corr)
    raise ValueError(f"unknown method {method!r}")


def _clamp(tau: float, nu: float, params: FrameParams) -> tuple[float, float]:
    half = 0.5 / params.T
    tau = min(max(tau, 0.0), math.nextafter(params.T, 0.0))
    nu = min(max(nu, -half), math.nextafter(half, 0.0))
    return tau, nu


def _gain(g: np.ndarray, y_res: np.ndarray, method: str) -> complex:
    energy = np.vdot(g, g).real
    corr = np.vdot(g, y_res)
    if method == "ls":
        if energy == 0:
            raise SingularEstimateError("probe signal has zero energy")
        return complex(corr / energy)
    if corr == 0:
        raise SingularEstimateError("correlation with the residual is zero")
    return complex(energy / corr)


def tpe_estimate(y: np.ndarray, x: np.ndarray, P: int, params: FrameParams,
                 cfg: TpeConfig | None = None) -> EstimationResult:
    """Estimate P paths from received DD vector ``y`` and known transmit ``x``.

    Targets are taken one at a time, each cancelled from the residual before
    the next Phase-I search. With ``cfg.refine_passes > 0`` every path is then
    re-searched in a two-bin box around its estimate with all other paths
    cancelled, and the gains are finally re-solved jointly by least squares.
    """
    if P < 1:
        raise ValueError(f"target count must be >= 1, got {P}")
    cfg = cfg or TpeConfig()
    M, N = params.M, params.N
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    y_res = y.copy()
    X = unvec(x, M, N)
    K = cfg.iterations()
    s = _to_time(x, M, N)

    def probe(tau, nu):
        return _to_dd(_theta(_kernel(tau, nu, params), s, M, N), M, N)

    alphas, taus, nus, ratios, probes = [], [], [], [], []
    for _ in range(P):
        l_hat, k_hat, ratio = phase1_ongrid(y_res, X, cfg.max_delay_bin, cfg.max_doppler_bin, cfg.exact_phase1)
        tau, nu = phase2_golden(y_res, x, SearchRegion.around(l_hat, k_hat, params), params, K)
        tau, nu = _clamp(tau, nu, params)
        g = probe(tau, nu)
        alpha = _gain(g, y_res, cfg.alpha_method)
        y_res = y_res - alpha * g
        alphas.append(alpha)
        taus.append(tau)
        nus.append(nu)
        ratios.append(ratio)
        probes.append(g)

    if cfg.refine_passes:
        for _ in range(cfg.refine_passes):
            for i in range(P):
                y_i = y_res + alphas[i] * probes[i]
                tau, nu = phase2_golden(y_i, x, SearchRegion.centred(taus[i], nus[i], params), params, K)
                taus[i], nus[i] = _clamp(tau, nu, params)
                probes[i] = probe(taus[i], nus[i])
                alphas[i] = _gain(probes[i], y_i, cfg.alpha_method)
                y_res = y_i - alphas[i] * probes[i]
        G = np.stack(probes, axis=1)
        alphas = list(np.linalg.lstsq(G, y, rcond=None)[0])
    return EstimationResult(np.array(alphas, dtype=complex), np.array(taus), np.array(nus), np.array(ratios))


def residual(y: np.ndarray, x: np.ndarray, result: EstimationResult, params: FrameParams) -> np.ndarray:
    """``y - sum_i alpha_i Gamma_i x`` for the estimated paths."""

    return np.asarray(y) - CddsOperator(result.to_spec(), params).apply_dd(x)
