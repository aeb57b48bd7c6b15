"""Passive-sensing receiver: pilot-aided coarse estimation, conjugate-gradient
equalisation and the iterative channel-estimation / data-detection loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import CddsOperator, Mode
from .lattice import FrameParams, QamAlphabet, nearest_points, unvec, vec
from .modem import time_to_dd
from .sensing import EstimationResult, TpeConfig, tpe_estimate


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class CgConfig:
    lam: float = 0.0
    tol: float = 1e-6
    max_iters: int = 100

    def __post_init__(self):
        if self.lam < 0 or not self.tol > 0 or self.max_iters < 1:
            raise ValueError(f"invalid CG settings: {self}")

    @classmethod
    def for_snr_db(cls, snr_db: float, **kw) -> "CgConfig":
        return cls(lam=10 ** (-snr_db / 10), **kw)


@dataclass
class CgResult:
    s: np.ndarray
    iterations: int
    converged: bool
    objective: list[float] = field(default_factory=list)


def cg_equalize(r: np.ndarray, op: CddsOperator, cfg: CgConfig, track: bool = False) -> CgResult:
    """Solve ``(H^H H + lam I) s = H^H r`` with H applied matrix-free.

    With ``track=True`` the regularised objective ``||H s - r||^2 + lam ||s||^2``
    is recorded after every iterate (costs one extra operator application).
    """
    r = np.asarray(r, dtype=complex)
    lam = cfg.lam
    s = np.zeros_like(r)
    res = r.copy()
    x = op.adjoint(res)
    p = x.copy()
    gamma = np.vdot(x, x).real
    gamma0 = gamma
    history = [np.vdot(r, r).real] if track else []
    if gamma0 == 0:
        return CgResult(s, 0, True, history)
    t = 0
    converged = False
    while t < cfg.max_iters:
        q = op.apply(p)
        beta = gamma / (np.vdot(q, q).real + lam * np.vdot(p, p).real)
        s = s + beta * p
        res = res - beta * q
        x = op.adjoint(res) - lam * s
        gamma_next = np.vdot(x, x).real
        p = x + (gamma_next / gamma) * p
        gamma = gamma_next
        t += 1
        if track:
            e = op.apply(s) - r
            history.append(np.vdot(e, e).real + lam * np.vdot(s, s).real)
        if math.sqrt(gamma) < cfg.tol * math.sqrt(gamma0):
            converged = True
            break
    return CgResult(s, t, converged, history)


def coarse_ce(y: np.ndarray, x_p: np.ndarray, P: int, params: FrameParams,
              cfg: TpeConfig | None = None) -> EstimationResult:
    """Pilot-only estimate; the data contribution is treated as interference."""
    if not np.any(np.asarray(x_p)):
        raise ConfigurationError("pilot grid carries no energy; pilot-aided estimation is undefined")
    return tpe_estimate(y, x_p, P, params, cfg)


def recover_symbols(s_hat: np.ndarray, X_p: np.ndarray, alphabet: QamAlphabet, sigma_d2: float,
                    M: int, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Pilot removal, de-spreading and per-entry hard decisions.

    ``X_d' = (vec^-1(s) F_N - X_p) F_N^H``, then nearest alphabet point.
    """
    S = unvec(s_hat, M, N)
    X_dd = np.fft.fft(S, axis=1, norm="ortho") - X_p
    X_soft = np.fft.ifft(X_dd, axis=1, norm="ortho")
    points = math.sqrt(sigma_d2) * alphabet.points
    X_hat = points[nearest_points(X_soft, alphabet, sigma_d2)]
    return X_soft, X_hat


def rebuild_x(X_hat_d: np.ndarray, x_p: np.ndarray) -> np.ndarray:
    return vec(np.fft.fft(X_hat_d, axis=1, norm="ortho")) + np.asarray(x_p)


@dataclass(frozen=True)
class ReceiverConfig:
    alphabet: QamAlphabet
    sigma_d2: float
    cg: CgConfig
    tpe: TpeConfig = TpeConfig(refine_passes=2)
    max_outer: int = 10


def receiver_config(params: FrameParams, alphabet: QamAlphabet, sigma_p2: float, snr_db: float,
                    max_doppler_bin: int | None = 1, refine_passes: int = 2) -> ReceiverConfig:
    """Receiver settings for a frame whose paths lie within the cyclic prefix.

    The Phase-I support is bounded by the CP length in delay and by
    ``max_doppler_bin`` in Doppler; ``None`` leaves an axis unbounded.
    """
    tpe = TpeConfig(refine_passes=refine_passes, max_delay_bin=params.cp_len or None,
                    max_doppler_bin=max_doppler_bin)
    return ReceiverConfig(alphabet, 1.0 - sigma_p2, CgConfig.for_snr_db(snr_db), tpe)


@dataclass
class DetectionResult:
    X_hat: np.ndarray
    estimate: EstimationResult
    iterations: int
    converged: bool
    coarse: EstimationResult | None = None
    history: list[np.ndarray] = field(default_factory=list, repr=False)


def iterative_ce_dd(r: np.ndarray, X_p: np.ndarray, P: int, params: FrameParams, cfg: ReceiverConfig,
                    y: np.ndarray | None = None, initial: EstimationResult | None = None) -> DetectionResult:
    """Alternate CG equalisation, hard decisions and data-aided re-estimation.

    ``r`` is the CP-free time-domain frame; ``y`` defaults to its DD image.
    ``initial`` replaces the pilot-only estimate when given. Stops when two
    consecutive decision grids agree or after ``cfg.max_outer`` passes.
    """
    M, N = params.M, params.N
    X_p = np.asarray(X_p)
    x_p = vec(X_p)
    if y is None:
        y = time_to_dd(r, M, N)
    coarse = initial if initial is not None else coarse_ce(y, x_p, P, params, cfg.tpe)
    est = coarse
    prev = None
    history = []
    t = 0
    converged = False
    X_hat = None
    while t < cfg.max_outer:
        t += 1
        op = CddsOperator(est.to_spec(Mode.PASSIVE), params)
        s_hat = cg_equalize(r, op, cfg.cg).s
        _, X_hat = recover_symbols(s_hat, X_p, cfg.alphabet, cfg.sigma_d2, M, N)
        history.append(X_hat)
        x_hat = rebuild_x(X_hat, x_p)
        if prev is not None and np.array_equal(X_hat, prev):
            converged = True
            break
        est = tpe_estimate(y, x_hat, P, params, cfg.tpe)
        prev = X_hat
    return DetectionResult(X_hat, est, t, converged, coarse, history)
