"""Experiment configuration, seeded Monte Carlo drivers and the recipe catalog.

A run expands a config into parameter points, executes independent trials
with per-trial generators seeded by ``seed ^ counter`` and reduces them in
trial order, so the output does not depend on the worker count.
"""

from __future__ import annotations

import copy
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

from . import analysis
from .baselines import WaveformKind, continuous_signal, sense_with, time_matrix, transmit_sense
from .channel import C0, CddsOperator, ChannelSpec, Mode, PathParams, add_awgn, geometry_to_path, random_channel
from .detect import iterative_ce_dd, receiver_config
from .lattice import FrameParams, PilotConfig, QamAlphabet, build_pilot_grid, qam_demap, qam_map, vec
from .modem import dd_to_time, oversample
from .sensing import to_range_velocity

EXPERIMENT_KINDS = ("papr", "oobe", "ber", "sense-active", "sense-passive", "power-opt")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class TrialError(RuntimeError):
    def __init__(self, seed: int, cause: BaseException):
        super().__init__(f"trial with seed {seed} failed: {cause!r}")
        self.seed = seed
        self.cause = cause


# --- configuration ---------------------------------------------------------

def _take(d: Any, allowed: dict[str, Any], where: str) -> dict[str, Any]:
    """Merge ``d`` over defaults, rejecting unknown keys. ``...`` marks required."""
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError(where, f"expected a mapping, got {type(d).__name__}")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}" if where else unknown[0], "unknown key")
    out = {}
    for k, default in allowed.items():
        if k in d:
            out[k] = d[k]
        elif default is ...:
            raise ConfigError(f"{where}.{k}" if where else k, "required key missing")
        else:
            out[k] = copy.deepcopy(default)
    return out


def _num(v: Any, where: str, kind=float, lo=None, hi=None, lo_open=False) -> Any:
    if kind is float and isinstance(v, str):
        # YAML 1.1 reads exponents without a signed exponent (1.92e6) as strings
        try:
            v = float(v)
        except ValueError:
            pass
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(where, f"expected a number, got {v!r}")
    if kind is int and float(v) != int(v):
        raise ConfigError(where, f"expected an integer, got {v!r}")
    v = kind(v)
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ConfigError(where, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(where, f"must be <= {hi}, got {v}")
    return v


def _list(v: Any, where: str) -> list:
    if not isinstance(v, (list, tuple)):
        raise ConfigError(where, f"expected a list, got {v!r}")
    return list(v)


@dataclass(frozen=True)
class PathEntry:
    excess_m: float  # path length beyond the first arrival
    gain_db: float
    velocity: float  # radial velocity, m/s


@dataclass(frozen=True)
class TargetEntry:
    range_m: float
    velocity: float


@dataclass(frozen=True)
class ChannelConfig:
    """One of four channel descriptions.

    ``paths``: fixed propagation paths (passive link), gains normalised to
    ``sigma_h2``, independent uniform phases per trial.
    ``targets``: monostatic point targets of equal power ``sigma_h2 / P``.
    ``random``: Rayleigh ensemble of ``P`` resolvable paths.
    ``bistatic``: LoS plus one target reflection; the target sits
    ``target_m`` from the receiver at ``angle_deg`` from the LoS direction.
    """

    kind: str
    paths: tuple[PathEntry, ...] = ()
    targets: tuple[TargetEntry, ...] = ()
    P: int = 0
    max_doppler_bins: float = 0.0
    los_m: float = 0.0
    target_m: float = 0.0
    angle_deg: float = 0.0
    target_velocity: float = 0.0
    sigma_h2: float = 1.0

    @property
    def path_count(self) -> int:
        return {"paths": len(self.paths), "targets": len(self.targets), "random": self.P, "bistatic": 2}[self.kind]


def _channel_config(d: Any, where: str = "channel") -> ChannelConfig:
    if d is None:
        return ChannelConfig("paths", (PathEntry(0.0, 0.0, 0.0),))
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"{where}.kind", "required key missing")
    kind = d["kind"]
    common = {"kind": ..., "sigma_h2": 1.0}
    if kind == "paths":
        c = _take(d, {**common, "paths": ...}, where)
        entries = []
        for i, p in enumerate(_list(c["paths"], f"{where}.paths")):
            w = f"{where}.paths[{i}]"
            e = _take(p, {"excess_m": 0.0, "gain_db": 0.0, "velocity": 0.0}, w)
            entries.append(PathEntry(_num(e["excess_m"], f"{w}.excess_m", lo=0), _num(e["gain_db"], f"{w}.gain_db"),
                                     _num(e["velocity"], f"{w}.velocity")))
        if not entries:
            raise ConfigError(f"{where}.paths", "at least one path required")
        return ChannelConfig("paths", tuple(entries), sigma_h2=_num(c["sigma_h2"], f"{where}.sigma_h2", lo=0, lo_open=True))
    if kind == "targets":
        c = _take(d, {**common, "targets": ...}, where)
        entries = []
        for i, t in enumerate(_list(c["targets"], f"{where}.targets")):
            w = f"{where}.targets[{i}]"
            e = _take(t, {"range": ..., "velocity": 0.0}, w)
            entries.append(TargetEntry(_num(e["range"], f"{w}.range", lo=0), _num(e["velocity"], f"{w}.velocity")))
        if not entries:
            raise ConfigError(f"{where}.targets", "at least one target required")
        return ChannelConfig("targets", targets=tuple(entries),
                             sigma_h2=_num(c["sigma_h2"], f"{where}.sigma_h2", lo=0, lo_open=True))
    if kind == "random":
        c = _take(d, {**common, "P": ..., "max_doppler_bins": 0.0}, where)
        return ChannelConfig("random", P=_num(c["P"], f"{where}.P", int, lo=1),
                             max_doppler_bins=_num(c["max_doppler_bins"], f"{where}.max_doppler_bins", lo=0),
                             sigma_h2=_num(c["sigma_h2"], f"{where}.sigma_h2", lo=0, lo_open=True))
    if kind == "bistatic":
        c = _take(d, {**common, "los_m": ..., "target_m": ..., "angle_deg": ..., "target_velocity": 0.0}, where)
        return ChannelConfig("bistatic", los_m=_num(c["los_m"], f"{where}.los_m", lo=0, lo_open=True),
                             target_m=_num(c["target_m"], f"{where}.target_m", lo=0, lo_open=True),
                             angle_deg=_num(c["angle_deg"], f"{where}.angle_deg", lo=0, lo_open=True, hi=180),
                             target_velocity=_num(c["target_velocity"], f"{where}.target_velocity"),
                             sigma_h2=_num(c["sigma_h2"], f"{where}.sigma_h2", lo=0, lo_open=True))
    raise ConfigError(f"{where}.kind", f"unknown channel kind {kind!r}")


_OPTION_DEFAULTS: dict[str, dict[str, Any]] = {
    "papr": {"thresholds_db": [4, 5, 6, 7, 8, 9, 10, 11, 12], "ccdf_levels": [1e-2, 1e-3],
             "pa": {"class_a": {"G": analysis.CLASS_A.G, "g": analysis.CLASS_A.g},
                    "class_b": {"G": analysis.CLASS_B.G, "g": analysis.CLASS_B.g}}},
    "oobe": {"offsets": [1, 2, 4, 8], "segment_symbols": 4},
    "ber": {"max_outer": 10, "max_doppler_bins": 1},
    "sense-active": {"target_counts": None},
    "sense-passive": {"max_outer": 10, "max_doppler_bins": 1},
    "power-opt": {"P": 3, "sigma_h2": 1.0},
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    frame: FrameParams
    waveforms: tuple[WaveformKind, ...]
    qam: int
    sigma_p2: tuple[float, ...]
    channel: ChannelConfig
    snr_db: tuple[float, ...]
    trials: int
    seed: int
    output: str | None
    options: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        f = self.frame
        return {
            "experiment": self.experiment,
            "frame": {"M": f.M, "N": f.N, "delta_f": f.delta_f, "cp_len": f.cp_len, "f_c": f.f_c, "L": f.L},
            "waveforms": [w.value for w in self.waveforms],
            "qam": self.qam,
            "pilot": {"sigma_p2": list(self.sigma_p2)},
            "channel": _channel_dict(self.channel),
            "snr_db": list(self.snr_db),
            "trials": self.trials,
            "seed": self.seed,
            "output": self.output,
            "options": copy.deepcopy(self.options),
        }


def _channel_dict(c: ChannelConfig) -> dict:
    if c.kind == "paths":
        return {"kind": "paths", "sigma_h2": c.sigma_h2,
                "paths": [{"excess_m": p.excess_m, "gain_db": p.gain_db, "velocity": p.velocity} for p in c.paths]}
    if c.kind == "targets":
        return {"kind": "targets", "sigma_h2": c.sigma_h2,
                "targets": [{"range": t.range_m, "velocity": t.velocity} for t in c.targets]}
    if c.kind == "random":
        return {"kind": "random", "sigma_h2": c.sigma_h2, "P": c.P, "max_doppler_bins": c.max_doppler_bins}
    return {"kind": "bistatic", "sigma_h2": c.sigma_h2, "los_m": c.los_m, "target_m": c.target_m,
            "angle_deg": c.angle_deg, "target_velocity": c.target_velocity}


def parse_config(d: Any) -> ExperimentConfig:
    """Validate a config mapping; raises :class:`ConfigError` naming the field."""
    c = _take(d, {"experiment": ..., "frame": {}, "waveforms": ["dft-s-otfs"], "qam": 4, "pilot": {},
                  "channel": None, "snr_db": [], "trials": 1, "seed": 0, "output": None, "options": {}}, "")
    kind = c["experiment"]
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENT_KINDS)}; got {kind!r}")
    fr = _take(c["frame"], {"M": 64, "N": 16, "delta_f": 1.92e6, "cp_len": 8, "f_c": 0.3e12, "L": 4}, "frame")
    try:
        frame = FrameParams(_num(fr["M"], "frame.M", int), _num(fr["N"], "frame.N", int),
                            _num(fr["delta_f"], "frame.delta_f"), _num(fr["cp_len"], "frame.cp_len", int),
                            _num(fr["f_c"], "frame.f_c", lo=0, lo_open=True), _num(fr["L"], "frame.L", int))
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("frame", str(e)) from None
    waveforms = []
    for i, w in enumerate(_list(c["waveforms"], "waveforms")):
        try:
            waveforms.append(WaveformKind(w))
        except ValueError:
            raise ConfigError(f"waveforms[{i}]", f"unknown waveform {w!r}") from None
    if not waveforms:
        raise ConfigError("waveforms", "at least one waveform required")
    qam = _num(c["qam"], "qam", int)
    if qam not in (4, 16, 64):
        raise ConfigError("qam", f"must be 4, 16 or 64, got {qam}")
    pl = _take(c["pilot"], {"sigma_p2": [0.0]}, "pilot")
    sp = pl["sigma_p2"] if isinstance(pl["sigma_p2"], list) else [pl["sigma_p2"]]
    sigma_p2 = tuple(_num(v, f"pilot.sigma_p2[{i}]", lo=0, hi=0.999999) for i, v in enumerate(sp))
    if not sigma_p2:
        raise ConfigError("pilot.sigma_p2", "at least one value required")
    channel = _channel_config(c["channel"])
    snr = tuple(_num(v, f"snr_db[{i}]") for i, v in enumerate(_list(c["snr_db"], "snr_db")))
    if kind in ("ber", "sense-active", "sense-passive", "power-opt") and not snr:
        raise ConfigError("snr_db", "non-empty SNR list required for this experiment")
    trials = _num(c["trials"], "trials", int, lo=1)
    seed = _num(c["seed"], "seed", int, lo=0, hi=2**64 - 1)
    output = c["output"]
    if output is not None and not isinstance(output, str):
        raise ConfigError("output", "expected a path string")
    options = _take(c["options"], _OPTION_DEFAULTS[kind], "options")
    _check_options(kind, options, channel, frame, sigma_p2, waveforms)
    return ExperimentConfig(kind, frame, tuple(waveforms), qam, sigma_p2, channel, snr, trials, seed, output, options)


def _check_options(kind, o, channel, frame, sigma_p2, waveforms):
    if kind == "papr":
        for i, v in enumerate(_list(o["thresholds_db"], "options.thresholds_db")):
            _num(v, f"options.thresholds_db[{i}]")
        for i, v in enumerate(_list(o["ccdf_levels"], "options.ccdf_levels")):
            _num(v, f"options.ccdf_levels[{i}]", lo=0, lo_open=True, hi=1)
        pa = _take(o["pa"], {"class_a": None, "class_b": None}, "options.pa")
        for name, m in pa.items():
            if m is None:
                continue
            m = _take(m, {"G": ..., "g": ...}, f"options.pa.{name}")
            try:
                analysis.PaModel(_num(m["G"], f"options.pa.{name}.G"), _num(m["g"], f"options.pa.{name}.g"))
            except ValueError as e:
                raise ConfigError(f"options.pa.{name}", str(e)) from None
    elif kind == "oobe":
        for i, v in enumerate(_list(o["offsets"], "options.offsets")):
            _num(v, f"options.offsets[{i}]", lo=0, lo_open=True)
        _num(o["segment_symbols"], "options.segment_symbols", int, lo=1)
    elif kind in ("ber", "sense-passive"):
        _num(o["max_outer"], "options.max_outer", int, lo=1)
        if o["max_doppler_bins"] is not None:
            _num(o["max_doppler_bins"], "options.max_doppler_bins", int, lo=0)
        if any(w is not WaveformKind.DFT_S_OTFS for w in waveforms):
            raise ConfigError("waveforms", f"{kind} runs the DFT-s-OTFS receiver only")
        if any(v == 0 for v in sigma_p2):
            raise ConfigError("pilot.sigma_p2", "the iterative receiver needs a non-zero pilot share")
        if kind == "sense-passive" and channel.kind != "bistatic":
            raise ConfigError("channel.kind", "sense-passive needs a bistatic channel")
        if kind == "ber" and channel.kind not in ("paths", "random"):
            raise ConfigError("channel.kind", "ber needs a paths or random channel")
    elif kind == "sense-active":
        if channel.kind != "targets":
            raise ConfigError("channel.kind", "sense-active needs a targets channel")
        if o["target_counts"] is not None:
            for i, v in enumerate(_list(o["target_counts"], "options.target_counts")):
                _num(v, f"options.target_counts[{i}]", int, lo=1, hi=len(channel.targets))
        for t in channel.targets:
            try:
                geometry_to_path(t.range_m, t.velocity, frame.f_c, Mode.ACTIVE, frame)
            except ValueError as e:
                raise ConfigError("channel.targets", str(e)) from None
    elif kind == "power-opt":
        _num(o["P"], "options.P", int, lo=1)
        _num(o["sigma_h2"], "options.sigma_h2", lo=0, lo_open=True)


# --- results ----------------------------------------------------------------

@dataclass(frozen=True)
class ResultRecord:
    experiment: str
    point: str
    metric: str
    value: float
    trials: int
    ci95: float = math.nan

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite value for {self.metric} at {self.point}")


def point_label(**kw) -> str:
    parts = []
    for k, v in kw.items():
        if isinstance(v, float):
            v = f"{v:g}"
        parts.append(f"{k}={v}")
    return ";".join(parts)


@dataclass
class Point:
    label: str
    trial: Callable[[np.random.Generator], dict[str, float]]
    reduce: Callable[[list[dict[str, float]]], list[tuple[str, float, int, float]]] | None = None


def default_reduce(rows: list[dict[str, float]]) -> list[tuple[str, float, int, float]]:
    """Mean and CI of every metric; ``sq_*`` metrics are reported as RMSE."""
    out = []
    for key in rows[0]:
        st = analysis.RunningStat().extend(r[key] for r in rows)
        if key.startswith("sq_"):
            rmse = math.sqrt(st.mean)
            ci = st.ci95() / (2 * rmse) if rmse > 0 and st.count > 1 else (0.0 if st.count > 1 else math.nan)
            out.append(("rmse_" + key[3:], rmse, st.count, ci))
        else:
            out.append((key, st.mean, st.count, st.ci95()))
    return out


def trial_seed(seed: int, counter: int) -> int:
    return (seed ^ counter) & (2**64 - 1)


def run_points(experiment: str, points: list[Point], trials: int, seed: int, threads: int = 1) -> list[ResultRecord]:
    """Execute ``trials`` per point; trial counters run across points in order."""
    jobs = [(pi, trial_seed(seed, pi * trials + t)) for pi in range(len(points)) for t in range(trials)]

    def work(job):
        pi, s = job
        try:
            return points[pi].trial(np.random.default_rng(s))
        except Exception as e:  # reported with the seed that reproduces it
            raise TrialError(s, e) from e

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(work, jobs))
    else:
        rows = [work(j) for j in jobs]
    records = []
    for pi, p in enumerate(points):
        mine = rows[pi * trials:(pi + 1) * trials]
        for metric, value, n, ci in (p.reduce or default_reduce)(mine):
            records.append(ResultRecord(experiment, p.label, metric, float(value), int(n), float(ci)))
    return records


# --- frame helpers ------------------------------------------------------------

def random_bits(params: FrameParams, alphabet: QamAlphabet, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, params.size * alphabet.bits_per_symbol, dtype=np.uint8)


def dfts_otfs_frame(params: FrameParams, alphabet: QamAlphabet, sigma_p2: float, rng: np.random.Generator):
    """Random DFT-s-OTFS frame: (bits, X_d, X_p, time samples without CP)."""
    bits = random_bits(params, alphabet, rng)
    X_d = qam_map(bits, alphabet, 1.0 - sigma_p2, params.M, params.N).values
    X_p = build_pilot_grid(params, params.default_pilot(sigma_p2)).values
    X = np.fft.fft(X_d, axis=1, norm="ortho") + X_p
    return bits, X_d, X_p, dd_to_time(vec(X), params.M, params.N)


def path_channel(cfg: ChannelConfig, params: FrameParams, rng: np.random.Generator,
                 static: bool = False) -> ChannelSpec:
    """Draw one realisation of a ``paths`` or ``random`` channel description."""
    if cfg.kind == "random":
        max_delay = params.cp_len * params.T / params.M
        return random_channel(params, cfg.P, rng, cfg.sigma_h2, max_delay=max_delay,
                              max_doppler=0.0 if static else cfg.max_doppler_bins * params.doppler_resolution)
    powers = np.array([10 ** (p.gain_db / 10) for p in cfg.paths])
    powers *= cfg.sigma_h2 / powers.sum()
    phases = rng.uniform(0, 2 * np.pi, len(cfg.paths))
    paths = []
    for p, pw, ph in zip(cfg.paths, powers, phases):
        nu = 0.0 if static else params.f_c * p.velocity / C0
        paths.append(PathParams(complex(math.sqrt(pw) * np.exp(1j * ph)), p.excess_m / C0, nu))
    return ChannelSpec(tuple(paths), cfg.sigma_h2, Mode.PASSIVE)


def target_channel(targets: Iterable[TargetEntry], params: FrameParams, rng: np.random.Generator,
                   sigma_h2: float = 1.0) -> ChannelSpec:
    """Monostatic targets sharing ``sigma_h2`` equally, uniform random phases."""
    targets = list(targets)
    amp = math.sqrt(sigma_h2 / len(targets))
    paths = []
    for t in targets:
        tau, nu = geometry_to_path(t.range_m, t.velocity, params.f_c, Mode.ACTIVE, params)
        paths.append(PathParams(complex(amp * np.exp(1j * rng.uniform(0, 2 * np.pi))), tau, nu))
    return ChannelSpec(tuple(paths), sigma_h2, Mode.ACTIVE)


def bistatic_geometry(los_m: float, target_m: float, angle_deg: float) -> float:
    """Reflected path length Tx -> target -> Rx with the Rx at the origin and
    the Tx at ``los_m`` along the x axis."""
    th = math.radians(angle_deg)
    tx = np.array([los_m, 0.0])
    tgt = target_m * np.array([math.cos(th), math.sin(th)])
    return float(target_m + np.linalg.norm(tgt - tx))


def bistatic_channel(cfg: ChannelConfig, params: FrameParams, rng: np.random.Generator) -> ChannelSpec:
    """LoS and target paths, delays on the absolute time axis, equal power."""
    r_n = bistatic_geometry(cfg.los_m, cfg.target_m, cfg.angle_deg)
    amp = math.sqrt(cfg.sigma_h2 / 2)
    ph = rng.uniform(0, 2 * np.pi, 2)
    los = PathParams(complex(amp * np.exp(1j * ph[0])), cfg.los_m / C0, 0.0)
    nlos = PathParams(complex(amp * np.exp(1j * ph[1])), r_n / C0, params.f_c * cfg.target_velocity / C0)
    for p in (los, nlos):
        p.check(params)
    return ChannelSpec((los, nlos), cfg.sigma_h2, Mode.PASSIVE)


# --- experiment runners -----------------------------------------------------------

def _papr_points(cfg: ExperimentConfig) -> list[Point]:
    params, alphabet = cfg.frame, QamAlphabet(cfg.qam)
    o = cfg.options
    pa = {k: analysis.PaModel(v["G"], v["g"]) for k, v in o["pa"].items() if v is not None}
    points = []
    for kind in cfg.waveforms:
        def trial(rng, kind=kind):
            X = qam_map(random_bits(params, alphabet, rng), alphabet, 1.0, params.M, params.N).values
            S = time_matrix(kind, X, params)
            return {"papr_db": analysis.papr_db(oversample(vec(S), params.M, params.N, params.L))}

        def reduce(rows):
            v = np.array([r["papr_db"] for r in rows])
            n = v.size
            out = [("papr_db_mean", float(v.mean()), n, analysis.RunningStat().extend(v).ci95())]
            for th, p in zip(o["thresholds_db"], analysis.papr_ccdf(v, o["thresholds_db"], min_frames=0)):
                out.append((f"ccdf@{th:g}dB", float(p), n, 1.96 * math.sqrt(p * (1 - p) / n) if n > 1 else math.nan))
            for lvl in o["ccdf_levels"]:
                out.append((f"papr_db@ccdf={lvl:g}", analysis.papr_at_ccdf(v, lvl), n, math.nan))
            for name, model in pa.items():
                eta = analysis.pa_efficiency(v, model)
                out.append((f"pa_efficiency_{name}", float(eta.mean()), n, analysis.RunningStat().extend(eta).ci95()))
            return out

        points.append(Point(point_label(waveform=kind.value), trial, reduce))
    return points


def _oobe_points(cfg: ExperimentConfig) -> list[Point]:
    params, alphabet = cfg.frame, QamAlphabet(cfg.qam)
    L, M = params.L, params.M
    o = cfg.options
    band = (-0.5 * params.delta_f, (M - 0.5) * params.delta_f)
    fs = L * M * params.delta_f
    points = []
    for kind in cfg.waveforms:
        def trial(rng, kind=kind):
            X = qam_map(random_bits(params, alphabet, rng), alphabet, 1.0, M, params.N).values
            s = continuous_signal(kind, time_matrix(kind, X, params), L, params.cp_len)
            return {"frame": s}

        def reduce(rows):
            f, p = analysis.oobe_psd([r["frame"] for r in rows], fs, L * M * o["segment_symbols"])
            n = len(rows)
            return [(f"psd_db@{off:g}df", analysis.shoulder_level(f, p, band, off * params.delta_f), n, math.nan)
                    for off in o["offsets"]]

        points.append(Point(point_label(waveform=kind.value), trial, reduce))
    return points


def ber_trial(params: FrameParams, alphabet: QamAlphabet, sigma_p2: float, snr_db: float, spec: ChannelSpec,
              rng: np.random.Generator, max_outer: int = 10, max_doppler_bins: int | None = 1) -> dict[str, float]:
    """One DFT-s-OTFS frame through ``spec`` and the iterative receiver."""
    bits, X_d, X_p, s = dfts_otfs_frame(params, alphabet, sigma_p2, rng)
    sigma_w2 = 10 ** (-snr_db / 10)
    r = add_awgn(CddsOperator(spec, params).apply(s), sigma_w2, rng)
    rc = receiver_config(params, alphabet, sigma_p2, snr_db, max_doppler_bins)
    if max_outer != rc.max_outer:
        rc = type(rc)(rc.alphabet, rc.sigma_d2, rc.cg, rc.tpe, max_outer)
    res = iterative_ce_dd(r, X_p, spec.P, params, rc)
    rx = qam_demap(res.X_hat, alphabet, 1.0 - sigma_p2)
    return {"ber": analysis.ber(bits, rx), "iterations": float(res.iterations),
            "converged_within_5": float(res.converged and res.iterations <= 5)}


def _ber_points(cfg: ExperimentConfig) -> list[Point]:
    params, alphabet = cfg.frame, QamAlphabet(cfg.qam)
    o = cfg.options
    points = []
    for sp in cfg.sigma_p2:
        for snr in cfg.snr_db:
            def trial(rng, sp=sp, snr=snr):
                spec = path_channel(cfg.channel, params, rng)
                return ber_trial(params, alphabet, sp, snr, spec, rng, o["max_outer"], o["max_doppler_bins"])

            points.append(Point(point_label(sigma_p2=sp, snr_db=snr), trial))
    return points


def _sense_active_points(cfg: ExperimentConfig) -> list[Point]:
    params, alphabet = cfg.frame, QamAlphabet(cfg.qam)
    targets = cfg.channel.targets
    counts = cfg.options["target_counts"] or [len(targets)]
    points = []
    for kind in cfg.waveforms:
        for P in counts:
            for snr in cfg.snr_db:
                def trial(rng, kind=kind, P=P, snr=snr):
                    chosen = targets[:P]
                    spec = target_channel(chosen, params, rng, cfg.channel.sigma_h2)
                    X = qam_map(random_bits(params, alphabet, rng), alphabet, 1.0, params.M, params.N).values
                    y, x = transmit_sense(kind, X, spec, params, 10 ** (-snr / 10), rng)
                    est = sense_with(kind, y, x, P, params)
                    r_hat, v_hat = to_range_velocity(est, params.f_c, Mode.ACTIVE)
                    tr = [t.range_m for t in chosen]
                    tv = [t.velocity for t in chosen]
                    return {"sq_range_m": float(analysis.squared_errors(tr, r_hat).mean()),
                            "sq_velocity_mps": float(analysis.squared_errors(tr, r_hat, tv, v_hat).mean())}

                label = point_label(waveform=kind.value, P=P, snr_db=snr)
                points.append(Point(label, trial))
    return points


def passive_trial(params: FrameParams, alphabet: QamAlphabet, sigma_p2: float, snr_db: float,
                  ch: ChannelConfig, rng: np.random.Generator, max_outer: int = 10,
                  max_doppler_bins: int | None = 1) -> dict[str, float]:
    """Joint passive sensing: iterative receiver, then target range from the
    two estimated path lengths and the known arrival angle."""
    spec = bistatic_channel(ch, params, rng)
    bits, X_d, X_p, s = dfts_otfs_frame(params, alphabet, sigma_p2, rng)
    r = add_awgn(CddsOperator(spec, params).apply(s), 10 ** (-snr_db / 10), rng)
    rc = receiver_config(params, alphabet, sigma_p2, snr_db, max_doppler_bins)
    if max_outer != rc.max_outer:
        rc = type(rc)(rc.alphabet, rc.sigma_d2, rc.cg, rc.tpe, max_outer)
    res = iterative_ce_dd(r, X_p, 2, params, rc)
    taus = np.sort(res.estimate.tau)
    r_l, r_n = taus[0] * C0, taus[1] * C0
    try:
        r_s = analysis.passive_target_range(r_l, r_n, math.radians(ch.angle_deg))
    except analysis.GeometryError:
        r_s = math.inf
    err = (r_s - ch.target_m) ** 2 if math.isfinite(r_s) else ch.target_m ** 2
    rx = qam_demap(res.X_hat, alphabet, 1.0 - sigma_p2)
    return {"sq_target_range_m": float(err), "ber": analysis.ber(bits, rx)}


def _sense_passive_points(cfg: ExperimentConfig) -> list[Point]:
    params, alphabet = cfg.frame, QamAlphabet(cfg.qam)
    o = cfg.options
    points = []
    for sp in cfg.sigma_p2:
        for snr in cfg.snr_db:
            def trial(rng, sp=sp, snr=snr):
                return passive_trial(params, alphabet, sp, snr, cfg.channel, rng, o["max_outer"], o["max_doppler_bins"])

            points.append(Point(point_label(sigma_p2=sp, snr_db=snr), trial))
    return points


def _power_points(cfg: ExperimentConfig) -> list[Point]:
    params = cfg.frame
    o = cfg.options
    points = []
    for snr in cfg.snr_db:
        def trial(rng, snr=snr):
            sw = 10 ** (-snr / 10)
            sp = analysis.optimize_pilot_power(o["sigma_h2"], sw, o["P"], params.M, params.N)
            model = analysis.SinrModel(o["sigma_h2"], sw, sp, o["P"], params.M, params.N)
            return {"sigma_p2_opt": sp, "sinr_db": 10 * math.log10(analysis.sinr_closed_form(model))}

        points.append(Point(point_label(snr_db=snr), trial))
    return points


_BUILDERS = {
    "papr": _papr_points,
    "oobe": _oobe_points,
    "ber": _ber_points,
    "sense-active": _sense_active_points,
    "sense-passive": _sense_passive_points,
    "power-opt": _power_points,
}


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> list[ResultRecord]:
    trials = 1 if cfg.experiment == "power-opt" else cfg.trials
    return run_points(cfg.experiment, _BUILDERS[cfg.experiment](cfg), trials, cfg.seed, threads)


# --- SINR Monte Carlo ------------------------------------------------------------

def sinr_trial(params: FrameParams, P: int, snr_db: float, sigma_p2: float, rng: np.random.Generator,
               alphabet: QamAlphabet | None = None, max_doppler_bins: float = 1.0) -> tuple[float, float]:
    """Signal and error energy of the pilot-cancelled data after the full receiver.

    Returns ``(||A_hat x_d||^2, ||y - A_hat x_p - A_hat x_d||^2)`` with the
    final data-aided estimate ``A_hat``; their ratio of means is the
    empirical SINR.
    """
    alphabet = alphabet or QamAlphabet(4)
    max_delay = params.cp_len * params.T / params.M
    spec = random_channel(params, P, rng, 1.0, max_delay=max_delay,
                          max_doppler=max_doppler_bins * params.doppler_resolution)
    bits, X_d, X_p, s = dfts_otfs_frame(params, alphabet, sigma_p2, rng)
    sigma_w2 = 10 ** (-snr_db / 10)
    r = add_awgn(CddsOperator(spec, params).apply(s), sigma_w2, rng)
    rc = receiver_config(params, alphabet, sigma_p2, snr_db, int(math.ceil(max_doppler_bins)))
    res = iterative_ce_dd(r, X_p, P, params, rc)
    A_hat = CddsOperator(res.estimate.to_spec(), params)
    x_p = vec(X_p)
    x_d = vec(np.fft.fft(X_d, axis=1, norm="ortho"))
    y = vec(np.fft.fft(r.reshape((params.M, params.N), order="F"), axis=1, norm="ortho"))
    sig = A_hat.apply_dd(x_d)
    err = y - A_hat.apply_dd(x_p) - sig
    return float(np.vdot(sig, sig).real), float(np.vdot(err, err).real)


# --- recipes ---------------------------------------------------------------------

ALL_WAVEFORMS = [k.value for k in WaveformKind]
INDOOR_140 = {"kind": "paths", "paths": [
    {"excess_m": 0.0, "gain_db": 0.0},
    {"excess_m": 3.4, "gain_db": -6.0},
    {"excess_m": 7.8, "gain_db": -10.0},
]}
MOBILE_300 = {"kind": "paths", "paths": [
    {"excess_m": 0.0, "gain_db": 0.0, "velocity": 138.9},
    {"excess_m": 3.4, "gain_db": -6.0, "velocity": 100.0},
    {"excess_m": 7.8, "gain_db": -10.0, "velocity": -80.0},
]}
THREE_TARGETS = {"kind": "targets", "targets": [
    {"range": 10.0, "velocity": 10.0},
    {"range": 30.0, "velocity": 20.0},
    {"range": 50.0, "velocity": 30.0},
]}

RECIPES: dict[str, dict] = {
    "fig5_papr": {
        "experiment": "papr", "frame": {"M": 64, "N": 16, "L": 4}, "waveforms": ALL_WAVEFORMS,
        "qam": 4, "trials": 2000, "seed": 1,
    },
    "fig6_pa_eff": {
        "experiment": "papr", "frame": {"M": 64, "N": 16, "L": 4}, "waveforms": ALL_WAVEFORMS,
        "qam": 4, "trials": 2000, "seed": 2, "options": {"thresholds_db": [], "ccdf_levels": []},
    },
    "fig7_oobe": {
        "experiment": "oobe", "frame": {"M": 128, "N": 32, "L": 8}, "waveforms": ALL_WAVEFORMS,
        "qam": 4, "trials": 100, "seed": 3,
    },
    "fig8_ber140": {
        "experiment": "ber", "frame": {"M": 64, "N": 16, "f_c": 140e9}, "qam": 4,
        "pilot": {"sigma_p2": [0.02, 0.06, 0.14, 0.18]}, "channel": INDOOR_140,
        "snr_db": [3, 6, 9, 12, 15], "trials": 5, "seed": 4,
    },
    "fig9_power_opt": {
        "experiment": "power-opt", "frame": {"M": 128, "N": 32}, "snr_db": list(range(0, 31, 3)),
        "options": {"P": 3, "sigma_h2": 1.0}, "seed": 5,
    },
    "fig10_ber300": {
        "experiment": "ber", "frame": {"M": 64, "N": 16, "f_c": 0.3e12}, "qam": 4,
        "pilot": {"sigma_p2": [0.06]}, "channel": MOBILE_300, "snr_db": [6, 12, 15],
        "trials": 5, "seed": 6, "options": {"max_doppler_bins": 2},
    },
    "fig11_range_rmse": {
        "experiment": "sense-active", "frame": {"M": 128, "N": 32, "f_c": 0.3e12}, "channel": THREE_TARGETS,
        "snr_db": [-20, -15, -10, -5, 0, 5, 10], "trials": 10, "seed": 7, "options": {"target_counts": [1, 2, 3]},
    },
    "fig12_velocity_rmse": {
        "experiment": "sense-active", "frame": {"M": 128, "N": 32, "f_c": 0.3e12}, "channel": THREE_TARGETS,
        "snr_db": [-10, 0, 10, 20], "trials": 10, "seed": 8, "options": {"target_counts": [1, 3]},
    },
    "fig13_passive": {
        "experiment": "sense-passive", "frame": {"M": 128, "N": 32, "cp_len": 40, "f_c": 0.3e12},
        "pilot": {"sigma_p2": [0.02, 0.06, 0.14]},
        "channel": {"kind": "bistatic", "los_m": 20.0, "target_m": 8.0, "angle_deg": 60.0, "target_velocity": 5.0},
        "snr_db": [3, 9, 15], "trials": 3, "seed": 9,
    },
}


def list_recipes() -> list[str]:
    return list(RECIPES)


def recipe_config(name: str) -> ExperimentConfig:
    if name not in RECIPES:
        raise ConfigError("recipe", f"unknown recipe {name!r}; available: {', '.join(RECIPES)}")
    return parse_config(copy.deepcopy(RECIPES[name]))
