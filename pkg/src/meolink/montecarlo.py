"""Synthetic detector and ranging time-tag streams for a pass.

Signal detections are drawn as a variable-rate Poisson process in emission
time (thinning on an envelope), snapped to the emitting pulse, delayed by
the exact round trip, smeared by detector jitter and quantised by the TDC.
Background counts are homogeneous in reception time. Cost scales with the
number of detections, not the number of pulses.

Randomness comes from Philox substreams keyed by ``(seed, purpose, slice)``
so the output does not depend on how slices are scheduled.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import linkbudget as lb
from .errors import NumericalError, ParameterError, ParseError, ValidationError
from .geometry import EphemerisTable, slant_range_at
from .linkbudget import LinkParams
from .timing import PS, SlrEpochPair, generate_slr_epochs, round_trip_time

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))

TAG_HEADER = "channel,timestamp_ps"

_POINTING, _SIGNAL, _BACKGROUND = 0, 1, 2


class Channel(enum.IntEnum):
    DETECTOR = 0
    SLR_EXIT = 1
    SLR_RETURN = 2


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float
    dark_rate: float
    jitter_fwhm: float
    tdc_bin: float = 81e-12
    name: str = "custom"

    def __post_init__(self):
        # zero efficiency is allowed so a blind detector can be simulated
        if not (0 <= self.efficiency <= 1):
            raise ParameterError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if not (self.dark_rate >= 0):
            raise ParameterError(f"dark_rate must be >= 0, got {self.dark_rate}")
        if not (self.jitter_fwhm > 0):
            raise ParameterError(f"jitter_fwhm must be positive, got {self.jitter_fwhm}")
        if not (self.tdc_bin > 0):
            raise ParameterError(f"tdc_bin must be positive, got {self.tdc_bin}")

    @property
    def jitter_sigma(self) -> float:
        return self.jitter_fwhm * FWHM_TO_SIGMA

    @property
    def tdc_bin_ps(self) -> int:
        return max(1, int(round(self.tdc_bin / PS)))


DETECTOR_PRESETS = {
    "pmt": DetectorModel(0.10, 50.0, 1.22e-9, 81e-12, "pmt"),
    "si-spad": DetectorModel(0.48, 350.0, 50e-12, 81e-12, "si-spad"),
    "snspd": DetectorModel(0.80, 10.0, 40e-12, 81e-12, "snspd"),
}


def detector_preset(name: str) -> DetectorModel:
    try:
        return DETECTOR_PRESETS[name.lower()]
    except KeyError:
        raise ParameterError(
            f"unknown detector preset {name!r}; choose from {sorted(DETECTOR_PRESETS)}"
        ) from None


@dataclass(frozen=True)
class PointingModel:
    """Ornstein-Uhlenbeck pointing error with an optional excess interval.

    ``zenith_excess`` is ``((start_s, end_s), added_rad)``.
    """

    mean_error: float = 0.0
    sigma: float = 0.0
    correlation_time: float = 60.0
    zenith_excess: tuple[tuple[float, float], float] | None = None
    dt: float = 1.0

    def __post_init__(self):
        if not (self.sigma >= 0):
            raise ParameterError("pointing sigma must be >= 0")
        if not (self.correlation_time > 0):
            raise ParameterError("correlation_time must be positive")
        if not (self.dt > 0):
            raise ParameterError("pointing dt must be positive")
        if self.zenith_excess is not None:
            (a, b), _ = self.zenith_excess
            if not b > a:
                raise ParameterError("zenith excess interval must have end > start")


@dataclass(frozen=True)
class MuPolicy:
    """How the photon number leaving the satellite is set.

    ``physical``: from the uplink budget with the pointing-dependent gain.
    ``fixed``: a constant ``mu_sat`` (e.g. an active modulated reflector).
    """

    kind: str = "physical"
    mu_sat: float | None = None

    def __post_init__(self):
        if self.kind not in ("physical", "fixed"):
            raise ParameterError(f"unknown mu policy {self.kind!r}")
        if self.kind == "fixed" and (self.mu_sat is None or self.mu_sat < 0):
            raise ParameterError("fixed mu policy needs mu_sat >= 0")

    @classmethod
    def physical(cls) -> "MuPolicy":
        return cls("physical")

    @classmethod
    def fixed(cls, mu_sat: float) -> "MuPolicy":
        return cls("fixed", float(mu_sat))


@dataclass(frozen=True)
class ReceiveSchedule:
    """Shutter timing: each ``period`` transmits first, then receives for
    the last ``receive_fraction`` of it. The default never closes."""

    period: float = 1.0
    receive_fraction: float = 1.0

    def __post_init__(self):
        if not (self.period > 0):
            raise ValidationError("shutter period must be positive")
        if not (0 < self.receive_fraction <= 1):
            raise ValidationError("receive_fraction must lie in (0, 1]")

    def is_receiving(self, t):
        t = np.asarray(t, dtype=float)
        if self.receive_fraction >= 1:
            return np.ones(t.shape, dtype=bool)
        phase = np.mod(t, self.period) / self.period
        return phase >= 1.0 - self.receive_fraction


@dataclass(frozen=True, eq=False)
class TimeTagStream:
    """Sorted channelised time tags in integer picoseconds."""

    channel: np.ndarray
    timestamp_ps: np.ndarray

    def __post_init__(self):
        ch = np.asarray(self.channel, dtype=np.int8)
        ts = np.asarray(self.timestamp_ps, dtype=np.int64)
        if ch.shape != ts.shape or ch.ndim != 1:
            raise ValidationError("channel and timestamp arrays must be 1-D and equal length")
        if np.any(np.diff(ts) < 0):
            raise ValidationError("time tags not sorted")
        if ch.size and (ch.min() < 0 or ch.max() > 2):
            raise ValidationError("unknown channel code")
        ch.setflags(write=False)
        ts.setflags(write=False)
        object.__setattr__(self, "channel", ch)
        object.__setattr__(self, "timestamp_ps", ts)

    def __len__(self) -> int:
        return len(self.timestamp_ps)

    def detector_tags(self) -> np.ndarray:
        return self.timestamp_ps[self.channel == Channel.DETECTOR]

    def slr_pairs(self) -> list[SlrEpochPair]:
        exits = self.timestamp_ps[self.channel == Channel.SLR_EXIT]
        returns = self.timestamp_ps[self.channel == Channel.SLR_RETURN]
        if len(exits) != len(returns):
            raise ValidationError("unequal numbers of ranging exit and return tags")
        return [SlrEpochPair(a * PS, b * PS) for a, b in zip(exits.tolist(), returns.tolist())]

    def tobytes(self) -> bytes:
        return self.channel.tobytes() + self.timestamp_ps.tobytes()


def write_tags(stream: TimeTagStream, path) -> None:
    body = "\n".join(f"{c},{t}" for c, t in zip(stream.channel.tolist(), stream.timestamp_ps.tolist()))
    Path(path).write_text(TAG_HEADER + "\n" + (body + "\n" if body else ""), encoding="utf-8", newline="\n")


def load_tags(path) -> TimeTagStream:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != TAG_HEADER:
        raise ParseError(f"expected header {TAG_HEADER!r}", line=1, path=path)
    ch, ts = [], []
    last = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError(f"expected 2 fields, got {len(parts)}", line=lineno, path=path)
        try:
            c, t = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, path=path) from None
        if c not in (0, 1, 2):
            raise ParseError(f"unknown channel {c}", line=lineno, path=path)
        if last is not None and t < last:
            raise ParseError("timestamps not sorted", line=lineno, path=path)
        last = t
        ch.append(c)
        ts.append(t)
    return TimeTagStream(np.array(ch, dtype=np.int8), np.array(ts, dtype=np.int64))


def _generator(seed, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return _generator(seed)


def pointing_error_series(model: PointingModel, duration: float, dt: float | None = None, seed=0):
    """Pointing error samples ``(t, theta_p)`` on a uniform grid from 0 to ``duration``.

    Exact OU discretisation started from its stationary law, clipped at zero,
    with the excess added inside its interval.
    """
    dt = model.dt if dt is None else dt
    if not (dt > 0) or not (duration > 0):
        raise ParameterError("pointing series needs positive duration and dt")
    if dt >= model.correlation_time:
        raise ParameterError("pointing dt must be shorter than the correlation time")
    n = int(math.floor(duration / dt + 1e-9)) + 1
    t = np.arange(n) * dt
    if t[-1] < duration:
        t = np.append(t, duration)
        n += 1
    theta = np.full(n, float(model.mean_error))
    if model.sigma > 0:
        rng = _as_generator(seed)
        xi = rng.standard_normal(n)
        decay = np.exp(-np.diff(t) / model.correlation_time)
        kick = model.sigma * np.sqrt(1.0 - decay**2)
        x = np.empty(n)
        x[0] = model.sigma * xi[0]
        for i in range(1, n):
            x[i] = x[i - 1] * decay[i - 1] + kick[i - 1] * xi[i]
        theta = theta + x
    theta = np.maximum(theta, 0.0)
    if model.zenith_excess is not None:
        (a, b), extra = model.zenith_excess
        theta = theta + np.where((t >= a) & (t <= b), extra, 0.0)
    return t, theta


def thinned_poisson_events(
    rate_fn: Callable[[np.ndarray], np.ndarray],
    r_max: float,
    span: tuple[float, float],
    seed=0,
    audit_points: int = 64,
) -> np.ndarray:
    """Event times of a Poisson process with intensity ``rate_fn`` on ``span``.

    Candidates are drawn at the constant envelope ``r_max`` and kept with
    probability ``rate_fn(t) / r_max``. Raises :class:`NumericalError` if the
    intensity is ever seen above the envelope.
    """
    a, b = span
    if not (b >= a):
        raise ParameterError("span end before start")
    if r_max < 0:
        raise ParameterError("r_max must be >= 0")
    rng = _as_generator(seed)
    audit = np.asarray(rate_fn(np.linspace(a, b, audit_points)), dtype=float)
    if np.any(audit > r_max * (1 + 1e-12)):
        raise NumericalError(f"intensity {audit.max():.6g} exceeds envelope {r_max:.6g}")
    if r_max == 0 or b == a:
        return np.zeros(0)
    n = rng.poisson(r_max * (b - a))
    cand = np.sort(a + (b - a) * rng.random(n))
    if n == 0:
        return cand
    rate = np.asarray(rate_fn(cand), dtype=float)
    if np.any(rate > r_max * (1 + 1e-12)):
        raise NumericalError(f"intensity {rate.max():.6g} exceeds envelope {r_max:.6g}")
    keep = rng.random(n) * r_max < rate
    return cand[keep]


@dataclass(frozen=True, eq=False)
class PassTruth:
    """Ground truth on the pointing grid, for validating the analysis."""

    t: np.ndarray
    R: np.ndarray
    theta_p: np.ndarray
    G_t: np.ndarray
    mu_sat: np.ndarray
    mu_rec: np.ndarray
    signal_rate: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("t", "R", "theta_p", "G_t", "mu_sat", "mu_rec", "signal_rate")}

    def effective_gain(self, p: LinkParams, mask=()) -> float:
        """Gain a constant-gain least-squares fit of the signal rate would recover."""
        keep = np.ones(len(self.t), dtype=bool)
        for a, b in mask:
            keep &= ~((self.t >= a) & (self.t <= b))
        x = np.asarray(lb.detection_rate(self.R[keep], 1.0, p))
        return float(np.sum(x * x * self.G_t[keep]) / np.sum(x * x))


class _RateModel:
    """Signal detection intensity as a function of emission time."""

    def __init__(self, table, p, det, mu_policy, t_grid, theta_grid):
        self.table = table
        self.p = p
        self.det = det
        self.policy = mu_policy
        self.t_grid = t_grid
        self.theta_grid = theta_grid
        self.det_scale = det.efficiency / p.eta_det

    def components(self, t):
        t = np.asarray(t, dtype=float)
        R = np.asarray(slant_range_at(self.table, t))
        theta = np.interp(t, self.t_grid, self.theta_grid)
        G = np.asarray(lb.transmitter_gain(self.p.theta_t, theta))
        if self.policy.kind == "fixed":
            mu_sat = np.full(t.shape, self.policy.mu_sat)
        else:
            mu_sat = np.asarray(lb.mu_sat_from_uplink(R, G, self.p))
        mu_rec = mu_sat * np.asarray(lb.downlink_transmittance(R, self.p)) * self.det_scale
        return R, theta, G, mu_sat, mu_rec

    def __call__(self, t):
        mu_rec = self.components(t)[4]
        return self.p.f_rep * -np.expm1(-mu_rec)


def _slice_edges(a: float, b: float, length: float) -> list[tuple[float, float]]:
    n = max(1, int(math.ceil((b - a) / length - 1e-9)))
    edges = [a + i * length for i in range(n)] + [b]
    return [(edges[i], min(edges[i + 1], b)) for i in range(n)]


def simulate_pass(
    table: EphemerisTable,
    p: LinkParams,
    det: DetectorModel,
    pointing: PointingModel,
    mu_policy: MuPolicy,
    schedule: ReceiveSchedule | None = None,
    seed: int = 0,
    background_rate: float | None = None,
    slice_length: float = 60.0,
    workers: int = 1,
    return_truth: bool = False,
):
    """Simulate every detector and ranging tag of one pass.

    ``background_rate`` (counts/s, dark plus stray light) defaults to the
    detector dark rate. With ``return_truth`` a :class:`PassTruth` is
    returned alongside the stream.
    """
    if seed is None:
        raise ParameterError("simulate_pass needs an explicit seed")
    schedule = schedule or ReceiveSchedule()
    bg = det.dark_rate if background_rate is None else float(background_rate)
    if bg < 0:
        raise ParameterError("background_rate must be >= 0")
    if not slice_length > 0:
        raise ParameterError("slice_length must be positive")

    pairs = generate_slr_epochs(table, p)
    duration = table.t_end - table.t_start
    tp, theta = pointing_error_series(pointing, duration, seed=_generator(seed, _POINTING))
    tp = tp + table.t_start
    model = _RateModel(table, p, det, mu_policy, tp, theta)

    emit_lo = table.t_start
    emit_hi = table.t_end - float(np.max(table.R)) / p.c * (1 + 1e-4)
    if emit_hi <= emit_lo:
        raise ValidationError("ephemeris too short to simulate")
    period_ps = 1e12 / p.f_rep
    period_ps = int(round(period_ps)) if abs(period_ps - round(period_ps)) < 1e-9 else period_ps
    tdc = det.tdc_bin_ps
    sigma_ps = det.jitter_sigma / PS

    def signal_slice(i_ab):
        i, (a, b) = i_ab
        rng = _generator(seed, _SIGNAL, i)
        probe = np.unique(np.concatenate([np.linspace(a, b, 65), tp[(tp > a) & (tp < b)]]))
        r_max = float(np.max(model(probe))) * 1.02
        te = thinned_poisson_events(model, r_max, (a, b), rng)
        if te.size == 0:
            return np.zeros(0, dtype=np.int64)
        k = np.floor(te * p.f_rep).astype(np.int64)
        k = np.maximum(k, int(math.ceil(emit_lo * p.f_rep)))
        rtt = np.atleast_1d(round_trip_time(table, k / p.f_rep, p.c))
        arrival = (k * period_ps).astype(float) + rtt / PS + rng.normal(0.0, sigma_ps, k.size)
        return (np.rint(arrival / tdc) * tdc).astype(np.int64)

    def background_slice(i_ab):
        i, (a, b) = i_ab
        rng = _generator(seed, _BACKGROUND, i)
        n = rng.poisson(bg * (b - a))
        t = a + (b - a) * rng.random(n)
        return (np.rint(t / PS / tdc) * tdc).astype(np.int64)

    sig_slices = list(enumerate(_slice_edges(emit_lo, emit_hi, slice_length)))
    bg_slices = list(enumerate(_slice_edges(table.t_start, table.t_end, slice_length)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            sig = list(ex.map(signal_slice, sig_slices))
            bgs = list(ex.map(background_slice, bg_slices))
    else:
        sig = [signal_slice(s) for s in sig_slices]
        bgs = [background_slice(s) for s in bg_slices]

    det_ts = np.concatenate(sig + bgs) if (sig or bgs) else np.zeros(0, dtype=np.int64)
    det_ts = det_ts[(det_ts >= 0) & schedule.is_receiving(det_ts * PS)]
    exit_ps = np.array([int(round(q.t_exit / PS)) for q in pairs], dtype=np.int64)
    ret_ps = np.array([int(round(q.t_return / PS)) for q in pairs], dtype=np.int64)

    ts = np.concatenate([det_ts, exit_ps, ret_ps])
    ch = np.concatenate([
        np.full(det_ts.size, Channel.DETECTOR, dtype=np.int8),
        np.full(exit_ps.size, Channel.SLR_EXIT, dtype=np.int8),
        np.full(ret_ps.size, Channel.SLR_RETURN, dtype=np.int8),
    ])
    order = np.lexsort((ch, ts))
    stream = TimeTagStream(ch[order], ts[order])
    if not return_truth:
        return stream
    R, th, G, mu_sat, mu_rec = model.components(np.clip(tp, table.t_start, table.t_end))
    truth = PassTruth(tp, R, th, G, mu_sat, mu_rec, p.f_rep * -np.expm1(-mu_rec))
    return stream, truth


def calibrate_background_rate(signal_rate: float, snr: float, window: float, period: float,
                              containment: float = 1.0) -> float:
    """Full-period background rate giving ``snr`` for a peak window of width ``window``."""
    if snr <= 0 or window <= 0 or period <= 0:
        raise ParameterError("snr, window and period must be positive")
    return signal_rate * containment / snr * period / window


__all__ = [
    "Channel", "DetectorModel", "DETECTOR_PRESETS", "detector_preset", "PointingModel",
    "MuPolicy", "ReceiveSchedule", "TimeTagStream", "PassTruth", "write_tags", "load_tags",
    "pointing_error_series", "thinned_poisson_events", "simulate_pass",
    "calibrate_background_rate",
]
