"""Pass geometry: slant range and radial velocity time series.

A pass is stored as an :class:`EphemerisTable` sampled in seconds from the
start of the pass. Tables come either from :func:`synthetic_pass` (circular
orbit over a spherical Earth) or from an ephemeris CSV file.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ParameterError, ParseError, RangeError, ValidationError

GM_EARTH = 3.986004418e14  # m^3/s^2
EARTH_RADIUS = 6371e3
LAGEOS2_ALTITUDE = 5620e3
MLRO_ALTITUDE = 537.0

EPHEMERIS_HEADER = "t_s,R_m,vR_mps"

# slack for the zenith-distance check; sqrt() round-off at zenith is ~1e-9 m
_ZENITH_SLACK = 1e-3


@dataclass(frozen=True, eq=False)
class EphemerisTable:
    """Slant range ``R`` and radial velocity ``v_R`` sampled over a pass.

    ``v_R`` is positive when the satellite recedes from the station.
    Arrays are made read-only on construction.
    """

    t: np.ndarray
    R: np.ndarray
    v_R: np.ndarray
    h_s: float = LAGEOS2_ALTITUDE
    h_t: float = MLRO_ALTITUDE

    def __post_init__(self):
        arrays = []
        for name in ("t", "R", "v_R"):
            a = np.array(getattr(self, name), dtype=float)
            if a.ndim != 1:
                raise ValidationError(f"{name} must be one-dimensional")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            arrays.append(a)
        t, R, v = arrays
        if not (len(t) == len(R) == len(v)):
            raise ValidationError("t, R and v_R must have equal length")
        if len(t) < 2:
            raise ValidationError("an ephemeris needs at least two samples")
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(R)) or not np.all(np.isfinite(v)):
            raise ValidationError("ephemeris contains non-finite values")
        if np.any(np.diff(t) <= 0):
            i = int(np.argmax(np.diff(t) <= 0)) + 1
            raise ValidationError(f"sample times not strictly increasing at sample {i}")
        if self.h_s <= self.h_t or self.h_t < 0:
            raise ValidationError("need h_s > h_t >= 0")
        floor = self.h_s - self.h_t - _ZENITH_SLACK
        if np.any(R < floor):
            i = int(np.argmax(R < floor))
            raise ValidationError(
                f"slant range {R[i]:.3f} m at sample {i} is below the zenith distance "
                f"{self.h_s - self.h_t:.3f} m"
            )

    def __len__(self) -> int:
        return len(self.t)

    @property
    def t_start(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def samples(self) -> list[tuple[float, float, float]]:
        return list(zip(self.t.tolist(), self.R.tolist(), self.v_R.tolist()))

    @cached_property
    def _range_spline(self) -> CubicSpline:
        return CubicSpline(self.t, self.R)

    def _check_span(self, t: np.ndarray) -> None:
        if np.any(t < self.t[0]) or np.any(t > self.t[-1]):
            bad = t[(t < self.t[0]) | (t > self.t[-1])][0]
            raise RangeError(
                f"t={bad!r} s outside ephemeris span [{self.t[0]}, {self.t[-1]}]"
            )


def _validate_pass_inputs(h_s, max_elevation, duration, dt, R_e, h_t):
    if not (h_t >= 0):
        raise ParameterError(f"station altitude must be >= 0, got {h_t}")
    if not (h_s > h_t):
        raise ParameterError(f"satellite altitude {h_s} must exceed station altitude {h_t}")
    if not (0 < max_elevation <= math.pi / 2):
        raise ParameterError(f"max_elevation must lie in (0, pi/2], got {max_elevation}")
    if not (dt > 0):
        raise ParameterError(f"dt must be positive, got {dt}")
    if not (duration >= 2 * dt):
        raise ParameterError(f"duration {duration} must be at least 2*dt")
    if not (R_e > 0):
        raise ParameterError(f"Earth radius must be positive, got {R_e}")


@dataclass(frozen=True)
class PassModel:
    """Closed-form circular-orbit pass.

    The station sits at angular distance ``psi`` from the orbital plane so
    that the closest approach happens at the requested elevation. The
    satellite phase is ``omega * (t - t_mid)``.
    """

    r_sat: float
    r_station: float
    cos_psi: float
    omega: float
    t_mid: float

    @classmethod
    def build(cls, h_s, max_elevation, duration, R_e=EARTH_RADIUS, h_t=MLRO_ALTITUDE):
        r_s = R_e + h_s
        r_t = R_e + h_t
        r_min = zenith_slant_range(h_s, max_elevation, R_e, h_t)
        cos_psi = (r_s**2 + r_t**2 - r_min**2) / (2 * r_s * r_t)
        cos_psi = min(1.0, cos_psi)
        return cls(r_s, r_t, cos_psi, math.sqrt(GM_EARTH / r_s**3), duration / 2)

    def _k(self):
        return 2 * self.r_sat * self.r_station * self.cos_psi

    def range(self, t):
        phase = self.omega * (np.asarray(t, dtype=float) - self.t_mid)
        r2 = self.r_sat**2 + self.r_station**2 - self._k() * np.cos(phase)
        return np.sqrt(np.maximum(r2, 0.0))

    def radial_velocity(self, t):
        phase = self.omega * (np.asarray(t, dtype=float) - self.t_mid)
        return self._k() * self.omega * np.sin(phase) / (2 * self.range(t))

    def elevation(self, t):
        R = self.range(t)
        s = (self.r_sat**2 - R**2 - self.r_station**2) / (2 * R * self.r_station)
        return np.arcsin(np.clip(s, -1.0, 1.0))


def zenith_slant_range(h_s, elevation, R_e=EARTH_RADIUS, h_t=MLRO_ALTITUDE) -> float:
    """Slant range to a satellite at altitude ``h_s`` seen at ``elevation``."""
    r_s = R_e + h_s
    r_t = R_e + h_t
    if elevation >= math.pi / 2:
        return h_s - h_t
    return math.sqrt(r_s**2 - (r_t * math.cos(elevation)) ** 2) - r_t * math.sin(elevation)


def horizon_slant_range(h_s, R_e=EARTH_RADIUS, h_t=MLRO_ALTITUDE) -> float:
    return math.sqrt((R_e + h_s) ** 2 - (R_e + h_t) ** 2)


def synthetic_pass(
    h_s: float = LAGEOS2_ALTITUDE,
    max_elevation: float = math.radians(80.0),
    duration: float = 2580.0,
    dt: float = 1.0,
    R_e: float = EARTH_RADIUS,
    h_t: float = MLRO_ALTITUDE,
    range_noise: float = 0.0,
    seed: int | None = None,
) -> EphemerisTable:
    """Symmetric overhead pass on a uniform time grid.

    The range minimum falls at ``duration / 2``. ``v_R`` is the analytic
    derivative of the range model. ``range_noise`` (metres, default off)
    adds white Gaussian noise to ``R`` only, to mimic ranges recovered from
    SLR time of flight; it needs ``seed``.
    """
    _validate_pass_inputs(h_s, max_elevation, duration, dt, R_e, h_t)
    model = PassModel.build(h_s, max_elevation, duration, R_e, h_t)
    n = int(math.floor(duration / dt + 1e-9)) + 1
    t = np.arange(n) * dt
    if model.elevation(t[0]) <= 0:
        raise ParameterError(
            f"a {duration} s pass with {math.degrees(max_elevation):.2f} deg maximum "
            "elevation starts below the horizon"
        )
    R = model.range(t)
    v = model.radial_velocity(t)
    if range_noise < 0:
        raise ParameterError("range_noise must be >= 0")
    if range_noise > 0:
        if seed is None:
            raise ParameterError("range_noise requires a seed")
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        R = np.maximum(R + rng.normal(0.0, range_noise, size=n), h_s - h_t)
    return EphemerisTable(t, R, v, h_s=h_s, h_t=h_t)


def slant_range_at(table: EphemerisTable, t):
    """Cubic-spline slant range; stored samples are returned exactly."""
    ta = np.asarray(t, dtype=float)
    table._check_span(ta)
    out = np.asarray(table._range_spline(ta), dtype=float)
    idx = np.searchsorted(table.t, ta)
    idx = np.clip(idx, 0, len(table.t) - 1)
    hit = table.t[idx] == ta
    out = np.where(hit, table.R[idx], out)
    return float(out) if out.ndim == 0 else out


def radial_velocity_at(table: EphemerisTable, t):
    """Linearly interpolated radial velocity."""
    ta = np.asarray(t, dtype=float)
    table._check_span(ta)
    out = np.interp(ta, table.t, table.v_R)
    return float(out) if np.ndim(out) == 0 else out


def mean_slant_range(table: EphemerisTable, t0: float, t1: float, n: int = 33) -> float:
    """Time average of the interpolated slant range over ``[t0, t1]``."""
    if t1 <= t0:
        return slant_range_at(table, t0)
    # Simpson on an odd node count
    x = np.linspace(t0, t1, n | 1)
    y = slant_range_at(table, x)
    h = (t1 - t0) / (len(x) - 1)
    integral = h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())
    return float(integral / (t1 - t0))


def _fmt(x: float) -> str:
    return np.format_float_positional(float(x), unique=True, trim="-")


def write_ephemeris(table: EphemerisTable, path) -> None:
    lines = [EPHEMERIS_HEADER]
    for t, R, v in zip(table.t, table.R, table.v_R):
        lines.append(f"{_fmt(t)},{_fmt(R)},{_fmt(v)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_ephemeris(path, h_s: float = LAGEOS2_ALTITUDE, h_t: float = MLRO_ALTITUDE) -> EphemerisTable:
    """Read an ephemeris CSV (``t_s,R_m,vR_mps``)."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0].strip() != EPHEMERIS_HEADER:
        raise ParseError(f"expected header {EPHEMERIS_HEADER!r}", line=1, path=path)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError(f"expected 3 fields, got {len(parts)}", line=lineno, path=path)
        try:
            rows.append(tuple(float(p) for p in parts))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, path=path) from None
    if not rows:
        raise ParseError("no samples", line=1, path=path)
    a = np.array(rows)
    return EphemerisTable(a[:, 0], a[:, 1], a[:, 2], h_s=h_s, h_t=h_t)
