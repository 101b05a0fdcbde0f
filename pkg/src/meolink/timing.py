"""Round-trip light time and the expected-arrival grid of the pulse train.

Every pulse of the high-rate train is emitted at ``k / f_rep`` on the station
clock. Its expected arrival back at the receiver, ``t_ref``, is the emission
epoch plus the round-trip time at that instant. The round-trip time is
measured every ``1 / f_slr`` by the ranging beam and interpolated in between
with sliding three-point quadratics, so the full grid never has to be
materialised.

Tags are handled as integer picoseconds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NumericalError, ParameterError, ParseError, RangeError, ValidationError
from .geometry import EphemerisTable, slant_range_at
from .linkbudget import SPEED_OF_LIGHT, LinkParams

PS = 1e-12
SLR_HEADER = "t_exit_ps,t_return_ps"

RTT_TOLERANCE = 0.1 * PS
RTT_MAX_ITER = 50


def round_trip_time(table: EphemerisTable, t_emit, c: float = SPEED_OF_LIGHT):
    """Two-way light time for pulses emitted at ``t_emit`` (seconds).

    Solves ``c * tau = R(t_emit + tau)`` for the up-leg time by fixed-point
    iteration; the down leg retraces the bounce distance so the round trip
    is ``2 * tau``. For a range ``R0 + v t`` this gives ``2 R0 / (c - v)``.
    """
    te = np.asarray(t_emit, dtype=float)
    if np.any(te < table.t_start) or np.any(te > table.t_end):
        raise RangeError(f"emission epoch outside ephemeris span [{table.t_start}, {table.t_end}]")
    scalar = te.ndim == 0
    te = np.atleast_1d(te)
    rtt = 2.0 * np.asarray(slant_range_at(table, te)) / c
    # each epoch stops iterating on its own convergence, so a value does not
    # depend on which other epochs were solved in the same call
    active = np.ones(te.shape, dtype=bool)
    for _ in range(RTT_MAX_ITER):
        bounce = te[active] + rtt[active] / 2
        if np.any(bounce > table.t_end):
            raise RangeError("bounce epoch beyond the end of the ephemeris")
        new = 2.0 * np.asarray(slant_range_at(table, bounce)) / c
        done = np.abs(new - rtt[active]) < RTT_TOLERANCE
        rtt[active] = new
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not active.any():
            return float(rtt[0]) if scalar else rtt
    raise NumericalError(f"round-trip solver did not converge in {RTT_MAX_ITER} iterations")


def doppler_pulse_separation(dt_emit, v_R, c: float = SPEED_OF_LIGHT):
    """Separation at the receiver of two pulses emitted ``dt_emit`` apart."""
    return dt_emit * (1.0 + 2.0 * v_R / c)


@dataclass(frozen=True)
class SlrEpochPair:
    t_exit: float
    t_return: float

    def __post_init__(self):
        if not self.t_return > self.t_exit:
            raise ValidationError(f"return {self.t_return} not after exit {self.t_exit}")

    @property
    def rtt(self) -> float:
        return self.t_return - self.t_exit


def generate_slr_epochs(table: EphemerisTable, p: LinkParams) -> list[SlrEpochPair]:
    """Ranging shots at ``f_slr`` whose bounce lies inside the table span."""
    if table.t_end - table.t_start < 1.0 / p.f_slr:
        raise ValidationError("ephemeris shorter than one ranging period")
    k0 = math.ceil(table.t_start * p.f_slr - 1e-9)
    # conservative bound so every candidate's bounce stays inside the table
    latest = table.t_end - float(np.max(table.R)) / p.c * (1 + 1e-4)
    k1 = math.floor(latest * p.f_slr + 1e-9)
    if k1 < k0:
        raise ValidationError("no ranging shot fits inside the ephemeris span")
    exits = np.arange(k0, k1 + 1) / p.f_slr
    rtt = np.atleast_1d(round_trip_time(table, exits, p.c))
    return [SlrEpochPair(float(e), float(e + r)) for e, r in zip(exits, rtt)]


def _quad_weights(x, x0, x1, x2):
    l0 = (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2))
    l1 = (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2))
    l2 = (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1))
    return l0, l1, l2


@dataclass(frozen=True, eq=False)
class TrefGrid:
    """Expected arrival epochs of every pulse in a covered emission interval.

    Pulse ``k`` is emitted at ``k * emission_period`` and is expected back at
    ``k * emission_period + rtt_hat(k * emission_period)``. Only the ranging
    knots are stored.
    """

    knots: np.ndarray  # emission epochs of the ranging shots, s
    rtt: np.ndarray  # measured round trip at each knot, s
    f_rep: float
    pulse_index_origin: int
    pulse_index_last: int
    mode: str = "batch"

    @property
    def emission_period(self) -> float:
        return 1.0 / self.f_rep

    @property
    def n_pulses(self) -> int:
        return self.pulse_index_last - self.pulse_index_origin + 1

    @property
    def _period_ps(self):
        period = 1e12 / self.f_rep
        return int(round(period)) if abs(period - round(period)) < 1e-9 else period

    def rtt_hat(self, t_emit):
        """Interpolated round trip time (s) at emission epochs ``t_emit``."""
        t = np.asarray(t_emit, dtype=float)
        x = self.knots
        n = len(x)
        if self.mode == "causal":
            j = np.searchsorted(x, t, side="right") - 1
            j = np.clip(j, 2, n - 1) - 1
        else:
            j = np.searchsorted(x, t)
            # nearest knot becomes the middle of the window
            left_closer = (j > 0) & ((j == n) | (t - x[np.clip(j - 1, 0, n - 1)] <= x[np.clip(j, 0, n - 1)] - t))
            j = np.where(left_closer, j - 1, j)
            j = np.clip(j, 1, n - 2)
        w0, w1, w2 = _quad_weights(t, x[j - 1], x[j], x[j + 1])
        return w0 * self.rtt[j - 1] + w1 * self.rtt[j] + w2 * self.rtt[j + 1]

    def emission_epoch(self, k):
        return np.asarray(k, dtype=np.int64) / self.f_rep

    def expected_arrival(self, k):
        """Expected arrival (s) of pulse index ``k``."""
        k = np.asarray(k, dtype=np.int64)
        self._check_index(k)
        out = self.emission_epoch(k) + self.rtt_hat(self.emission_epoch(k))
        return float(out) if out.ndim == 0 else out

    def expected_arrival_ps(self, k):
        """Expected arrival of pulse ``k`` in picoseconds (float)."""
        k = np.asarray(k, dtype=np.int64)
        return k * self._period_ps + self.rtt_hat(self.emission_epoch(k)) / PS

    def _check_index(self, k):
        if np.any(k < self.pulse_index_origin) or np.any(k > self.pulse_index_last):
            raise RangeError("pulse index outside grid coverage")

    @property
    def arrival_span_ps(self) -> tuple[float, float]:
        a = self.expected_arrival_ps(np.array([self.pulse_index_origin, self.pulse_index_last]))
        return float(a[0]), float(a[1])

    def residuals_ps(self, tags_ps):
        """Tag minus nearest expected arrival, in picoseconds.

        Returns ``(residual, pulse_index, covered)``. Entries whose nearest
        pulse lies outside the grid have ``covered`` false; their residual
        is meaningless.
        """
        T = np.asarray(tags_ps, dtype=np.int64)
        if T.size == 0:
            return np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool)
        Tf = T.astype(float) * PS
        lo, hi = self.knots[0], self.knots[-1]
        te = Tf - self.rtt_hat(np.clip(Tf, lo, hi))
        for _ in range(3):
            te = Tf - self.rtt_hat(np.clip(te, lo, hi))
        k0 = np.rint(te * self.f_rep).astype(np.int64)
        best_res = None
        best_k = k0
        for dk in (-1, 0, 1):
            k = k0 + dk
            tk = np.clip(k / self.f_rep, lo, hi)
            offset = T - k * self._period_ps
            res = offset - self.rtt_hat(tk) / PS
            if best_res is None:
                best_res, best_k = res, k
            else:
                better = np.abs(res) < np.abs(best_res)
                best_res = np.where(better, res, best_res)
                best_k = np.where(better, k, best_k)
        covered = (best_k >= self.pulse_index_origin) & (best_k <= self.pulse_index_last)
        return best_res, best_k, covered


def _pair_arrays(pairs) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pairs, np.ndarray):
        a = np.asarray(pairs, dtype=float)
        return a[:, 0], a[:, 1] - a[:, 0]
    exits = np.array([q.t_exit for q in pairs], dtype=float)
    rtt = np.array([q.t_return - q.t_exit for q in pairs], dtype=float)
    return exits, rtt


def reconstruct_tref(
    pairs: Sequence[SlrEpochPair],
    f_rep: float,
    span: tuple[float, float] | None = None,
    mode: str = "batch",
) -> TrefGrid:
    """Build the expected-arrival grid from ranging epoch pairs.

    ``span`` restricts the emission interval (seconds); by default the grid
    covers every pulse between the first and last ranging shot. ``mode``
    ``"causal"`` uses the last three shots at or before each pulse instead
    of the centred window and carries no accuracy guarantee.
    """
    if mode not in ("batch", "causal"):
        raise ParameterError(f"unknown reconstruction mode {mode!r}")
    exits, rtt = _pair_arrays(pairs)
    if len(exits) < 3:
        raise ValidationError("need at least 3 ranging pairs for quadratic interpolation")
    if np.any(rtt <= 0):
        raise ValidationError("ranging pair with non-positive round trip")
    gaps = np.diff(exits)
    if np.any(gaps <= 0):
        raise ValidationError("ranging exits not strictly increasing")
    spacing = float(np.median(gaps))
    if np.max(np.abs(gaps - spacing)) > 1e-9 + 1e-9 * spacing:
        raise ValidationError("ranging exits are not uniformly spaced")
    # the span-averaged spacing is immune to per-epoch picosecond rounding
    ratio = f_rep * (exits[-1] - exits[0]) / (len(exits) - 1)
    if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
        raise ValidationError("f_rep must be an integer multiple of the ranging rate")
    lo, hi = exits[0], exits[-1]
    if span is not None:
        s0, s1 = span
        if s0 < lo - 1e-12 or s1 > hi + 1e-12 or s1 < s0:
            raise RangeError(f"requested span {span} outside ranging coverage [{lo}, {hi}]")
        lo, hi = max(lo, s0), min(hi, s1)
    k_first = math.ceil(lo * f_rep - 1e-6)
    k_last = math.floor(hi * f_rep + 1e-6)
    exits = exits.copy()
    rtt = rtt.copy()
    exits.setflags(write=False)
    rtt.setflags(write=False)
    return TrefGrid(exits, rtt, float(f_rep), int(k_first), int(k_last), mode)


def nearest_tref_residual(tag, grid: TrefGrid):
    """``tag`` (seconds) minus the nearest expected arrival, in seconds."""
    tag_ps = np.rint(np.asarray(tag, dtype=float) / PS).astype(np.int64)
    res, _, covered = grid.residuals_ps(np.atleast_1d(tag_ps))
    if not np.all(covered):
        raise RangeError("tag outside grid coverage")
    out = res * PS
    return float(out[0]) if np.ndim(tag) == 0 else out


def write_slr_pairs(pairs: Sequence[SlrEpochPair], path) -> None:
    lines = [SLR_HEADER]
    for q in pairs:
        lines.append(f"{int(round(q.t_exit / PS))},{int(round(q.t_return / PS))}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_slr_pairs(path) -> list[SlrEpochPair]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != SLR_HEADER:
        raise ParseError(f"expected header {SLR_HEADER!r}", line=1, path=path)
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError(f"expected 2 fields, got {len(parts)}", line=lineno, path=path)
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, path=path) from None
        if b <= a:
            raise ParseError("return not after exit", line=lineno, path=path)
        out.append(SlrEpochPair(a * PS, b * PS))
    return out
