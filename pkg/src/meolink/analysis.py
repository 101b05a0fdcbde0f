"""Statistics on detector tags relative to the expected-arrival grid.

Residual histogram and Gaussian fit, sideband background estimate, time
slices (rates, photon numbers, classification), one-parameter gain fit and
pooled peak significance.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import linkbudget as lb
from .errors import NumericalError, ParameterError, ValidationError
from .geometry import EphemerisTable, mean_slant_range
from .linkbudget import LinkParams
from .timing import PS, TrefGrid

DEFAULT_BIN_WIDTH = 0.4e-9
SIDEBAND_SIGMAS = 6.0
PEAK_SIGMAS = 3.0

LE1, GT1LE2, GT2 = "LE1", "GT1LE2", "GT2"
CLASS_FILTERS = {"le1": {LE1}, "le2": {LE1, GT1LE2}, "all": {LE1, GT1LE2, GT2}}


def classify_mu(mu_sat: float) -> str:
    if mu_sat <= 1.0:
        return LE1
    if mu_sat <= 2.0:
        return GT1LE2
    return GT2


@dataclass(frozen=True, eq=False)
class ResidualHistogram:
    bin_width: float
    centers: np.ndarray
    counts: np.ndarray
    total_tags: int

    @property
    def bins(self) -> list[tuple[float, int]]:
        return list(zip(self.centers.tolist(), self.counts.tolist()))

    def to_dict(self) -> dict:
        return {
            "bin_width": self.bin_width,
            "total_tags": self.total_tags,
            "delta_ns": (self.centers * 1e9).tolist(),
            "count": self.counts.tolist(),
        }

    def write_csv(self, path) -> None:
        lines = ["delta_ns,count"]
        for c, n in zip(self.centers, self.counts):
            lines.append(f"{np.format_float_positional(c * 1e9, unique=True, trim='-')},{int(n)}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _bin_centers(period: float, bin_width: float) -> np.ndarray:
    half = int(math.ceil(period / 2 / bin_width - 0.5 - 1e-9))
    return np.arange(-half, half + 1) * bin_width


def histogram_from_residuals(residuals_s: np.ndarray, period: float, bin_width: float) -> ResidualHistogram:
    if not bin_width > 0:
        raise ParameterError("bin_width must be positive")
    centers = _bin_centers(period, bin_width)
    half = (len(centers) - 1) // 2
    idx = np.clip(np.rint(np.asarray(residuals_s) / bin_width).astype(np.int64), -half, half) + half
    counts = np.bincount(idx, minlength=len(centers)).astype(np.int64)
    return ResidualHistogram(bin_width, centers, counts, int(len(residuals_s)))


def _covered_residuals(tags_ps, grid: TrefGrid):
    tags_ps = np.asarray(tags_ps, dtype=np.int64)
    res, _, covered = grid.residuals_ps(tags_ps)
    return tags_ps[covered], res[covered] * PS


def residual_histogram(tags_ps, grid: TrefGrid, bin_width: float = DEFAULT_BIN_WIDTH) -> ResidualHistogram:
    """Histogram of tag minus nearest expected arrival over one pulse period.

    Bins are centred on zero; tags outside the grid coverage are dropped.
    """
    _, res = _covered_residuals(tags_ps, grid)
    return histogram_from_residuals(res, grid.emission_period, bin_width)


@dataclass(frozen=True)
class GaussFit:
    delta0: float
    sigma_g: float
    amplitude: float
    baseline: float
    delta0_err: float = 0.0
    sigma_g_err: float = 0.0
    amplitude_err: float = 0.0
    baseline_err: float = 0.0
    degenerate: bool = False
    iterations: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _gauss(x, d0, s, a, b):
    return b + a * np.exp(-0.5 * ((x - d0) / s) ** 2)


def _gauss_jac(x, d0, s, a, b, free):
    e = np.exp(-0.5 * ((x - d0) / s) ** 2)
    cols = [a * e * (x - d0) / s**2, a * e * (x - d0) ** 2 / s**3, e, np.ones_like(x)]
    return np.column_stack([c for c, f in zip(cols, free) if f])


def _levenberg_marquardt(x, y, w, theta, free, tol=1e-8, max_iter=200):
    """Minimise sum w*(y - model)^2 over the free parameters."""
    theta = np.array(theta, dtype=float)
    bw = float(np.min(np.diff(x))) if len(x) > 1 else 1.0
    # floors for the relative-change test: offsets and widths relative to a bin
    floor = np.array([bw, bw, 1.0, 1.0])
    lam = 1e-3

    def cost(t):
        r = y - _gauss(x, *t)
        return float(np.sum(w * r * r))

    c = cost(theta)
    for it in range(1, max_iter + 1):
        J = _gauss_jac(x, *theta, free)
        r = y - _gauss(x, *theta)
        A = J.T @ (J * w[:, None])
        g = J.T @ (w * r)
        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(np.diag(A) + 1e-300), g)
            except np.linalg.LinAlgError:
                lam *= 10
                if lam > 1e16:
                    raise NumericalError("Gaussian fit normal equations are singular") from None
                continue
            trial = theta.copy()
            trial[free] += step
            trial[1] = abs(trial[1]) or theta[1]
            ct = cost(trial)
            if ct <= c:
                lam = max(lam / 10, 1e-12)
                break
            lam *= 10
            if lam > 1e16:
                step = np.zeros_like(step)
                trial = theta
                ct = c
                break
        rel = np.abs(step) / np.maximum(np.abs(theta[free]), floor[free])
        theta, c = trial, ct
        if np.all(rel < tol):
            J = _gauss_jac(x, *theta, free)
            return theta, J, c, it
    raise NumericalError(f"Gaussian fit did not converge in {max_iter} iterations")


def _half_width_half_max(counts, peak, level):
    n = len(counts)
    left = peak
    while left > 0 and counts[left] >= level:
        left -= 1
    right = peak
    while right < n - 1 and counts[right] >= level:
        right += 1
    return max(0.5, (right - left) / 2.0 - 0.5)


def gaussian_fit(hist: ResidualHistogram, poisson_weights: bool = False) -> GaussFit:
    """Least-squares fit of ``baseline + amplitude * exp(-(d - delta0)^2 / 2 sigma^2)``.

    Returns a result with ``degenerate=True`` instead of raising when no
    peak stands out (amplitude below twice the square root of the
    baseline) or fewer than six bins are populated.
    """
    w_bin = hist.bin_width
    x = hist.centers / 1e-9  # fit in ns for conditioning
    y = hist.counts.astype(float)
    bw = w_bin / 1e-9
    peak = int(np.argmax(y)) if y.size else 0
    baseline0 = float(np.median(y)) if y.size else 0.0
    amp0 = float(y[peak] - baseline0) if y.size else 0.0
    hwhm = _half_width_half_max(y, peak, baseline0 + amp0 / 2) * bw if y.size else bw
    sigma0 = max(hwhm / 1.1774, bw / 2)
    init = GaussFit(x[peak] * 1e-9 if y.size else 0.0, sigma0 * 1e-9, max(amp0, 0.0),
                    baseline0, degenerate=True)
    if np.count_nonzero(y) < 6 or amp0 < 2 * math.sqrt(max(baseline0, 0.0)) or amp0 <= 0:
        return init

    weights = 1.0 / np.maximum(y, 1.0) if poisson_weights else np.ones_like(y)
    free = np.array([True, True, True, True])
    theta, J, c, it = _levenberg_marquardt(x, y, weights, [x[peak], sigma0, amp0, baseline0], free)
    if theta[3] < 0:
        free[3] = False
        theta, J, c, it2 = _levenberg_marquardt(x, y, weights, [theta[0], theta[1], theta[2], 0.0], free)
        it += it2
    A = J.T @ (J * weights[:, None])
    try:
        cov = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        raise NumericalError("singular covariance in Gaussian fit") from None
    if not poisson_weights:
        # unweighted fit of Poisson counts: sandwich covariance with the
        # per-bin variance taken from the fitted model
        var = np.maximum(_gauss(x, *theta), 1.0)
        cov = cov @ (J.T @ (J * var[:, None])) @ cov
    errs = np.zeros(4)
    errs[free] = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    d0, s, a, b = (float(v) for v in theta)
    s = abs(s)
    errs = [float(e) for e in errs]
    degenerate = bool(a < 2 * math.sqrt(max(b, 0.0)) or a <= 0)
    return GaussFit(
        delta0=d0 * 1e-9, sigma_g=s * 1e-9, amplitude=max(a, 0.0), baseline=max(b, 0.0),
        delta0_err=errs[0] * 1e-9, sigma_g_err=errs[1] * 1e-9,
        amplitude_err=errs[2], baseline_err=errs[3], degenerate=degenerate, iterations=it,
    )


def _sideband_fraction(period: float, sigma_g: float) -> float:
    if not sigma_g > 0:
        raise ParameterError("sigma_g must be positive")
    frac = (period - 2 * SIDEBAND_SIGMAS * sigma_g) / period
    if frac <= 0:
        raise ValidationError("no sideband left: 12 sigma_g exceeds the pulse period")
    return frac


def background_rate(tags_ps, grid: TrefGrid, sigma_g: float, window_span: float) -> float:
    """Full-period background rate (counts/s) from tags beyond 6 sigma_g of ``t_ref``."""
    frac = _sideband_fraction(grid.emission_period, sigma_g)
    if not window_span > 0:
        raise ValidationError("window_span must be positive")
    _, res = _covered_residuals(tags_ps, grid)
    n_sb = int(np.count_nonzero(np.abs(res) > SIDEBAND_SIGMAS * sigma_g))
    return n_sb / (window_span * frac)


@dataclass
class SliceStats:
    t_start: float
    t_end: float
    counts: int
    sideband_counts: int
    raw_rate: float
    background_rate: float
    net_rate: float
    net_rate_err: float
    mu_rec: float | None = None
    mu_sat: float | None = None
    mean_R: float | None = None
    downlink_db: float | None = None
    mu_class: str | None = None

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def to_dict(self) -> dict:
        return asdict(self)


def _slice_bounds(grid: TrefGrid, length: float, origin: float | None):
    a_ps, b_ps = grid.arrival_span_ps
    start = a_ps * PS if origin is None else max(origin, a_ps * PS)
    end = b_ps * PS
    n = int(math.floor((end - start) / length + 1e-9))
    return [(start + i * length, start + (i + 1) * length) for i in range(n)]


def _rates_for_slices(tags_ps, grid, bounds, sigma_g, live_fraction=1.0):
    frac = _sideband_fraction(grid.emission_period, sigma_g)
    tags, res = _covered_residuals(tags_ps, grid)
    t = tags * PS
    side = np.abs(res) > SIDEBAND_SIGMAS * sigma_g
    out = []
    for a, b in bounds:
        lo, hi = np.searchsorted(t, [a, b])
        n = int(hi - lo)
        n_sb = int(np.count_nonzero(side[lo:hi]))
        T = (b - a) * live_fraction
        raw = n / T
        bg = n_sb / (T * frac)
        n_in = n - n_sb
        err = math.sqrt(n_in + n_sb * (1 - 1 / frac) ** 2) / T
        out.append(SliceStats(a, b, n, n_sb, raw, bg, raw - bg, err))
    return out


def sliced_rates(tags_ps, grid: TrefGrid, slice_length: float = 60.0, sigma_g: float = 0.5e-9,
                 origin: float | None = None, live_fraction: float = 1.0) -> list[SliceStats]:
    """Raw, sideband-background and net detection rate per time slice.

    Slices start at the beginning of the grid coverage (or ``origin``) and
    only whole slices are kept.
    """
    if not slice_length > 0:
        raise ParameterError("slice_length must be positive")
    bounds = _slice_bounds(grid, slice_length, origin)
    if not bounds:
        raise ValidationError("pass shorter than one slice")
    return _rates_for_slices(tags_ps, grid, bounds, sigma_g, live_fraction)


def _slice_range(table: EphemerisTable, s: SliceStats) -> float:
    return mean_slant_range(table, max(s.t_start, table.t_start), min(s.t_end, table.t_end))


def _masked(a, b, mask) -> bool:
    return any(a < m1 and b > m0 for m0, m1 in mask)


@dataclass(frozen=True)
class GainEstimate:
    G_t: float
    std_error: float
    n_slices: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def fit_transmitter_gain(slices: Sequence[SliceStats], table: EphemerisTable, p: LinkParams,
                         mask: Sequence[tuple[float, float]] = ()) -> GainEstimate:
    """Least-squares ``G_t`` for net rates against the radar equation at slice-mean range."""
    use = [s for s in slices if not _masked(s.t_start, s.t_end, mask)]
    if not use:
        raise ValidationError("every slice is masked")
    if len(use) < 5:
        raise ValidationError(f"need at least 5 unmasked slices, got {len(use)}")
    R = np.array([s.mean_R if s.mean_R is not None else _slice_range(table, s) for s in use])
    x = np.asarray(lb.detection_rate(R, 1.0, p))
    y = np.array([s.net_rate for s in use])
    sxx = float(np.dot(x, x))
    G = float(np.dot(x, y)) / sxx
    resid = y - G * x
    n = len(use)
    se = math.sqrt(float(np.dot(resid, resid)) / (n - 1) / sxx)
    if not G > 0:
        raise NumericalError(f"fitted gain {G:.4g} is not positive")
    return GainEstimate(G, se, n)


def mu_slices(tags_ps, grid: TrefGrid, table: EphemerisTable, p: LinkParams,
              slice_length: float = 10.0, sigma_g: float = 0.5e-9,
              origin: float | None = None, live_fraction: float = 1.0) -> list[SliceStats]:
    """Per-slice ``mu_rec``, ``mu_sat`` and photon-number class.

    ``mu_sat`` uses the slice net rate clipped at zero.
    """
    out = sliced_rates(tags_ps, grid, slice_length, sigma_g, origin, live_fraction)
    for s in out:
        s.mean_R = _slice_range(table, s)
        s.mu_rec = s.net_rate / p.f_rep
        s.mu_sat = float(lb.mu_sat_from_mu_rec(max(s.mu_rec, 0.0), s.mean_R, p))
        s.downlink_db = float(lb.to_decibel(lb.downlink_transmittance(s.mean_R, p)))
        s.mu_class = classify_mu(s.mu_sat)
    return out


@dataclass
class PeakStats:
    class_filter: str
    integration_time: float
    significance: float
    significance_err: float
    snr: float
    mean_rate: float
    raw_rate: float
    mean_mu_sat: float
    mean_downlink_db: float
    region_counts: int
    expected_background: float
    region_bins: int
    histogram: ResidualHistogram | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "histogram"}
        return d


def peak_significance(hist: ResidualHistogram, sigma_g: float, delta0: float = 0.0,
                      bootstrap: int = 200, seed: int = 0):
    """Excess in the +-3 sigma_g region over the sideband expectation.

    Returns ``(significance, snr, region_counts, expected, n_region, boot_err)``.
    Significance is the excess divided by the sideband bin-count standard
    deviation scaled linearly to the number of region bins; SNR is the
    excess over the expected background in the region.
    """
    c = hist.centers
    half = hist.bin_width / 2
    region = np.abs(c - delta0) <= PEAK_SIGMAS * sigma_g
    side = np.abs(c) - half > SIDEBAND_SIGMAS * sigma_g
    if region.sum() == 0:
        raise ValidationError("peak region contains no bins")
    if side.sum() < 2:
        raise ValidationError("fewer than two sideband bins")
    counts = hist.counts.astype(float)
    sb = counts[side]
    n_region = int(region.sum())
    N = float(counts[region].sum())

    def sig_of(sb_sample):
        mean = sb_sample.mean()
        sd = sb_sample.std(ddof=1)
        E = mean * n_region
        sig = (N - E) / (sd * n_region) if sd > 0 else math.nan
        return sig, E

    sig, E = sig_of(sb)
    snr = (N - E) / E if E > 0 else math.nan
    boot_err = math.nan
    if bootstrap > 1:
        rng = np.random.Generator(np.random.Philox(seed))
        draws = sb[rng.integers(0, len(sb), size=(bootstrap, len(sb)))]
        vals = np.array([sig_of(d)[0] for d in draws])
        vals = vals[np.isfinite(vals)]
        if vals.size > 1:
            boot_err = float(vals.std(ddof=1))
    return float(sig), float(snr), int(N), float(E), n_region, boot_err


def pooled_peak_stats(tags_ps, grid: TrefGrid, slices: Sequence[SliceStats], class_filter: str,
                      sigma_g: float, delta0: float = 0.0,
                      bin_width: float = DEFAULT_BIN_WIDTH) -> PeakStats:
    """Residual histogram pooled over the slices of the selected classes."""
    try:
        wanted = CLASS_FILTERS[class_filter]
    except KeyError:
        raise ParameterError(f"unknown class filter {class_filter!r}") from None
    chosen = [s for s in slices if (s.mu_class in wanted if s.mu_class is not None else class_filter == "all")]
    if not chosen:
        raise ValidationError(f"no slices in class selection {class_filter!r}")
    tags, res = _covered_residuals(tags_ps, grid)
    t = tags * PS
    keep = np.zeros(len(t), dtype=bool)
    for s in chosen:
        lo, hi = np.searchsorted(t, [s.t_start, s.t_end])
        keep[lo:hi] = True
    hist = histogram_from_residuals(res[keep], grid.emission_period, bin_width)
    sig, snr, N, E, n_reg, boot = peak_significance(hist, sigma_g, delta0)
    T = np.array([s.duration for s in chosen])
    total = float(T.sum())
    mu = [s.mu_sat for s in chosen if s.mu_sat is not None]
    db = [s.downlink_db for s in chosen if s.downlink_db is not None]
    mean_mu = float(np.dot([s.mu_sat for s in chosen], T) / total) if len(mu) == len(chosen) else math.nan
    return PeakStats(
        class_filter=class_filter,
        integration_time=total,
        significance=sig,
        significance_err=boot,
        snr=snr,
        mean_rate=float(np.dot([s.net_rate for s in chosen], T) / total),
        raw_rate=float(np.dot([s.raw_rate for s in chosen], T) / total),
        mean_mu_sat=mean_mu,
        mean_downlink_db=float(np.mean(db)) if db else math.nan,
        region_counts=N,
        expected_background=E,
        region_bins=n_reg,
        histogram=hist,
    )
