"""Simulate → analyse → project, driven by a :class:`RunConfig`.

The functions here return plain dictionaries ready for JSON output; the
command-line front end only adds file handling on top.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import analysis as an
from .config import RunConfig
from .errors import MeolinkError, NumericalError
from .geometry import EphemerisTable
from .montecarlo import PassTruth, simulate_pass
from .projection import BASELINE_SNR, project, scenario_preset, SCENARIO_PRESETS
from .timing import SlrEpochPair, reconstruct_tref

TAGS_FILE = "tags.csv"
SLR_FILE = "slr.csv"
TRUTH_FILE = "truth.json"
REPORT_FILE = "report.json"
HISTOGRAM_FILE = "histogram.csv"
PROJECTION_FILE = "projection.json"


def clean_json(obj):
    """Recursively convert numpy scalars/arrays and map NaN/inf to ``None``."""
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean_json(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dump_json(obj, path) -> None:
    text = json.dumps(clean_json(obj), sort_keys=True, indent=1, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8", newline="\n")


def run_simulation(cfg: RunConfig, table: EphemerisTable | None = None):
    """Simulate the configured pass. Returns ``(stream, truth, table)``."""
    seed = cfg.require_seed()
    table = cfg.ephemeris_table() if table is None else table
    stream, truth = simulate_pass(
        table, cfg.link_params(), cfg.detector_model(), cfg.pointing_model(),
        cfg.mu_policy_model(), cfg.schedule(), seed=seed,
        background_rate=cfg.background_rate, workers=cfg.workers, return_truth=True,
    )
    return stream, truth, table


def truth_summary(truth: PassTruth, cfg: RunConfig) -> dict:
    p = cfg.link_params()
    d = truth.to_dict()
    d["seed"] = cfg.seed
    d["effective_G_t"] = truth.effective_gain(p, cfg.mask)
    d["mask"] = [list(m) for m in cfg.mask]
    return d


def _safe(fn, *args, **kw):
    try:
        return fn(*args, **kw), None
    except MeolinkError as exc:
        return None, str(exc)


def analyze_stream(tags_ps, pairs: list[SlrEpochPair], table: EphemerisTable,
                   cfg: RunConfig) -> tuple[dict, dict]:
    """Full analysis of one pass.

    Returns ``(report, histograms)`` where ``histograms`` maps a name to a
    :class:`~meolink.analysis.ResidualHistogram`. Stages that cannot
    produce a result (too few slices, empty class selection, ...) are
    reported as ``null`` with an explanatory message rather than aborting.
    """
    p = cfg.link_params()
    det = cfg.detector_model()
    grid = reconstruct_tref(pairs, p.f_rep)
    tags_ps = np.asarray(tags_ps, dtype=np.int64)

    hist = an.residual_histogram(tags_ps, grid, cfg.bin_width)
    try:
        fit, fit_error = an.gaussian_fit(hist), None
    except NumericalError as exc:  # e.g. a noise spike in a background-only run
        fit = an.GaussFit(0.0, det.jitter_sigma, 0.0, float(np.median(hist.counts)), degenerate=True)
        fit_error = str(exc)
    sigma_g, delta0, source = fit.sigma_g, fit.delta0, "fit"
    if fit.degenerate or not 2 * an.SIDEBAND_SIGMAS * sigma_g < grid.emission_period:
        sigma_g, delta0, source = det.jitter_sigma, 0.0, "detector_jitter"

    slices = an.sliced_rates(tags_ps, grid, cfg.slice_length, sigma_g)
    for s in slices:
        s.mean_R = an._slice_range(table, s)
    gain, gain_err = _safe(an.fit_transmitter_gain, slices, table, p, cfg.mask)
    mslices = an.mu_slices(tags_ps, grid, table, p, cfg.mu_slice_length, sigma_g)

    histograms = {"all_tags": hist}
    peaks, peak_errors = {}, {}
    for cf in ("le1", "le2", "all"):
        ps, err = _safe(an.pooled_peak_stats, tags_ps, grid, mslices, cf, sigma_g, delta0, cfg.bin_width)
        peaks[cf] = ps.to_dict() if ps is not None else None
        if ps is not None:
            histograms[cf] = ps.histogram
        else:
            peak_errors[cf] = err

    classes = {c: sum(1 for s in mslices if s.mu_class == c) for c in (an.LE1, an.GT1LE2, an.GT2)}
    net = np.array([s.net_rate for s in slices])
    report = {
        "n_detector_tags": int(tags_ps.size),
        "n_slr_pairs": len(pairs),
        "gauss_fit": fit.to_dict(),
        "gauss_fit_error": fit_error,
        "sigma_g_used": sigma_g,
        "delta0_used": delta0,
        "sigma_g_source": source,
        "gain": gain.to_dict() if gain is not None else None,
        "gain_error": gain_err,
        "mask": [list(m) for m in cfg.mask],
        "slices": [s.to_dict() for s in slices],
        "mean_net_rate": float(net.mean()) if net.size else math.nan,
        "mean_net_rate_err": float(net.std(ddof=1) / math.sqrt(net.size)) if net.size > 1 else math.nan,
        "mu_slices": [s.to_dict() for s in mslices],
        "mu_class_counts": classes,
        "peak_stats": peaks,
        "peak_stats_errors": peak_errors,
        "class_filter": cfg.class_filter,
        "selected": peaks.get(cfg.class_filter),
    }
    return report, histograms


def baseline_from_report(report: dict | None, class_filter: str) -> tuple[float | None, float | None]:
    """Observed ``(snr, mean_mu_sat)`` of the selected class, if available."""
    if not report:
        return None, None
    ps = (report.get("peak_stats") or {}).get(class_filter)
    if not ps:
        return None, None
    snr, mu = ps.get("snr"), ps.get("mean_mu_sat")
    return (snr if snr is not None and snr > 0 else None), (mu if mu is not None and mu > 0 else None)


def run_projection(cfg: RunConfig, report: dict | None = None) -> dict:
    """Projections for the configured scenario (or every preset with ``all``).

    The baseline SNR comes from ``baseline_snr`` in the config, otherwise
    from the analysis report, otherwise the published value 1.5.
    """
    snr_rep, mu_rep = baseline_from_report(report, cfg.class_filter)
    if cfg.baseline_snr is not None:
        snr, source = cfg.baseline_snr, "config"
    elif snr_rep is not None:
        snr, source = snr_rep, "report"
    else:
        snr, source = BASELINE_SNR, "published"
    names = sorted(SCENARIO_PRESETS) if cfg.projection == "all" else [cfg.projection]
    out = {}
    for name in names:
        over = {"mu_sat_obs": mu_rep} if (source == "report" and mu_rep is not None) else {}
        rep = project(scenario_preset(name, **over), snr)
        out[name] = rep.to_dict()
    return {"baseline_snr": snr, "baseline_source": source,
            "class_filter": cfg.class_filter, "scenarios": out}
