"""Detector-upgrade and orbit-scaling projections of SNR and QBER."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

from .errors import ParameterError
from .montecarlo import DETECTOR_PRESETS, DetectorModel

BASELINE_SNR = 1.5
BASELINE_MU_SAT = 0.55
MEO_RANGE = 7000e3
GNSS_RANGE = 23000e3


@dataclass(frozen=True)
class ProjectionScenario:
    baseline: DetectorModel = DETECTOR_PRESETS["pmt"]
    upgraded: DetectorModel = DETECTOR_PRESETS["si-spad"]
    mu_fixed: float = 0.6
    mu_sat_obs: float = BASELINE_MU_SAT
    R_baseline: float = MEO_RANGE
    R_target: float = MEO_RANGE
    dark_target: float | None = None
    mu_bound: float = 1.0
    name: str = "custom"
    reference_qber: float | None = None

    def __post_init__(self):
        if not (self.mu_fixed > 0):
            raise ParameterError("mu_fixed must be positive")
        if self.mu_fixed > self.mu_bound:
            raise ParameterError(f"mu_fixed {self.mu_fixed} exceeds the safety bound {self.mu_bound}")
        if not (self.R_baseline > 0 and self.R_target > 0):
            raise ParameterError("ranges must be positive")
        if self.dark_target is not None and not self.dark_target > 0:
            raise ParameterError("dark_target must be positive")


@dataclass(frozen=True)
class ProjectionReport:
    scenario: str
    rate_factor: float
    noise_factor: float
    distance_factor: float
    dark_override_factor: float
    snr_baseline: float
    snr_projected: float
    qber: float
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def rate_factor(s: ProjectionScenario) -> float:
    """Signal gain from a fixed photon number and a more efficient detector."""
    if s.baseline.efficiency <= 0 or s.mu_sat_obs <= 0:
        raise ParameterError("baseline efficiency and observed mu_sat must be positive")
    return (s.mu_fixed / s.mu_sat_obs) * (s.upgraded.efficiency / s.baseline.efficiency)


def noise_factor(s: ProjectionScenario) -> float:
    """Reduction of dark counts inside a jitter-limited coincidence window."""
    if s.upgraded.dark_rate <= 0 or s.upgraded.jitter_fwhm <= 0:
        raise ParameterError("upgraded dark rate and jitter must be positive")
    return (s.baseline.dark_rate / s.upgraded.dark_rate) * (s.baseline.jitter_fwhm / s.upgraded.jitter_fwhm)


def distance_scaling(R_baseline: float, R_target: float) -> float:
    """Downlink signal loss ``(R_target / R_baseline)^2``."""
    if R_baseline <= 0 or R_target <= 0:
        raise ParameterError("ranges must be positive")
    return (R_target / R_baseline) ** 2


def qber_from_snr(snr: float) -> float:
    """Accidentals-limited error rate ``N / (S + N) = 1 / (1 + SNR)``, clamped to ``[0, 0.5]``."""
    if snr < 0 or math.isnan(snr):
        return 0.5
    return min(0.5, max(0.0, 1.0 / (1.0 + snr)))


def project(s: ProjectionScenario, baseline_snr: float = BASELINE_SNR) -> ProjectionReport:
    if not baseline_snr > 0:
        raise ParameterError("baseline_snr must be positive")
    rf = rate_factor(s)
    nf = noise_factor(s)
    df = distance_scaling(s.R_baseline, s.R_target)
    dark = s.upgraded.dark_rate / s.dark_target if s.dark_target is not None else 1.0
    snr = baseline_snr * rf * nf * dark / df
    q = qber_from_snr(snr)
    notes = [f"QBER = 1/(1+SNR) with SNR = {baseline_snr:g} x {rf:.4g} x {nf:.4g}"
             + (f" x {dark:.4g}" if s.dark_target is not None else "")
             + (f" / {df:.4g}" if df != 1 else "")]
    if s.reference_qber is not None:
        rel = q / s.reference_qber
        agree = "agrees with" if 0.8 <= rel <= 1.25 else "differs from"
        notes.append(f"model QBER {q:.3%} {agree} the published estimate {s.reference_qber:.1%}")
    return ProjectionReport(s.name, rf, nf, df, dark, baseline_snr, snr, q, notes)


SCENARIO_PRESETS = {
    "si-meo": ProjectionScenario(upgraded=DETECTOR_PRESETS["si-spad"], name="si-meo",
                                 reference_qber=0.036),
    "si-gnss": ProjectionScenario(upgraded=DETECTOR_PRESETS["si-spad"], R_target=GNSS_RANGE,
                                  dark_target=100.0, name="si-gnss", reference_qber=0.066),
    "snspd-meo": ProjectionScenario(upgraded=DETECTOR_PRESETS["snspd"], name="snspd-meo",
                                    reference_qber=0.005),
    "snspd-gnss": ProjectionScenario(upgraded=DETECTOR_PRESETS["snspd"], R_target=GNSS_RANGE,
                                     name="snspd-gnss", reference_qber=0.03),
    "identity": ProjectionScenario(upgraded=DETECTOR_PRESETS["pmt"], mu_fixed=BASELINE_MU_SAT,
                                   name="identity"),
}


def scenario_preset(name: str, **overrides) -> ProjectionScenario:
    try:
        base = SCENARIO_PRESETS[name]
    except KeyError:
        raise ParameterError(
            f"unknown projection scenario {name!r}; choose from {sorted(SCENARIO_PRESETS)}"
        ) from None
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(base, **overrides) if overrides else base
