"""Photon link budget for a retroreflector satellite.

Two-way radar equation, slant-path atmospheric transmission, transmitter
gain with pointing loss, and the downlink factor that converts the mean
photon number leaving the satellite (``mu_sat``) into the mean photon
number reaching the detector (``mu_rec``).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import DomainError, ParameterError

PLANCK = 6.62607015e-34  # J s
SPEED_OF_LIGHT = 299_792_458.0

_ZENITH_SLACK = 1e-3  # metres


@dataclass(frozen=True)
class LinkParams:
    """Physical constants of the link, SI units throughout.

    Defaults reproduce LAGEOS-2 observed from the Matera Laser Ranging
    Observatory.
    """

    alpha: float = 237.0  # m^4, lumped radar-equation coefficient
    T_0: float = 0.89
    h_t: float = 537.0
    R_e: float = 6371e3
    h_s: float = 5620e3
    h_scale: float = 1200.0
    theta_t: float = 130.5e-6
    theta_p: float = 0.0
    A_CCR: float = 11.4e-4
    Sigma: float = 15e6
    rho: float = 0.89
    N_eff: float = 9.88
    A_t: float = 1.7357
    eta_rx: float = 0.1306
    eta_det: float = 0.1
    c: float = SPEED_OF_LIGHT
    f_rep: float = 100e6
    f_slr: float = 10.0
    pulse_energy: float = 1.1e-9
    wavelength: float = 532e-9

    def __post_init__(self):
        for name in ("T_0", "rho", "eta_rx", "eta_det"):
            v = getattr(self, name)
            if not (0 < v <= 1):
                raise ParameterError(f"{name} must lie in (0, 1], got {v}")
        for name in ("alpha", "R_e", "h_s", "h_scale", "theta_t", "A_CCR", "Sigma",
                     "N_eff", "A_t", "c", "f_rep", "f_slr", "pulse_energy", "wavelength"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ParameterError(f"{name} must be positive and finite, got {v}")
        if not (self.h_t >= 0):
            raise ParameterError(f"h_t must be >= 0, got {self.h_t}")
        if not (self.h_s > self.h_t):
            raise ParameterError("h_s must exceed h_t")
        if not (self.theta_p >= 0):
            raise ParameterError(f"theta_p must be >= 0, got {self.theta_p}")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @property
    def zenith_range(self) -> float:
        return self.h_s - self.h_t

    @property
    def horizon_range(self) -> float:
        return math.sqrt((self.R_e + self.h_s) ** 2 - (self.R_e + self.h_t) ** 2)


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def _air_mass(R, p: LinkParams):
    R = np.asarray(R, dtype=float)
    a = p.h_s + p.R_e
    b = p.h_t + p.R_e
    denom = a * a - R * R - b * b
    if np.any(R < p.zenith_range - _ZENITH_SLACK) or np.any(denom <= 0):
        bad = R[(R < p.zenith_range - _ZENITH_SLACK) | (denom <= 0)]
        raise DomainError(
            f"slant range {np.ravel(bad)[0]!r} m outside "
            f"[{p.zenith_range}, {p.horizon_range}) m"
        )
    return 2 * R * b / denom


def atmospheric_transmission(R, p: LinkParams):
    """One-way transmission along the slant path to a satellite at range ``R``."""
    exponent = _air_mass(R, p) * math.exp(-p.h_t / p.h_scale)
    return _scalar_or_array(np.power(p.T_0, exponent))


def transmitter_gain(theta_t, theta_p):
    """Far-field gain of a Gaussian beam of divergence ``theta_t`` mispointed by ``theta_p``."""
    if np.any(np.asarray(theta_t) <= 0):
        raise ParameterError("theta_t must be positive")
    if np.any(np.asarray(theta_p) < 0):
        raise ParameterError("theta_p must be >= 0")
    theta_t = np.asarray(theta_t, dtype=float)
    theta_p = np.asarray(theta_p, dtype=float)
    return _scalar_or_array(8.0 / theta_t**2 * np.exp(-2.0 * (theta_p / theta_t) ** 2))


def link_ratio(R, G_t, p: LinkParams):
    """Received over transmitted photon rate, ``alpha * G_t * T_a^2 / R^4``."""
    if np.any(np.asarray(G_t) <= 0):
        raise ParameterError("G_t must be positive")
    R = np.asarray(R, dtype=float)
    Ta = np.asarray(atmospheric_transmission(R, p))
    return _scalar_or_array(p.alpha * np.asarray(G_t) * Ta**2 / R**4)


def downlink_transmittance(R, p: LinkParams):
    """``mu_rec / mu_sat`` for a satellite at slant range ``R``."""
    R = np.asarray(R, dtype=float)
    Ta = np.asarray(atmospheric_transmission(R, p))
    geometric = p.Sigma / (p.A_CCR * p.rho * p.N_eff) / (4 * math.pi * R**2)
    return _scalar_or_array(geometric * Ta * p.A_t * p.eta_rx * p.eta_det)


def mu_rec_from_mu_sat(mu_sat, R, p: LinkParams):
    if np.any(np.asarray(mu_sat) < 0):
        raise ParameterError("mu_sat must be >= 0")
    return _scalar_or_array(np.asarray(mu_sat, dtype=float) * downlink_transmittance(R, p))


def mu_sat_from_mu_rec(mu_rec, R, p: LinkParams):
    if np.any(np.asarray(mu_rec) < 0):
        raise ParameterError("mu_rec must be >= 0")
    return _scalar_or_array(np.asarray(mu_rec, dtype=float) / downlink_transmittance(R, p))


def to_decibel(ratio):
    """Attenuation in dB, reported positive for ratios below one."""
    r = np.asarray(ratio, dtype=float)
    if np.any(r <= 0):
        raise DomainError("decibel conversion needs a positive ratio")
    return _scalar_or_array(-10.0 * np.log10(r))


def photons_per_pulse(p: LinkParams) -> float:
    return p.pulse_energy * p.wavelength / (PLANCK * p.c)


def transmitted_photon_rate(p: LinkParams) -> float:
    """``f_tx``: photons per second leaving the telescope."""
    return p.f_rep * photons_per_pulse(p)


def detection_rate(R, G_t, p: LinkParams):
    """Expected signal detection rate ``f_tx * alpha * G_t * T_a^2 / R^4``."""
    return _scalar_or_array(transmitted_photon_rate(p) * np.asarray(link_ratio(R, G_t, p)))


def uplink_fraction(R, G_t, p: LinkParams):
    """Fraction of transmitted photons that leave the satellite toward the station.

    Defined as ``link_ratio / downlink_transmittance`` so that uplink and
    downlink compose exactly to the calibrated radar equation.
    """
    return _scalar_or_array(np.asarray(link_ratio(R, G_t, p)) / np.asarray(downlink_transmittance(R, p)))


def geometric_uplink_fraction(R, G_t, p: LinkParams):
    """Uplink fraction from first principles: beam spread onto the CCR array.

    Independent of ``alpha``; used only to sanity-check the empirical
    coefficient.
    """
    R = np.asarray(R, dtype=float)
    Ta = np.asarray(atmospheric_transmission(R, p))
    return _scalar_or_array(
        np.asarray(G_t) * Ta * p.A_CCR * p.rho * p.N_eff / (4 * math.pi * R**2)
    )


def mu_sat_from_uplink(R, G_t, p: LinkParams):
    """Mean photon number per pulse leaving the satellite."""
    return _scalar_or_array(photons_per_pulse(p) * np.asarray(uplink_fraction(R, G_t, p)))
