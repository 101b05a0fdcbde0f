"""Single-photon exchange with retroreflector satellites in medium Earth orbit.

Modules
-------
geometry     pass ephemerides: slant range and radial velocity
linkbudget   radar equation, atmosphere, transmitter gain, downlink factor
timing       round-trip times and the expected-arrival grid from ranging epochs
montecarlo   synthetic detector and ranging time-tag streams
analysis     residual histograms, Gaussian fit, slice rates, gain fit, peak statistics
projection   detector-upgrade and orbit-scaling SNR / QBER arithmetic
config, cli  run configuration and command-line front end
"""
from .errors import (ConfigError, DomainError, MeolinkError, NumericalError, ParameterError,
                     ParseError, RangeError, ValidationError)
from .linkbudget import LinkParams

__version__ = "0.1.0"

__all__ = [
    "LinkParams", "MeolinkError", "ParameterError", "DomainError", "RangeError",
    "ValidationError", "ParseError", "ConfigError", "NumericalError", "__version__",
]
