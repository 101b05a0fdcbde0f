"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, SI units throughout (angles
in radians except ``max_elevation_deg``). Every key is optional except
``seed`` when simulating; defaults reproduce LAGEOS-2 seen from MLRO.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError, MeolinkError
from .geometry import EphemerisTable, load_ephemeris, synthetic_pass
from .linkbudget import LinkParams
from .montecarlo import (DETECTOR_PRESETS, DetectorModel, MuPolicy, PointingModel,
                         ReceiveSchedule, detector_preset)

_LINK_KEYS = tuple(LinkParams.field_names())
_LINK_DEFAULTS = LinkParams().to_dict()


def _parse_mask(text: str) -> tuple[tuple[float, float], ...]:
    out = []
    for part in text.replace(";", ",").split(","):
        part = part.strip()
        if not part:
            continue
        try:
            a, b = (float(x) for x in part.split(":"))
        except ValueError:
            raise ConfigError(f"mask interval {part!r} is not START:END") from None
        if not b > a:
            raise ConfigError(f"mask interval {part!r} must have END > START")
        out.append((a, b))
    return tuple(out)


def _format_mask(mask) -> str:
    return ",".join(f"{a!r}:{b!r}" for a, b in mask)


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to simulate, analyse and project one pass."""

    # ephemeris: "synthetic" or a path to a t_s,R_m,vR_mps file
    ephemeris: str = "synthetic"
    max_elevation_deg: float = 80.0
    duration: float = 2580.0
    ephemeris_dt: float = 1.0
    link: dict = field(default_factory=dict)  # LinkParams overrides
    detector: str = "pmt"
    detector_efficiency: float | None = None
    detector_dark_rate: float | None = None
    detector_jitter_fwhm: float | None = None
    detector_tdc_bin: float | None = None
    background_rate: float | None = None
    pointing_mean: float = 0.0
    pointing_sigma: float = 0.0
    pointing_correlation_time: float = 60.0
    pointing_excess: float = 0.0
    pointing_excess_start: float | None = None
    pointing_excess_end: float | None = None
    mu_policy: str = "physical"
    mu_sat: float | None = None
    receive_period: float = 1.0
    receive_fraction: float = 1.0
    seed: int | None = None
    workers: int = 1
    out_dir: str = "out"
    bin_width: float = 0.4e-9
    slice_length: float = 60.0
    mu_slice_length: float = 10.0
    mask: tuple = ()
    class_filter: str = "le1"
    projection: str = "si-meo"
    baseline_snr: float | None = None

    def __post_init__(self):
        unknown = set(self.link) - set(_LINK_KEYS)
        if unknown:
            raise ConfigError(f"unknown link parameter {sorted(unknown)[0]!r}")
        if self.class_filter not in ("le1", "le2", "all"):
            raise ConfigError(f"class_filter must be le1, le2 or all, got {self.class_filter!r}")
        if self.detector.lower() not in DETECTOR_PRESETS:
            raise ConfigError(f"unknown detector preset {self.detector!r}")
        if self.seed is not None and not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer")
        for name in ("duration", "ephemeris_dt", "bin_width", "slice_length", "mu_slice_length"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.ephemeris != "synthetic" and not Path(self.ephemeris).is_file():
            raise ConfigError(f"ephemeris file {self.ephemeris!r} does not exist")
        if (self.pointing_excess_start is None) != (self.pointing_excess_end is None):
            raise ConfigError("pointing_excess_start and pointing_excess_end go together")
        try:  # surface physical-parameter errors at load time
            self.link_params()
            self.detector_model()
            self.pointing_model()
            self.mu_policy_model()
            self.schedule()
        except MeolinkError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    # -- builders ---------------------------------------------------------
    def link_params(self) -> LinkParams:
        return LinkParams(**self.link)

    def detector_model(self) -> DetectorModel:
        base = detector_preset(self.detector)
        over = {k: v for k, v in (("efficiency", self.detector_efficiency),
                                  ("dark_rate", self.detector_dark_rate),
                                  ("jitter_fwhm", self.detector_jitter_fwhm),
                                  ("tdc_bin", self.detector_tdc_bin)) if v is not None}
        return replace(base, **over) if over else base

    def pointing_model(self) -> PointingModel:
        excess = None
        if self.pointing_excess_start is not None:
            excess = ((self.pointing_excess_start, self.pointing_excess_end), self.pointing_excess)
        return PointingModel(self.pointing_mean, self.pointing_sigma,
                             self.pointing_correlation_time, excess)

    def mu_policy_model(self) -> MuPolicy:
        if self.mu_policy == "fixed":
            return MuPolicy.fixed(self.mu_sat if self.mu_sat is not None else -1.0)
        return MuPolicy(self.mu_policy)

    def schedule(self) -> ReceiveSchedule:
        return ReceiveSchedule(self.receive_period, self.receive_fraction)

    def ephemeris_table(self) -> EphemerisTable:
        p = self.link_params()
        if self.ephemeris == "synthetic":
            return synthetic_pass(h_s=p.h_s, max_elevation=math.radians(self.max_elevation_deg),
                                  duration=self.duration, dt=self.ephemeris_dt,
                                  R_e=p.R_e, h_t=p.h_t)
        return load_ephemeris(self.ephemeris, h_s=p.h_s, h_t=p.h_t)

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("seed required: set 'seed' in the config or pass --seed")
        return self.seed

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


_PLAIN_KEYS = {f.name: f for f in fields(RunConfig) if f.name != "link"}
_INT_KEYS = {"seed", "workers"}
_STR_KEYS = {"ephemeris", "detector", "mu_policy", "out_dir", "class_filter", "projection"}


def _convert(key: str, raw: str):
    if raw.lower() in ("none", ""):
        return None
    if key == "mask":
        return _parse_mask(raw)
    if key in _STR_KEYS:
        return raw
    try:
        if key in _INT_KEYS:
            return int(raw, 0)
        return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key!r}") from None


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    kw: dict = {}
    link: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in kw or key in link:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        if key in _LINK_KEYS:
            try:
                link[key] = float(raw)
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: bad value {raw!r} for {key!r}") from None
        elif key in _PLAIN_KEYS:
            value = _convert(key, raw)
            if value is None and key in ("mask",):
                value = ()
            kw[key] = value
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    for k in [k for k, v in kw.items() if v is None and _PLAIN_KEYS[k].default is not None]:
        raise ConfigError(f"{source}: {k!r} cannot be empty")
    return RunConfig(link=link, **kw)


def parse_config(path) -> RunConfig:
    """Read and validate a configuration file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(path))


def format_config(cfg: RunConfig) -> str:
    """Serialise every setting; ``parse_config_text(format_config(c)) == c``."""
    lines = []
    for name in _PLAIN_KEYS:
        v = getattr(cfg, name)
        if v is None:
            s = "none"
        elif name == "mask":
            s = _format_mask(v)
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        lines.append(f"{name} = {s}")
    for k in _LINK_KEYS:
        if k in cfg.link:
            lines.append(f"{k} = {float(cfg.link[k])!r}")
    return "\n".join(lines) + "\n"


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(format_config(cfg), encoding="utf-8", newline="\n")


PRESET_DIR = Path(__file__).parent / "presets"


def preset_path(name: str) -> Path:
    path = PRESET_DIR / f"{name}.cfg"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}")
    return path
