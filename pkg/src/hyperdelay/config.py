"""Run configuration: one JSON document, strict keys.

Units: angles in radians, times in ps (delay line in ns), rates in Hz,
lengths in nm.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .franson import InterferometerSpec
from .optics import DelayLineSpec
from .qstate import DensityMatrix, bell_pol, bell_timebin, noisy_state, tensor
from .simkit import SourceSpec

NOISE_MODELS = ("dephasing", "depolarizing")


class ConfigError(ValueError):
    pass


@dataclass
class SourceConfig:
    pair_rate_hz: float = 1e5
    duration_s: float = 1.0
    theta: float = 0.0
    phi: float = 0.0
    pol_visibility: float = 1.0
    et_visibility: float = 1.0
    pol_noise_model: str = "dephasing"
    et_noise_model: str = "dephasing"

    def __post_init__(self):
        for m in (self.pol_noise_model, self.et_noise_model):
            if m not in NOISE_MODELS:
                raise ConfigError(f"unknown noise model {m!r}; choose from {NOISE_MODELS}")
        for name in ("pol_visibility", "et_visibility"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"source.{name} must lie in [0, 1]")
        if self.pair_rate_hz < 0 or not self.duration_s > 0:
            raise ConfigError("source rate must be >= 0 and duration > 0")


@dataclass
class DetectorConfig:
    efficiency_signal: float = 0.6
    efficiency_idler: float = 0.6
    dark_rate_signal_hz: float = 100.0
    dark_rate_idler_hz: float = 100.0
    jitter_fwhm_ps: float = 567.0

    def __post_init__(self):
        if not (0 <= self.efficiency_signal <= 1 and 0 <= self.efficiency_idler <= 1):
            raise ConfigError("detector efficiencies must lie in [0, 1]")
        if self.dark_rate_signal_hz < 0 or self.dark_rate_idler_hz < 0 or self.jitter_fwhm_ps < 0:
            raise ConfigError("dark rates and jitter must be nonnegative")


@dataclass
class AnalysisConfig:
    bin_width_ps: float = 100.0
    window_ps: float = 700.0
    scan_start_nm: float = 0.0
    scan_step_nm: float = 14.0
    scan_steps: int = 16
    displacement_nm: float = 0.0
    projections: list = field(default_factory=lambda: ["HH", "DD"])
    polarizer_points: int = 16

    def __post_init__(self):
        if self.bin_width_ps <= 0 or self.window_ps <= 0:
            raise ConfigError("bin width and window must be positive")
        if self.scan_steps < 1 or self.polarizer_points < 4:
            raise ConfigError("scan_steps must be >= 1 and polarizer_points >= 4")
        for p in self.projections:
            parse_projection(p)


@dataclass
class TomographyConfig:
    n_per_setting: float = 1e4
    bootstrap: int = 200
    chsh_n_per_setting: float = 25_000.0  # 10^5 pairs over the four setting pairs
    target: str = "phi+"

    def __post_init__(self):
        if self.n_per_setting <= 0 or self.chsh_n_per_setting <= 0:
            raise ConfigError("tomography count scales must be positive")
        if self.bootstrap < 0:
            raise ConfigError("bootstrap replica count must be nonnegative")
        if self.target not in TARGETS:
            raise ConfigError(f"unknown target {self.target!r}; choose from {sorted(TARGETS)}")


TARGETS = {"phi+", "phi-", "truth"}


@dataclass
class RunConfig:
    seed: int = 12345
    source: SourceConfig = field(default_factory=SourceConfig)
    detectors: DetectorConfig = field(default_factory=DetectorConfig)
    delay_line: DelayLineSpec | None = field(default_factory=DelayLineSpec)
    interferometer: InterferometerSpec = field(default_factory=InterferometerSpec)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    tomography: TomographyConfig = field(default_factory=TomographyConfig)

    # -- derived objects --------------------------------------------------

    def pol_state(self) -> DensityMatrix:
        s = self.source
        return noisy_state(bell_pol(s.theta), s.pol_visibility, s.pol_noise_model)

    def et_state(self) -> DensityMatrix:
        s = self.source
        return noisy_state(bell_timebin(s.phi), s.et_visibility, s.et_noise_model)

    def joint_state(self) -> DensityMatrix:
        return tensor(self.pol_state(), self.et_state())

    def source_spec(self, seed: int | None = None, delayed: bool = True) -> SourceSpec:
        d = self.detectors
        return SourceSpec(
            pair_rate_hz=self.source.pair_rate_hz,
            duration_s=self.source.duration_s,
            seed=self.seed if seed is None else seed,
            state=self.joint_state(),
            detector_efficiency=(d.efficiency_signal, d.efficiency_idler),
            dark_rate_hz=(d.dark_rate_signal_hz, d.dark_rate_idler_hz),
            jitter_fwhm_ps=d.jitter_fwhm_ps,
            delay=self.delay_line if delayed else None,
        )

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "source": dataclasses.asdict(self.source),
            "detectors": dataclasses.asdict(self.detectors),
            "delay_line": None if self.delay_line is None else self.delay_line.to_dict(),
            "interferometer": self.interferometer.to_dict(),
            "analysis": dataclasses.asdict(self.analysis),
            "tomography": dataclasses.asdict(self.tomography),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(d, {f.name for f in dataclasses.fields(cls)}, "config")
        try:
            kw = {}
            if "seed" in d:
                kw["seed"] = _seed(d["seed"])
            sections = {
                "source": SourceConfig,
                "detectors": DetectorConfig,
                "interferometer": InterferometerSpec,
                "analysis": AnalysisConfig,
                "tomography": TomographyConfig,
            }
            for name, typ in sections.items():
                if name in d:
                    sub = d[name]
                    if not isinstance(sub, dict):
                        raise ConfigError(f"{name} must be an object")
                    _reject_unknown(sub, {f.name for f in dataclasses.fields(typ)}, name)
                    kw[name] = typ(**sub)
            if "delay_line" in d:
                sub = d["delay_line"]
                if sub is None:
                    kw["delay_line"] = None
                else:
                    _reject_unknown(sub, {f.name for f in dataclasses.fields(DelayLineSpec)}, "delay_line")
                    kw["delay_line"] = DelayLineSpec.from_dict(sub)
            cfg = cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigError(str(e)) from None
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def _seed(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v < 2 ** 64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {v!r}")
    return v


LINEAR_ANGLES = {"H": 0.0, "V": np.pi / 2, "D": np.pi / 4, "A": 3 * np.pi / 4}


def parse_angle(text: str) -> float:
    """Radians, or degrees with an explicit ``deg`` suffix."""
    t = text.strip().lower()
    try:
        if t.endswith("deg"):
            return float(np.deg2rad(float(t[:-3])))
        if t.endswith("rad"):
            t = t[:-3]
        return float(t)
    except ValueError:
        raise ConfigError(f"cannot parse angle {text!r}") from None


def parse_projection(text: str) -> tuple[float, float]:
    """``"HH"``/``"DD"``-style labels or ``"a,b"`` analyzer angles for (signal, idler)."""
    t = text.strip()
    if len(t) == 2 and all(c in LINEAR_ANGLES for c in t.upper()):
        return LINEAR_ANGLES[t[0].upper()], LINEAR_ANGLES[t[1].upper()]
    parts = t.split(",")
    if len(parts) != 2:
        raise ConfigError(f"projection must be two labels like 'HH' or 'a,b' angles, got {text!r}")
    return parse_angle(parts[0]), parse_angle(parts[1])
