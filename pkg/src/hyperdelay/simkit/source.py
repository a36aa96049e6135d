"""Monte Carlo generation of time-tagged detections from a CW pair source.

Random numbers come from numpy's PCG64 bit generator seeded with the 64-bit
``SourceSpec.seed``; draws happen in a fixed order, so a (spec, seed) pair
always produces the same stream.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..franson import InterferometerSpec, energy_time_coherence, two_photon_phase
from ..optics import DelayLineSpec, apply_to_photon, delay_line_channel, polarizer_projector
from ..qstate import DensityMatrix, hyper_state
from .tags import IDLER, SIGNAL, TimeTagStream

FWHM_PER_SIGMA = 2 * np.sqrt(2 * np.log(2))

# outcome classes for a pair at the interferometer
EARLY, CENTRAL, LATE, SIGNAL_ONLY, IDLER_ONLY, NEITHER = range(6)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFF_FFFF_FFFF_FFFF))


def derive_seed(seed: int, *keys: int) -> int:
    """Independent child seed for scan point / replica ``keys``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFF_FFFF_FFFF_FFFF, *keys])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SourceSpec:
    pair_rate_hz: float = 1e5
    duration_s: float = 1.0
    seed: int = 0
    state: DensityMatrix = field(default_factory=lambda: hyper_state(0.0, 0.0).projector())
    detector_efficiency: tuple[float, float] = (0.6, 0.6)
    dark_rate_hz: tuple[float, float] = (100.0, 100.0)
    jitter_fwhm_ps: float = 567.0
    delay: DelayLineSpec | None = None

    def __post_init__(self):
        if self.pair_rate_hz < 0:
            raise ValueError("pair_rate_hz must be nonnegative")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")
        if self.state.dim != 16:
            raise ValueError("source state must be the 16-dim joint state")
        self.state.check_physical()
        eff = tuple(float(e) for e in np.broadcast_to(self.detector_efficiency, 2))
        dark = tuple(float(d) for d in np.broadcast_to(self.dark_rate_hz, 2))
        if any(not 0 <= e <= 1 for e in eff):
            raise ValueError("detector efficiencies must lie in [0, 1]")
        if any(d < 0 for d in dark):
            raise ValueError("dark rates must be nonnegative")
        if self.jitter_fwhm_ps < 0:
            raise ValueError("jitter must be nonnegative")
        object.__setattr__(self, "detector_efficiency", eff)
        object.__setattr__(self, "dark_rate_hz", dark)

    @property
    def duration_ps(self) -> int:
        return int(round(self.duration_s * 1e12))

    def digest(self) -> str:
        payload = {
            "pair_rate_hz": self.pair_rate_hz,
            "duration_s": self.duration_s,
            "seed": int(self.seed),
            "state": self.state.to_dict(),
            "detector_efficiency": self.detector_efficiency,
            "dark_rate_hz": self.dark_rate_hz,
            "jitter_fwhm_ps": self.jitter_fwhm_ps,
            "delay": None if self.delay is None else self.delay.to_dict(),
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def outcome_probabilities(delta_phi: float, source_V: float, contrast: float) -> np.ndarray:
    """Probabilities of (early, central, late, signal-only, idler-only, neither)."""
    a = contrast * source_V * np.cos(delta_phi)
    both = (4 + 2 * a) / 16
    return np.array([1 / 16, 2 * (1 + a) / 16, 1 / 16, 0.5 - both, 0.5 - both, both])


def _categorical(rng: np.random.Generator, p: np.ndarray, n: int) -> np.ndarray:
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(p) - 1)


def simulate(
    spec: SourceSpec,
    interferometer: InterferometerSpec | None = None,
    displacement_nm: float = 0.0,
    pol_projection: tuple[float, float] | None = None,
) -> TimeTagStream:
    """Generate a time-ordered stream of signal (0) and idler (1) detections.

    Per emitted pair: optional polarization analyzers, the Franson outcome
    class, delay-line survival and detector efficiency, then Gaussian jitter
    (the combined FWHM split equally between the detectors). Dark counts are
    added as independent Poisson processes and tags falling outside the
    acquisition window are dropped.
    """
    rng = make_rng(spec.seed)
    duration_ps = spec.duration_ps
    jitter = spec.jitter_fwhm_ps / FWHM_PER_SIGMA / np.sqrt(2)
    if interferometer is not None and interferometer.path_imbalance_ps < 3 * spec.jitter_fwhm_ps:
        raise ValueError("path imbalance must be at least 3x the jitter FWHM to resolve the peaks")

    state = spec.state
    survive_s, survive_i = spec.detector_efficiency
    delay_ps = 0
    if spec.delay is not None:
        state, throughput = delay_line_channel(state, spec.delay)
        survive_s *= throughput
        delay_ps = int(round(spec.delay.delay_ns * 1000))

    n = int(rng.poisson(spec.pair_rate_hz * spec.duration_s))
    emit = np.floor(np.sort(rng.random(n)) * duration_ps).astype(np.int64)

    present_s = np.ones(n, dtype=bool)
    present_i = np.ones(n, dtype=bool)
    if pol_projection is not None:
        # joint pass/block outcomes of the two analyzers
        joint = []
        for ds in (0.0, np.pi / 2):
            for di in (0.0, np.pi / 2):
                r = apply_to_photon(state, polarizer_projector(pol_projection[0] + ds), "signal")
                r = apply_to_photon(r, polarizer_projector(pol_projection[1] + di), "idler")
                joint.append(max(r.trace, 0.0))
        k = _categorical(rng, np.array(joint), n)
        present_s &= k < 2
        present_i &= k % 2 == 0

    path_s = np.zeros(n, dtype=np.int64)
    path_i = np.zeros(n, dtype=np.int64)
    if interferometer is not None:
        coh = energy_time_coherence(state, pol_projection)
        dphi = (
            two_photon_phase(displacement_nm, interferometer.lambda_s_nm, interferometer.lambda_i_nm)
            + interferometer.phase_offset
            + np.angle(coh)
        )
        cls = _categorical(rng, outcome_probabilities(dphi, abs(coh), interferometer.contrast), n)
        coin_s = rng.random(n) < 0.5
        coin_i = rng.random(n) < 0.5
        # central pairs share one coin: short-short or long-long
        path_s = np.select([cls == EARLY, cls == LATE, cls == CENTRAL], [0, 1, coin_i], coin_s).astype(np.int64)
        path_i = np.select([cls == EARLY, cls == LATE, cls == CENTRAL], [1, 0, coin_i], coin_i).astype(np.int64)
        present_s &= np.isin(cls, (EARLY, CENTRAL, LATE, SIGNAL_ONLY))
        present_i &= np.isin(cls, (EARLY, CENTRAL, LATE, IDLER_ONLY))
        imbalance = int(round(interferometer.path_imbalance_ps))
    else:
        imbalance = 0

    present_s &= rng.random(n) < survive_s
    present_i &= rng.random(n) < survive_i

    t_s = emit + delay_ps + imbalance * path_s + np.rint(rng.normal(0.0, jitter, n)).astype(np.int64)
    t_i = emit + imbalance * path_i + np.rint(rng.normal(0.0, jitter, n)).astype(np.int64)

    n_dark_s = int(rng.poisson(spec.dark_rate_hz[0] * spec.duration_s))
    n_dark_i = int(rng.poisson(spec.dark_rate_hz[1] * spec.duration_s))
    dark_s = np.floor(rng.random(n_dark_s) * duration_ps).astype(np.int64)
    dark_i = np.floor(rng.random(n_dark_i) * duration_ps).astype(np.int64)

    times = np.concatenate([t_s[present_s], dark_s, t_i[present_i], dark_i])
    channels = np.concatenate([
        np.full(int(present_s.sum()) + n_dark_s, SIGNAL, dtype=np.uint8),
        np.full(int(present_i.sum()) + n_dark_i, IDLER, dtype=np.uint8),
    ])
    inside = (times >= 0) & (times < duration_ps)
    times, channels = times[inside], channels[inside]
    order = np.lexsort((channels, times))
    meta = {"digest": spec.digest(), "pairs": n, "displacement_nm": float(displacement_nm)}
    return TimeTagStream(channels[order], times[order], duration_ps, meta)
