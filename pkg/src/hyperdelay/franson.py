"""Common unbalanced-Michelson (Franson) analysis of the time-bin qubits.

Both photons traverse the same interferometer, so a single two-photon phase
applies to the short-short / long-long interference in the central peak.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, asdict
from typing import Iterable, Sequence

import numpy as np

from .optics import apply_to_photon, polarizer_projector
from .qstate import DensityMatrix, PhysicalityError, partial_trace


@dataclass(frozen=True)
class InterferometerSpec:
    path_imbalance_ps: float = 2000.0
    contrast: float = 0.951
    phase_offset: float = 0.0
    lambda_s_nm: float = 780.0
    lambda_i_nm: float = 842.6

    def __post_init__(self):
        if not self.path_imbalance_ps > 0:
            raise ValueError("path_imbalance_ps must be positive")
        if not 0 <= self.contrast <= 1:
            raise ValueError(f"contrast must lie in [0, 1], got {self.contrast}")
        if not (self.lambda_s_nm > 0 and self.lambda_i_nm > 0):
            raise ValueError("wavelengths must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FringePoint:
    mirror_displacement_nm: float
    two_photon_phase_rad: float
    normalized_coincidences: float


def two_photon_phase(x_nm, lambda_s_nm: float = 780.0, lambda_i_nm: float = 842.6):
    """Two-photon phase for a mirror displacement x (round trip 2x)."""
    if lambda_s_nm <= 0 or lambda_i_nm <= 0:
        raise ValueError("wavelengths must be positive")
    return 4 * np.pi * np.asarray(x_nm, dtype=float) * (1 / lambda_s_nm + 1 / lambda_i_nm)


def peak_weights(delta_phi: float, source_V: float, contrast: float) -> tuple[float, float, float]:
    """Normalized (early, central, late) weights of the three coincidence peaks.

    Relative weights are 1 : 2(1 + C V cos dphi) : 1; the side peaks come from
    the distinguishable short-long and long-short paths.
    """
    if not (0 <= source_V <= 1 and 0 <= contrast <= 1):
        raise ValueError("visibility and contrast must lie in [0, 1]")
    w = np.array([1.0, 2 * (1 + contrast * source_V * np.cos(delta_phi)), 1.0])
    w /= w.sum()
    return float(w[0]), float(w[1]), float(w[2])


def analyzed_port_probability(delta_phi: float, source_V: float, contrast: float) -> float:
    """Probability that both photons exit the analyzed ports of the interferometer.

    Each of the four path combinations carries 1/16; the central pair
    interferes, so the total is (4 + 2 C V cos dphi)/16.
    """
    return (4 + 2 * contrast * source_V * np.cos(delta_phi)) / 16


def project_polarization(state: DensityMatrix, angles: tuple[float, float]) -> tuple[DensityMatrix, float]:
    """Project (signal, idler) polarizations onto linear analyzers.

    Returns the renormalized state and the pass probability.
    """
    out = apply_to_photon(state, polarizer_projector(angles[0]), "signal")
    out = apply_to_photon(out, polarizer_projector(angles[1]), "idler")
    p = out.trace
    if p < 1e-12:
        raise PhysicalityError(f"polarization projection {angles} annihilates the state")
    return out.normalized(), p


def energy_time_coherence(state: DensityMatrix, pol_projection=None) -> complex:
    """Twice the <SS|rho|LL> element of the energy-time reduced state.

    Its magnitude is the source visibility, its argument the state's
    two-photon phase.
    """
    if state.dim != 16:
        raise ValueError(f"expected the 16-dim joint state, got dim {state.dim}")
    if pol_projection is not None:
        state, _ = project_polarization(state, pol_projection)
    et = partial_trace(state, "energy_time").matrix
    # <LL|rho|SS>: for (|SS> + e^{i phi}|LL>)/sqrt2 this is e^{i phi}/2
    return complex(2 * et[3, 0])


def fringe_scan(
    state: DensityMatrix,
    spec: InterferometerSpec,
    displacements_nm: Sequence[float],
    pol_projection: tuple[float, float] | None = None,
) -> list[FringePoint]:
    """Central-peak coincidences (1 + V_eff cos(dphi + offset))/2 over a mirror scan.

    V_eff is contrast times the energy-time coherence magnitude; the state's
    own two-photon phase adds to the offset.
    """
    coh = energy_time_coherence(state, pol_projection)
    v_eff = spec.contrast * abs(coh)
    offset = spec.phase_offset + np.angle(coh)
    x = np.asarray(displacements_nm, dtype=float)
    phases = two_photon_phase(x, spec.lambda_s_nm, spec.lambda_i_nm)
    y = (1 + v_eff * np.cos(phases + offset)) / 2
    return [FringePoint(float(a), float(b), float(c)) for a, b, c in zip(x, phases, y)]


def scan_grid(start_nm: float, step_nm: float, steps: int) -> np.ndarray:
    return start_nm + step_nm * np.arange(steps)


def write_fringe_csv(path, points: Iterable[FringePoint], counts: Sequence[float] | None = None) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        header = ["displacement_nm", "phase_rad", "normalized_coincidences"]
        if counts is not None:
            header.append("counts")
        w.writerow(header)
        for k, p in enumerate(points):
            row = [repr(p.mirror_displacement_nm), repr(p.two_photon_phase_rad), repr(p.normalized_coincidences)]
            if counts is not None:
                row.append(repr(counts[k]))
            w.writerow(row)
