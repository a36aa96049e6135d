"""Sinusoidal fringe fitting and visibility extraction.

With the phase axis known (piezo displacement converted to two-photon phase,
or twice the analyzer angle), the fringe model

    y = c0 + c1 cos(phi) + c2 sin(phi)

is linear in its coefficients and is solved by weighted least squares.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .optics import polarizer_projector
from .qstate import DensityMatrix


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class FringeFit:
    visibility: float
    phase_rad: float
    mean_level: float
    visibility_sigma: float
    residual_rms: float
    clipped: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma"] = d.pop("visibility_sigma")
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def fit_sinusoid(phases: Sequence[float], counts: Sequence[float], weights: Sequence[float] | None = None) -> FringeFit:
    """Weighted linear least-squares fringe fit.

    Default weights are Poisson, w = 1/max(y, 1); the visibility sigma is
    propagated from the covariance (X^T W X)^-1 of the linear solve.
    """
    phi = np.asarray(phases, dtype=float)
    y = np.asarray(counts, dtype=float)
    if phi.shape != y.shape or phi.ndim != 1:
        raise FitError("phases and counts must be 1-d sequences of equal length")
    if phi.size < 4:
        raise FitError("at least 4 points are needed for a fringe fit")
    w = 1 / np.maximum(y, 1.0) if weights is None else np.asarray(weights, dtype=float)
    X = np.column_stack([np.ones_like(phi), np.cos(phi), np.sin(phi)])
    if np.linalg.matrix_rank(X) < 3:
        raise FitError("degenerate phase sampling: design matrix is rank deficient")
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    c0, c1, c2 = coef
    if c0 <= 0:
        raise FitError(f"nonpositive mean level {c0:.3g}")
    amp = np.hypot(c1, c2)
    v = amp / c0
    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    if amp > 0:
        grad = np.array([-amp / c0 ** 2, c1 / (amp * c0), c2 / (amp * c0)])
    else:
        grad = np.array([0.0, 1 / c0, 0.0])
    sigma = float(np.sqrt(max(grad @ cov @ grad, 0.0)))
    resid = y - X @ coef
    return FringeFit(
        visibility=float(min(v, 1.0)),
        phase_rad=float(np.arctan2(-c2, c1)),
        mean_level=float(c0),
        visibility_sigma=sigma,
        residual_rms=float(np.sqrt(np.mean(resid ** 2))),
        clipped=bool(v > 1.0),
    )


def bootstrap_visibility(phases: Sequence[float], counts: Sequence[float], n_replicas: int = 200,
                         seed: int = 0) -> float:
    """Parametric bootstrap sigma: Poisson resampling from the fitted fringe."""
    phi = np.asarray(phases, dtype=float)
    fit = fit_sinusoid(phi, counts)
    amp = fit.visibility * fit.mean_level
    model = fit.mean_level + amp * np.cos(phi + fit.phase_rad)
    rng = np.random.Generator(np.random.PCG64(seed))
    vs = [fit_sinusoid(phi, rng.poisson(np.clip(model, 0, None))).visibility for _ in range(n_replicas)]
    return float(np.std(vs, ddof=1))


def visibility_minmax(counts_max: float, counts_min: float) -> float:
    """(max - min)/(max + min)."""
    if counts_max < 0 or counts_min < 0:
        raise ValueError("counts must be nonnegative")
    if counts_max + counts_min == 0:
        raise ValueError("visibility undefined when both counts are zero")
    if counts_min > counts_max:
        raise ValueError("counts_min exceeds counts_max")
    return (counts_max - counts_min) / (counts_max + counts_min)


@dataclass(frozen=True)
class CorrelationFringe:
    analyzer_angles: np.ndarray
    coincidences: np.ndarray
    basis: str

    def __post_init__(self):
        if len(self.analyzer_angles) != len(self.coincidences) or len(self.analyzer_angles) < 4:
            raise ValueError("need at least 4 angles with one coincidence value each")
        if self.basis not in ("HV", "DA"):
            raise ValueError(f"basis must be 'HV' or 'DA', got {self.basis!r}")

    def fit(self) -> FringeFit:
        # coincidences vary as cos^2(angle - ref), i.e. with phase 2*angle
        weights = np.ones(len(self.coincidences))
        return fit_sinusoid(2 * np.asarray(self.analyzer_angles), self.coincidences, weights=weights)


IDLER_REFERENCE = {"HV": 0.0, "DA": np.pi / 4}


def polarization_fringe(rho: DensityMatrix, basis: str, scan: Sequence[float],
                        fixed_idler_angle: float | None = None) -> CorrelationFringe:
    """Coincidence probability vs signal polarizer angle with the idler polarizer fixed.

    The idler reference defaults to 0 (HV) or pi/4 (DA).
    """
    if rho.dim != 4:
        raise ValueError("polarization fringes need the two-qubit polarization state")
    if fixed_idler_angle is None:
        fixed_idler_angle = IDLER_REFERENCE[basis]
    pi_i = polarizer_projector(fixed_idler_angle)
    angles = np.asarray(scan, dtype=float)
    p = [np.real(np.trace(rho.matrix @ np.kron(polarizer_projector(a), pi_i))) for a in angles]
    return CorrelationFringe(angles, np.clip(p, 0.0, 1.0), basis)


def default_polarizer_scan(points: int = 16) -> np.ndarray:
    return np.linspace(0, np.pi, points, endpoint=False)


def polarization_visibilities(rho: DensityMatrix, points: int = 16) -> dict:
    """Fitted HV and DA correlation visibilities and their mean."""
    scan = default_polarizer_scan(points)
    hv = polarization_fringe(rho, "HV", scan).fit().visibility
    da = polarization_fringe(rho, "DA", scan).fit().visibility
    return {"HV": hv, "DA": da, "mean": (hv + da) / 2}
