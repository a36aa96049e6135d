"""Jones calculus for single-photon polarization and the delay-line channel.

Jones operators are plain 2x2 complex numpy arrays. Angles are radians
measured from horizontal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
from scipy.optimize import least_squares

from .qstate import DensityMatrix, PhysicalityError

C_M_PER_NS = 0.299792458
UNITARY_TOL = 1e-10

PHOTON_SLOT = {"signal": 0, "idler": 1}


def rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]], dtype=complex)


def is_unitary(op: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    op = np.asarray(op)
    return op.shape == (2, 2) and np.max(np.abs(op @ op.conj().T - np.eye(2))) < tol


def canonical_phase(op: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Remove the global phase: first nonzero element (row-major) made real-positive."""
    op = np.asarray(op, dtype=complex)
    for z in op.ravel():
        if abs(z) > tol:
            return op * (abs(z) / z)
    return op.copy()


@dataclass(frozen=True)
class WaveplateSpec:
    retardance: float
    fast_axis: float

    def __post_init__(self):
        if not 0 < self.retardance < 2 * np.pi:
            raise ValueError(f"retardance must lie in (0, 2pi), got {self.retardance}")
        object.__setattr__(self, "fast_axis", float(np.mod(self.fast_axis, np.pi)))

    def matrix(self) -> np.ndarray:
        return waveplate(self.retardance, self.fast_axis)


def waveplate(retardance: float, fast_axis: float) -> np.ndarray:
    """R(theta) diag(1, e^{i delta}) R(-theta)."""
    if not 0 < retardance < 2 * np.pi:
        raise ValueError(f"retardance must lie in (0, 2pi), got {retardance}")
    core = np.diag([1, np.exp(1j * retardance)])
    return rotation(fast_axis) @ core @ rotation(-fast_axis)


def hwp(fast_axis: float) -> np.ndarray:
    return waveplate(np.pi, fast_axis)


def qwp(fast_axis: float) -> np.ndarray:
    return waveplate(np.pi / 2, fast_axis)


def polarizer_projector(angle: float) -> np.ndarray:
    """Rank-1 projector onto cos(angle)|H> + sin(angle)|V>."""
    v = np.array([np.cos(angle), np.sin(angle)], dtype=complex)
    return np.outer(v, v.conj())


def embed(op: np.ndarray, slot: int, n_qubits: int) -> np.ndarray:
    """Lift a single-qubit operator to act on qubit ``slot`` of ``n_qubits``."""
    full = np.array([[1.0 + 0j]])
    for k in range(n_qubits):
        full = np.kron(full, op if k == slot else np.eye(2))
    return full


def _conjugate(rho: DensityMatrix, full: np.ndarray) -> DensityMatrix:
    m = full @ rho.matrix @ full.conj().T
    return DensityMatrix((m + m.conj().T) / 2, rho.labels)


def apply_to_photon(rho: DensityMatrix, op: np.ndarray, photon: str) -> DensityMatrix:
    """(op x I) rho (op x I)^dagger on one photon's polarization qubit.

    Not renormalized: for projectors the trace is the detection probability.
    """
    op = np.asarray(op, dtype=complex)
    if op.shape != (2, 2):
        raise ValueError("Jones operator must be 2x2")
    if photon not in PHOTON_SLOT:
        raise ValueError(f"photon must be 'signal' or 'idler', got {photon!r}")
    pol = rho.dof_slots("polarization")
    if rho.dim not in (4, 16) or len(pol) != 2:
        raise ValueError(f"expected a 4- or 16-dim state with two polarization qubits, got dim {rho.dim}")
    return _conjugate(rho, embed(op, pol[PHOTON_SLOT[photon]], rho.n_qubits))


def qhq_compensator(q1: float, h: float, q2: float) -> np.ndarray:
    """Quarter-half-quarter stack; light meets the q1 plate first."""
    return qwp(q2) @ hwp(h) @ qwp(q1)


@dataclass
class CompensationResult:
    angles: tuple[float, float, float]
    residual: float


class CompensationError(RuntimeError):
    pass


def compensation_residual(angles, target: np.ndarray) -> float:
    """min over gamma of ||QHQ(angles) target - e^{i gamma} I||_F."""
    m = qhq_compensator(*angles) @ target
    # for unitary m: ||m - e^{ig} I||^2 = 4 - 2 Re(e^{-ig} tr m), minimized at g = arg tr m
    return float(np.linalg.norm(m - np.exp(1j * np.angle(np.trace(m))) * np.eye(2)))


def solve_compensation(target: np.ndarray, tol: float = 1e-6, grid: int = 16) -> CompensationResult:
    """Find waveplate angles (q1, h, q2) that undo ``target`` up to a global phase.

    Coarse grid search followed by Levenberg-Marquardt refinement from the
    best few grid points. Deterministic.
    """
    target = np.asarray(target, dtype=complex)
    if not is_unitary(target, 1e-8):
        raise ValueError("compensation target must be unitary")

    axis = np.arange(grid) * np.pi / grid
    q = np.array([qwp(a) for a in axis])
    h = np.array([hwp(a) for a in axis])
    # |tr(Q2 H Q1 T)| for every grid triple; residual is sqrt(4 - 2|tr|)
    tr = np.abs(np.einsum("cij,bjk,akl,li->abc", q, h, q, target))
    order = np.argsort(-tr, axis=None, kind="stable")[:8]
    starts = [tuple(axis[i] for i in np.unravel_index(k, tr.shape)) for k in order]

    def resid(p):
        m = qhq_compensator(p[0], p[1], p[2]) @ target - np.exp(1j * p[3]) * np.eye(2)
        return np.concatenate([m.real.ravel(), m.imag.ravel()])

    best = None
    for a in starts:
        m = qhq_compensator(*a) @ target
        x0 = np.array([*a, np.angle(np.trace(m))])
        sol = least_squares(resid, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
        angles = tuple(float(np.mod(x, np.pi)) for x in sol.x[:3])
        r = compensation_residual(angles, target)
        if best is None or r < best.residual:
            best = CompensationResult(angles, r)
        if r < tol:
            return best
    raise CompensationError(f"compensation did not converge, residual {best.residual:.3g}")


@dataclass(frozen=True)
class DelayLineSpec:
    delay_ns: float = 647.0
    n_reflections: int = 160
    throughput: float = 0.739
    pol_rotation: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=complex))
    pol_dephasing_V: float = 1.0
    et_dephasing_V: float = 1.0

    def __post_init__(self):
        if not self.delay_ns > 0:
            raise ValueError("delay_ns must be positive")
        if self.n_reflections < 0:
            raise ValueError("n_reflections must be nonnegative")
        for name in ("throughput", "pol_dephasing_V", "et_dephasing_V"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        rot = np.array(self.pol_rotation, dtype=complex)
        if not is_unitary(rot, 1e-8):
            raise ValueError("pol_rotation must be a unitary 2x2 matrix")
        rot.setflags(write=False)
        object.__setattr__(self, "pol_rotation", rot)

    def to_dict(self) -> dict:
        return {
            "delay_ns": self.delay_ns,
            "n_reflections": self.n_reflections,
            "throughput": self.throughput,
            "pol_rotation": {"re": self.pol_rotation.real.tolist(), "im": self.pol_rotation.imag.tolist()},
            "pol_dephasing_V": self.pol_dephasing_V,
            "et_dephasing_V": self.et_dephasing_V,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DelayLineSpec":
        d = dict(d)
        rot = d.pop("pol_rotation", None)
        if rot is not None:
            d["pol_rotation"] = np.asarray(rot["re"], dtype=float) + 1j * np.asarray(rot["im"], dtype=float)
        return cls(**d)


def _phase_flip(rho: DensityMatrix, slot: int, v: float) -> DensityMatrix:
    """Scale coherences between |0> and |1> of one qubit by v."""
    if v == 1:
        return rho
    z = embed(np.diag([1.0, -1.0]).astype(complex), slot, rho.n_qubits)
    m = (1 + v) / 2 * rho.matrix + (1 - v) / 2 * (z @ rho.matrix @ z)
    return DensityMatrix(m, rho.labels)


def delay_line_channel(rho: DensityMatrix, spec: DelayLineSpec) -> tuple[DensityMatrix, float]:
    """Signal-side delay-line channel: rotation, then per-DOF dephasing.

    Throughput is returned as the survival probability; the state is not
    rescaled by it (loss is polarization independent).
    """
    out = apply_to_photon(rho, spec.pol_rotation, "signal")
    out = _phase_flip(out, out.dof_slots("polarization")[0], spec.pol_dephasing_V)
    et = out.dof_slots("energy_time")
    if et:
        out = _phase_flip(out, et[0], spec.et_dephasing_V)
    if out.trace <= 0:
        raise PhysicalityError("delay line received a zero-trace state")
    return out.normalized(), spec.throughput


def delay_from_geometry(segment_length_m: float, n_reflections: int) -> float:
    """Propagation delay in ns for ``n_reflections`` passes of length ``segment_length_m``."""
    if segment_length_m < 0 or n_reflections < 0:
        raise ValueError("segment length and reflection count must be nonnegative")
    return n_reflections * segment_length_m / C_M_PER_NS
