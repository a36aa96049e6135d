"""Two-photon states on the polarization and energy-time degrees of freedom.

Conventions used everywhere in the package:

* Polarization kets: H=(1,0), V=(0,1), D=(H+V)/sqrt2, A=(H-V)/sqrt2,
  R=(H+iV)/sqrt2, L=(H-iV)/sqrt2.
* Time-bin kets: S=(1,0) (short path), L=(0,1) (long path).
* Qubit ordering: (signal, idler) within a degree of freedom and
  (polarization pair, time-bin pair) for the joint 16-dim space, i.e. the
  16-dim basis label ``"HVSL"`` is pol_s=H, pol_i=V, t_s=S, t_i=L.

Every state carries a tuple of basis labels, one character per qubit, from
which the subsystem structure is inferred.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
EIGEN_FLOOR = -1e-10
NORM_TOL = 1e-12
# eigenvalues below this are treated as non-physical input by fidelity()
NONPHYSICAL_TOL = -1e-8

_S2 = 1 / np.sqrt(2)

POLARIZATION_KETS = {
    "H": np.array([1, 0], dtype=complex),
    "V": np.array([0, 1], dtype=complex),
    "D": np.array([_S2, _S2], dtype=complex),
    "A": np.array([_S2, -_S2], dtype=complex),
    "R": np.array([_S2, 1j * _S2], dtype=complex),
    "L": np.array([_S2, -1j * _S2], dtype=complex),
}
TIMEBIN_KETS = {
    "S": np.array([1, 0], dtype=complex),
    "L": np.array([0, 1], dtype=complex),
}

POL_BASIS = ("H", "V")
TIME_BASIS = ("S", "L")
DOF_CHARS = {"polarization": frozenset("HV"), "energy_time": frozenset("SL")}


class PhysicalityError(ValueError):
    """Raised when a matrix does not represent a physical state."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


def product_labels(a: Sequence[str], b: Sequence[str]) -> tuple[str, ...]:
    return tuple(x + y for x, y in product(a, b))


@dataclass(frozen=True)
class PureState:
    amplitudes: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        amps = _readonly(np.ravel(self.amplitudes))
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) != amps.size:
            raise ValueError(f"{len(self.labels)} labels for {amps.size} amplitudes")
        norm = np.linalg.norm(amps)
        if abs(norm - 1) > NORM_TOL:
            raise ValueError(f"state norm {norm!r} differs from 1")

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def projector(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()), self.labels)


@dataclass(frozen=True)
class DensityMatrix:
    """Density operator with per-qubit basis labels.

    Construction only checks shape and Hermiticity, so that unnormalized
    post-measurement operators (trace = detection probability) can be
    represented; use :meth:`check_physical` for the full set of invariants.
    """

    matrix: np.ndarray
    labels: tuple[str, ...]
    _n_qubits: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = _readonly(self.matrix)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "labels", tuple(self.labels))
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"density matrix must be square, got shape {m.shape}")
        if len(self.labels) != m.shape[0]:
            raise ValueError(f"{len(self.labels)} labels for dimension {m.shape[0]}")
        n = len(self.labels[0])
        if any(len(lab) != n for lab in self.labels) or 2 ** n != m.shape[0]:
            raise ValueError("basis labels must have one character per qubit")
        object.__setattr__(self, "_n_qubits", n)
        dev = np.max(np.abs(m - m.conj().T))
        if dev > HERMITIAN_TOL:
            raise PhysicalityError(f"matrix is not Hermitian (max deviation {dev:.3g})")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_qubits(self) -> int:
        return self._n_qubits

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def is_physical(self) -> bool:
        try:
            self.check_physical()
        except PhysicalityError:
            return False
        return True

    def check_physical(self) -> "DensityMatrix":
        if abs(self.trace - 1) > TRACE_TOL:
            raise PhysicalityError(f"trace {self.trace!r} differs from 1")
        lo = self.eigenvalues().min()
        if lo < EIGEN_FLOOR:
            raise PhysicalityError(f"negative eigenvalue {lo:.3g}")
        return self

    def normalized(self) -> "DensityMatrix":
        tr = self.trace
        if tr <= 0:
            raise PhysicalityError("cannot normalize an operator with zero trace")
        return DensityMatrix(self.matrix / tr, self.labels)

    def dof_slots(self, dof: str) -> tuple[int, ...]:
        """Qubit positions belonging to a degree of freedom ('polarization'/'energy_time')."""
        chars = DOF_CHARS[dof]
        first = self.labels[0]
        return tuple(k for k, c in enumerate(first) if c in chars)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "basis_labels": list(self.labels),
            "re": np.real(self.matrix).ravel().tolist(),
            "im": np.imag(self.matrix).ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DensityMatrix":
        dim = int(d["dim"])
        m = (np.asarray(d["re"], dtype=float) + 1j * np.asarray(d["im"], dtype=float)).reshape(dim, dim)
        return cls(m, tuple(d["basis_labels"]))

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, s: str) -> "DensityMatrix":
        return cls.from_dict(json.loads(s))


def ket(label: str, dof: str | None = None) -> PureState:
    """Single-qubit basis ket.

    ``"L"`` is left-circular polarization unless ``dof="energy_time"`` is
    given, in which case it is the long time bin. ``"S"`` is unambiguous.
    """
    if dof is None:
        dof = "energy_time" if label == "S" else "polarization"
    if dof == "polarization":
        table, basis = POLARIZATION_KETS, POL_BASIS
    elif dof == "energy_time":
        table, basis = TIMEBIN_KETS, TIME_BASIS
    else:
        raise ValueError(f"unknown degree of freedom {dof!r}")
    try:
        return PureState(table[label], basis)
    except KeyError:
        raise ValueError(f"unknown {dof} label {label!r}") from None


def tensor(a, b):
    """Kronecker product with ``a`` as the left factor."""
    if isinstance(a, PureState) and isinstance(b, PureState):
        return PureState(np.kron(a.amplitudes, b.amplitudes), product_labels(a.labels, b.labels))
    if isinstance(a, DensityMatrix) and isinstance(b, DensityMatrix):
        return DensityMatrix(np.kron(a.matrix, b.matrix), product_labels(a.labels, b.labels))
    raise TypeError(f"cannot tensor {type(a).__name__} with {type(b).__name__}")


def _bell(phase: float, basis: tuple[str, str]) -> PureState:
    amps = np.zeros(4, dtype=complex)
    amps[0] = _S2
    amps[3] = _S2 * np.exp(1j * phase)
    return PureState(amps, product_labels(basis, basis))


def bell_pol(theta: float) -> PureState:
    """(|HH> + e^{i theta}|VV>)/sqrt2 in the order HH, HV, VH, VV."""
    return _bell(theta, POL_BASIS)


def bell_timebin(phi: float) -> PureState:
    """(|SS> + e^{i phi}|LL>)/sqrt2 in the order SS, SL, LS, LL."""
    return _bell(phi, TIME_BASIS)


def hyper_state(theta: float, phi: float) -> PureState:
    return tensor(bell_pol(theta), bell_timebin(phi))


def _as_dm(x) -> DensityMatrix:
    return x.projector() if isinstance(x, PureState) else x


def partial_trace(rho, keep) -> DensityMatrix:
    """Reduce ``rho`` onto the qubits in ``keep``.

    ``keep`` is a degree-of-freedom name (``"polarization"``,
    ``"energy_time"``), ``"signal"``/``"idler"`` for a two-qubit state, or an
    iterable of qubit positions.
    """
    rho = _as_dm(rho)
    n = rho.n_qubits
    if isinstance(keep, str):
        if keep in DOF_CHARS:
            slots = rho.dof_slots(keep)
        elif keep in ("signal", "idler") and n == 2:
            slots = (0,) if keep == "signal" else (1,)
        else:
            raise ValueError(f"cannot select {keep!r} from a {n}-qubit state")
    else:
        slots = tuple(sorted(int(k) for k in keep))
    if not slots or any(k < 0 or k >= n for k in slots) or len(set(slots)) != len(slots):
        raise ValueError(f"invalid subsystem selection {keep!r} for {n} qubits")

    traced = [k for k in range(n) if k not in slots]
    t = rho.matrix.reshape((2,) * (2 * n))
    # trace out from the highest index so earlier axis numbers stay valid
    for k in sorted(traced, reverse=True):
        m = t.ndim // 2
        t = np.trace(t, axis1=k, axis2=k + m)
    d = 2 ** len(slots)
    labels = tuple(dict.fromkeys("".join(lab[k] for k in slots) for lab in rho.labels))
    return DensityMatrix(t.reshape(d, d), labels)


def _psd_factor(m: np.ndarray) -> np.ndarray:
    """A with m = A A^dagger; round-off eigenvalues are zeroed so they add no sqrt(eps) error."""
    w, v = np.linalg.eigh(m)
    if w.min() < NONPHYSICAL_TOL:
        raise PhysicalityError(f"negative eigenvalue {w.min():.3g}")
    w = np.where(w > 64 * np.finfo(float).eps * max(w.max(), 1.0), w, 0.0)
    return v * np.sqrt(w)


def fidelity(rho_a, rho_b) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(a) b sqrt(a)))^2.

    Evaluated as the squared nuclear norm of A^dagger B with a = A A^dagger,
    b = B B^dagger, which is stable for rank-deficient states.
    """
    a, b = _as_dm(rho_a), _as_dm(rho_b)
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    s = np.linalg.svd(_psd_factor(a.matrix).conj().T @ _psd_factor(b.matrix), compute_uv=False)
    f = np.sum(s) ** 2
    return float(min(max(f, 0.0), 1.0))


def maximally_mixed(labels: Sequence[str]) -> DensityMatrix:
    d = len(labels)
    return DensityMatrix(np.eye(d) / d, tuple(labels))


def noisy_state(pure: PureState, visibility: float, model: str = "dephasing") -> DensityMatrix:
    """Mix a pure state with its decohered version.

    dephasing:    V |psi><psi| + (1-V) diag(|psi><psi|)
    depolarizing: V |psi><psi| + (1-V) I/dim
    """
    if not 0 <= visibility <= 1:
        raise ValueError(f"visibility must lie in [0, 1], got {visibility}")
    p = pure.projector().matrix
    if model == "dephasing":
        noise = np.diag(np.diag(p))
    elif model == "depolarizing":
        noise = np.eye(pure.dim) / pure.dim
    else:
        raise ValueError(f"unknown noise model {model!r}")
    return DensityMatrix(visibility * p + (1 - visibility) * noise, pure.labels)


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Hilbert-Schmidt (Ginibre) random density matrix as a bare array."""
    g = rng.normal(size=(dim, rank or dim)) + 1j * rng.normal(size=(dim, rank or dim))
    m = g @ g.conj().T
    return m / np.trace(m).real


def random_pure_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)
