"""Two-qubit polarization tomography, CHSH and visibility-based fidelity.

The reconstruction maximizes the Poisson log-likelihood

    L = sum_k n_k log mu_k - mu_k,   mu_k = t_k Tr[T^dag T Pi_k]

over a lower-triangular T (16 real parameters); the overall trace of T^dag T
plays the role of the unknown pair rate, and rho = T^dag T / Tr(T^dag T).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import xlogy

from . import qstate
from .optics import polarizer_projector
from .qstate import POL_BASIS, DensityMatrix, product_labels

PAULI_LABELS = ("H", "V", "D", "A", "R", "L")
TWO_QUBIT_LABELS = product_labels(POL_BASIS, POL_BASIS)


class TomographyError(ValueError):
    pass


@dataclass(frozen=True)
class ProjectorSet:
    labels: tuple[tuple[str, str], ...]
    projectors: np.ndarray  # (k, 4, 4)

    def __len__(self) -> int:
        return len(self.labels)


def projector_set(labels: Sequence[tuple[str, str]] | None = None) -> ProjectorSet:
    """Rank-1 projectors |mu nu><mu nu|; all 36 settings by default."""
    if labels is None:
        labels = list(product(PAULI_LABELS, PAULI_LABELS))
    projs = []
    for mu, nu in labels:
        v = np.kron(qstate.POLARIZATION_KETS[mu], qstate.POLARIZATION_KETS[nu])
        projs.append(np.outer(v, v.conj()))
    return ProjectorSet(tuple((mu, nu) for mu, nu in labels), np.array(projs))


@dataclass(frozen=True)
class CountRecord:
    setting: tuple[str, str]
    counts: float
    duration_s: float = 1.0

    def __post_init__(self):
        if self.counts < 0:
            raise ValueError("counts must be nonnegative")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")


@dataclass
class TomographyResult:
    rho: DensityMatrix
    log_likelihood: float
    iterations: int
    converged: bool
    bootstrap_sigma: dict | None = None
    history: list[float] = field(default_factory=list, repr=False)
    expected_counts: np.ndarray | None = field(default=None, repr=False)


def _check_rho(rho: DensityMatrix) -> np.ndarray:
    if rho.dim != 4:
        raise ValueError(f"expected a two-qubit (4-dim) state, got dim {rho.dim}")
    return rho.matrix


def born_probabilities(rho: DensityMatrix, pset: ProjectorSet | None = None) -> np.ndarray:
    m = _check_rho(rho)
    pset = pset or projector_set()
    p = np.real(np.einsum("kij,ji->k", pset.projectors, m))
    return np.clip(p, 0.0, 1.0)


def simulate_counts(probabilities, n_per_setting: float, seed: int,
                    settings: Sequence[tuple[str, str]] | None = None,
                    duration_s: float = 1.0) -> list[CountRecord]:
    """Independent Poisson(n p) counts per setting."""
    p = np.asarray(probabilities, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    settings = settings or projector_set().labels
    if len(settings) != p.size:
        raise ValueError("one probability per setting required")
    rng = np.random.Generator(np.random.PCG64(seed))
    n = rng.poisson(n_per_setting * p)
    return [CountRecord(tuple(s), int(c), duration_s) for s, c in zip(settings, n)]


def expected_counts(probabilities, n_per_setting: float,
                    settings: Sequence[tuple[str, str]] | None = None) -> list[CountRecord]:
    """Noise-free records n p (non-integer) for infinite-statistics checks."""
    settings = settings or projector_set().labels
    return [CountRecord(tuple(s), float(n_per_setting * q)) for s, q in zip(settings, probabilities)]


def _measurement_rank(projectors: np.ndarray) -> int:
    a = projectors.reshape(len(projectors), -1)
    return int(np.linalg.matrix_rank(np.concatenate([a.real, a.imag], axis=1), tol=1e-9))


_OFF = np.tril_indices(4, -1)


def _t_from_params(x: np.ndarray) -> np.ndarray:
    t = np.zeros((4, 4), dtype=complex)
    t[np.diag_indices(4)] = x[:4]
    t[_OFF] = x[4:10] + 1j * x[10:16]
    return t


def _params_from_t(t: np.ndarray) -> np.ndarray:
    return np.concatenate([np.real(np.diag(t)), t[_OFF].real, t[_OFF].imag])


def _t_from_operator(m: np.ndarray) -> np.ndarray:
    """Lower-triangular T with T^dag T = m (m positive definite)."""
    j = np.eye(4)[::-1]
    m = (m + m.conj().T) / 2
    m = m + 1e-9 * np.real(np.trace(m)) * np.eye(4)
    chol = np.linalg.cholesky(j @ m @ j)
    return j @ chol.conj().T @ j


def log_likelihood(counts: np.ndarray, mu: np.ndarray) -> float:
    return float(np.sum(xlogy(counts, mu) - mu))


def _deviance(m: np.ndarray, n: np.ndarray, dur: np.ndarray, P: np.ndarray, scale: float):
    """Scaled Poisson deviance of the unnormalized operator m, and the means mu.

    The deviance is the negative log-likelihood minus its saturated value, so
    it vanishes for a perfect fit and keeps full relative precision there.
    """
    mu = np.maximum(dur * np.real(np.einsum("kij,ji->k", P, m)), 1e-300)
    return np.sum(mu - n - xlogy(n, mu) + xlogy(n, n)) / scale, mu


def _objective(x: np.ndarray, n: np.ndarray, dur: np.ndarray, P: np.ndarray, scale: float):
    """Deviance and its analytic gradient in the Cholesky parameters."""
    t = _t_from_params(x)
    f, mu = _deviance(t.conj().T @ t, n, dur, P, scale)
    g_op = np.einsum("k,kij->ij", (n / mu - 1) * dur, P)  # dL/dM
    a = g_op @ t.conj().T  # dL/dT_ij pairs with a_ji
    grad = 2 * np.concatenate([
        np.real(np.diag(a)),
        a.T[_OFF].real,
        -a.T[_OFF].imag,
    ])
    return f, -grad / scale


def _psd_projection(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    return (v * np.clip(w, 0, None)) @ v.conj().T


def _polish(m, n, dur, P, scale, max_iter: int):
    """Monotone projected-gradient descent on the deviance directly in operator space.

    Near rank-deficient optima the Cholesky parameters see a quartic, nearly
    flat objective; here it stays quadratic and the projection sets vanishing
    eigenvalues exactly to zero. Every accepted step lowers the deviance.
    """
    f, mu = _deviance(m, n, dur, P, scale)
    values = []
    step = np.real(np.trace(m))
    for _ in range(max_iter):
        g = np.einsum("k,kij->ij", (1 - n / mu) * dur, P)
        a = step
        while a > 1e-12 * step:
            cand = _psd_projection(m - a * g)
            fc, muc = _deviance(cand, n, dur, P, scale)
            if fc <= f:
                break
            a /= 2
        else:
            break
        gain = f - fc
        m, f, mu = cand, fc, muc
        values.append(f)
        step = 2 * a
        if gain <= 1e-16 * max(f, 1e-300) or gain * scale < 1e-13:
            break
    return m, f, values


def mle_reconstruct(records: Sequence[CountRecord], max_iter: int = 100_000,
                    rtol: float = 1e-10, initial: np.ndarray | None = None) -> TomographyResult:
    """Maximum-likelihood density matrix from projective count records.

    Quasi-Newton ascent (BFGS with a Wolfe line search, analytic gradient) on
    the Cholesky parameters, then a projected-gradient polish in operator
    space; every accepted step increases the likelihood. ``initial``
    optionally seeds the search with a 4x4 positive operator.
    """
    if not records:
        raise TomographyError("no count records")
    pset = projector_set([r.setting for r in records])
    if _measurement_rank(pset.projectors) < 16:
        raise TomographyError("measurement set is not informationally complete (rank < 16)")
    n = np.array([r.counts for r in records], dtype=float)
    dur = np.array([r.duration_s for r in records], dtype=float)
    if n.sum() <= 0:
        raise TomographyError("all counts are zero")
    P = pset.projectors
    scale = n.sum()

    if initial is None:
        # linear-inversion start, pulled inside the positive cone
        freq = n / np.maximum(dur, 1e-300)
        lin, *_ = np.linalg.lstsq(P.reshape(len(P), -1), freq.astype(complex), rcond=None)
        m0 = _psd_projection(lin.reshape(4, 4))
        tr = max(np.real(np.trace(m0)), 1e-12)
        m0 = 0.95 * m0 + 0.05 * tr * np.eye(4) / 4
        # rescale so the predicted total matches the observed total
        m0 *= n.sum() / max(np.sum(dur * np.real(np.einsum("kij,ji->k", P, m0))), 1e-300)
    else:
        m0 = np.asarray(initial, dtype=complex)
    x0 = _params_from_t(_t_from_operator(m0))

    saturated = log_likelihood(n, n)
    history = [saturated - _objective(x0, n, dur, P, scale)[0] * scale]

    def record(xk):
        history.append(saturated - _objective(xk, n, dur, P, scale)[0] * scale)

    res = minimize(_objective, x0, args=(n, dur, P, scale), jac=True, method="BFGS", callback=record,
                   options={"maxiter": max_iter, "gtol": 1e-12, "xrtol": 1e-14})
    t = _t_from_params(res.x)
    history.append(saturated - res.fun * scale)
    m, f, polished = _polish(t.conj().T @ t, n, dur, P, scale, max(max_iter - res.nit, 0))
    history.extend(saturated - v * scale for v in polished)
    # drop exact repeats of the final value (the BFGS callback already logged it)
    while len(history) > 2 and history[-1] == history[-2]:
        history.pop()
    ll = history[-1]
    rel = abs(history[-1] - history[-2]) / max(abs(history[-1]), 1e-300) if len(history) > 1 else 0.0
    converged = bool(res.success or rel < rtol)
    rho = DensityMatrix(m / np.real(np.trace(m)), qstate.product_labels(POL_BASIS, POL_BASIS))
    return TomographyResult(rho, ll, int(res.nit) + len(polished), converged, None, history,
                            _deviance(m, n, dur, P, scale)[1])


def read_counts_csv(path) -> list[CountRecord]:
    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        need = {"setting_mu", "setting_nu", "counts", "duration_s"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise TomographyError(f"{path}: header must contain {sorted(need)}")
        for row in reader:
            mu, nu = row["setting_mu"].strip(), row["setting_nu"].strip()
            if mu not in PAULI_LABELS or nu not in PAULI_LABELS:
                raise TomographyError(f"{path}: unknown setting ({mu}, {nu})")
            out.append(CountRecord((mu, nu), float(row["counts"]), float(row["duration_s"])))
    return out


def write_counts_csv(path, records: Sequence[CountRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["setting_mu", "setting_nu", "counts", "duration_s"])
        for r in records:
            c = int(r.counts) if float(r.counts).is_integer() else repr(float(r.counts))
            w.writerow([r.setting[0], r.setting[1], c, repr(r.duration_s)])


def parametric_bootstrap(records: Sequence[CountRecord], result: TomographyResult,
                         statistics: Callable[[DensityMatrix], dict],
                         n_replicas: int = 200, seed: int = 0) -> tuple[dict, list[DensityMatrix]]:
    """Resample Poisson counts from the fitted means and refit.

    Returns the standard deviation of each statistic over the replicas and
    the replica states themselves.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    mu = result.expected_counts
    values: dict[str, list[float]] = {}
    replicas = []
    for _ in range(n_replicas):
        counts = rng.poisson(mu)
        recs = [CountRecord(r.setting, int(c), r.duration_s) for r, c in zip(records, counts)]
        rep = mle_reconstruct(recs, initial=result.rho.matrix * np.sum(counts) / 9)
        replicas.append(rep.rho)
        for k, v in statistics(rep.rho).items():
            values.setdefault(k, []).append(v)
    sigma = {k: float(np.std(v, ddof=1)) for k, v in values.items()}
    return sigma, replicas


def state_fidelity_report(rho_before: DensityMatrix, rho_after: DensityMatrix) -> float:
    """Uhlmann fidelity between two reconstructions, in percent."""
    return 100.0 * qstate.fidelity(rho_before, rho_after)


@dataclass(frozen=True)
class ChshSettings:
    a: float = 0.0
    a_prime: float = np.pi / 4
    b: float = np.pi / 8
    b_prime: float = 3 * np.pi / 8

    def __post_init__(self):
        for name in ("a", "a_prime", "b", "b_prime"):
            object.__setattr__(self, name, float(np.mod(getattr(self, name), np.pi)))

    def pairs(self) -> list[tuple[float, float]]:
        """(a,b), (a,b'), (a',b), (a',b') in the order used by the S combination."""
        return [(self.a, self.b), (self.a, self.b_prime), (self.a_prime, self.b), (self.a_prime, self.b_prime)]


CHSH_SIGNS = (1, -1, 1, 1)


def _observable(angle: float) -> np.ndarray:
    return polarizer_projector(angle) - polarizer_projector(angle + np.pi / 2)


def correlation_coefficient(rho: DensityMatrix, a: float, b: float) -> float:
    """E(a,b) = Tr[rho (A x B)] with A = Pi(a) - Pi(a + pi/2)."""
    m = _check_rho(rho)
    e = np.real(np.trace(m @ np.kron(_observable(a), _observable(b))))
    return float(np.clip(e, -1.0, 1.0))


def chsh(rho: DensityMatrix, settings: ChshSettings | None = None) -> float:
    s = settings or ChshSettings()
    return float(abs(sum(sg * correlation_coefficient(rho, a, b) for sg, (a, b) in zip(CHSH_SIGNS, s.pairs()))))


def chsh_outcome_probabilities(rho: DensityMatrix, settings: ChshSettings | None = None) -> np.ndarray:
    """(4 setting pairs, 4 outcomes ++, +-, -+, --) coincidence probabilities."""
    m = _check_rho(rho)
    s = settings or ChshSettings()
    out = np.empty((4, 4))
    for i, (a, b) in enumerate(s.pairs()):
        for j, (da, db) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            op = np.kron(polarizer_projector(a + da * np.pi / 2), polarizer_projector(b + db * np.pi / 2))
            out[i, j] = np.real(np.trace(m @ op))
    return np.clip(out, 0.0, 1.0)


def chsh_from_counts(counts) -> tuple[float, float]:
    """S and its Poisson standard error from (N++, N+-, N-+, N--) per setting pair.

    Rows follow :meth:`ChshSettings.pairs`.
    """
    c = np.asarray(counts, dtype=float)
    if c.shape != (4, 4):
        raise ValueError("expected counts of shape (4 setting pairs, 4 outcomes)")
    tot = c.sum(axis=1)
    if np.any(tot <= 0):
        raise ValueError("every setting pair needs a nonzero total count")
    e = (c[:, 0] + c[:, 3] - c[:, 1] - c[:, 2]) / tot
    signs = np.array(CHSH_SIGNS, dtype=float)
    s_signed = float(np.sum(signs * e))
    # dE/dN_j = (s_j - E)/T with s_j = +1 for ++,-- and -1 otherwise; Var(N_j) = N_j
    sj = np.array([1.0, -1.0, -1.0, 1.0])
    var_e = np.sum(((sj[None, :] - e[:, None]) / tot[:, None]) ** 2 * c, axis=1)
    return abs(s_signed), float(np.sqrt(np.sum(var_e)))


def fidelity_from_visibility(v: float) -> float:
    """Visibility-based fidelity estimate (1 + V)/2."""
    if not 0 <= v <= 1:
        raise ValueError(f"visibility must lie in [0, 1], got {v}")
    return (1 + v) / 2


def tomography_report(result: TomographyResult, target: DensityMatrix | None = None,
                      settings: ChshSettings | None = None) -> dict:
    rho = result.rho
    return {
        "rho": rho.to_dict(),
        "fidelity_to_target": None if target is None else qstate.fidelity(rho, target),
        "purity": rho.purity(),
        "S": chsh(rho, settings),
        "converged": result.converged,
        "iterations": result.iterations,
        "log_likelihood": result.log_likelihood,
        "bootstrap": result.bootstrap_sigma,
    }
