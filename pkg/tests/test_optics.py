import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy.stats import unitary_group

from hyperdelay.optics import (
    C_M_PER_NS,
    DelayLineSpec,
    WaveplateSpec,
    apply_to_photon,
    canonical_phase,
    compensation_residual,
    delay_from_geometry,
    delay_line_channel,
    hwp,
    is_unitary,
    polarizer_projector,
    qhq_compensator,
    qwp,
    rotation,
    solve_compensation,
    waveplate,
)
from hyperdelay.qstate import DensityMatrix, bell_pol, fidelity, hyper_state, ket, noisy_state, partial_trace

X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)
H, V = np.array([1, 0]), np.array([0, 1])


def equal_up_to_phase(a, b, tol=1e-12):
    return np.allclose(canonical_phase(a), canonical_phase(b), atol=tol)


class TestWaveplates:
    def test_hwp_aligned(self):
        assert equal_up_to_phase(hwp(0), np.diag([1, -1]))

    def test_hwp_swap(self):
        out = hwp(np.pi / 4) @ H
        assert abs(abs(np.vdot(V, out)) - 1) < 1e-12

    def test_qwp_makes_circular(self):
        # hand multiplication: R(pi/4) diag(1, i) R(-pi/4) (1, 0) = (1+i)/2 (1, -i)
        out = qwp(np.pi / 4) @ H
        assert_allclose(out, (1 + 1j) / 2 * np.array([1, -1j]), atol=1e-15)
        assert abs(abs(np.vdot(ket("L").amplitudes, out)) - 1) < 1e-12
        assert abs(np.vdot(ket("R").amplitudes, out)) < 1e-12

    def test_spec_normalizes_axis(self):
        spec = WaveplateSpec(np.pi, 1.5 * np.pi)
        assert spec.fast_axis == pytest.approx(0.5 * np.pi)
        assert_allclose(spec.matrix(), hwp(0.5 * np.pi))

    @pytest.mark.parametrize("delta", [0.0, 2 * np.pi, -1.0])
    def test_bad_retardance(self, delta):
        with pytest.raises(ValueError):
            WaveplateSpec(delta, 0.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1e-6, 2 * np.pi - 1e-6), st.floats(-10, 10))
    def test_unitary(self, delta, theta):
        assert is_unitary(waveplate(delta, theta), 1e-10)

    def test_rotation_unitary(self):
        assert is_unitary(rotation(0.3))


class TestPolarizer:
    def test_h_and_d(self):
        assert_allclose(polarizer_projector(0), np.diag([1, 0]), atol=1e-15)
        assert_allclose(polarizer_projector(np.pi / 4), np.full((2, 2), 0.5), atol=1e-15)

    @pytest.mark.parametrize("a", np.linspace(0, np.pi, 7))
    def test_orthogonal_and_idempotent(self, a):
        p = polarizer_projector(a)
        assert np.max(np.abs(p @ polarizer_projector(a + np.pi / 2))) < 1e-12
        assert np.max(np.abs(p @ p - p)) < 1e-12
        assert not is_unitary(p)


class TestApplyToPhoton:
    def test_identity(self):
        rho = noisy_state(bell_pol(0.3), 0.8)
        assert_allclose(apply_to_photon(rho, np.eye(2), "signal").matrix, rho.matrix)

    def test_born_rule(self):
        out = apply_to_photon(bell_pol(0).projector(), polarizer_projector(0), "signal")
        assert out.trace == pytest.approx(0.5, abs=1e-15)

    def test_xx_invariance(self):
        rho = bell_pol(0).projector()
        out = apply_to_photon(apply_to_photon(rho, hwp(np.pi / 4), "signal"), hwp(np.pi / 4), "idler")
        assert_allclose(out.matrix, rho.matrix, atol=1e-12)

    def test_matches_kron(self):
        rng = np.random.default_rng(1)
        op = unitary_group.rvs(2, random_state=rng)
        rho = noisy_state(bell_pol(0.5), 0.6)
        full = np.kron(np.eye(2), op)
        assert_allclose(apply_to_photon(rho, op, "idler").matrix, full @ rho.matrix @ full.conj().T, atol=1e-14)

    def test_joint_slot(self):
        rho = hyper_state(0, 0).projector()
        op = qwp(0.4)
        full = np.kron(np.kron(op, np.eye(2)), np.eye(4))
        assert_allclose(apply_to_photon(rho, op, "signal").matrix, full @ rho.matrix @ full.conj().T, atol=1e-14)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            apply_to_photon(bell_pol(0).projector(), np.eye(3), "signal")
        with pytest.raises(ValueError):
            apply_to_photon(bell_pol(0).projector(), np.eye(2), "pump")
        with pytest.raises(ValueError):
            apply_to_photon(ket("H").projector(), np.eye(2), "signal")

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 6.28), st.floats(0, 3.14), st.floats(0, 3.14))
    def test_trace_rules(self, delta, theta, pol):
        rho = noisy_state(bell_pol(0.2), 0.7)
        assert abs(apply_to_photon(rho, waveplate(delta, theta), "signal").trace - 1) < 1e-12
        assert apply_to_photon(rho, polarizer_projector(pol), "idler").trace <= 1 + 1e-12


class TestCompensator:
    def test_zero_angles(self):
        m = qhq_compensator(0, 0, 0)
        assert is_unitary(m)
        assert abs(abs(np.linalg.det(m)) - 1) < 1e-12
        # diag(1, i) diag(1, -1) diag(1, i) = I
        assert_allclose(m, np.eye(2), atol=1e-15)

    def test_order(self):
        assert_allclose(qhq_compensator(0.1, 0.2, 0.3), qwp(0.3) @ hwp(0.2) @ qwp(0.1))

    def test_non_commuting(self):
        a = qhq_compensator(0.3, 0.1, 0.3)
        b = qhq_compensator(0.9, 0.1, 0.9)
        assert np.max(np.abs(a @ b - b @ a)) > 1e-3

    @pytest.mark.parametrize("dh", [np.pi / 8, np.pi / 4, 0.5])
    def test_fixed_outer_plates_commute(self, dh):
        # with q fixed, (q, h, q) rotates about one axis for every h
        a = qhq_compensator(0.3, 0.1, 0.3)
        b = qhq_compensator(0.3, 0.1 + dh, 0.3)
        assert np.max(np.abs(a @ b - b @ a)) < 1e-12

    def test_half_wave_shift_is_global_phase(self):
        # HWP(h + pi/2) = -HWP(h): the composites agree up to phase and commute
        a = qhq_compensator(0.3, 0.1, 0.3)
        b = qhq_compensator(0.3, 0.1 + np.pi / 2, 0.3)
        assert_allclose(b, -a, atol=1e-14)

    def test_identity_target(self):
        r = solve_compensation(np.eye(2))
        assert r.residual < 1e-6
        assert compensation_residual(r.angles, np.eye(2)) < 1e-6

    @pytest.mark.parametrize("target", [hwp(0.2), rotation(0.3)])
    def test_known_targets(self, target):
        q1, h, q2 = solve_compensation(target).angles
        m = qhq_compensator(q1, h, q2) @ target
        assert equal_up_to_phase(m, np.eye(2), 1e-6)

    def test_random_unitaries(self):
        for seed in range(50):
            u = unitary_group.rvs(2, random_state=seed)
            r = solve_compensation(u)
            m = qhq_compensator(*r.angles) @ u
            gamma = np.angle(np.trace(m))
            assert np.linalg.norm(m - np.exp(1j * gamma) * np.eye(2)) < 1e-6, seed

    def test_non_unitary_rejected(self):
        with pytest.raises(ValueError):
            solve_compensation(polarizer_projector(0))

    def test_deterministic(self):
        u = unitary_group.rvs(2, random_state=5)
        assert solve_compensation(u).angles == solve_compensation(u).angles


class TestDelayLine:
    def test_defaults(self):
        spec = DelayLineSpec()
        assert (spec.delay_ns, spec.n_reflections, spec.throughput) == (647.0, 160, 0.739)
        assert_allclose(spec.pol_rotation, np.eye(2))

    def test_identity_channel(self):
        spec = DelayLineSpec(throughput=1.0)
        rng = np.random.default_rng(4)
        from hyperdelay.qstate import random_density_matrix
        rho = DensityMatrix(random_density_matrix(16, rng), hyper_state(0, 0).labels)
        out, surv = delay_line_channel(rho, spec)
        assert np.max(np.abs(out.matrix - rho.matrix)) < 1e-12
        assert surv == 1.0

    def test_default_on_hyper(self):
        out, surv = delay_line_channel(hyper_state(0, 0).projector(), DelayLineSpec())
        assert surv == pytest.approx(0.739)
        assert fidelity(partial_trace(out, "polarization"), bell_pol(0)) == pytest.approx(1.0, abs=1e-9)

    def test_pol_dephasing_da_visibility(self):
        out, _ = delay_line_channel(bell_pol(0).projector(), DelayLineSpec(pol_dephasing_V=0.976))
        # E(D,D) = <X x X>
        assert np.real(np.trace(out.matrix @ np.kron(X, X))) == pytest.approx(0.976, abs=1e-12)
        assert np.real(np.trace(out.matrix @ np.kron(Z, Z))) == pytest.approx(1.0, abs=1e-12)

    def test_et_dephasing_scales_coherence(self):
        out, _ = delay_line_channel(hyper_state(0, 0).projector(), DelayLineSpec(et_dephasing_V=0.9))
        et = partial_trace(out, "energy_time").matrix
        assert abs(2 * et[3, 0]) == pytest.approx(0.9, abs=1e-12)
        assert abs(2 * partial_trace(out, "polarization").matrix[3, 0]) == pytest.approx(1.0, abs=1e-12)

    def test_rotation_then_compensation(self):
        rot = unitary_group.rvs(2, random_state=9)
        out, _ = delay_line_channel(bell_pol(0).projector(), DelayLineSpec(pol_rotation=rot))
        assert fidelity(out, bell_pol(0)) < 0.99
        fixed = apply_to_photon(out, qhq_compensator(*solve_compensation(rot).angles), "signal")
        assert fidelity(fixed, bell_pol(0)) == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("kw", [{"delay_ns": 0}, {"throughput": 1.2}, {"pol_dephasing_V": -0.1},
                                    {"pol_rotation": np.diag([1.0, 0.5])}, {"n_reflections": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DelayLineSpec(**kw)

    def test_dict_round_trip(self):
        spec = DelayLineSpec(pol_rotation=rotation(0.3), pol_dephasing_V=0.9)
        back = DelayLineSpec.from_dict(spec.to_dict())
        assert_allclose(back.pol_rotation, spec.pol_rotation)
        assert back.pol_dephasing_V == 0.9

    def test_commutes_with_idler_ops(self):
        rng = np.random.default_rng(12)
        rot = unitary_group.rvs(2, random_state=rng)
        spec = DelayLineSpec(pol_rotation=rot, pol_dephasing_V=0.9, et_dephasing_V=0.8)
        for _ in range(10):
            rho = noisy_state(hyper_state(*rng.uniform(0, 6, 2)), rng.uniform(), "depolarizing")
            p = polarizer_projector(rng.uniform(0, np.pi))
            before = apply_to_photon(delay_line_channel(rho, spec)[0], p, "idler")
            after_rho = apply_to_photon(rho, p, "idler")
            after = delay_line_channel(after_rho, spec)[0]
            assert np.max(np.abs(before.matrix - after_rho.trace * after.matrix)) < 1e-10


class TestGeometry:
    def test_back_solved_length(self):
        assert delay_from_geometry(1.2124, 160) == pytest.approx(647.0, abs=0.5)

    def test_zero(self):
        assert delay_from_geometry(1.2, 0) == 0

    def test_definition_of_c(self):
        assert delay_from_geometry(C_M_PER_NS, 1) == pytest.approx(1.0, abs=1e-15)
