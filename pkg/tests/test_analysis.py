import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperdelay.analysis import (
    CorrelationFringe,
    FitError,
    bootstrap_visibility,
    default_polarizer_scan,
    fit_sinusoid,
    polarization_fringe,
    polarization_visibilities,
    visibility_minmax,
)
from hyperdelay.franson import two_photon_phase
from hyperdelay.qstate import DensityMatrix, bell_pol, noisy_state, product_labels, random_density_matrix

PHASES16 = np.linspace(0, 2 * np.pi, 16, endpoint=False)


def covariance_sigma_oracle(phases, mean, v):
    """Visibility sigma from the Fisher information of Poisson counts y = m(1 + v cos phi)."""
    y = mean * (1 + v * np.cos(phases))
    # d y / d(m, v, delta) at delta = 0
    J = np.column_stack([1 + v * np.cos(phases), mean * np.cos(phases), -mean * v * np.sin(phases)])
    fisher = J.T @ (J / y[:, None])
    return float(np.sqrt(np.linalg.inv(fisher)[1, 1]))


class TestFitSinusoid:
    def test_noiseless(self):
        y = 0.5 * (1 + 0.943 * np.cos(PHASES16))
        fit = fit_sinusoid(PHASES16, y)
        assert abs(fit.visibility - 0.943) < 1e-12
        assert fit.residual_rms < 1e-14
        assert not fit.clipped

    def test_constant(self):
        fit = fit_sinusoid(PHASES16, np.full(16, 7.0))
        assert fit.visibility == pytest.approx(0.0, abs=1e-14)

    def test_14nm_scan_grid(self):
        # 14 nm steps: 16 points cover about 7 rad
        phi = two_photon_phase(14 * np.arange(16))
        y = 100 * (1 + 0.939 * np.cos(phi + 0.4))
        fit = fit_sinusoid(phi, y)
        assert fit.visibility == pytest.approx(0.939, abs=1e-12)
        assert fit.phase_rad == pytest.approx(0.4, abs=1e-12)
        assert fit.mean_level == pytest.approx(100, abs=1e-10)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 1.0), st.floats(-3.1, 3.1), st.floats(0.1, 1e6), st.integers(4, 40))
    def test_exact_on_model_class(self, v, phase, mean, n):
        phi = np.linspace(0, 2 * np.pi, n, endpoint=False)
        y = mean * (1 + v * np.cos(phi + phase))
        fit = fit_sinusoid(phi, y)
        assert abs(fit.visibility - v) < 1e-12
        assert fit.residual_rms <= 1e-12 * mean

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.01, 100), st.integers(0, 2 ** 31))
    def test_scale_invariance(self, alpha, seed):
        rng = np.random.default_rng(seed)
        y = rng.poisson(500 * (1 + 0.8 * np.cos(PHASES16))).astype(float)
        w = np.ones(16)
        assert fit_sinusoid(PHASES16, alpha * y, w).visibility == pytest.approx(
            fit_sinusoid(PHASES16, y, w).visibility, rel=1e-12)

    def test_clipping_flag(self):
        y = 1 + 1.2 * np.cos(PHASES16)
        fit = fit_sinusoid(PHASES16, y, weights=np.ones(16))
        assert fit.visibility == 1.0 and fit.clipped

    def test_sigma_matches_fisher(self):
        fit = fit_sinusoid(PHASES16, 1000 * (1 + 0.943 * np.cos(PHASES16)))
        assert fit.visibility_sigma == pytest.approx(covariance_sigma_oracle(PHASES16, 1000, 0.943), rel=0.02)

    def test_poisson_counts(self):
        rng = np.random.default_rng(5)
        phi = two_photon_phase(14 * np.arange(16))
        # sigma scales as 1/sqrt(mean); calibrate the mean for a 0.002 sigma
        mean = 1000 * (covariance_sigma_oracle(phi, 1000, 0.943) / 0.002) ** 2
        fit = fit_sinusoid(phi, rng.poisson(mean * (1 + 0.943 * np.cos(phi))))
        assert abs(fit.visibility - 0.943) < 3 * fit.visibility_sigma
        assert fit.visibility_sigma == pytest.approx(0.002, rel=0.1)

    def test_sigma_coverage(self):
        rng = np.random.default_rng(6)
        hits = 0
        for _ in range(200):
            fit = fit_sinusoid(PHASES16, rng.poisson(1000 * (1 + 0.943 * np.cos(PHASES16))))
            hits += abs(fit.visibility - 0.943) < fit.visibility_sigma
        assert 0.6 < hits / 200 < 0.76

    def test_errors(self):
        with pytest.raises(FitError):
            fit_sinusoid([0, 1, 2], [1, 2, 3])
        with pytest.raises(FitError):
            fit_sinusoid(np.zeros(8), np.ones(8))
        with pytest.raises(FitError):
            fit_sinusoid(PHASES16, -np.ones(16), weights=np.ones(16))
        with pytest.raises(FitError):
            fit_sinusoid(PHASES16, np.ones(15))

    def test_json(self):
        d = json.loads(fit_sinusoid(PHASES16, 2 + np.cos(PHASES16)).to_json())
        assert {"visibility", "sigma", "phase_rad", "mean_level", "residual_rms"} <= set(d)


class TestBootstrap:
    def test_slope(self):
        totals = np.array([1e3, 1e4, 1e5, 1e6])
        sig = []
        rng = np.random.default_rng(0)
        for k, total in enumerate(totals):
            mean = total / 16
            y = rng.poisson(mean * (1 + 0.9 * np.cos(PHASES16)))
            sig.append(bootstrap_visibility(PHASES16, y, n_replicas=400, seed=k))
        slope = np.polyfit(np.log(totals), np.log(sig), 1)[0]
        assert abs(slope + 0.5) < 0.05

    def test_agrees_with_covariance(self):
        rng = np.random.default_rng(1)
        y = rng.poisson(1000 * (1 + 0.943 * np.cos(PHASES16)))
        boot = bootstrap_visibility(PHASES16, y, n_replicas=400, seed=2)
        assert boot == pytest.approx(fit_sinusoid(PHASES16, y).visibility_sigma, rel=0.15)

    def test_deterministic(self):
        y = 100 * (1 + 0.5 * np.cos(PHASES16))
        assert bootstrap_visibility(PHASES16, y, 20, 3) == bootstrap_visibility(PHASES16, y, 20, 3)


class TestMinMax:
    def test_values(self):
        assert visibility_minmax(100, 0) == 1.0
        assert visibility_minmax(100, 100) == 0.0
        assert visibility_minmax(0.9715, 0.0285) == pytest.approx(0.943, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            visibility_minmax(0, 0)
        with pytest.raises(ValueError):
            visibility_minmax(1, 2)


class TestPolarizationFringe:
    def test_phi_plus_hv(self):
        scan = default_polarizer_scan(16)
        f = polarization_fringe(bell_pol(0).projector(), "HV", scan)
        np.testing.assert_allclose(f.coincidences, 0.5 * np.cos(scan) ** 2, atol=1e-14)
        assert f.fit().visibility == pytest.approx(1.0, abs=1e-12)

    def test_dephased(self):
        rho = noisy_state(bell_pol(0), 0.976)
        scan = default_polarizer_scan(16)
        assert polarization_fringe(rho, "DA", scan).fit().visibility == pytest.approx(0.976, abs=1e-12)
        assert polarization_fringe(rho, "HV", scan).fit().visibility == pytest.approx(1.0, abs=1e-12)
        v = polarization_visibilities(rho)
        assert v["mean"] == pytest.approx((1 + 0.976) / 2, abs=1e-12)

    def test_depolarized(self):
        v = polarization_visibilities(noisy_state(bell_pol(0), 0.977, "depolarizing"))
        assert v["HV"] == pytest.approx(0.977, abs=1e-12)
        assert v["DA"] == pytest.approx(0.977, abs=1e-12)

    def test_probabilities_in_range(self):
        rng = np.random.default_rng(9)
        scan = np.linspace(0, 2 * np.pi, 37)
        for _ in range(20):
            rho = DensityMatrix(random_density_matrix(4, rng), product_labels("HV", "HV"))
            for basis in ("HV", "DA"):
                p = polarization_fringe(rho, basis, scan, fixed_idler_angle=rng.uniform(0, np.pi)).coincidences
                assert p.min() >= 0 and p.max() <= 1

    def test_validation(self):
        with pytest.raises(ValueError):
            CorrelationFringe(np.zeros(3), np.zeros(3), "HV")
        with pytest.raises(ValueError):
            CorrelationFringe(np.zeros(4), np.zeros(4), "RL")
        from hyperdelay.qstate import hyper_state
        with pytest.raises(ValueError):
            polarization_fringe(hyper_state(0, 0).projector(), "HV", default_polarizer_scan())
