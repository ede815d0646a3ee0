import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pcelsq.basis import PcBasis
from pcelsq.coherence import (
    SampleSizePlan, default_n_probe, estimate_coherence, failure_prob_bound, markov_tail_bound,
    mse_bound, mu_inf_bound_kind, mu_inf_theory_bound, required_samples, spectral_stability,
    stability_matrix,
)
from pcelsq.errors import InfeasibleError, InputError, NumericalError
from pcelsq.regression import DesignSystem
from pcelsq.sampling import McmcConfig, SamplingStrategy


class TestEstimateCoherence:
    @pytest.mark.parametrize("family,d,p", [("legendre", 2, 5), ("hermite", 5, 2), ("hermite", 2, 8)])
    def test_coherence_optimal_attains_P(self, family, d, p):
        basis = PcBasis.total_order(family, d, p)
        rep = estimate_coherence(basis, SamplingStrategy("coherence-optimal", McmcConfig(restart=True)),
                                 5000, seed=1)
        assert rep.mu2_hat / basis.P == pytest.approx(1.0, abs=1e-9)
        assert rep.mu2_theory == basis.P

    @pytest.mark.parametrize("kind", ["standard", "coherence-optimal"])
    def test_order_zero(self, kind):
        rep = estimate_coherence(PcBasis.total_order("legendre", 3, 0), kind, 500, seed=0)
        assert rep.mu2_hat == pytest.approx(1.0)
        assert rep.mu_inf_bound is None

    def test_legendre_standard_approaches_corner_value(self):
        rep = estimate_coherence(PcBasis.total_order("legendre", 1, 2), "standard", 100_000, seed=0)
        assert 8.9 < rep.mu2_hat <= 9.0

    @pytest.mark.parametrize("kind", ["standard", "asymptotic", "coherence-optimal"])
    def test_report_invariants(self, kind):
        basis = PcBasis.total_order("hermite", 2, 4)
        rep = estimate_coherence(basis, kind, 3000, seed=2)
        assert rep.mu2_hat <= basis.P * rep.mu_inf_hat * (1 + 1e-9)
        assert rep.mu2_hat >= 1 - 1e-12 or kind != "standard"

    def test_nested_probe_sets_monotone(self):
        basis = PcBasis.total_order("legendre", 2, 3)
        small = estimate_coherence(basis, "standard", 1000, seed=4)
        large = estimate_coherence(basis, "standard", 5000, seed=4)
        assert large.mu2_hat >= small.mu2_hat

    def test_bound_kinds(self):
        assert mu_inf_bound_kind("hermite", "standard") == "asymptotic"
        assert mu_inf_bound_kind("hermite", "asymptotic") == "order"
        assert mu_inf_bound_kind("legendre", "standard") == "exact"

    def test_csv_row(self):
        rep = estimate_coherence(PcBasis.total_order("legendre", 2, 2), "standard", 100, seed=0)
        assert tuple(rep.as_row()) == (
            "family", "strategy", "d", "p", "P", "n_probe", "mu2_hat", "mu_inf_hat", "mu2_theory",
            "mu_inf_bound", "seed")

    def test_default_probe_size(self):
        assert default_n_probe(5) == 1_000_000
        with pytest.warns(RuntimeWarning):
            assert default_n_probe(6) == 100_000

    def test_invalid_probe_size(self):
        with pytest.raises(InputError):
            estimate_coherence(PcBasis.total_order("legendre", 2, 2), "standard", 0)


class TestTheoryBounds:
    def test_standard_legendre_min(self):
        assert mu_inf_theory_bound("legendre", "standard", 2, 2) == pytest.approx(9.0)

    def test_standard_legendre_low_order(self):
        assert mu_inf_theory_bound("legendre", "standard", 5, 2) == pytest.approx(9.0)
        assert mu_inf_theory_bound("legendre", "standard", 1, 1) == pytest.approx(3.0)

    def test_asymptotic_legendre(self):
        assert mu_inf_theory_bound("legendre", "asymptotic", 3, 7) == 27.0

    def test_standard_hermite(self):
        assert mu_inf_theory_bound("hermite", "standard", 4, 1) == pytest.approx(3.6945, abs=1e-4)

    def test_asymptotic_hermite_order_expression(self):
        assert mu_inf_theory_bound("hermite", "asymptotic", 2, 5) == pytest.approx(10.0)

    def test_coherence_optimal_is_P(self):
        assert mu_inf_theory_bound("hermite", "coherence-optimal", 2, 3) == 10

    def test_order_zero_rejected(self):
        with pytest.raises(InputError):
            mu_inf_theory_bound("legendre", "standard", 2, 0)

    def test_legendre_univariate_sup_is_attained(self):
        # d=1: psi_p(1)^2 = 2p+1 <= min(e^{2p}, (2p+1))
        for p in range(1, 8):
            assert mu_inf_theory_bound("legendre", "standard", 1, p) == pytest.approx(2 * p + 1)


class TestRequiredSamples:
    def test_log_term(self):
        plan = SampleSizePlan(P=100, nu=1, tau=1, rho=0.99, eps2=0)
        assert required_samples(plan) == 9904
        assert required_samples(plan) == math.ceil(1000 * math.log(20000))

    def test_zero_error_ignores_tau(self):
        a = required_samples(SampleSizePlan(P=50, tau=1e-9))
        b = required_samples(SampleSizePlan(P=50, tau=1e9))
        assert a == b

    def test_noise_model_doubles_accuracy_term(self):
        base = SampleSizePlan(P=20, tau=1e-6, eps2=1.0)
        quiet = required_samples(base)
        noisy = required_samples(SampleSizePlan(P=20, tau=1e-6, eps2=1.0, noise_model=True))
        assert quiet == math.ceil(4e6 * 20)
        assert noisy == math.ceil(8e6 * 20)

    def test_truncated_infeasible(self):
        with pytest.raises(InfeasibleError, match="rho"):
            required_samples(SampleSizePlan(P=10, rho=0.95, bounded_coherence=False))

    def test_truncated_larger(self):
        bounded = required_samples(SampleSizePlan(P=10, rho=0.5))
        truncated = required_samples(SampleSizePlan(P=10, rho=0.5, bounded_coherence=False))
        assert truncated == math.ceil(100 * math.log(20 / 0.4))
        assert truncated > bounded

    @pytest.mark.parametrize("kwargs", [{"rho": 1.0}, {"rho": 0.0}, {"tau": 0}, {"nu": 0},
                                        {"eps2": -1}, {"P": 0}])
    def test_invalid(self, kwargs):
        args = dict(P=10) | kwargs
        with pytest.raises(InputError):
            required_samples(SampleSizePlan(**args))

    @settings(max_examples=200, deadline=None)
    @given(P=st.integers(1, 5000), nu=st.floats(1, 10), tau=st.floats(1e-3, 1e3),
           rho=st.floats(0.01, 0.98), eps2=st.floats(0, 10), epsM2=st.floats(0, 10),
           factor=st.floats(1.0, 3.0))
    def test_monotone(self, P, nu, tau, rho, eps2, epsM2, factor):
        base = SampleSizePlan(P, nu, tau, rho, eps2, epsM2)
        n0 = required_samples(base)
        assert required_samples(SampleSizePlan(P + 1, nu, tau, rho, eps2, epsM2)) >= n0
        assert required_samples(SampleSizePlan(P, nu * factor, tau, rho, eps2, epsM2)) >= n0
        assert required_samples(SampleSizePlan(P, nu, tau / factor, rho, eps2, epsM2)) >= n0
        assert required_samples(SampleSizePlan(P, nu, tau, min(rho * factor, 0.99), eps2, epsM2)) >= n0


class TestErrorBounds:
    def test_mse_values(self):
        assert mse_bound(0, 0, 10, 400) == 0
        assert mse_bound(1, 0, 10, 400) == pytest.approx(1.1)
        assert mse_bound(1, 1, 10, 400) == pytest.approx(1.4)

    def test_failure_prob(self):
        assert failure_prob_bound(2303, 10, 10) == pytest.approx(20 * math.exp(-23.03), rel=1e-12)
        assert failure_prob_bound(2303, 10, 10) == pytest.approx(2.0e-9, rel=0.01)
        assert failure_prob_bound(10**7, 10, 10) == 0.0
        assert failure_prob_bound(10**7, 10, 10, bounded_coherence=False) == pytest.approx(0.1)
        assert failure_prob_bound(0, 10, 10) == 1.0

    def test_markov_tail(self):
        val = markov_tail_bound(1000, 10, 10, 0.01, 0, 0.01)
        assert val == pytest.approx(20 * math.exp(-10) + 0.04, rel=1e-12)
        assert val == pytest.approx(0.0409, abs=1e-4)

    def test_markov_reduces_to_failure_prob(self):
        assert markov_tail_bound(500, 10, 10, 0, 0, 1.0) == failure_prob_bound(500, 10, 10)
        assert markov_tail_bound(500, 10, 10, 1.0, 0, math.inf) == failure_prob_bound(500, 10, 10)

    def test_markov_invalid_tau(self):
        with pytest.raises(InputError):
            markov_tail_bound(10, 1, 1, 0, 0, 0)


class TestSpectralStability:
    def test_identity_design(self):
        N = 9
        design = DesignSystem(math.sqrt(N) * np.eye(N), np.zeros(N))
        sigma, stable = spectral_stability(design)
        assert sigma == pytest.approx(0.0, abs=1e-14) and stable

    def test_orthonormal_columns(self):
        Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((40, 5)))
        sigma, stable = spectral_stability(DesignSystem(math.sqrt(40) * Q, np.zeros(40)))
        assert sigma < 1e-12 and stable

    def test_weight_scale_enters(self):
        A = np.eye(4) * 2.0
        M = stability_matrix(DesignSystem(A, np.zeros(4), weight_scale=0.5))
        np.testing.assert_allclose(M, np.eye(4) / 4)
        assert spectral_stability(DesignSystem(A, np.zeros(4), 0.5))[0] == pytest.approx(0.75)

    def test_unstable(self):
        assert spectral_stability(DesignSystem(np.ones((3, 2)), np.zeros(3)))[1] is False

    def test_non_finite(self):
        with pytest.raises(NumericalError):
            spectral_stability(DesignSystem(np.array([[np.nan]]), np.zeros(1)))
