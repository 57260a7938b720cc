"""Security-bounds tests: entropies, analytic bound, ideal state, dual certificates."""

import math

import numpy as np
import pytest

from oamqkd import (
    analytic_key_rate,
    build_constraints,
    conditional_entropy,
    dual_exponential,
    dual_objective,
    ideal_state,
    key_pinchers,
    optimize_dual,
)
from oamqkd.security import (
    ChannelNoise,
    JointOutcomeDistribution,
    analytic_rate_at_qber,
    binary_entropy,
    numerical_rate_at_qber,
    practical_rate_series_from_noise,
    symmetric_error_distribution,
)

LN2 = math.log(2.0)


def symmetric_cost(q, d):
    """Closed-form H(A|B) of the uniform-error channel."""
    return binary_entropy(q) + q * math.log2(d - 1)


class TestConditionalEntropy:
    def test_perfectly_correlated(self):
        dist = JointOutcomeDistribution(4, np.eye(4) / 4)
        assert conditional_entropy(dist) == pytest.approx(0.0, abs=1e-12)

    def test_independent_uniform(self):
        dist = JointOutcomeDistribution(4, np.full((4, 4), 1 / 16))
        assert conditional_entropy(dist) == pytest.approx(2.0, abs=1e-12)

    def test_symmetric_error_closed_form(self):
        dist = symmetric_error_distribution(4, 0.12)
        expected = symmetric_cost(0.12, 4)
        assert expected == pytest.approx(0.7196, abs=1e-4)
        assert conditional_entropy(dist) == pytest.approx(expected, abs=1e-12)

    def test_entropy_bounds_on_random_pmfs(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            pmf = rng.random((4, 4))
            pmf /= pmf.sum()
            h = conditional_entropy(JointOutcomeDistribution(4, pmf))
            assert -1e-12 <= h <= 2.0 + 1e-12

    def test_pmf_validation(self):
        with pytest.raises(ValueError):
            JointOutcomeDistribution(4, np.full((4, 4), 0.1))
        with pytest.raises(ValueError):
            JointOutcomeDistribution(2, -np.eye(2) / 2 + np.ones((2, 2)) / 2 + np.eye(2) / 2)


class TestAnalyticRate:
    def test_noiseless_anchor(self, pmub3):
        rate = analytic_rate_at_qber(0.0, pmub3)
        assert rate.key_rate == pytest.approx(3 - math.log2(3), abs=1e-12)

    def test_positivity_threshold_by_bisection(self, pmub3):
        def margin(q):
            return pmub3.q_mu - 2 * symmetric_cost(q, 4)

        lo, hi = 0.05, 0.2
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if margin(mid) > 0:
                lo = mid
            else:
                hi = mid
        q_star = 0.5 * (lo + hi)
        assert q_star == pytest.approx(0.117, abs=2e-3)
        assert analytic_rate_at_qber(q_star + 1e-3, pmub3).key_rate == 0.0
        assert analytic_rate_at_qber(q_star - 1e-3, pmub3).key_rate > 0.0

    def test_operating_point_is_marginal(self, pmub3):
        rate = analytic_rate_at_qber(0.12, pmub3)
        assert rate.unclamped == pytest.approx(-0.024, abs=1e-3)
        assert rate.key_rate == 0.0

    def test_dimension_mismatch(self, pmub3):
        with pytest.raises(ValueError):
            analytic_key_rate(
                symmetric_error_distribution(4, 0.1),
                symmetric_error_distribution(2, 0.1),
                pmub3.q_mu,
            )


class TestUncertaintyRelation:
    def test_random_states_respect_the_bound(self, pmub3):
        lmat = np.array([s.amplitudes for s in pmub3.basis_l])
        hmat = np.array([s.amplitudes for s in pmub3.basis_h])
        rng = np.random.default_rng(11)
        bound = pmub3.q_mu - 1e-9
        for _ in range(200):
            psi = rng.normal(size=4) + 1j * rng.normal(size=4)
            psi /= np.linalg.norm(psi)
            pl = np.abs(lmat.conj() @ psi) ** 2
            ph = np.abs(hmat.conj() @ psi) ** 2
            entropy = -sum(p * math.log2(p) for p in pl if p > 0)
            entropy += -sum(p * math.log2(p) for p in ph if p > 0)
            assert entropy >= bound


class TestIdealState:
    def test_rank_one_projector(self, pmub3):
        state = ideal_state(pmub3)
        eigs = np.linalg.eigvalsh(state.density)
        assert eigs[-1] == pytest.approx(1.0, abs=1e-12)
        assert np.abs(eigs[:-1]).max() < 1e-12

    def test_marginals_maximally_mixed(self, pmub3):
        state = ideal_state(pmub3)
        rho = state.density.reshape(4, 4, 4, 4)
        for axes in ((1, 3), (0, 2)):
            marginal = np.trace(rho, axis1=axes[0], axis2=axes[1])
            np.testing.assert_allclose(marginal, np.eye(4) / 4, atol=1e-12)

    def test_primed_diagonal_basis_is_orthonormal(self, pmub3):
        state = ideal_state(pmub3)
        gram = state.primed_basis_h.conj().T @ state.primed_basis_h
        np.testing.assert_allclose(gram, np.eye(4), atol=1e-12)

    def test_order_one_schmidt_coefficients(self, pmub1):
        state = ideal_state(pmub1)
        eigs = np.linalg.eigvalsh(state.density)
        amp = np.zeros((2, 2), complex)
        lmat = np.array([s.amplitudes for s in pmub1.basis_l])
        for i in range(2):
            amp[i] = lmat[i] / math.sqrt(2)
        np.testing.assert_allclose(np.linalg.svd(amp)[1], [1 / math.sqrt(2)] * 2, atol=1e-12)
        assert eigs[-1] == pytest.approx(1.0, abs=1e-12)


class TestBuildConstraints:
    def test_eq10_gammas_at_zero_error(self, pmub3):
        cs = build_constraints("paper-eq10", 0.0, pmub3)
        s = math.sin(pmub3.theta)
        assert s == pytest.approx(math.sqrt(7 / 8), abs=1e-12)
        np.testing.assert_allclose(cs.gammas, [1.0, 1.0, 1.0, s, s], atol=1e-12)

    def test_bb84_gammas(self):
        cs = build_constraints("bb84", 0.05)
        np.testing.assert_allclose(cs.gammas, [1.0, 0.9, 0.9], atol=1e-15)

    def test_calibrated_gammas_are_ideal_state_expectations(self, pmub3):
        cs0 = build_constraints("calibrated", 0.0, pmub3)
        np.testing.assert_allclose(cs0.gammas, [1, 1, 1, -0.75, -0.75], atol=1e-12)
        q = 0.09
        cs = build_constraints("calibrated", q, pmub3)
        np.testing.assert_allclose(cs.gammas[1:3], 1 - 2 * q, atol=1e-12)
        np.testing.assert_allclose(cs.gammas[3:], -0.75 + q / 3, atol=1e-12)

    def test_operators_hermitian(self, pmub3):
        # HermitianOperator validates on construction; spot-check anyway
        for preset in ("paper-eq10", "calibrated"):
            for op in build_constraints(preset, 0.1, pmub3).operators:
                np.testing.assert_allclose(op.entries, op.entries.conj().T, atol=1e-12)

    def test_theta_override_rejected_off_preset(self, pmub3):
        with pytest.raises(ValueError):
            build_constraints("calibrated", 0.1, pmub3, theta_override=1.0)
        with pytest.raises(ValueError):
            build_constraints("bb84", 0.1, theta_override=1.0)

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            build_constraints("nonsense", 0.1)


class TestDualExponential:
    def test_zero_multipliers(self):
        cs = build_constraints("bb84", 0.1)
        out = dual_exponential([0.0, 0.0, 0.0], cs)
        np.testing.assert_allclose(out.entries, math.exp(-1) * np.eye(4), atol=1e-14)

    def test_identity_constraint(self):
        cs = build_constraints(
            "custom", 0.0, operators=[np.eye(3, dtype=complex)], gammas=[1.0]
        )
        out = dual_exponential([1.0], cs)
        np.testing.assert_allclose(out.entries, math.exp(-2) * np.eye(3), atol=1e-14)

    def test_spectral_oracle_and_commutation(self):
        rng = np.random.default_rng(3)
        mat = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
        gamma = (mat + mat.conj().T) / 2
        lam = 0.7
        cs = build_constraints("custom", 0.0, operators=[gamma], gammas=[0.0])
        out = dual_exponential([lam], cs).entries
        arg = -np.eye(5) - lam * gamma
        assert np.abs(out @ arg - arg @ out).max() < 1e-10
        expected = np.sort(np.exp(np.linalg.eigvalsh(arg)))
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(out).real), expected, atol=1e-12)
        assert np.linalg.eigvalsh(out).min() > 0.0


class TestDualObjective:
    def test_zero_multipliers_value(self):
        # pinching of exp(-1) I leaves exp(-1) I; its largest eigenvalue is
        # dimension-independent
        cs = build_constraints("bb84", 0.1)
        val = dual_objective(np.zeros(3), cs, key_pinchers(2, 2))
        assert val == pytest.approx(-math.exp(-1), abs=1e-12)

    def test_certificate_reproducibility(self):
        cs = build_constraints("bb84", 0.08)
        pin = key_pinchers(2, 2)
        sol = optimize_dual(cs, pin, binary_entropy(0.08), starts=4, max_evals=4000)
        again = dual_objective(np.array(sol.lambdas), cs, pin)
        assert again == pytest.approx(sol.kappa, abs=1e-8)

    def test_non_resolving_pinchers_rejected(self):
        cs = build_constraints("bb84", 0.1)
        with pytest.raises(ValueError):
            dual_objective(np.zeros(3), cs, key_pinchers(2, 2)[:1])


class TestOptimizeDual:
    def test_bb84_privacy_term_at_zero_error(self):
        sol = numerical_rate_at_qber(0.0, "bb84")
        assert sol.kappa / LN2 == pytest.approx(1.0, abs=0.02)

    def test_bb84_threshold(self):
        sol = numerical_rate_at_qber(0.11, "bb84")
        assert sol.key_rate == pytest.approx(0.0, abs=0.02)

    @pytest.mark.parametrize("q", [0.0, 0.02, 0.04, 0.06, 0.08, 0.10, 0.12])
    def test_lower_bound_soundness(self, q):
        sol = numerical_rate_at_qber(q, "bb84", starts=6, max_evals=9000)
        analytic = 1 - 2 * binary_entropy(q)
        assert sol.key_rate <= analytic + 1e-3
        assert sol.key_rate >= analytic - 0.02

    def test_eq10_preset_diverges(self, pmub3):
        # the verbatim cross-basis expectations are unattainable, so the
        # certificate runs to the search box and is flagged non-converged
        sol = numerical_rate_at_qber(0.08, "paper-eq10", pmub3, starts=4, max_evals=4000)
        assert not sol.converged
        assert max(abs(v) for v in sol.lambdas) >= 0.999 * 60.0

    def test_evaluation_count_independent_of_dimension(self, pmub3):
        # five constraints in d=2 and d=4: same optimizer, same budget scale
        pauli_z = np.diag([1.0, -1.0])
        pauli_x = np.array([[0.0, 1.0], [1.0, 0.0]])
        eye2 = np.eye(2)
        q = 0.08
        ops2 = [
            np.eye(4),
            np.kron(pauli_z, pauli_z),
            np.kron(pauli_x, pauli_x),
            np.kron(pauli_z, eye2),
            np.kron(pauli_x, eye2),
        ]
        cs2 = build_constraints("custom", q, operators=ops2,
                                gammas=[1, 1 - 2 * q, 1 - 2 * q, 0.0, 0.0])
        cs4 = build_constraints("calibrated", q, pmub3)
        sol2 = optimize_dual(cs2, key_pinchers(2, 2), binary_entropy(q),
                             starts=4, max_evals=6000)
        sol4 = optimize_dual(cs4, key_pinchers(4, 4), symmetric_cost(q, 4),
                             starts=4, max_evals=6000)
        ratio = sol4.evaluations / sol2.evaluations
        assert 1 / 5 <= ratio <= 5

    def test_deterministic_under_seed(self):
        a = numerical_rate_at_qber(0.06, "bb84", seed=5, starts=4, max_evals=3000)
        b = numerical_rate_at_qber(0.06, "bb84", seed=5, starts=4, max_evals=3000)
        assert a == b


class TestPracticalRateSeries:
    def test_zero_noise_is_flat_at_the_bound(self, pmub3):
        noise = ChannelNoise(0.0, 0.0, (0.0, 0.0, 0.0, 0.0))
        series = practical_rate_series_from_noise(noise, 20, pmub3, seed=1)
        assert all(s.key_rate == pytest.approx(3 - math.log2(3), abs=1e-12) for s in series)
        assert all(s.band == 0.0 for s in series)

    def test_zero_spread_means_zero_band(self, pmub3):
        noise = ChannelNoise(0.05, 0.0, (0.05,) * 4)
        series = practical_rate_series_from_noise(noise, 10, pmub3, seed=2)
        assert series[0].band == 0.0
        assert len({s.key_rate for s in series}) == 1

    def test_band_from_extreme_rates(self, pmub3):
        # channel summary with the published spread: band endpoints at
        # q = 0.069 and 0.171
        noise = ChannelNoise(0.12, 0.051, (0.069, 0.171))
        series = practical_rate_series_from_noise(noise, 5, pmub3, seed=3)
        lo = analytic_rate_at_qber(0.069, pmub3).key_rate
        hi = analytic_rate_at_qber(0.171, pmub3).key_rate
        assert hi == 0.0
        assert series[0].band == pytest.approx(0.5 * (lo - hi), abs=1e-12)

    def test_sample_count_validated(self, pmub3):
        noise = ChannelNoise(0.1, 0.0, (0.1,))
        with pytest.raises(ValueError):
            practical_rate_series_from_noise(noise, 0, pmub3)
