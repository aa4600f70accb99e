"""Alignment checks and the sign router."""

import numpy as np
import pytest

from conftest import random_psd, random_spectrum
from ridgeshift import (
    InvalidParameterError,
    Spectrum,
    build_ar1,
    check_cov_shift_overparam,
    check_in_dist_alignment,
    check_noiseless_alignment_logderiv,
    check_reg_shift_alignment,
    check_reg_shift_general_balance,
    check_strict_alignment_implication,
    make_model,
    optimal_lambda,
    predict_sign,
)


def extreme_pair_model(p=100, rho=0.5, sigma2=0.0, beta0_factor=None):
    sp, _ = build_ar1(p, rho)
    beta = np.zeros(p)
    beta[0] = beta[-1] = 0.5
    beta0 = None if beta0_factor is None else beta0_factor * beta
    return make_model(sp, beta=beta, beta0=beta0, sigma2=sigma2)


class TestInDistAlignment:
    def test_isotropic_spectrum_never_holds(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            beta = rng.standard_normal(12)
            m = make_model(Spectrum.identity(12), beta=beta, sigma2=float(rng.uniform(0, 1)))
            assert not check_in_dist_alignment(m, 2.5).holds

    def test_isotropic_signal_never_holds(self):
        # universality over random spectra
        rng = np.random.default_rng(1)
        for _ in range(100):
            sp = random_spectrum(rng, 16)
            m = make_model(sp, alpha2=float(rng.uniform(0.2, 3)), sigma2=float(rng.uniform(0, 1)))
            assert not check_in_dist_alignment(m, float(rng.uniform(1.2, 6.0))).holds

    def test_extreme_pair_signal_holds_noiseless(self):
        m = extreme_pair_model(sigma2=0.0)
        for phi in (2.0, 5.0, 10.0):
            assert check_in_dist_alignment(m, phi).holds

    def test_wrong_regime(self):
        m = extreme_pair_model()
        with pytest.raises(InvalidParameterError):
            check_in_dist_alignment(m, 0.8)

    def test_margin_sign_matches_holds(self):
        m = extreme_pair_model(sigma2=1.0)
        report = check_in_dist_alignment(m, 5.0)
        assert report.holds == (report.worst_margin > 1e-12)
        assert not report.holds  # heavy noise breaks the ratio test


class TestNoiselessLogDerivativeForm:
    def test_agrees_with_ratio_test_at_zero_noise(self):
        rng = np.random.default_rng(2)
        models = [extreme_pair_model(sigma2=0.0)]
        for _ in range(4):
            sp = random_spectrum(rng, 14)
            models.append(make_model(sp, beta=rng.standard_normal(14), sigma2=0.0))
        for m in models:
            phi = 2.2
            ratio = check_in_dist_alignment(m, phi)
            logform = check_noiseless_alignment_logderiv(m, phi)
            assert ratio.holds == logform.holds


class TestCovShiftOverparam:
    def test_identity_test_covariance_never_holds(self):
        rng = np.random.default_rng(3)
        m = make_model(Spectrum.identity(10), beta=rng.standard_normal(10), sigma2=0.1)
        report = check_cov_shift_overparam(m, 2.0)
        assert not report.holds

    def test_banded_test_covariance_holds(self):
        p = 100
        s0sp, _ = build_ar1(p, 0.5)
        beta = np.zeros(p)
        beta[0] = beta[-1] = 0.5
        m = make_model(Spectrum.identity(p), beta=beta, sigma0=s0sp.eigenvalues, sigma2=0.01)
        assert check_cov_shift_overparam(m, 1.5).holds

    def test_noiseless_top_eigvec_reduces_to_trace_comparison(self):
        p = 30
        s0sp, _ = build_ar1(p, 0.6)
        beta = np.zeros(p)
        beta[-1] = 1.0  # aligned with the largest test-covariance direction
        m = make_model(Spectrum.identity(p), beta=beta, sigma0=s0sp.eigenvalues, sigma2=0.0)
        report = check_cov_shift_overparam(m, 3.0)
        expected = s0sp.r_max - float(np.mean(s0sp.eigenvalues)) * 1.0
        assert report.worst_margin == pytest.approx(expected, rel=1e-12)
        assert report.holds

    def test_requires_identity_train_covariance(self):
        m = extreme_pair_model()
        with pytest.raises(InvalidParameterError):
            check_cov_shift_overparam(m, 2.0)


class TestRegShiftAlignment:
    def test_doubled_target_holds(self):
        m = extreme_pair_model(beta0_factor=2.0)
        assert check_reg_shift_alignment(m).holds

    def test_halved_target_fails(self):
        m = extreme_pair_model(beta0_factor=0.5)
        assert not check_reg_shift_alignment(m).holds

    def test_flipped_target_fails(self):
        m = extreme_pair_model(beta0_factor=-1.0)
        report = check_reg_shift_alignment(m)
        assert not report.holds
        assert report.worst_margin < 0

    def test_degenerate_shift_rejected(self):
        m = extreme_pair_model()
        with pytest.raises(InvalidParameterError):
            check_reg_shift_alignment(m)


class TestRegShiftGeneralBalance:
    def test_noiseless_doubled_target_holds(self):
        m = extreme_pair_model(sigma2=0.0, beta0_factor=2.0)
        assert check_reg_shift_general_balance(m, 0.5).holds

    def test_no_shift_fails(self):
        m = extreme_pair_model(sigma2=0.3)
        report = check_reg_shift_general_balance(m, 0.5)
        assert not report.holds
        assert report.worst_margin < 0  # pure variance derivative is negative

    def test_noisy_doubled_target_holds(self):
        m = extreme_pair_model(sigma2=0.01, beta0_factor=2.0)
        assert check_reg_shift_general_balance(m, 0.5).holds


class TestStrictAlignmentImplication:
    def test_isotropic_spectrum_margin_zero(self):
        m = make_model(Spectrum.identity(8), beta=np.ones(8), sigma2=0.0)
        assert check_strict_alignment_implication(m).worst_margin == pytest.approx(0.0, abs=1e-15)

    def test_top_eigenvector_margin(self):
        rng = np.random.default_rng(4)
        sp = random_spectrum(rng, 12)
        beta = np.zeros(12)
        beta[-1] = 1.0
        m = make_model(sp, beta=beta, sigma2=0.0)
        expected = (sp.r_max - float(np.mean(sp.eigenvalues))) / 12
        assert check_strict_alignment_implication(m).worst_margin == pytest.approx(expected, rel=1e-12)

    def test_extreme_pair_margin_positive(self):
        # (r_min + r_max)/4 exceeds mean(r)/2 for the banded spectrum, even
        # though the split signal is not monotone-aligned
        m = extreme_pair_model(p=500)
        report = check_strict_alignment_implication(m)
        sp = m.spectrum
        expected = ((sp.r_min + sp.r_max) / 4 - float(np.mean(sp.eigenvalues)) * 0.5) / 500
        assert report.worst_margin == pytest.approx(expected, rel=1e-10)
        assert report.worst_margin > 0


class TestPredictSign:
    def test_no_shift_underparameterized(self):
        rng = np.random.default_rng(5)
        sp = random_spectrum(rng, 10)
        m = make_model(sp, beta=rng.standard_normal(10), sigma2=0.2)
        pred = predict_sign(m, 0.5)
        assert pred.predicted_sign == "nonnegative"
        assert pred.regime == "underparameterized"

    def test_isotropic_signal_rule(self):
        rng = np.random.default_rng(6)
        m = make_model(random_spectrum(rng, 10), alpha2=1.0,
                       sigma0=random_psd(rng, 10), sigma2=0.5)
        pred = predict_sign(m, 2.0)
        assert pred.predicted_sign == "nonnegative"
        assert pred.applied_rule == "isotropic-signal-closed-form"

    def test_cov_shift_negative_route(self):
        p = 100
        s0sp, _ = build_ar1(p, 0.5)
        beta = np.zeros(p)
        beta[0] = beta[-1] = 0.5
        m = make_model(Spectrum.identity(p), beta=beta, sigma0=s0sp.eigenvalues, sigma2=0.01)
        pred = predict_sign(m, 1.5)
        assert pred.predicted_sign == "negative"
        assert pred.report is not None and pred.report.holds

    def test_cov_shift_identity_test_cov_nonnegative(self):
        rng = np.random.default_rng(7)
        sp = random_spectrum(rng, 10)
        m = make_model(sp, beta=rng.standard_normal(10), sigma0=np.ones(10), sigma2=0.2)
        pred = predict_sign(m, 2.0)
        assert pred.predicted_sign == "nonnegative"
        assert pred.applied_rule == "cov-shift-identity-test-cov"

    def test_uncovered_case_is_inconclusive(self):
        rng = np.random.default_rng(8)
        sp = random_spectrum(rng, 10)
        # anisotropic train covariance with covariate shift, overparameterized:
        # no sufficient test applies
        m = make_model(sp, beta=rng.standard_normal(10), sigma0=random_psd(rng, 10), sigma2=0.2)
        pred = predict_sign(m, 2.0)
        assert pred.predicted_sign == "inconclusive"

    def test_regression_shift_negative_route(self):
        m = extreme_pair_model(sigma2=0.01, beta0_factor=2.0)
        pred = predict_sign(m, 0.5)
        assert pred.predicted_sign == "negative"
        assert pred.applied_rule == "reg-shift-balance"

    def test_joint_shift_inconclusive(self):
        rng = np.random.default_rng(9)
        sp = random_spectrum(rng, 10)
        beta = rng.standard_normal(10)
        m = make_model(sp, beta=beta, beta0=1.5 * beta,
                       sigma0=random_psd(rng, 10), sigma2=0.2)
        assert predict_sign(m, 0.5).predicted_sign == "inconclusive"


class TestOptimizerConsistency:
    """Predicted signs must agree with the scanned optimum."""

    def test_sampled_models(self):
        rng = np.random.default_rng(10)
        checked_negative = 0
        checked_nonnegative = 0
        cases = []
        # no-shift models, both regimes (underparameterized draws predict a sign)
        for i in range(6):
            sp = random_spectrum(rng, 16)
            m = make_model(sp, beta=rng.standard_normal(16), sigma2=float(rng.uniform(0.05, 0.5)))
            phi_range = (0.3, 0.95) if i < 3 else (1.2, 3.0)
            cases.append((m, float(rng.uniform(*phi_range))))
        # isotropic-random signals
        for _ in range(4):
            m = make_model(random_spectrum(rng, 16), alpha2=1.0,
                           sigma0=random_psd(rng, 16), sigma2=0.4)
            cases.append((m, float(rng.uniform(0.3, 3.0))))
        # the negative-sign workhorses
        cases.append((extreme_pair_model(sigma2=0.01, beta0_factor=2.0), 0.5))
        p = 100
        s0sp, _ = build_ar1(p, 0.5)
        beta = np.zeros(p)
        beta[0] = beta[-1] = 0.5
        cases.append(
            (make_model(Spectrum.identity(p), beta=beta, sigma0=s0sp.eigenvalues, sigma2=0.01), 1.5)
        )

        for m, phi in cases:
            pred = predict_sign(m, phi)
            if pred.predicted_sign == "inconclusive":
                continue
            lam_star = optimal_lambda(m, phi).lambda_star
            if pred.predicted_sign == "negative":
                checked_negative += 1
                assert lam_star < 0.0, (pred, lam_star, phi)
            else:
                checked_nonnegative += 1
                assert lam_star >= -1e-8, (pred, lam_star, phi)
        assert checked_negative >= 2
        assert checked_nonnegative >= 6

    def test_fifty_random_models_per_rule_class(self):
        """Fifty random models drawn across every routing class; each
        definite prediction must match the scanned sign."""
        rng = np.random.default_rng(20)
        p = 60
        cases = []
        for i in range(50):
            klass = i % 6
            if klass == 0:  # isotropic-random signal, arbitrary shift kind of cov
                m = make_model(random_spectrum(rng, p), alpha2=float(rng.uniform(0.3, 2)),
                               sigma0=random_psd(rng, p), sigma2=float(rng.uniform(0.1, 1)))
                phi = float(rng.uniform(0.3, 3.0))
            elif klass == 1:  # no shift, underparameterized
                m = make_model(random_spectrum(rng, p), beta=rng.standard_normal(p),
                               sigma2=float(rng.uniform(0.05, 0.6)))
                phi = float(rng.uniform(0.25, 0.95))
            elif klass == 2:  # covariate shift, underparameterized
                m = make_model(random_spectrum(rng, p), beta=rng.standard_normal(p),
                               sigma0=random_psd(rng, p), sigma2=float(rng.uniform(0.05, 0.6)))
                phi = float(rng.uniform(0.25, 0.95))
            elif klass == 3:  # covariate shift onto the identity, overparameterized
                m = make_model(random_spectrum(rng, p), beta=rng.standard_normal(p),
                               sigma0=np.ones(p), sigma2=float(rng.uniform(0.05, 0.6)))
                phi = float(rng.uniform(1.2, 4.0))
            elif klass == 4:  # identity train cov, aligned banded test cov
                rho = float(rng.uniform(0.35, 0.7))
                s0sp, _ = build_ar1(p, rho)
                beta = np.zeros(p)
                beta[0] = beta[-1] = 0.5
                m = make_model(Spectrum.identity(p), beta=beta,
                               sigma0=s0sp.eigenvalues, sigma2=0.01)
                phi = float(rng.uniform(1.2, 2.5))
            else:  # regression shift with an inflated target
                sp, _ = build_ar1(p, float(rng.uniform(0.3, 0.7)))
                beta = np.zeros(p)
                beta[0] = beta[-1] = 0.5
                m = make_model(sp, beta=beta, beta0=float(rng.uniform(1.5, 3.0)) * beta,
                               sigma2=0.01)
                phi = float(rng.uniform(0.3, 0.9))
            cases.append((m, phi))

        definite = 0
        for m, phi in cases:
            pred = predict_sign(m, phi)
            if pred.predicted_sign == "inconclusive":
                continue
            definite += 1
            lam_star = optimal_lambda(m, phi).lambda_star
            if pred.predicted_sign == "negative":
                assert lam_star < 0.0, (pred.applied_rule, lam_star, phi)
            else:
                assert lam_star >= -1e-8, (pred.applied_rule, lam_star, phi)
        assert definite >= 35  # the constructions mostly satisfy some hypothesis
