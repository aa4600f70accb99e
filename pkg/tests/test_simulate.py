"""Monte Carlo harness: data generation, pseudoinverse ridge fits, subsample
averages, and the seeded experiment driver."""

import math

import numpy as np
import pytest

from ridgeshift import (
    InvalidParameterError,
    SimConfig,
    EnsembleConfig,
    Spectrum,
    empirical_risk,
    ensemble_fit,
    generate_data,
    make_model,
    mc_experiment,
    ridge_fit,
)
from ridgeshift.simulate import RidgeFactorization


def unit_signal(p):
    beta = np.zeros(p)
    beta[0] = 1.0
    return beta


class TestGenerateData:
    def test_noiseless_response_is_exact(self):
        m = make_model(Spectrum.from_values([0.5, 1.0, 2.0]), beta=np.array([1.0, -2.0, 0.5]),
                       sigma2=0.0)
        x, y = generate_data(m, 50, rng=0)
        np.testing.assert_allclose(y, x @ m.beta, atol=1e-12)

    def test_sample_covariance_matches_spectrum(self):
        m = make_model(Spectrum.from_values([1.0, 2.0, 3.0, 4.0, 5.0]),
                       beta=unit_signal(5), sigma2=0.0)
        x, _ = generate_data(m, 100_000, rng=1)
        cov = x.T @ x / x.shape[0]
        np.testing.assert_allclose(cov, np.diag([1, 2, 3, 4, 5]), atol=0.15, rtol=0.03)

    def test_rademacher_support(self):
        m = make_model(Spectrum.from_values([4.0, 4.0]), beta=np.ones(2), sigma2=0.0)
        x, _ = generate_data(m, 200, z_dist="rademacher", rng=2)
        z = x / 2.0  # unscale by sqrt(eigenvalue)
        assert set(np.unique(z)) <= {-1.0, 1.0}

    def test_student_t_unit_variance(self):
        m = make_model(Spectrum.identity(2), beta=np.ones(2), sigma2=0.0)
        x, _ = generate_data(m, 200_000, z_dist="student-t", rng=3)
        assert np.var(x) == pytest.approx(1.0, rel=0.05)

    def test_deterministic_given_seed(self):
        m = make_model(Spectrum.identity(3), beta=unit_signal(3), sigma2=0.5)
        x1, y1 = generate_data(m, 20, rng=7)
        x2, y2 = generate_data(m, 20, rng=7)
        np.testing.assert_array_equal(x1, x2)
        np.testing.assert_array_equal(y1, y2)


class TestRidgeFit:
    def test_interpolation_identity(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((10, 25))
        y = rng.standard_normal(10)
        beta = ridge_fit(x, y, 0.0)
        np.testing.assert_allclose(x @ beta, y, atol=1e-8 * np.linalg.norm(y))

    def test_minimum_norm_property(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((8, 20))
        y = rng.standard_normal(8)
        beta = ridge_fit(x, y, 0.0)
        # any other interpolator differs by a null-space vector, orthogonal
        # to the row space that contains beta
        lstsq = np.linalg.lstsq(x, y, rcond=None)[0]
        np.testing.assert_allclose(beta, lstsq, atol=1e-8)

    def test_matches_dense_solver(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((40, 12))
        y = rng.standard_normal(40)
        beta = ridge_fit(x, y, 1.0)
        direct = np.linalg.solve(x.T @ x / 40 + np.eye(12), x.T @ y / 40)
        np.testing.assert_allclose(beta, direct, atol=1e-10)

    def test_primal_dual_agreement(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((20, 30))
        y = rng.standard_normal(20)
        lam = 0.5
        dual = ridge_fit(x, y, lam)  # p > n path
        cov = x.T @ x / 20
        primal = np.linalg.solve(cov + lam * np.eye(30), x.T @ y / 20)
        np.testing.assert_allclose(dual, primal, atol=1e-10)

    def test_negative_penalty_pseudoinverse(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((60, 12))
        y = rng.standard_normal(60)
        lam = -0.05
        beta = ridge_fit(x, y, lam)
        direct = np.linalg.solve(x.T @ x / 60 + lam * np.eye(12), x.T @ y / 60)
        np.testing.assert_allclose(beta, direct, atol=1e-8)

    def test_factorization_reuse_matches_fresh_fits(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((30, 18))
        y = rng.standard_normal(30)
        fact = RidgeFactorization(x)
        for lam in (-0.02, 0.0, 0.3, 2.0):
            np.testing.assert_allclose(fact.solve(y, lam), ridge_fit(x, y, lam), atol=1e-12)


class TestEnsembleFit:
    def test_full_subsample_equals_plain_fit(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((15, 8))
        y = rng.standard_normal(15)
        np.testing.assert_array_equal(
            ensemble_fit(x, y, 0.4, k=15, n_subsamples=7, rng=0),
            ridge_fit(x, y, 0.4),
        )

    def test_single_subsample(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((20, 6))
        y = rng.standard_normal(20)
        out = ensemble_fit(x, y, 0.2, k=10, n_subsamples=1, rng=42)
        idx = np.random.default_rng(42).choice(20, size=10, replace=False)
        np.testing.assert_allclose(out, ridge_fit(x[idx], y[idx], 0.2), atol=1e-12)

    def test_averaging_rate(self):
        # distance to a large-m reference shrinks roughly like 1/sqrt(m)
        rng = np.random.default_rng(12)
        x = rng.standard_normal((40, 25))
        y = rng.standard_normal(40)
        ref = ensemble_fit(x, y, 0.3, k=20, n_subsamples=4000, rng=99)
        err_small = np.linalg.norm(ensemble_fit(x, y, 0.3, k=20, n_subsamples=50, rng=1) - ref)
        err_large = np.linalg.norm(ensemble_fit(x, y, 0.3, k=20, n_subsamples=800, rng=2) - ref)
        ratio = err_small / err_large  # expected ~ four, allow wide slack
        assert 1.5 < ratio < 12.0

    def test_invalid_subsample_size(self):
        x = np.zeros((5, 3))
        y = np.zeros(5)
        with pytest.raises(InvalidParameterError):
            ensemble_fit(x, y, 0.1, k=6, n_subsamples=2)


class TestEmpiricalRisk:
    def test_perfect_fit(self):
        rng = np.random.default_rng(13)
        sp = Spectrum.from_values(np.exp(rng.uniform(-1, 1, 6)))
        beta = rng.standard_normal(6)
        m = make_model(sp, beta=beta, sigma2=0.1, sigma0_sq=0.9)
        assert empirical_risk(beta, m) == pytest.approx(0.9, abs=1e-12)

    def test_zero_fit_gives_null_risk(self):
        rng = np.random.default_rng(14)
        sp = Spectrum.from_values(np.exp(rng.uniform(-1, 1, 6)))
        m = make_model(sp, beta=rng.standard_normal(6), sigma2=0.1, sigma0_sq=0.2)
        assert empirical_risk(np.zeros(6), m) == pytest.approx(m.null_risk(), rel=1e-12)

    def test_regression_shift_target(self):
        beta = unit_signal(4)
        m = make_model(Spectrum.identity(4), beta=beta, beta0=2 * beta, sigma2=0.0, sigma0_sq=0.3)
        assert empirical_risk(beta, m) == pytest.approx(1.0 + 0.3, abs=1e-12)


class TestMcExperiment:
    @staticmethod
    def _model(p=150):
        return make_model(Spectrum.identity(p), beta=unit_signal(p), sigma2=0.25)

    def test_seed_determinism_across_threads(self):
        m = self._model(40)
        grid = [0.1, 0.5]
        r1 = mc_experiment(m, SimConfig(p=40, phi=2.0, reps=6, seed=11, threads=1), grid)
        r2 = mc_experiment(m, SimConfig(p=40, phi=2.0, reps=6, seed=11, threads=3), grid)
        for a, b in zip(r1.cells, r2.cells):
            assert a.empirical_mean == b.empirical_mean
            assert a.empirical_se == b.empirical_se

    def test_thread_cap_env_var(self, monkeypatch):
        monkeypatch.setenv("RIDGESHIFT_MAX_THREADS", "1")
        m = self._model(30)
        capped = mc_experiment(m, SimConfig(p=30, phi=1.5, reps=4, seed=3, threads=8), [0.2])
        monkeypatch.delenv("RIDGESHIFT_MAX_THREADS")
        free = mc_experiment(m, SimConfig(p=30, phi=1.5, reps=4, seed=3, threads=8), [0.2])
        assert capped.cells[0].empirical_mean == free.cells[0].empirical_mean

    def test_theory_agreement_at_moderate_scale(self):
        m = self._model(150)
        result = mc_experiment(m, SimConfig(p=150, phi=2.0, reps=8, seed=3), [0.0, 0.3])
        for cell in result.cells:
            assert cell.rel_error < 0.15

    def test_guard_rejects_penalties_near_edge(self):
        m = self._model(40)
        lmin = -((1 - math.sqrt(2.0)) ** 2)
        with pytest.raises(InvalidParameterError):
            mc_experiment(m, SimConfig(p=40, phi=2.0, reps=2, seed=0), [lmin + 0.01 * abs(lmin)])

    def test_ensemble_cell(self):
        m = self._model(100)
        cfg = SimConfig(p=100, phi=2.0, reps=6, seed=5,
                        ensemble=EnsembleConfig(psi=4.0, n_subsamples=60))
        result = mc_experiment(m, cfg, [0.2])
        psis = sorted({c.psi for c in result.cells})
        assert psis == [2.0, 4.0]
        for cell in result.cells:
            assert cell.rel_error < 0.2

    def test_replicate_dump(self, tmp_path):
        m = self._model(30)
        cfg = SimConfig(p=30, phi=1.5, reps=3, seed=2, keep_replicates=True)
        result = mc_experiment(m, cfg, [0.1])
        out = tmp_path / "reps.csv"
        result.dump_replicates_csv(out)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "cell_id,lambda,phi,psi,rep,risk"
        assert len(lines) == 1 + 3

    def test_isotropic_signal_resampled(self):
        m = make_model(Spectrum.identity(60), alpha2=1.0, sigma2=0.5)
        result = mc_experiment(m, SimConfig(p=60, phi=0.5, reps=10, seed=9), [0.5])
        assert result.cells[0].rel_error < 0.2

    def test_student_df_validation(self):
        with pytest.raises(InvalidParameterError):
            SimConfig(p=20, phi=1.0, reps=1, seed=0, z_dist="student-t", student_df=4.0)

    def test_ensemble_cross_term_uses_subsample_level(self):
        # under regression shift, the ensemble cross term tracks the level
        # solved at the subsample ratio; re-anchoring it at the data-ratio
        # level is decisively rejected by simulation
        from ridgeshift import build_ar1, ensemble_risk, risk_at_mu, solve_mu

        p = 240
        sp, _ = build_ar1(p, 0.5)
        beta = np.zeros(p)
        beta[0] = beta[-1] = 0.5
        m = make_model(sp, beta=beta, beta0=2 * beta, sigma2=0.1)
        phi, psi, lam = 1.0, 3.0, 0.3

        implemented = ensemble_risk(m, lam, phi, psi)
        mu_phi = solve_mu(sp, lam, phi).mu
        rival = implemented.total - implemented.shift + risk_at_mu(m, mu_phi, phi).shift

        cfg = SimConfig(p=p, phi=phi, reps=8, seed=4, threads=2, include_plain=False,
                        ensemble=EnsembleConfig(psi=psi, n_subsamples=100))
        emp = mc_experiment(m, cfg, [lam]).cells[0].empirical_mean
        assert abs(emp - implemented.total) / implemented.total < 0.05
        assert abs(emp - rival) / rival > 0.15

    def test_ensemble_only_mode(self):
        # penalties admissible at the subsample aspect but not at the data
        # aspect are reachable by skipping the plain cells
        m = self._model(80)
        cfg = SimConfig(p=80, phi=2.0, reps=4, seed=6, include_plain=False,
                        ensemble=EnsembleConfig(psi=8.0, n_subsamples=40))
        result = mc_experiment(m, cfg, [-0.8])
        assert [c.psi for c in result.cells] == [8.0]
        assert math.isfinite(result.cells[0].empirical_mean)

    def test_negative_penalty_validity_near_edge(self):
        # inside the guarded negative range the empirical risk stays finite
        # and tracks the equivalent within ten percent; at this dimension the
        # smallest-eigenvalue fluctuation (width ~ n^(-2/3)) still swamps the
        # innermost guard band, so the probes stay at moderate depth
        p = 400
        m = self._model(p)
        lmin = -((1 - math.sqrt(2.0)) ** 2)
        grid = [lmin + 0.5 * abs(lmin), lmin + 0.7 * abs(lmin)]
        result = mc_experiment(m, SimConfig(p=p, phi=2.0, reps=12, seed=8, threads=2), grid)
        for cell in result.cells:
            assert cell.lam < 0.0
            assert math.isfinite(cell.empirical_mean)
            assert cell.rel_error <= 0.10, (cell.lam, cell.rel_error)


class TestNearSingularWarning:
    def test_warns_inside_spectrum_bulk(self):
        rng = np.random.default_rng(15)
        x = rng.standard_normal((50, 12))
        y = rng.standard_normal(50)
        s = np.linalg.eigvalsh(x.T @ x / 50)
        lam = -float(s[5]) + 1e-14  # numerically on top of an interior eigenvalue
        with pytest.warns(Warning, match="near-singular"):
            ridge_fit(x, y, lam)
