"""Gaussian-process regression tests.

Oracles: a from-scratch numpy log-marginal-likelihood implementation,
central finite differences for every analytic gradient, and the exact
posterior for the sparse model at M = N.
"""

import math

import numpy as np
import pytest

from gptrack import gp
from gptrack.dynamics import VehicleParams
from gptrack.errors import ValidationError


def toy_data(n=40, d=2, seed=0, noise=0.05):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2.0, 2.0, size=(n, d))
    Y = np.sin(X[:, 0]) + 0.5 * np.cos(2.0 * X[:, -1]) + noise * rng.normal(size=n)
    return gp.Dataset(X, Y)


def lml_numpy(D, theta):
    """Independent log-marginal-likelihood oracle (pure numpy, no jitter)."""
    n = len(D)
    K = gp.gram(D.X, D.X, theta) + theta.sigma_eps ** 2 * np.eye(n)
    sign, logdet = np.linalg.slogdet(K)
    assert sign > 0
    alpha = np.linalg.solve(K, D.Y)
    return -0.5 * D.Y @ alpha - 0.5 * logdet - 0.5 * n * math.log(2.0 * math.pi)


class TestKernel:
    def test_closed_form(self):
        theta = gp.Hyperparams(sigma_f=2.0, lam=[1.0, 4.0], sigma_eps=0.1)
        x, xp = np.array([1.0, 0.0]), np.array([0.0, 2.0])
        want = 4.0 * math.exp(-0.5 * (1.0 / 1.0 + 4.0 / 4.0))
        assert gp.kernel_se(x, xp, theta) == pytest.approx(want)
        assert gp.gram([x], [xp], theta)[0, 0] == pytest.approx(want)

    def test_gram_symmetry_and_diagonal(self):
        D = toy_data()
        theta = gp.Hyperparams.initial_guess(D.X, D.Y)
        K = gp.gram(D.X, D.X, theta)
        assert np.allclose(K, K.T)
        assert np.allclose(np.diag(K), theta.sigma_f ** 2)

    def test_hyperparam_validation(self):
        with pytest.raises(ValidationError):
            gp.Hyperparams(sigma_f=0.0, lam=[1.0], sigma_eps=0.1)
        with pytest.raises(ValidationError):
            gp.Hyperparams(sigma_f=1.0, lam=[-1.0], sigma_eps=0.1)

    def test_log_vector_roundtrip(self):
        theta = gp.Hyperparams(sigma_f=1.7, lam=[0.3, 2.0, 5.0], sigma_eps=0.02)
        back = gp.Hyperparams.from_log_vector(theta.log_vector())
        assert back.sigma_f == pytest.approx(theta.sigma_f)
        assert np.allclose(back.lam, theta.lam)
        assert back.sigma_eps == pytest.approx(theta.sigma_eps)


class TestObjectives:
    def test_lml_matches_numpy_oracle(self):
        D = toy_data()
        theta = gp.Hyperparams(sigma_f=1.0, lam=[0.8, 1.2], sigma_eps=0.2)
        assert gp.log_marginal(D, theta) == pytest.approx(
            lml_numpy(D, theta), rel=1e-6)

    def test_vfe_upper_bounds_negative_lml(self):
        """The Titsias bound is a lower bound on the evidence, so the VFE
        cost is at least -LML, with equality as X_M covers the data."""
        D = toy_data(n=25)
        theta = gp.Hyperparams(sigma_f=1.0, lam=[0.8, 1.2], sigma_eps=0.2)
        lml = gp.log_marginal(D, theta)
        vfe_full = gp.vfe_cost(D, D.X, theta)
        vfe_sub = gp.vfe_cost(D, D.X[:6], theta)
        assert vfe_full == pytest.approx(-lml, rel=1e-4)
        assert vfe_sub >= vfe_full - 1e-8

    def test_lml_gradient_vs_central_differences(self):
        D = toy_data(n=30)
        theta = gp.Hyperparams(sigma_f=1.2, lam=[0.7, 1.5], sigma_eps=0.15)
        _, g = gp.log_marginal_grad(D, theta)
        z = theta.log_vector()
        h = 1e-5
        for k in range(len(z)):
            zp, zm = z.copy(), z.copy()
            zp[k] += h
            zm[k] -= h
            fd = (gp.log_marginal(D, gp.Hyperparams.from_log_vector(zp))
                  - gp.log_marginal(D, gp.Hyperparams.from_log_vector(zm))) / (2 * h)
            assert g[k] == pytest.approx(fd, rel=1e-4, abs=1e-7)

    def test_vfe_gradients_vs_central_differences(self):
        D = toy_data(n=25)
        theta = gp.Hyperparams(sigma_f=1.0, lam=[0.9, 1.1], sigma_eps=0.2)
        Xm = D.X[::5].copy()
        _, g_theta, g_xm = gp.vfe_grad(D, Xm, theta)
        h = 1e-5
        z = theta.log_vector()
        for k in range(len(z)):
            zp, zm = z.copy(), z.copy()
            zp[k] += h
            zm[k] -= h
            fd = (gp.vfe_cost(D, Xm, gp.Hyperparams.from_log_vector(zp))
                  - gp.vfe_cost(D, Xm, gp.Hyperparams.from_log_vector(zm))) / (2 * h)
            assert g_theta[k] == pytest.approx(fd, rel=1e-4, abs=1e-7)
        for (i, j) in [(0, 0), (2, 1), (4, 0)]:
            Xp, Xm2 = Xm.copy(), Xm.copy()
            Xp[i, j] += h
            Xm2[i, j] -= h
            fd = (gp.vfe_cost(D, Xp, theta) - gp.vfe_cost(D, Xm2, theta)) / (2 * h)
            assert g_xm[i, j] == pytest.approx(fd, rel=1e-4, abs=1e-7)


class TestPosteriors:
    def test_exact_posterior_interpolates_clean_data(self):
        D = toy_data(n=30, noise=0.0)
        theta = gp.Hyperparams(sigma_f=1.0, lam=[0.5, 0.5], sigma_eps=1e-3)
        pred = gp.posterior_full(D, theta, D.X)
        assert np.max(np.abs(pred.mu - D.Y)) < 5e-3
        assert np.all(pred.var < 1e-3)

    def test_empty_dataset_prior(self):
        theta = gp.Hyperparams(sigma_f=1.5, lam=[1.0], sigma_eps=0.1)
        pred = gp.posterior_full(gp.Dataset(np.zeros((0, 1)), np.zeros(0)),
                                 theta, [[0.3]])
        assert pred.mu[0] == 0.0
        assert pred.var[0] == pytest.approx(1.5 ** 2)

    def test_sparse_equals_full_at_m_equals_n(self):
        """With X_M = X the sparse posterior reproduces the exact one."""
        D = toy_data(n=30)
        theta = gp.Hyperparams(sigma_f=1.0, lam=[0.8, 1.2], sigma_eps=0.2)
        model = gp.fit_caches(theta, D.X, D)
        Xs = toy_data(n=15, seed=3).X
        full = gp.posterior_full(D, theta, Xs)
        sparse = gp.posterior_sparse(model, Xs)
        assert np.allclose(sparse.mu, full.mu, atol=1e-6)
        assert np.allclose(sparse.var, full.var, atol=1e-6)

    def test_sparse_variance_nonnegative(self):
        D = toy_data(n=40)
        model = gp.train_sparse(D, M=8, seed=1, max_iter=30)
        pred = gp.posterior_sparse(model, toy_data(n=30, seed=9).X * 2.0)
        assert np.all(pred.var >= 0.0)


class TestTraining:
    def test_train_full_improves_lml(self):
        D = toy_data(n=35)
        theta0 = gp.Hyperparams(sigma_f=0.5, lam=[3.0, 3.0], sigma_eps=0.5)
        theta = gp.train_full(D, theta0=theta0, max_iter=60)
        assert gp.log_marginal(D, theta) > gp.log_marginal(D, theta0)

    def test_train_sparse_beats_initial_inducing(self):
        D = toy_data(n=60)
        theta0 = gp.Hyperparams.initial_guess(D.X, D.Y)
        Xm0 = gp.init_inducing(D, 10, seed=0)
        model = gp.train_sparse(D, M=10, seed=0, max_iter=60)
        assert model.meta["vfe_cost"] <= gp.vfe_cost(D, Xm0, theta0) + 1e-9
        assert model.M == 10

    def test_train_sparse_validates_m(self):
        D = toy_data(n=10)
        with pytest.raises(ValidationError):
            gp.train_sparse(D, M=0)
        with pytest.raises(ValidationError):
            gp.train_sparse(D, M=11)

    def test_training_deterministic(self):
        D = toy_data(n=30)
        m1 = gp.train_sparse(D, M=6, seed=4, max_iter=25)
        m2 = gp.train_sparse(D, M=6, seed=4, max_iter=25)
        assert np.array_equal(m1.X_M, m2.X_M)
        assert m1.theta.sigma_f == m2.theta.sigma_f


class TestRecursiveUpdate:
    def test_zero_rate_is_identity(self):
        D = toy_data(n=40)
        model = gp.train_sparse(D, M=8, seed=0, max_iter=30)
        batch = toy_data(n=10, seed=5)
        out, _ = gp.rgb_update(model, batch, alpha=0.0, n_alpha=3)
        assert np.array_equal(out.X_M, model.X_M)
        assert out.theta.sigma_f == model.theta.sigma_f
        assert np.allclose(out.theta.lam, model.theta.lam)

    def test_update_reduces_vfe_on_combined_set(self):
        D = toy_data(n=40)
        model = gp.train_sparse(D, M=8, seed=0, max_iter=30)
        batch = toy_data(n=15, seed=6)
        Y_m = gp.posterior_sparse(model, model.X_M).mu
        d_hat = gp.Dataset(model.X_M, Y_m).concat(batch)
        before = gp.vfe_cost(d_hat, model.X_M, model.theta)
        out, d_used = gp.rgb_update(model, batch, alpha=0.05, n_alpha=5)
        after = gp.vfe_cost(d_used, out.X_M, out.theta)
        assert after <= before + 1e-6
        assert len(d_used) == model.M + len(batch)

    def test_frozen_hyperparams_only_move_inducing(self):
        D = toy_data(n=40)
        model = gp.train_sparse(D, M=8, seed=0, max_iter=30)
        out, _ = gp.rgb_update(model, toy_data(n=10, seed=7), alpha=0.05,
                               n_alpha=3, update_hyperparams=False)
        assert out.theta.sigma_f == model.theta.sigma_f
        assert np.allclose(out.theta.lam, model.theta.lam)
        assert not np.array_equal(out.X_M, model.X_M)

    def test_empty_batch_rejected(self):
        D = toy_data(n=20)
        model = gp.train_sparse(D, M=5, seed=0, max_iter=10)
        with pytest.raises(ValidationError):
            gp.rgb_update(model, gp.Dataset(np.zeros((0, 2)), np.zeros(0)))


class TestResidualDatasets:
    def test_clean_nominal_log_gives_small_residuals(self):
        """A log generated by the decoupled models themselves leaves only
        differentiation error in the residual outputs."""
        p = VehicleParams()
        dt = 1.0 / 60.0
        t = np.arange(0, 3.0, dt)
        vx = 1.0 + 0.2 * np.sin(0.8 * t)
        # drive input that reproduces dvx through the longitudinal LPV model
        g = 2.0 / p.m
        dvx = 0.16 * np.cos(0.8 * t)
        d = (dvx + p.C_m2 * g * vx + p.C_m3 * g) / (p.C_m1 * g)
        log = {"t": t, "theta_e": np.zeros_like(t), "vx": vx,
               "vy": np.zeros_like(t), "omega": np.zeros_like(t),
               "d": d, "delta": np.zeros_like(t), "kappa": np.zeros_like(t)}
        d_lo, d_la = gp.build_datasets(log, p)
        assert np.max(np.abs(d_lo.Y[1:-1])) < 1e-3
        assert d_lo.X.shape == (len(t), 3)
        assert len(d_la) == len(t)

    def test_missing_keys_and_nonuniform(self):
        p = VehicleParams()
        with pytest.raises(ValidationError):
            gp.build_datasets({"t": np.arange(5.0)}, p)
        t = np.array([0.0, 0.1, 0.3])
        log = {k: np.zeros(3) for k in
               ("theta_e", "vx", "vy", "omega", "d", "delta", "kappa")}
        log["t"] = t
        with pytest.raises(ValidationError):
            gp.build_datasets(log, p)


class TestSerialization:
    def test_model_roundtrip(self, tmp_path):
        D = toy_data(n=30)
        model = gp.train_sparse(D, M=6, seed=2, max_iter=20)
        path = tmp_path / "model.json"
        gp.save_model(model, path)
        back = gp.load_model(path, D)
        Xs = toy_data(n=10, seed=8).X
        a = gp.posterior_sparse(model, Xs)
        b = gp.posterior_sparse(back, Xs)
        assert np.allclose(a.mu, b.mu, atol=1e-12)
        assert np.allclose(a.var, b.var, atol=1e-12)

    def test_dataset_csv_roundtrip(self, tmp_path):
        D = toy_data(n=12, d=3)
        path = tmp_path / "data.csv"
        D.to_csv(path)
        back = gp.Dataset.from_csv(path)
        assert np.allclose(back.X, D.X, atol=1e-12)
        assert np.allclose(back.Y, D.Y, atol=1e-12)
