"""Exact and sparse (variational) Gaussian-process regression.

Scalar-output GP regression with a squared-exponential kernel, marginal-
likelihood training, Titsias-style sparse variational training over
inducing inputs, recursive gradient-based online batch updates of both
hyperparameters and inducing points, and residual-dataset construction
from closed-loop driving logs.

Objective gradients are exact (reverse-mode differentiation of the same
objective code that produces the values); tests check them against central
finite differences. Trained models are immutable snapshots; prediction is
pure and thread-safe.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

import jax

jax.config.update("jax_enable_x64", True)
jax.config.update("jax_platform_name", "cpu")

import jax.numpy as jnp
from jax.scipy.linalg import cho_solve, cholesky, solve_triangular

from . import dynamics
from .errors import FactorizationError, NumericError, ValidationError

#: Base and maximum diagonal jitter, relative to sigma_f^2.
JITTER_BASE = 1e-8
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class Hyperparams:
    """SE-kernel hyperparameters: signal scale, diagonal Lambda, noise scale.

    ``lam`` stores the diagonal of the (squared-lengthscale) matrix Lambda.
    """

    sigma_f: float
    lam: np.ndarray
    sigma_eps: float

    def __post_init__(self):
        object.__setattr__(self, "lam", np.atleast_1d(np.asarray(self.lam, dtype=float)))
        if not (self.sigma_f > 0 and self.sigma_eps > 0 and np.all(self.lam > 0)):
            raise ValidationError("hyperparameters must be strictly positive")

    @property
    def dim(self) -> int:
        return len(self.lam)

    def log_vector(self) -> np.ndarray:
        return np.concatenate([[math.log(self.sigma_f)], np.log(self.lam),
                               [math.log(self.sigma_eps)]])

    @staticmethod
    def from_log_vector(z) -> "Hyperparams":
        z = np.asarray(z, dtype=float)
        return Hyperparams(sigma_f=float(np.exp(z[0])), lam=np.exp(z[1:-1]),
                           sigma_eps=float(np.exp(z[-1])))

    @staticmethod
    def initial_guess(X, Y) -> "Hyperparams":
        X = np.atleast_2d(X)
        sf = max(float(np.std(Y)), 1e-3)
        ell = np.maximum(np.std(X, axis=0), 1e-3)
        return Hyperparams(sigma_f=sf, lam=ell ** 2, sigma_eps=0.1 * sf)


@dataclass(frozen=True)
class Dataset:
    """Input matrix X (N x d) and output vector Y (N,)."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.atleast_1d(np.asarray(self.Y, dtype=float))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if len(X) != len(Y):
            raise ValidationError("X and Y row counts differ")
        if len(X) and not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValidationError("dataset contains non-finite values")

    def __len__(self) -> int:
        return len(self.Y)

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.vstack([self.X, other.X]), np.concatenate([self.Y, other.Y]))

    def to_csv(self, path) -> None:
        names = [f"x{i}" for i in range(self.X.shape[1])]
        if self.X.shape[1] == 3:
            names = ["vx", "vy", "omega"]
        np.savetxt(path, np.column_stack([self.X, self.Y]), delimiter=",",
                   header=",".join(names + ["y"]), comments="")

    @staticmethod
    def from_csv(path) -> "Dataset":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return Dataset(data[:, :-1], data[:, -1])


# ---------------------------------------------------------------------------
# Kernel and objective functions (value and gradient share one code path).
# ---------------------------------------------------------------------------

def _gram_j(X1, X2, log_sf, log_lam):
    d = X1[:, None, :] - X2[None, :, :]
    r2 = jnp.sum(d * d / jnp.exp(log_lam), axis=-1)
    return jnp.exp(2.0 * log_sf) * jnp.exp(-0.5 * r2)


def kernel_se(x, x_prime, theta: Hyperparams) -> float:
    """SE kernel sigma_f^2 exp(-0.5 (x-x')^T Lambda^-1 (x-x'))."""
    r = np.asarray(x, dtype=float) - np.asarray(x_prime, dtype=float)
    return theta.sigma_f ** 2 * math.exp(-0.5 * float(np.sum(r * r / theta.lam)))


def gram(X1, X2, theta: Hyperparams) -> np.ndarray:
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    d = X1[:, None, :] - X2[None, :, :]
    r2 = np.sum(d * d / theta.lam, axis=-1)
    return theta.sigma_f ** 2 * np.exp(-0.5 * r2)


def _lml_j(theta_log, X, Y, jitter):
    """Log marginal likelihood (the quantity that is maximized)."""
    log_sf, log_lam, log_se = theta_log[0], theta_log[1:-1], theta_log[-1]
    n = X.shape[0]
    K = _gram_j(X, X, log_sf, log_lam)
    Ky = K + (jnp.exp(2.0 * log_se) + jitter * jnp.exp(2.0 * log_sf)) * jnp.eye(n)
    L = cholesky(Ky, lower=True)
    alpha = cho_solve((L, True), Y)
    return (-0.5 * Y @ alpha - jnp.sum(jnp.log(jnp.diag(L)))
            - 0.5 * n * jnp.log(2.0 * jnp.pi))


def _vfe_j(theta_log, Xm, X, Y, jitter):
    """Variational free energy (negative evidence bound, to be minimized)."""
    log_sf, log_lam, log_se = theta_log[0], theta_log[1:-1], theta_log[-1]
    n, m = X.shape[0], Xm.shape[0]
    se2 = jnp.exp(2.0 * log_se)
    sf2 = jnp.exp(2.0 * log_sf)
    Kmm = _gram_j(Xm, Xm, log_sf, log_lam) + jitter * sf2 * jnp.eye(m)
    Kmn = _gram_j(Xm, X, log_sf, log_lam)
    L = cholesky(Kmm, lower=True)
    A = solve_triangular(L, Kmn, lower=True) / jnp.sqrt(se2)
    B = jnp.eye(m) + A @ A.T
    LB = cholesky(B, lower=True)
    c = solve_triangular(LB, A @ Y, lower=True) / jnp.sqrt(se2)
    trace_term = n * sf2 - se2 * jnp.sum(A * A)
    return (0.5 * n * jnp.log(2.0 * jnp.pi) + 0.5 * n * jnp.log(se2)
            + jnp.sum(jnp.log(jnp.diag(LB)))
            + 0.5 * (Y @ Y) / se2 - 0.5 * (c @ c)
            + 0.5 * trace_term / se2)


_lml_value = jax.jit(_lml_j)
_lml_grad = jax.jit(jax.value_and_grad(_lml_j))
_vfe_value = jax.jit(_vfe_j)
_vfe_grad = jax.jit(jax.value_and_grad(_vfe_j, argnums=(0, 1)))


def _escalate(fn, *args):
    """Evaluate with the jitter policy: start small, double until finite."""
    jitter = JITTER_BASE
    while jitter <= JITTER_MAX:
        out = fn(*args, jitter)
        flat = out if isinstance(out, tuple) else (out,)
        if all(np.all(np.isfinite(np.asarray(v))) for v in jax.tree_util.tree_leaves(flat)):
            return out, jitter
        jitter *= 2.0
    raise FactorizationError("kernel factorization failed at maximum jitter")


def log_marginal(D: Dataset, theta: Hyperparams) -> float:
    """Log marginal likelihood of the exact GP."""
    if len(D) == 0:
        raise ValidationError("log_marginal requires a nonempty dataset")
    val, _ = _escalate(lambda j: _lml_value(theta.log_vector(), D.X, D.Y, j))
    return float(val)


def log_marginal_grad(D: Dataset, theta: Hyperparams) -> tuple[float, np.ndarray]:
    """Value and gradient w.r.t. [log sigma_f, log diag Lambda, log sigma_eps]."""
    (val, g), _ = _escalate(lambda j: _lml_grad(theta.log_vector(), D.X, D.Y, j))
    return float(val), np.asarray(g)


def vfe_cost(D: Dataset, X_M, theta: Hyperparams) -> float:
    """Titsias negative evidence lower bound for inducing inputs X_M."""
    X_M = np.atleast_2d(np.asarray(X_M, dtype=float))
    val, _ = _escalate(lambda j: _vfe_value(theta.log_vector(), X_M, D.X, D.Y, j))
    return float(val)


def vfe_grad(D: Dataset, X_M, theta: Hyperparams):
    """Value plus gradients w.r.t. hyperparameter logs and inducing coords."""
    X_M = np.atleast_2d(np.asarray(X_M, dtype=float))
    (val, (g_theta, g_xm)), _ = _escalate(
        lambda j: _vfe_grad(theta.log_vector(), X_M, D.X, D.Y, j))
    return float(val), np.asarray(g_theta), np.asarray(g_xm)


# ---------------------------------------------------------------------------
# Exact GP posterior
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GpPrediction:
    """Posterior mean and variance per query point."""

    mu: np.ndarray
    var: np.ndarray


def _chol_with_jitter(K, sigma_f2):
    jitter = JITTER_BASE
    while jitter <= JITTER_MAX:
        try:
            L = np.linalg.cholesky(K + jitter * sigma_f2 * np.eye(len(K)))
            return L, jitter
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise FactorizationError("posterior factorization failed at maximum jitter")


def posterior_full(D: Dataset, theta: Hyperparams, x_star) -> GpPrediction:
    """Exact GP posterior mean and variance at query points."""
    Xs = np.atleast_2d(np.asarray(x_star, dtype=float))
    if len(D) == 0:
        return GpPrediction(mu=np.zeros(len(Xs)),
                            var=np.full(len(Xs), theta.sigma_f ** 2))
    Ky = gram(D.X, D.X, theta) + theta.sigma_eps ** 2 * np.eye(len(D))
    L, _ = _chol_with_jitter(Ky, theta.sigma_f ** 2)
    Ks = gram(D.X, Xs, theta)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, D.Y))
    v = np.linalg.solve(L, Ks)
    mu = Ks.T @ alpha
    var = np.maximum(theta.sigma_f ** 2 - np.sum(v * v, axis=0), 0.0)
    return GpPrediction(mu=mu, var=var)


# ---------------------------------------------------------------------------
# Sparse GP model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SparseGpModel:
    """Trained sparse GP: hyperparameters, inducing inputs, cached factors.

    Caches are the Cholesky factor of K_MM, the factor of
    B = I + A A^T (with A = L^-1 K_MN / sigma_eps), and the mean weight
    vector, all computed against the most recent training set.
    """

    theta: Hyperparams
    X_M: np.ndarray
    L_mm: np.ndarray
    L_B: np.ndarray
    w_mean: np.ndarray
    seed: int | None = None
    meta: dict | None = None

    @property
    def M(self) -> int:
        return len(self.X_M)


def fit_caches(theta: Hyperparams, X_M, D: Dataset, seed=None,
               meta=None) -> SparseGpModel:
    """Compute prediction caches of a sparse model against a training set."""
    X_M = np.atleast_2d(np.asarray(X_M, dtype=float))
    m = len(X_M)
    se = theta.sigma_eps
    Kmm = gram(X_M, X_M, theta)
    L, _ = _chol_with_jitter(Kmm, theta.sigma_f ** 2)
    Kmn = gram(X_M, D.X, theta)
    A = np.linalg.solve(L, Kmn) / se
    B = np.eye(m) + A @ A.T
    LB = np.linalg.cholesky(B)
    # w solves (K_MM + se^-2 K_MN K_NM) w = se^-2 K_MN Y, via L LB LB^T L^T.
    rhs = Kmn @ D.Y / se ** 2
    tmp = np.linalg.solve(L, rhs)
    tmp = np.linalg.solve(LB, tmp)
    tmp = np.linalg.solve(LB.T, tmp)
    w = np.linalg.solve(L.T, tmp)
    return SparseGpModel(theta=theta, X_M=X_M, L_mm=L, L_B=LB, w_mean=w,
                         seed=seed, meta=meta)


def posterior_sparse(model: SparseGpModel, x_star) -> GpPrediction:
    """Sparse (Nystrom-projected) posterior mean and variance at queries."""
    Xs = np.atleast_2d(np.asarray(x_star, dtype=float))
    Km = gram(model.X_M, Xs, model.theta)
    mu = Km.T @ model.w_mean
    v1 = np.linalg.solve(model.L_mm, Km)
    v2 = np.linalg.solve(model.L_B, v1)
    var = model.theta.sigma_f ** 2 - np.sum(v1 * v1, axis=0) + np.sum(v2 * v2, axis=0)
    return GpPrediction(mu=mu, var=np.maximum(var, 0.0))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _descend(fun_grad, z0, max_iter, step0=0.1, tol=1e-8):
    """Monotone backtracking gradient descent; returns the best iterate.

    Trial points where the objective cannot be evaluated (factorization
    failure even at maximum jitter) count as rejected steps.
    """

    def attempt(z):
        try:
            return fun_grad(z)
        except FactorizationError:
            return np.inf, None

    z = np.asarray(z0, dtype=float)
    f, g = fun_grad(z)
    step = step0
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm < tol:
            break
        accepted = False
        for _ in range(30):
            z_try = z - step * g
            f_try, g_try = attempt(z_try)
            if np.isfinite(f_try) and f_try <= f - 1e-4 * step * gnorm ** 2:
                z, f, g = z_try, f_try, g_try
                step = min(step * 2.0, 1e3)
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return z, f


def _minimize(fun_grad, z0, max_iter, bounds=None):
    """Quasi-Newton minimization; failed evaluations count as +inf."""
    best = {"z": np.asarray(z0, dtype=float), "f": np.inf}

    def fg(z):
        try:
            f, g = fun_grad(z)
        except FactorizationError:
            return np.inf, np.zeros_like(z)
        if np.isfinite(f) and f < best["f"]:
            best["z"], best["f"] = np.asarray(z, dtype=float).copy(), f
        return f, g

    from scipy.optimize import minimize
    res = minimize(fg, np.asarray(z0, dtype=float), jac=True,
                   method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": max_iter})
    if np.isfinite(res.fun) and res.fun <= best["f"]:
        return np.asarray(res.x), float(res.fun)
    if not np.isfinite(best["f"]):
        raise NumericError("hyperparameter optimization failed everywhere")
    return best["z"], best["f"]


def _theta_bounds(X, Y) -> list:
    """Box on log-hyperparameters acting as a smoothness / noise prior.

    Lengthscales are kept between a fifth and ten times the data span per
    dimension; shorter scales overfit quasi-periodic driving data and make
    the predictive caches ill-conditioned under the recursive updates.
    The noise floor absorbs the numerical-differentiation error of the
    residual outputs.
    """
    X = np.atleast_2d(X)
    span = np.maximum(X.max(axis=0) - X.min(axis=0), 1e-6)
    s_y = max(float(np.std(Y)), 1e-6)
    return ([(math.log(1e-3 * s_y), math.log(1e3 * s_y))]
            + [(2 * math.log(0.2 * sp), 2 * math.log(10.0 * sp))
               for sp in span]
            + [(math.log(0.2 * s_y), math.log(10.0 * s_y))])


def train_full(D: Dataset, theta0: Hyperparams | None = None,
               max_iter: int = 200) -> Hyperparams:
    """Maximize the log marginal likelihood over log-hyperparameters."""
    if len(D) == 0:
        raise ValidationError("train_full requires a nonempty dataset")
    if theta0 is None:
        theta0 = Hyperparams.initial_guess(D.X, D.Y)

    def fg(z):
        (val, g), _ = _escalate(lambda j: _lml_grad(jnp.asarray(z), D.X, D.Y, j))
        return -float(val), -np.asarray(g)

    z, _ = _minimize(fg, theta0.log_vector(), max_iter,
                     bounds=_theta_bounds(D.X, D.Y))
    return Hyperparams.from_log_vector(z)


def init_inducing(D: Dataset, M: int, seed: int = 0) -> np.ndarray:
    """Uniform random subset of the training inputs (recorded seed)."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(D), size=min(M, len(D)), replace=False)
    return D.X[np.sort(idx)].copy()


def train_sparse(D: Dataset, M: int, theta0: Hyperparams | None = None,
                 seed: int = 0, max_iter: int = 200) -> SparseGpModel:
    """Jointly minimize the VFE cost over hyperparameters and inducing inputs."""
    if not 1 <= M <= len(D):
        raise ValidationError(f"need 1 <= M <= N, got M={M}, N={len(D)}")
    if theta0 is None:
        theta0 = Hyperparams.initial_guess(D.X, D.Y)
    Xm0 = init_inducing(D, M, seed=seed)
    dim = D.X.shape[1]
    n_theta = dim + 2

    def fg(z):
        theta_log = jnp.asarray(z[:n_theta])
        Xm = jnp.asarray(z[n_theta:].reshape(M, dim))
        (val, (gt, gx)), _ = _escalate(
            lambda j: _vfe_grad(theta_log, Xm, D.X, D.Y, j))
        return float(val), np.concatenate([np.asarray(gt), np.asarray(gx).ravel()])

    lo_x, hi_x = D.X.min(axis=0), D.X.max(axis=0)
    pad = 0.5 * np.maximum(hi_x - lo_x, 1e-6)
    xm_bounds = [(lo_x[j] - pad[j], hi_x[j] + pad[j])
                 for _ in range(M) for j in range(dim)]
    z0 = np.concatenate([theta0.log_vector(), Xm0.ravel()])
    z, cost = _minimize(fg, z0, max_iter,
                        bounds=_theta_bounds(D.X, D.Y) + xm_bounds)
    theta = Hyperparams.from_log_vector(z[:n_theta])
    Xm = z[n_theta:].reshape(M, dim)
    return fit_caches(theta, Xm, D, seed=seed,
                      meta={"n_train": len(D), "vfe_cost": float(cost)})


def rgb_update(model: SparseGpModel, batch: Dataset, alpha: float = 0.1,
               n_alpha: int = 5,
               update_hyperparams: bool = True) -> tuple[SparseGpModel, Dataset]:
    """Recursive gradient-based batch update of inducing points and theta.

    Builds the combined set of the current pseudo dataset (inducing inputs
    with their sparse-posterior means as outputs) and the incoming batch,
    then runs ``n_alpha`` fixed-rate gradient steps of the VFE cost on that
    set. Returns the refreshed model and the combined training set it was
    re-cached against.
    """
    if len(batch) == 0:
        raise ValidationError("rgb_update requires a nonempty batch")
    Y_m = posterior_sparse(model, model.X_M).mu
    d_hat = Dataset(model.X_M, Y_m).concat(batch)
    theta_log = model.theta.log_vector()
    Xm = model.X_M.copy()
    rejections = 0
    i = 0
    prev = None
    while i < n_alpha:
        try:
            (val, (gt, gx)), _ = _escalate(
                lambda j: _vfe_grad(jnp.asarray(theta_log), jnp.asarray(Xm),
                                    d_hat.X, d_hat.Y, j))
            gt, gx = np.asarray(gt), np.asarray(gx)
            ok = np.all(np.isfinite(gt)) and np.all(np.isfinite(gx))
        except FactorizationError:
            ok = False
        if not ok:
            # reject: undo the step that led here and retry at half rate
            rejections += 1
            alpha *= 0.5
            if rejections > 10:
                raise NumericError("rgb_update: 10 gradient rejections")
            if prev is not None:
                theta_log, Xm = prev
                i -= 1
            continue
        prev = (theta_log.copy(), Xm.copy())
        # clipped fixed-rate step: VFE gradients scale with N / sigma_eps^2,
        # so the joint step length is capped at alpha
        gnorm = math.sqrt(float(np.sum(gx ** 2))
                          + (float(np.sum(gt ** 2)) if update_hyperparams
                             else 0.0))
        scale = alpha / max(1.0, gnorm)
        if update_hyperparams:
            theta_log = theta_log - scale * gt
        Xm = Xm - scale * gx
        i += 1
    theta = Hyperparams.from_log_vector(theta_log)
    new_model = fit_caches(theta, Xm, d_hat, seed=model.seed, meta=model.meta)
    return new_model, d_hat


# ---------------------------------------------------------------------------
# Residual dataset construction
# ---------------------------------------------------------------------------

def _central_diff(y: np.ndarray, dt: float) -> np.ndarray:
    dy = np.empty_like(y)
    dy[1:-1] = (y[2:] - y[:-2]) / (2.0 * dt)
    dy[0] = (y[1] - y[0]) / dt
    dy[-1] = (y[-1] - y[-2]) / dt
    return dy


def _moving_average(y: np.ndarray, width: int = 5) -> np.ndarray:
    pad = width // 2
    padded = np.concatenate([np.repeat(y[0], pad), y, np.repeat(y[-1], pad)])
    kernel = np.ones(width) / width
    return np.convolve(padded, kernel, mode="valid")


def build_datasets(log: dict, p: dynamics.VehicleParams,
                   dt_sample: float | None = None,
                   prefilter: bool = False) -> tuple[Dataset, Dataset]:
    """Residual datasets (longitudinal, lateral) from a uniform closed-loop log.

    The log dict needs keys t, theta_e, vx, vy, omega, d, delta, kappa.
    Outputs are the measured accelerations (by central differences) minus
    the decoupled nominal models' predictions; inputs are [vx, vy, omega].
    """
    required = ("t", "theta_e", "vx", "vy", "omega", "d", "delta", "kappa")
    missing = [k for k in required if k not in log]
    if missing:
        raise ValidationError(f"log missing keys: {missing}")
    t = np.asarray(log["t"], dtype=float)
    if len(t) < 3:
        raise ValidationError("log too short for central differences")
    if dt_sample is None:
        dt_sample = float(t[1] - t[0])
    steps = np.diff(t)
    if np.any(np.abs(steps - dt_sample) > 1e-6 * max(1.0, dt_sample)):
        raise ValidationError("log must be uniformly sampled")

    vx = np.asarray(log["vx"], dtype=float)
    vy = np.asarray(log["vy"], dtype=float)
    om = np.asarray(log["omega"], dtype=float)
    if prefilter:
        vx, vy, om = (_moving_average(v) for v in (vx, vy, om))
    th = np.asarray(log["theta_e"], dtype=float)
    d_in = np.asarray(log["d"], dtype=float)
    delta = np.asarray(log["delta"], dtype=float)
    kappa = np.asarray(log["kappa"], dtype=float)

    dvx = _central_diff(vx, dt_sample)
    de_s = vx * np.sin(th) + vy * np.cos(th)
    dde_s = _central_diff(de_s, dt_sample)

    g = (1.0 + np.cos(delta)) / p.m
    y_lo = dvx - (-p.C_m2 * g * vx + p.C_m1 * g * d_in - p.C_m3 * g)

    b_k3 = (p.l_r * p.C_r - p.l_f * p.C_f) / p.m - 1.0
    vx_safe = np.maximum(vx, dynamics.V_MIN_MODEL)
    y_la = dde_s - (-(p.C_f + p.C_r) / (p.m * vx_safe) * de_s
                    + p.C_f / p.m * delta + b_k3 * kappa)

    Z = np.column_stack([vx, vy, om])
    return Dataset(Z, y_lo), Dataset(Z, y_la)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_model(model: SparseGpModel, path) -> None:
    payload = {
        "sigma_f": model.theta.sigma_f,
        "lam": model.theta.lam.tolist(),
        "sigma_eps": model.theta.sigma_eps,
        "X_M": model.X_M.tolist(),
        "seed": model.seed,
        "meta": model.meta,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def load_model(path, D: Dataset) -> SparseGpModel:
    """Load hyperparameters/inducing inputs and re-cache against a dataset."""
    with open(path) as fh:
        payload = json.load(fh)
    theta = Hyperparams(sigma_f=payload["sigma_f"], lam=np.asarray(payload["lam"]),
                        sigma_eps=payload["sigma_eps"])
    return fit_caches(theta, np.asarray(payload["X_M"]), D,
                      seed=payload.get("seed"), meta=payload.get("meta"))
