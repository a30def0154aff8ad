"""Experiment design by variance-accumulating rollouts and Bayesian optimization.

A candidate trajectory is scored by simulating the nominal closed loop
along it and summing the exact-GP predictive variances of both residual
models at every visited velocity point, with the conditioning set growing
by each visited point (incremental Cholesky). A GP-surrogate Bayesian
optimizer searches the trajectory-parameter box for the most informative
candidate, which is then executed on the true plant and fed to the
recursive model updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import norm, qmc

from . import control, gp, simulate, track
from .dynamics import VehicleParams
from .errors import NumericError, ValidationError


class GrowingVariance:
    """Exact GP predictive variance with a growing conditioning set.

    Appending a point costs one triangular solve (rank-one Cholesky
    extension); querying costs one triangular solve against the current
    factor.
    """

    def __init__(self, theta: gp.Hyperparams, X0=None, capacity: int = 4096):
        self.theta = theta
        self.n = 0
        self._L = np.zeros((capacity, capacity))
        self._X = np.zeros((capacity, theta.dim))
        if X0 is not None and len(X0):
            for x in np.atleast_2d(X0):
                self.append(x)

    def _grow(self):
        cap = 2 * len(self._L)
        L = np.zeros((cap, cap))
        X = np.zeros((cap, self.theta.dim))
        L[:self.n, :self.n] = self._L[:self.n, :self.n]
        X[:self.n] = self._X[:self.n]
        self._L, self._X = L, X

    def variance(self, z) -> float:
        """Posterior variance at z given the current set (prior if empty)."""
        sf2 = self.theta.sigma_f ** 2
        if self.n == 0:
            return sf2
        k = gp.gram(self._X[:self.n], np.atleast_2d(z), self.theta)[:, 0]
        w = solve_triangular(self._L[:self.n, :self.n], k, lower=True,
                             check_finite=False)
        return max(sf2 - float(w @ w), 0.0)

    def append(self, z) -> None:
        if self.n == len(self._L):
            self._grow()
        z = np.asarray(z, dtype=float)
        sf2 = self.theta.sigma_f ** 2
        se2 = self.theta.sigma_eps ** 2
        n = self.n
        if n:
            k = gp.gram(self._X[:n], z[None, :], self.theta)[:, 0]
            w = solve_triangular(self._L[:n, :n], k, lower=True,
                                 check_finite=False)
            self._L[n, :n] = w
            d2 = sf2 + se2 - float(w @ w)
        else:
            d2 = sf2 + se2
        if d2 <= 0:
            raise NumericError("growing Cholesky lost positive definiteness")
        self._L[n, n] = math.sqrt(d2)
        self._X[n] = z
        self.n = n + 1


@dataclass
class RolloutConfig:
    """Settings of the variance-accumulating nominal rollout."""

    theta_lo: gp.Hyperparams
    theta_la: gp.Hyperparams
    gains_lo: control.LpvGains
    gains_la: control.LpvGains
    p: VehicleParams
    X_lo: np.ndarray | None = None
    X_la: np.ndarray | None = None
    models: control.GpModels | None = None
    dt: float = 1.0 / 15.0
    duration: float | None = None
    max_conditioning: int = 600

    def __post_init__(self):
        if self.dt <= 0:
            raise ValidationError("rollout dt must be positive")


def _thin(X, cap):
    if X is None or len(X) <= cap:
        return X
    idx = np.linspace(0, len(X) - 1, cap).astype(int)
    return np.asarray(X)[idx]


@dataclass(frozen=True)
class VarianceRollout:
    J: float
    diverged: bool
    n_steps: int


def rollout_variance(traj: track.Trajectory, cfg: RolloutConfig) -> VarianceRollout:
    """Accumulated predictive variance of both residual models along a rollout.

    Simulates the nominal closed loop along the trajectory; at each step the
    variance at the visited velocity point is added and the point joins the
    conditioning set. Divergent rollouts return the partial sum with a flag.
    """
    ro = simulate.run_nominal_rollout(traj, cfg.p, cfg.gains_lo, cfg.gains_la,
                                      models=cfg.models, duration=cfg.duration,
                                      dt=cfg.dt)
    cap = cfg.max_conditioning
    gv_lo = GrowingVariance(cfg.theta_lo, _thin(cfg.X_lo, cap))
    gv_la = GrowingVariance(cfg.theta_la, _thin(cfg.X_la, cap))
    J = 0.0
    for z in ro.z:
        J += gv_lo.variance(z) + gv_la.variance(z)
        gv_lo.append(z)
        gv_la.append(z)
    return VarianceRollout(J=float(J), diverged=ro.diverged, n_steps=ro.n_steps)


# ---------------------------------------------------------------------------
# Bayesian optimization over trajectory parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoConfig:
    """Expected-improvement optimizer settings."""

    n_init: int = 25
    n_iter: int = 20
    seed: int = 0
    jitter: float = 0.01
    refit_every: int = 5
    n_candidates: int = 2000


@dataclass
class BoState:
    """Evaluated parameter vectors (unit box), objective values, best index."""

    X: np.ndarray
    J: np.ndarray

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.J))

    @property
    def best_value(self) -> float:
        return float(self.J[self.best_index])


def _expected_improvement(mu, var, best, jitter):
    sd = np.sqrt(np.maximum(var, 1e-12))
    gain = mu - best - jitter
    u = gain / sd
    return gain * norm.cdf(u) + sd * norm.pdf(u)


def propose_trajectory(base: track.Trajectory, params: track.TrajectoryParams,
                       cfg: RolloutConfig, bo: BoConfig = BoConfig()
                       ) -> tuple[track.TrajectoryParams, float, BoState]:
    """Search the (W, V) box for the highest-variance candidate trajectory.

    ``params`` supplies the node locations and box bounds; its W, V entries
    are ignored. Returns the best parameters, their objective value, and
    the optimizer trace.
    """
    n = len(params.s_nodes)
    dim = 2 * n
    half = 0.5 * params.w_b
    lo = np.concatenate([np.full(n, -half), np.full(n, params.v_min)])
    hi = np.concatenate([np.full(n, half), np.full(n, params.v_max)])

    def evaluate(u):
        vec = lo + u * (hi - lo)
        cand = replace(params, W=vec[:n], V=vec[n:])
        traj = track.perturb_trajectory(base, cand)
        return rollout_variance(traj, cfg)

    sampler = qmc.LatinHypercube(d=dim, seed=bo.seed)
    U = sampler.random(bo.n_init)
    results = [evaluate(u) for u in U]
    J = np.array([r.J for r in results])
    if all(r.diverged for r in results) and np.all(J == 0.0):
        raise NumericError("all initial rollouts diverged with empty sums")

    rng = np.random.default_rng(bo.seed + 1)
    theta_s = None
    Xe, Je = list(U), list(J)
    for it in range(bo.n_iter):
        Xa = np.asarray(Xe)
        Ja = np.asarray(Je)
        mu_j, sd_j = float(np.mean(Ja)), float(np.std(Ja)) or 1.0
        D = gp.Dataset(Xa, (Ja - mu_j) / sd_j)
        if theta_s is None or it % bo.refit_every == 0:
            theta_s = gp.train_full(D, max_iter=60)
        cand = rng.random((bo.n_candidates, dim))
        pred = gp.posterior_full(D, theta_s, cand)
        ei = _expected_improvement(pred.mu, pred.var,
                                   float(np.max(D.Y)), bo.jitter)
        u_next = cand[int(np.argmax(ei))]
        r = evaluate(u_next)
        Xe.append(u_next)
        Je.append(r.J)

    state = BoState(X=np.asarray(Xe), J=np.asarray(Je))
    u_best = state.X[state.best_index]
    vec = lo + u_best * (hi - lo)
    best = replace(params, W=vec[:n], V=vec[n:])
    return best, state.best_value, state


def save_bo_trace(state: BoState, path) -> None:
    dim = state.X.shape[1]
    header = ",".join(["eval_index", "J"] + [f"p{i}" for i in range(dim)])
    rows = np.column_stack([np.arange(len(state.J)), state.J, state.X])
    np.savetxt(path, rows, delimiter=",", header=header, comments="",
               fmt="%.10g")


# ---------------------------------------------------------------------------
# Active-learning outer loop
# ---------------------------------------------------------------------------

@dataclass
class RoundResult:
    models: control.GpModels
    executed: track.Trajectory
    J_best: float
    bo_state: BoState
    raw_lo: gp.Dataset
    raw_la: gp.Dataset


def active_learning_round(models: control.GpModels, base: track.Trajectory,
                          params: track.TrajectoryParams, cfg: RolloutConfig,
                          plant: simulate.PlantSpec,
                          bo: BoConfig = BoConfig(),
                          adapt: simulate.AdaptConfig = simulate.AdaptConfig(),
                          raw_lo: gp.Dataset | None = None,
                          raw_la: gp.Dataset | None = None) -> RoundResult:
    """One experiment-design round.

    Proposes the most informative trajectory, executes it on the true
    plant, then feeds the residual batches through the recursive model
    updates and extends the raw datasets.
    """
    cfg = replace(cfg, models=models,
                  X_lo=None if raw_lo is None else raw_lo.X,
                  X_la=None if raw_la is None else raw_la.X)
    best, J_best, state = propose_trajectory(base, params, cfg, bo)
    executed = track.perturb_trajectory(base, best)
    res = simulate.run_closed_loop(executed, plant, cfg.gains_lo, cfg.gains_la,
                                   cfg.p, models=models)
    d_lo, d_la = gp.build_datasets(res.log, cfg.p)
    for start in range(0, len(d_lo) - adapt.Z + 1, adapt.Z):
        sl = slice(start, start + adapt.Z)
        lo, _ = gp.rgb_update(models.lo, gp.Dataset(d_lo.X[sl], d_lo.Y[sl]),
                              alpha=adapt.alpha, n_alpha=adapt.n_alpha,
                              update_hyperparams=adapt.update_hyperparams)
        la, _ = gp.rgb_update(models.la, gp.Dataset(d_la.X[sl], d_la.Y[sl]),
                              alpha=adapt.alpha, n_alpha=adapt.n_alpha,
                              update_hyperparams=adapt.update_hyperparams)
        models = control.GpModels(lo=lo, la=la)
    raw_lo = d_lo if raw_lo is None else raw_lo.concat(d_lo)
    raw_la = d_la if raw_la is None else raw_la.concat(d_la)
    return RoundResult(models=models, executed=executed, J_best=J_best,
                       bo_state=state, raw_lo=raw_lo, raw_la=raw_la)
