"""Gain synthesis and control laws for the decoupled tracking loops.

LPV-LQR gains come from a sampled-LMI convex program: maximize trace(X)
subject to X positive definite and a quadratic-performance block inequality
at every scheduling grid point, with polynomial gain variables
Y(rho) = sum_i Y_i rho^i and K(rho) = Y(rho) X^-1. On top of the gains sit
the feedforward/feedback nominal laws, the residual-model compensator, and
the per-step composition with velocity governor and integral action.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import dynamics, gp
from .dynamics import DELTA_MAX, ControlInput, CurvilinearState, VehicleParams
from .errors import InfeasibleError, ValidationError
from .sdp import SdpBlock, SdpProblem, check_certificate, solve

#: Governor gain on the progress error [1/s].
K_V_DEFAULT = 0.1
#: Anti-windup clamp on the lateral integral state [m s].
Q_MAX = 2.0
#: Default polynomial degree of Y(rho).
GAIN_DEGREE = 2
#: Default scheduling grids.
VX_GRID = np.linspace(0.3, 2.5, 15)
DELTA_GRID = np.linspace(-0.5, 0.5, 15)
#: Default weights per loop.
Q_LO, R_LO = np.array([[1.0]]), np.array([[100.0]])
Q_LA, R_LA = np.diag([1.0, 80.0, 0.0]), np.array([[500.0]])


@dataclass(frozen=True)
class LpvGains:
    """Polynomial state-feedback gains of one loop.

    ``Y`` stacks the coefficient matrices Y_0..Y_degree; the realized gain
    is K(rho) = Y(rho) X^-1 with X shared across the scheduling range.
    """

    Y: np.ndarray
    X: np.ndarray
    degree: int
    rho_min: float
    rho_max: float
    grid: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    X_inv: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if not np.allclose(X, X.T):
            raise ValidationError("X must be symmetric")
        if np.linalg.eigvalsh(X)[0] <= 0:
            raise ValidationError("X must be positive definite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", np.asarray(self.Y, dtype=float))
        object.__setattr__(self, "X_inv", np.linalg.inv(X))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.Y.shape[1]


def gain_eval(gains: LpvGains, rho: float) -> np.ndarray:
    """K(rho): polynomial evaluation then right-multiplication by X^-1."""
    if not gains.rho_min <= rho <= gains.rho_max:
        warnings.warn(f"scheduling value {rho:.3g} outside "
                      f"[{gains.rho_min:.3g}, {gains.rho_max:.3g}], clamped")
        rho = min(max(rho, gains.rho_min), gains.rho_max)
    Y = sum(gains.Y[i] * rho ** i for i in range(gains.degree + 1))
    return Y @ gains.X_inv


def _sym_basis(n: int) -> np.ndarray:
    """Basis of symmetric n x n matrices (unit diagonal, mirrored off-diag)."""
    mats = []
    for i in range(n):
        for j in range(i, n):
            M = np.zeros((n, n))
            M[i, j] = M[j, i] = 1.0
            mats.append(M)
    return np.array(mats)


def _perf_block(A, B, QS, RS, rho, degree, E_x, n, m):
    """Affine coefficients of the quadratic-performance LMI at one grid point.

    Block layout: [[-He(A X + B Y(rho)), (QS X + RS Y(rho))^T],
                   [QS X + RS Y(rho),     I]].
    """
    k = 2 * n + m
    n_x = len(E_x)
    n_y = (degree + 1) * m * n
    F0 = np.zeros((k, k))
    F0[n:, n:] = np.eye(n + m)
    Fi = np.zeros((n_x + n_y, k, k))
    for idx, Ex in enumerate(E_x):
        top = -(A @ Ex + Ex @ A.T)
        low = QS @ Ex
        Fi[idx, :n, :n] = top
        Fi[idx, n:, :n] = low
        Fi[idx, :n, n:] = low.T
    powers = [rho ** i for i in range(degree + 1)]
    for i in range(degree + 1):
        for r in range(m):
            for c in range(n):
                Ey = np.zeros((m, n))
                Ey[r, c] = powers[i]
                idx = n_x + (i * m + r) * n + c
                top = -(B @ Ey + (B @ Ey).T)
                low = RS @ Ey
                Fi[idx, :n, :n] = top
                Fi[idx, n:, :n] = low
                Fi[idx, :n, n:] = low.T
    return SdpBlock(F0=F0, Fi=Fi)


def lpv_lqr_synth(model, grid, Q, R, degree: int = GAIN_DEGREE) -> LpvGains:
    """Synthesize LPV-LQR gains over a scheduling grid.

    ``model`` maps a scheduling value rho to the pair (A, B). Solves
    max trace(X) subject to X > 0 and the performance block inequality at
    every grid point, then checks frozen-parameter stability.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if len(grid) == 0:
        raise ValidationError("scheduling grid is empty")
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if np.linalg.eigvalsh(Q)[0] < -1e-12:
        raise ValidationError("Q must be positive semidefinite")
    if np.linalg.eigvalsh(R)[0] <= 0:
        raise ValidationError("R must be positive definite")

    A0, B0 = model(grid[0])
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    B0 = np.asarray(B0, dtype=float).reshape(A0.shape[0], -1)
    n, m = A0.shape[0], B0.shape[1]
    QS = np.vstack([_psd_sqrt(Q), np.zeros((m, n))])
    RS = np.vstack([np.zeros((n, m)), _psd_sqrt(R)])
    E_x = _sym_basis(n)
    n_x = len(E_x)
    n_var = n_x + (degree + 1) * m * n

    blocks = [SdpBlock(F0=np.zeros((n, n)),
                       Fi=np.concatenate(
                           [E_x, np.zeros((n_var - n_x, n, n))], axis=0))]
    for rho in grid:
        A, B = model(rho)
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float).reshape(n, m)
        blocks.append(_perf_block(A, B, QS, RS, rho, degree, E_x, n, m))

    c = np.zeros(n_var)
    for idx, Ex in enumerate(E_x):
        c[idx] = -np.trace(Ex)
    problem = SdpProblem(c=c, blocks=tuple(blocks))
    try:
        sol = solve(problem)
    except InfeasibleError:
        raise InfeasibleError(
            f"LMI infeasible; first violating grid point: {_first_violation(model, grid, Q, R, degree):.4g}")

    X = sum(sol.x[i] * E_x[i] for i in range(n_x))
    Y = np.zeros((degree + 1, m, n))
    for i in range(degree + 1):
        for r in range(m):
            for c_ in range(n):
                Y[i, r, c_] = sol.x[n_x + (i * m + r) * n + c_]
    gains = LpvGains(Y=Y, X=X, degree=degree, rho_min=float(grid.min()),
                     rho_max=float(grid.max()), grid=grid, Q=Q, R=R)
    if not check_certificate(problem, sol.x, tol=1e-6):
        raise InfeasibleError("synthesis certificate residual check failed")
    for rho in grid:
        A, B = model(rho)
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float).reshape(n, m)
        K = gain_eval(gains, rho)
        if np.max(np.linalg.eigvals(A + B @ K).real) >= 0:
            raise InfeasibleError(f"closed loop unstable at grid point {rho:.4g}")
    return gains


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(M)
    return V @ np.diag(np.sqrt(np.maximum(w, 0.0))) @ V.T


def _first_violation(model, grid, Q, R, degree) -> float:
    for rho in grid:
        try:
            lpv_lqr_synth(model, [rho], Q, R, degree=0)
        except InfeasibleError:
            return float(rho)
    return float(grid[0])


def save_gains(gains: LpvGains, path) -> None:
    payload = {
        "Y": gains.Y.tolist(), "X": gains.X.tolist(), "degree": gains.degree,
        "rho_min": gains.rho_min, "rho_max": gains.rho_max,
        "grid": gains.grid.tolist(), "Q": gains.Q.tolist(), "R": gains.R.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def load_gains(path) -> LpvGains:
    with open(path) as fh:
        d = json.load(fh)
    return LpvGains(Y=np.asarray(d["Y"]), X=np.asarray(d["X"]),
                    degree=d["degree"], rho_min=d["rho_min"],
                    rho_max=d["rho_max"], grid=np.asarray(d["grid"]),
                    Q=np.asarray(d["Q"]), R=np.asarray(d["R"]))


def synth_default_gains(p: VehicleParams,
                        degree: int = GAIN_DEGREE) -> tuple[LpvGains, LpvGains]:
    """Longitudinal and lateral gains with the default grids and weights."""

    def lo_model(delta):
        a, b, _ = dynamics.longitudinal_matrices(delta, p)
        return np.array([[a]]), np.array([[b]])

    def la_model(v_x):
        a, b, _, _ = dynamics.lateral_matrices(v_x, p)
        return a, b.reshape(3, 1)

    gains_lo = lpv_lqr_synth(lo_model, DELTA_GRID, Q_LO, R_LO, degree=degree)
    gains_la = lpv_lqr_synth(la_model, VX_GRID, Q_LA, R_LA, degree=degree)
    return gains_lo, gains_la


# ---------------------------------------------------------------------------
# Control laws
# ---------------------------------------------------------------------------

def velocity_governor(s: float, s_ref: float, v_ref: float,
                      k_v: float = K_V_DEFAULT) -> float:
    """Position-adjusted virtual reference velocity."""
    return v_ref - k_v * (s - s_ref)


def nominal_control(chi_la, theta_e: float, kappa: float, v_x: float,
                    delta_prev: float, v_r: float, gains_lo: LpvGains,
                    gains_la: LpvGains, p: VehicleParams) -> tuple[float, float]:
    """Nominal steering and duty commands (unsaturated).

    Longitudinal feedforward holds v_x = v_r as an exact equilibrium of the
    scalar scheduled model: d_ff = -(A_lo v_r + w_0) / B_lo.
    """
    chi_la = np.asarray(chi_la, dtype=float)
    k_la = gain_eval(gains_la, v_x)[0]
    _, b_la3, b_k3 = _lateral_scalars(p)
    delta_nom = float(k_la @ chi_la) - theta_e - (b_k3 / b_la3) * kappa
    a_lo, b_lo, w_0 = dynamics.longitudinal_matrices(delta_prev, p)
    k_lo = float(gain_eval(gains_lo, delta_prev)[0, 0])
    d_nom = k_lo * (v_x - v_r) - (a_lo * v_r + w_0) / b_lo
    return delta_nom, d_nom


def _lateral_scalars(p: VehicleParams) -> tuple[float, float, float]:
    """(pseudo-inverse of B_la, its last entry, B_kappa last entry)."""
    b_la3 = p.C_f / p.m
    b_k3 = (p.l_r * p.C_r - p.l_f * p.C_f) / p.m - 1.0
    return 1.0 / b_la3, b_la3, b_k3


@dataclass(frozen=True)
class GpModels:
    """Trained residual models of the two loops."""

    lo: gp.SparseGpModel
    la: gp.SparseGpModel


def gp_compensator(z, models: GpModels, delta: float,
                   p: VehicleParams) -> tuple[float, float]:
    """Compensatory inputs from the residual model means.

    Returns the magnitudes d_GP = mu_lo / B_lo and
    delta_GP = (m / C_f) mu_la; control_step subtracts both from the
    nominal commands so the residual cancels in the augmented model.
    """
    z = np.asarray(z, dtype=float).reshape(1, -1)
    _, b_lo, _ = dynamics.longitudinal_matrices(delta, p)
    if abs(b_lo) < 1e-12:
        raise ValidationError("B_lo vanished; steering out of range")
    mu_lo = float(gp.posterior_sparse(models.lo, z).mu[0])
    mu_la = float(gp.posterior_sparse(models.la, z).mu[0])
    return mu_lo / b_lo, (p.m / p.C_f) * mu_la


@dataclass
class ControllerState:
    """Mutable per-loop record: integrator, scheduling delay, governor."""

    k_v: float = K_V_DEFAULT
    q: float = 0.0
    delta_prev: float = 0.0
    v_r: float = 0.0


def control_step(state: CurvilinearState, s_ref: float, v_ref: float,
                 kappa: float, gains_lo: LpvGains, gains_la: LpvGains,
                 ctrl: ControllerState, p: VehicleParams,
                 models: GpModels | None = None,
                 dt: float = dynamics.CONTROL_DT) -> ControlInput:
    """One control period: governor, nominal laws, compensation, saturation.

    Advances the integral state q by e_s dt with an anti-windup clamp and
    records the saturated steering output for next-period scheduling.
    """
    v_r = velocity_governor(state.s, s_ref, v_ref, ctrl.k_v)
    de_s = state.v_x * math.sin(state.theta_e) + state.v_y * math.cos(state.theta_e)
    chi_la = np.array([ctrl.q, state.e_s, de_s])
    delta_nom, d_nom = nominal_control(chi_la, state.theta_e, kappa, state.v_x,
                                       ctrl.delta_prev, v_r, gains_lo, gains_la, p)
    d_cmd, delta_cmd = d_nom, delta_nom
    if models is not None:
        z = [state.v_x, state.v_y, state.omega]
        d_gp, delta_gp = gp_compensator(z, models, ctrl.delta_prev, p)
        d_cmd -= d_gp
        delta_cmd -= delta_gp
    u = ControlInput(d=d_cmd, delta=delta_cmd)
    if u.is_saturated():
        warnings.warn("control saturation engaged")
    u = u.saturated()
    ctrl.q = min(max(ctrl.q + state.e_s * dt, -Q_MAX), Q_MAX)
    ctrl.delta_prev = u.delta
    ctrl.v_r = v_r
    return u
