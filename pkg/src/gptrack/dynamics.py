"""Continuous-time single-track vehicle models and fixed-step integration.

Provides the global-frame dynamic single-track model, its curvilinear
(path-relative) counterpart, the lumped drivetrain and linear tire force
sub-models, the decoupled LPV matrices used for control synthesis, and a
classical RK4 stepper.

All functions are pure; the dataclasses are frozen and safe to share.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NonFiniteStateError, SingularGeometryError, ValidationError

logger = logging.getLogger(__name__)

#: Speed floor used inside closed-loop rollouts instead of failing hard.
V_MIN_MODEL = 0.05

#: Default steering saturation [rad].
DELTA_MAX = 0.5

#: Control period [s] (60 Hz controller) and RK4 substeps per period.
CONTROL_DT = 1.0 / 60.0
RK4_SUBSTEPS = 4

_warned_vx_floor = False


def _vx_guard(v_x: float, strict: bool) -> float:
    """Return a usable longitudinal speed, clamping or raising at v_x <= 0."""
    global _warned_vx_floor
    if v_x >= V_MIN_MODEL:
        return v_x
    if strict:
        raise ValidationError(f"operation requires v_x > 0, got {v_x}")
    if not _warned_vx_floor:
        logger.warning("v_x=%.4f below model floor, clamping to %.2f", v_x, V_MIN_MODEL)
        _warned_vx_floor = True
    return V_MIN_MODEL


@dataclass(frozen=True)
class VehicleParams:
    """Physical parameters of the single-track model.

    Defaults follow a 1/10-scale electric car: the drivetrain/cornering/
    inertia values are the identified set [C_r, C_f, C_m1, C_m2, C_m3, I_z]
    = [35.12, 23.36, 37.98, 2.26, 0.79, 0.09], with m = 3.0 kg and
    l_f = l_r = 0.168 m as typical values for the platform class.
    """

    m: float = 3.0
    I_z: float = 0.09
    l_f: float = 0.168
    l_r: float = 0.168
    C_m1: float = 37.98
    C_m2: float = 2.26
    C_m3: float = 0.79
    C_f: float = 23.36
    C_r: float = 35.12

    def __post_init__(self):
        strictly_positive = {
            "m": self.m, "I_z": self.I_z, "l_f": self.l_f, "l_r": self.l_r,
            "C_m1": self.C_m1, "C_m2": self.C_m2, "C_f": self.C_f, "C_r": self.C_r,
        }
        for name, value in strictly_positive.items():
            if not (value > 0 and math.isfinite(value)):
                raise ValidationError(f"VehicleParams.{name} must be > 0, got {value}")
        if not (self.C_m3 >= 0 and math.isfinite(self.C_m3)):
            raise ValidationError(f"VehicleParams.C_m3 must be >= 0, got {self.C_m3}")
        if not self.l_f + self.l_r > 0:
            raise ValidationError("wheelbase l_f + l_r must be positive")

    def with_overrides(self, **kwargs) -> "VehicleParams":
        return replace(self, **kwargs)

    @property
    def xi(self) -> np.ndarray:
        """Uncertain-parameter vector [C_r, C_f, C_m1, C_m2, C_m3, I_z]."""
        return np.array([self.C_r, self.C_f, self.C_m1, self.C_m2, self.C_m3, self.I_z])

    def with_xi(self, xi) -> "VehicleParams":
        c_r, c_f, c_m1, c_m2, c_m3, i_z = (float(v) for v in xi)
        return replace(self, C_r=c_r, C_f=c_f, C_m1=c_m1, C_m2=c_m2, C_m3=c_m3, I_z=i_z)


@dataclass(frozen=True)
class PoseState:
    """Global-frame state: position, heading, body-frame velocities, yaw rate."""

    p_x: float
    p_y: float
    phi: float
    v_x: float
    v_y: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p_x, self.p_y, self.phi, self.v_x, self.v_y, self.omega])

    @staticmethod
    def from_array(x) -> "PoseState":
        return PoseState(*(float(v) for v in x))


@dataclass(frozen=True)
class CurvilinearState:
    """Path-relative state: progress, lateral deviation, heading error, velocities."""

    s: float
    e_s: float
    theta_e: float
    v_x: float
    v_y: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.e_s, self.theta_e, self.v_x, self.v_y, self.omega])

    @staticmethod
    def from_array(x) -> "CurvilinearState":
        return CurvilinearState(*(float(v) for v in x))


@dataclass(frozen=True)
class ControlInput:
    """Motor duty d in [0, 1] and steering angle delta in [-delta_max, delta_max]."""

    d: float
    delta: float

    def saturated(self, delta_max: float = DELTA_MAX) -> "ControlInput":
        return ControlInput(
            d=min(max(self.d, 0.0), 1.0),
            delta=min(max(self.delta, -delta_max), delta_max),
        )

    def is_saturated(self, delta_max: float = DELTA_MAX) -> bool:
        return not (0.0 <= self.d <= 1.0 and abs(self.delta) <= delta_max)


def drivetrain_force(d: float, v_x: float, p: VehicleParams) -> float:
    """Lumped drivetrain longitudinal force C_m1*d - C_m2*v_x - C_m3."""
    return p.C_m1 * d - p.C_m2 * v_x - p.C_m3


def tire_forces(state: PoseState, delta: float, p: VehicleParams,
                strict: bool = True) -> tuple[float, float]:
    """Rear and front lateral tire forces from the linear-arctan tire model."""
    v_x = _vx_guard(state.v_x, strict)
    f_ry = p.C_r * math.atan((-state.v_y + p.l_r * state.omega) / v_x)
    f_fy = p.C_f * math.atan(delta - (state.v_y + p.l_f * state.omega) / v_x)
    return f_ry, f_fy


def _velocity_derivs(v_x: float, v_y: float, omega: float, d: float, delta: float,
                     p: VehicleParams, strict: bool) -> tuple[float, float, float]:
    """Derivatives of (v_x, v_y, omega); the drive force enters as (1+cos d)F_x."""
    vx = _vx_guard(v_x, strict)
    f_x = drivetrain_force(d, vx, p)
    f_ry = p.C_r * math.atan((-v_y + p.l_r * omega) / vx)
    f_fy = p.C_f * math.atan(delta - (v_y + p.l_f * omega) / vx)
    cos_d, sin_d = math.cos(delta), math.sin(delta)
    dvx = ((1.0 + cos_d) * f_x - f_fy * sin_d) / p.m + v_y * omega
    dvy = (f_ry + f_x * sin_d + f_fy * cos_d) / p.m - vx * omega
    domega = (f_fy * p.l_f * cos_d + f_x * p.l_f * sin_d - f_ry * p.l_r) / p.I_z
    return dvx, dvy, domega


def single_track_deriv(state: PoseState, u: ControlInput, p: VehicleParams,
                       strict: bool = True) -> np.ndarray:
    """Six state derivatives of the global-frame single-track model."""
    dvx, dvy, domega = _velocity_derivs(
        state.v_x, state.v_y, state.omega, u.d, u.delta, p, strict)
    c, s = math.cos(state.phi), math.sin(state.phi)
    return np.array([
        state.v_x * c - state.v_y * s,
        state.v_x * s + state.v_y * c,
        state.omega,
        dvx,
        dvy,
        domega,
    ])


def curvilinear_deriv(state: CurvilinearState, u: ControlInput, p: VehicleParams,
                      kappa, strict: bool = True) -> np.ndarray:
    """Path-relative state derivatives.

    `kappa` is the path curvature at `state.s`, either as a number or as a
    callable kappa(s) (e.g. ``PathSpline.curvature``).
    """
    if callable(kappa):
        kappa = kappa(state.s)
    denom = 1.0 - kappa * state.e_s
    if abs(denom) < 1e-6:
        raise SingularGeometryError(
            f"curvilinear frame singular: 1 - kappa*e_s = {denom:.2e}")
    dvx, dvy, domega = _velocity_derivs(
        state.v_x, state.v_y, state.omega, u.d, u.delta, p, strict)
    cos_t, sin_t = math.cos(state.theta_e), math.sin(state.theta_e)
    s_dot = (state.v_x * cos_t - state.v_y * sin_t) / denom
    return np.array([
        s_dot,
        state.v_x * sin_t + state.v_y * cos_t,
        state.omega - kappa * s_dot,
        dvx,
        dvy,
        domega,
    ])


def longitudinal_matrices(delta: float, p: VehicleParams) -> tuple[float, float, float]:
    """Scalar LPV longitudinal model (A_lo, B_lo, w_0), scheduled by steering."""
    g = (1.0 + math.cos(delta)) / p.m
    return -p.C_m2 * g, p.C_m1 * g, -p.C_m3 * g


def lateral_matrices(v_x: float, p: VehicleParams,
                     strict: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Lateral LPV model (A_la, B_la, B_kappa, B_2) in [q, e_s, de_s] coordinates."""
    v_x = _vx_guard(v_x, strict)
    a_la = np.array([
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -(p.C_f + p.C_r) / (p.m * v_x)],
    ])
    b_la = np.array([0.0, 0.0, p.C_f / p.m])
    b_kappa = np.array([0.0, 0.0, (p.l_r * p.C_r - p.l_f * p.C_f) / p.m - 1.0])
    b_2 = np.array([
        [0.0, 0.0],
        [0.0, 0.0],
        [(p.C_r + p.C_f) / p.m,
         -(p.l_f ** 2 * p.C_f + p.l_r ** 2 * p.C_r) / (p.I_z * v_x)],
    ])
    return a_la, b_la, b_kappa, b_2


#: Residual input direction of the lateral GP augmentation.
B_GP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class DecoupledMatrices:
    """LPV matrices of the decoupled models plus the lumped disturbance terms."""

    A_lo: float
    B_lo: float
    w_0: float
    w_1: float
    A_la: np.ndarray
    B_la: np.ndarray
    B_kappa: np.ndarray
    B_2: np.ndarray
    w_2: np.ndarray


def decoupled_matrices(state: PoseState | CurvilinearState, u: ControlInput,
                       p: VehicleParams, kappa: float = 0.0,
                       theta_e: float | None = None,
                       strict: bool = True) -> DecoupledMatrices:
    """Evaluate both decoupled LPV models and their lumped terms at one state."""
    a_lo, b_lo, w_0 = longitudinal_matrices(u.delta, p)
    a_la, b_la, b_kappa, b_2 = lateral_matrices(state.v_x, p, strict=strict)
    pose = PoseState(0.0, 0.0, 0.0, state.v_x, state.v_y, state.omega)
    _, f_fy = tire_forces(pose, u.delta, p, strict=strict)
    w_1 = -f_fy * math.sin(u.delta) / p.m + state.v_y * state.omega
    if theta_e is None:
        theta_e = state.theta_e if isinstance(state, CurvilinearState) else 0.0
    denom = 1.0 - kappa * (state.e_s if isinstance(state, CurvilinearState) else 0.0)
    s_dot = (state.v_x * math.cos(theta_e) - state.v_y * math.sin(theta_e)) / denom
    dtheta_e = state.omega - kappa * s_dot
    return DecoupledMatrices(a_lo, b_lo, w_0, w_1, a_la, b_la, b_kappa, b_2,
                             np.array([theta_e, dtheta_e]))


def rk4_step(f, x: np.ndarray, u, dt: float) -> np.ndarray:
    """One classical RK4 step with the input held constant over the step."""
    if dt <= 0:
        raise ValidationError(f"rk4_step requires dt > 0, got {dt}")
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise NonFiniteStateError("non-finite state after RK4 step")
    return x_next
