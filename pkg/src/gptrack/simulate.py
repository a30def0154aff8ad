"""Closed-loop rollout engines.

Two simulators share the controller stack:

* ``run_closed_loop`` drives the global-frame single-track plant, possibly
  with perturbed parameters and a distorted steering map, at the fixed
  control rate with RK4 substeps, projecting onto the reference path each
  period and optionally running online residual-model updates.
* ``run_nominal_rollout`` drives the nominal curvilinear model along a
  trajectory without projection; it is the cheap predictive rollout used
  by experiment design.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import control, dynamics, gp, track
from .dynamics import (CONTROL_DT, RK4_SUBSTEPS, ControlInput, CurvilinearState,
                       PoseState, VehicleParams)
from .errors import ProjectionLostError, ValidationError

#: Divergence sanity box shared with the experiment-design rollouts.
E_S_MAX = 1.5
VX_BOX = (0.05, 4.0)


@dataclass(frozen=True)
class PlantSpec:
    """True plant: parameter vector plus the distorted steering map.

    The plant executes delta_hat = c_1 * delta + c_0 in place of the
    commanded steering angle.
    """

    p: VehicleParams
    c_1: float = 1.0
    c_0: float = 0.0

    def __post_init__(self):
        if self.c_1 <= 0:
            raise ValidationError("steering gain c_1 must be positive")

    def apply_steering(self, delta: float) -> float:
        return self.c_1 * delta + self.c_0


@dataclass(frozen=True)
class AdaptConfig:
    """Online update settings: batch size and gradient-step schedule.

    ``sample_stride`` thins the control-rate log before residual batches
    are assembled, so that one batch of Z points spans Z * stride control
    periods; consecutive 60 Hz samples are nearly coincident in the GP
    input space and would make the update ill-conditioned.
    """

    Z: int = 20
    n_alpha: int = 5
    alpha: float = 0.1
    update_hyperparams: bool = True
    sample_stride: int = 4

    def __post_init__(self):
        if self.Z < 1 or self.n_alpha < 0 or self.alpha < 0:
            raise ValidationError("invalid adaptation settings")
        if self.sample_stride < 1:
            raise ValidationError("sample_stride must be >= 1")


LOG_COLUMNS = ("t", "s", "s_ref", "e_s", "theta_e", "vx", "vy", "omega",
               "d", "delta", "v_ref", "v_r")


@dataclass
class SimResult:
    """Closed-loop log (column arrays), divergence flag, final models."""

    log: dict
    diverged: bool
    models: control.GpModels | None = None

    def __len__(self) -> int:
        return len(self.log["t"])


def write_log_csv(log: dict, path) -> None:
    """Write the fixed-schema control-rate log."""
    cols = [np.asarray(log[k], dtype=float) for k in LOG_COLUMNS]
    np.savetxt(path, np.column_stack(cols), delimiter=",",
               header=",".join(LOG_COLUMNS), comments="", fmt="%.12g")


def read_log_csv(path) -> dict:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {k: data[:, i] for i, k in enumerate(LOG_COLUMNS)}


def initial_pose(traj: track.Trajectory, s0: float = 0.0) -> PoseState:
    """Pose on the path at progress s0, moving at the profile speed."""
    pos = traj.path.position(s0)
    phi = traj.path.tangent_angle(s0)
    v0 = track.speed_at(traj.speed, s0)
    return PoseState(p_x=float(pos[0]), p_y=float(pos[1]), phi=float(phi),
                     v_x=float(v0), v_y=0.0, omega=0.0)


def run_closed_loop(traj: track.Trajectory, plant: PlantSpec,
                    gains_lo: control.LpvGains, gains_la: control.LpvGains,
                    p_nominal: VehicleParams,
                    models: control.GpModels | None = None,
                    adapt: AdaptConfig | None = None,
                    duration: float | None = None,
                    x0: PoseState | None = None,
                    k_v: float = control.K_V_DEFAULT,
                    e_s_limit: float = E_S_MAX,
                    dt: float = CONTROL_DT,
                    substeps: int = RK4_SUBSTEPS) -> SimResult:
    """Simulate the tracking loop on the (possibly mismatched) plant.

    The controller always uses the nominal parameters ``p_nominal``; the
    plant integrates with its own parameters and steering map. When
    ``adapt`` is given together with models, residual batches of size Z are
    assembled from the rolling log and both models receive a recursive
    gradient update per batch.
    """
    if duration is None:
        duration = 1.25 * traj.path.L / max(traj.speed.v_min, 0.1)
    n_steps = int(round(duration / dt))
    pose = x0 if x0 is not None else initial_pose(traj)
    ctrl = control.ControllerState(k_v=k_v)
    s_ref = 0.0
    s_hint = 0.0
    s_prev = 0.0
    lap_offset = 0.0
    L = traj.path.L
    cols = {k: [] for k in LOG_COLUMNS}
    cols["kappa"] = []
    diverged = False

    def plant_deriv(x, u):
        st = PoseState(*(float(v) for v in x))
        return dynamics.single_track_deriv(st, u, plant.p, strict=False)

    for k in range(n_steps):
        t = k * dt
        try:
            s, e_s, theta_e = track.project_to_path(pose, traj.path, s_hint)
        except ProjectionLostError:
            diverged = True
            break
        s_hint = s
        # unwrap lap crossings so progress is monotone vs the reference
        if traj.path.closed:
            if s + lap_offset < s_prev - 0.5 * L:
                lap_offset += L
            elif s + lap_offset > s_prev + 0.5 * L:
                lap_offset -= L
        s_un = s + lap_offset
        s_prev = s_un
        kappa = float(traj.path.curvature(s))
        v_ref = float(track.speed_at(traj.speed, s))
        cs = CurvilinearState(s=s_un, e_s=e_s, theta_e=theta_e,
                              v_x=pose.v_x, v_y=pose.v_y, omega=pose.omega)
        u = control.control_step(cs, s_ref, v_ref, kappa, gains_lo, gains_la,
                                 ctrl, p_nominal, models=models, dt=dt)

        for name, val in zip(LOG_COLUMNS, (t, s_un, s_ref, e_s, theta_e, pose.v_x,
                                           pose.v_y, pose.omega, u.d, u.delta,
                                           v_ref, ctrl.v_r)):
            cols[name].append(val)
        cols["kappa"].append(kappa)

        if abs(e_s) > e_s_limit or not math.isfinite(pose.v_x):
            diverged = True
            break

        u_plant = ControlInput(d=u.d, delta=plant.apply_steering(u.delta))
        x = pose.as_array()
        try:
            for _ in range(substeps):
                x = dynamics.rk4_step(plant_deriv, x, u_plant, dt / substeps)
        except Exception:
            diverged = True
            break
        pose = PoseState(*(float(v) for v in x))

        # advance the reference progress along the speed profile
        s_ref = _advance_reference(traj, s_ref, dt)

        stride = adapt.sample_stride if adapt is not None else 1
        if (adapt is not None and models is not None
                and (k + 1) % (adapt.Z * stride) == 0
                and len(cols["t"]) >= (adapt.Z + 2) * stride):
            models = _update_models(models, cols, adapt, p_nominal, dt)

    log = {k: np.asarray(v, dtype=float) for k, v in cols.items()}
    return SimResult(log=log, diverged=diverged, models=models)


def _advance_reference(traj: track.Trajectory, s_ref: float, dt: float) -> float:
    f = lambda s: float(track.speed_at(traj.speed, s))
    k1 = f(s_ref)
    k2 = f(s_ref + 0.5 * dt * k1)
    k3 = f(s_ref + 0.5 * dt * k2)
    k4 = f(s_ref + dt * k3)
    return s_ref + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def _tail_log(cols: dict, n: int, stride: int = 1) -> dict:
    return {k: np.asarray(v[-n * stride::stride], dtype=float)
            for k, v in cols.items()}


def _update_models(models: control.GpModels, cols, adapt: AdaptConfig,
                   p_nominal: VehicleParams, dt: float) -> control.GpModels:
    recent = _tail_log(cols, adapt.Z + 2, adapt.sample_stride)
    d_lo, d_la = gp.build_datasets(recent, p_nominal,
                                   dt_sample=dt * adapt.sample_stride)
    sl = slice(1, 1 + adapt.Z)
    batch_lo = gp.Dataset(d_lo.X[sl], d_lo.Y[sl])
    batch_la = gp.Dataset(d_la.X[sl], d_la.Y[sl])
    lo, _ = gp.rgb_update(models.lo, batch_lo, alpha=adapt.alpha,
                          n_alpha=adapt.n_alpha,
                          update_hyperparams=adapt.update_hyperparams)
    la, _ = gp.rgb_update(models.la, batch_la, alpha=adapt.alpha,
                          n_alpha=adapt.n_alpha,
                          update_hyperparams=adapt.update_hyperparams)
    return control.GpModels(lo=lo, la=la)


@dataclass
class RolloutResult:
    """Nominal-model rollout: visited inputs, states, divergence flag."""

    z: np.ndarray
    states: np.ndarray
    diverged: bool
    n_steps: int = 0


def run_nominal_rollout(traj: track.Trajectory, p: VehicleParams,
                        gains_lo: control.LpvGains, gains_la: control.LpvGains,
                        models: control.GpModels | None = None,
                        duration: float | None = None,
                        dt: float = CONTROL_DT,
                        substeps: int = 1,
                        k_v: float = control.K_V_DEFAULT) -> RolloutResult:
    """Roll the controller on the nominal curvilinear model along a trajectory.

    No projection is needed; the state lives directly in path coordinates.
    Truncates (with a flag) when the state leaves the sanity box
    |e_s| <= 1.5 m, v_x in [0.05, 4] m/s.
    """
    if duration is None:
        duration = 1.1 * traj.path.L / max(traj.speed.v_min, 0.1)
    n_steps = int(round(duration / dt))
    cs = CurvilinearState(s=0.0, e_s=0.0, theta_e=0.0,
                          v_x=float(track.speed_at(traj.speed, 0.0)),
                          v_y=0.0, omega=0.0)
    ctrl = control.ControllerState(k_v=k_v)
    s_ref = 0.0
    zs, states = [], []
    diverged = False
    kappa_fn = traj.path.curvature
    for k in range(n_steps):
        kappa = float(kappa_fn(cs.s))
        v_ref = float(track.speed_at(traj.speed, cs.s))
        u = control.control_step(cs, s_ref, v_ref, kappa, gains_lo, gains_la,
                                 ctrl, p, models=models, dt=dt)
        zs.append([cs.v_x, cs.v_y, cs.omega])
        states.append(cs.as_array())
        x = cs.as_array()
        ok = True
        try:
            for _ in range(substeps):
                x = dynamics.rk4_step(
                    lambda xx, uu: dynamics.curvilinear_deriv(
                        CurvilinearState.from_array(xx), uu, p, kappa_fn,
                        strict=False),
                    x, u, dt / substeps)
        except Exception:
            ok = False
        if not ok:
            diverged = True
            break
        cs = CurvilinearState.from_array(x)
        if abs(cs.e_s) > E_S_MAX or not VX_BOX[0] <= cs.v_x <= VX_BOX[1]:
            diverged = True
            break
        s_ref = _advance_reference(traj, s_ref, dt)
    return RolloutResult(z=np.asarray(zs), states=np.asarray(states),
                         diverged=diverged, n_steps=len(zs))
