"""Arc-length-parameterized spline paths, speed profiles, and projections.

Paths are cubic splines in arc length s with C1 continuity and
``|d psi / d s| ~ 1`` everywhere; speed profiles are cubic splines v(s)
clamped to configured bounds. Trajectories can be perturbed waypoint-wise
(lateral displacement along the path normal plus node speeds), which is the
parameterization used by the active-learning experiment design.

Splines are immutable after fitting; all evaluation is pure.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .dynamics import PoseState
from .errors import DegenerateInputError, ProjectionLostError, ValidationError

#: Tolerance on the arc-length parameterization invariant | |dpsi/ds| - 1 |.
ARCLENGTH_TOL = 1e-3


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class PathSpline:
    """Arc-length-parameterized planar spline path."""

    s_knots: np.ndarray
    cs_x: CubicSpline
    cs_y: CubicSpline
    L: float
    closed: bool
    waypoint_s: np.ndarray  # arc length of the original waypoints

    def _wrap_s(self, s):
        s = np.asarray(s, dtype=float)
        if self.closed:
            return np.mod(s, self.L)
        if np.any(s < -1e-9) or np.any(s > self.L + 1e-9):
            raise ValidationError(f"s out of range [0, {self.L:.6f}] on open path")
        return np.clip(s, 0.0, self.L)

    def position(self, s) -> np.ndarray:
        s = self._wrap_s(s)
        return np.stack([self.cs_x(s), self.cs_y(s)], axis=-1)

    def tangent_angle(self, s):
        s = self._wrap_s(s)
        return np.arctan2(self.cs_y(s, 1), self.cs_x(s, 1))

    def curvature(self, s):
        s = self._wrap_s(s)
        xp, yp = self.cs_x(s, 1), self.cs_y(s, 1)
        xpp, ypp = self.cs_x(s, 2), self.cs_y(s, 2)
        return (xp * ypp - yp * xpp) / (xp * xp + yp * yp) ** 1.5

    def normal(self, s) -> np.ndarray:
        """Unit left normal (positive e_s side)."""
        ang = self.tangent_angle(s)
        return np.stack([-np.sin(ang), np.cos(ang)], axis=-1)


def eval_path(path: PathSpline, s):
    """Position, tangent angle, and signed curvature at arc length s."""
    return path.position(s), path.tangent_angle(s), path.curvature(s)


def _arclength_table(cs_x, cs_y, t_grid, samples_per_seg=32):
    """Cumulative arc length over a dense parameter grid."""
    t_dense = np.concatenate([
        np.linspace(t_grid[i], t_grid[i + 1], samples_per_seg, endpoint=False)
        for i in range(len(t_grid) - 1)
    ] + [t_grid[-1:]])
    speed = np.hypot(cs_x(t_dense, 1), cs_y(t_dense, 1))
    s_dense = np.concatenate([[0.0], np.cumsum(
        0.5 * (speed[1:] + speed[:-1]) * np.diff(t_dense))])
    return t_dense, s_dense


def fit_path(waypoints, closed: bool = False, knots_per_waypoint: int = 8) -> PathSpline:
    """Fit an arc-length-parameterized cubic spline through 2D waypoints.

    The spline is first fitted against chord-length parameters, then
    reparameterized to arc length by numeric quadrature and inverse
    interpolation, iterating until the unit-speed invariant holds.
    """
    pts = np.asarray(waypoints, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
        raise DegenerateInputError("fit_path needs at least 4 two-dimensional waypoints")
    if closed and np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    chords = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(chords < 1e-12):
        raise DegenerateInputError("coincident consecutive waypoints")

    if closed:
        pts_fit = np.vstack([pts, pts[:1]])
        chords_fit = np.linalg.norm(np.diff(pts_fit, axis=0), axis=1)
        bc = "periodic"
    else:
        pts_fit = pts
        chords_fit = chords
        bc = "natural"
    t_grid = np.concatenate([[0.0], np.cumsum(chords_fit)])

    cs_x = CubicSpline(t_grid, pts_fit[:, 0], bc_type=bc)
    cs_y = CubicSpline(t_grid, pts_fit[:, 1], bc_type=bc)
    wp_t = t_grid[: len(pts)]

    n_knots = max(knots_per_waypoint * len(pts_fit), 64)
    for _ in range(4):
        t_dense, s_dense = _arclength_table(cs_x, cs_y, t_grid)
        length = float(s_dense[-1])
        s_knots = np.linspace(0.0, length, n_knots + 1)
        t_of_s = np.interp(s_knots, s_dense, t_dense)
        xs, ys = cs_x(t_of_s), cs_y(t_of_s)
        if closed:
            xs[-1], ys[-1] = xs[0], ys[0]
        rs_x = CubicSpline(s_knots, xs, bc_type=bc)
        rs_y = CubicSpline(s_knots, ys, bc_type=bc)
        wp_t = np.interp(wp_t, t_dense, s_dense)
        s_chk = np.linspace(0.0, length, 4 * n_knots)
        err = np.abs(np.hypot(rs_x(s_chk, 1), rs_y(s_chk, 1)) - 1.0).max()
        if err <= ARCLENGTH_TOL:
            break
        cs_x, cs_y, t_grid = rs_x, rs_y, s_knots
        n_knots *= 2
    else:
        raise ValidationError(
            f"arc-length reparameterization did not converge (err={err:.2e})")

    waypoint_s = wp_t
    return PathSpline(s_knots=s_knots, cs_x=rs_x, cs_y=rs_y, L=length,
                      closed=closed, waypoint_s=waypoint_s)


def project_to_path(pose: PoseState, path: PathSpline, s_hint: float,
                    max_dist: float = 2.0) -> tuple[float, float, float]:
    """Project a pose onto the path: returns (s, e_s, theta_e).

    Newton iteration on the stationarity of the squared distance around
    `s_hint`, with a dense-scan fallback. Carries no internal state.
    """
    p = np.array([pose.p_x, pose.p_y])

    def newton(s0):
        s = s0
        for _ in range(30):
            if path.closed:
                s = s % path.L
            else:
                s = min(max(s, 0.0), path.L)
            pos = path.position(s)
            dx = np.array([path.cs_x(s, 1), path.cs_y(s, 1)])
            ddx = np.array([path.cs_x(s, 2), path.cs_y(s, 2)])
            r = p - pos
            g = -float(r @ dx)
            h = float(dx @ dx - r @ ddx)
            if abs(h) < 1e-12:
                return None
            step = -g / h
            step = max(min(step, 0.25 * path.L), -0.25 * path.L)
            s = s + step
            if abs(step) < 1e-12:
                return s % path.L if path.closed else min(max(s, 0.0), path.L)
        return None

    s = newton(float(s_hint))
    if s is None or np.linalg.norm(p - path.position(s)) > max_dist:
        s_scan = np.linspace(0.0, path.L, 2000, endpoint=not path.closed)
        d = np.linalg.norm(path.position(s_scan) - p, axis=1)
        s = newton(float(s_scan[int(np.argmin(d))]))
        if s is None:
            raise ProjectionLostError("projection search diverged")
    pos = path.position(s)
    if float(np.linalg.norm(p - pos)) > max_dist:
        raise ProjectionLostError(
            f"pose {float(np.linalg.norm(p - pos)):.3f} m from path (limit {max_dist})")
    e_s = float(path.normal(s) @ (p - pos))
    theta_e = wrap_angle(pose.phi - float(path.tangent_angle(s)))
    return float(s), e_s, theta_e


@dataclass(frozen=True)
class SpeedProfile:
    """Cubic-spline speed reference v(s), clamped to [v_min, v_max]."""

    s_knots: np.ndarray
    cs_v: CubicSpline
    v_min: float
    v_max: float
    L: float
    closed: bool

    def __post_init__(self):
        if not 0.0 < self.v_min <= self.v_max:
            raise ValidationError("speed profile needs 0 < v_min <= v_max")

    def speed_at(self, s):
        s = np.asarray(s, dtype=float)
        if self.closed:
            # Wrap into the periodic spline's native window [s0, s0 + L].
            s0 = float(self.s_knots[0])
            s = s0 + np.mod(s - s0, self.L)
        else:
            s = np.clip(s, 0.0, self.L)
        return np.clip(self.cs_v(s), self.v_min, self.v_max)


def fit_speed_profile(s_nodes, v_nodes, L: float, closed: bool,
                      v_min: float = 0.1, v_max: float = 4.0) -> SpeedProfile:
    s_nodes = np.asarray(s_nodes, dtype=float)
    v_nodes = np.asarray(v_nodes, dtype=float)
    if closed:
        s_fit = np.concatenate([s_nodes, [s_nodes[0] + L]])
        v_fit = np.concatenate([v_nodes, v_nodes[:1]])
        cs = CubicSpline(s_fit, v_fit, bc_type="periodic")
    else:
        cs = CubicSpline(s_nodes, v_nodes, bc_type="natural")
    return SpeedProfile(s_knots=s_nodes, cs_v=cs, v_min=v_min, v_max=v_max,
                        L=L, closed=closed)


def constant_speed_profile(path: PathSpline, v: float, v_min: float = 0.1,
                           v_max: float = 4.0) -> SpeedProfile:
    s_nodes = np.linspace(0.0, path.L, 9)[:-1] if path.closed \
        else np.linspace(0.0, path.L, 9)
    return fit_speed_profile(s_nodes, np.full(len(s_nodes), float(v)), path.L,
                             path.closed, v_min=v_min, v_max=v_max)


def speed_at(profile: SpeedProfile, s):
    return profile.speed_at(s)


@dataclass(frozen=True)
class Trajectory:
    """A reference trajectory: spatial path plus speed profile on [0, L]."""

    path: PathSpline
    speed: SpeedProfile

    def __post_init__(self):
        if abs(self.path.L - self.speed.L) > 1e-6 * max(1.0, self.path.L):
            raise ValidationError("path and speed profile must share [0, L]")

    def reference_progress(self, t_grid) -> np.ndarray:
        """Integrate ds_ref/dt = v_ref(s_ref) over the given time grid (RK4)."""
        t_grid = np.asarray(t_grid, dtype=float)
        s = 0.0
        out = np.empty(len(t_grid))
        out[0] = s
        for i in range(1, len(t_grid)):
            dt = t_grid[i] - t_grid[i - 1]
            k1 = float(self.speed.speed_at(s))
            k2 = float(self.speed.speed_at(s + 0.5 * dt * k1))
            k3 = float(self.speed.speed_at(s + 0.5 * dt * k2))
            k4 = float(self.speed.speed_at(s + dt * k3))
            s = s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not self.path.closed:
                s = min(s, self.path.L)
            out[i] = s
        return out


@dataclass(frozen=True)
class TrajectoryParams:
    """Waypoint-based perturbation parameters: lateral offsets and node speeds."""

    s_nodes: np.ndarray
    W: np.ndarray
    V: np.ndarray
    w_b: float = 0.5
    v_min: float = 0.5
    v_max: float = 2.0

    def __post_init__(self):
        s, w, v = map(np.asarray, (self.s_nodes, self.W, self.V))
        if not (len(s) == len(w) == len(v)):
            raise ValidationError("s_nodes, W, V must have equal length")
        if np.any(np.diff(s) <= 0):
            raise ValidationError("nodes must be strictly increasing")
        if np.any(np.abs(w) > self.w_b / 2 + 1e-12):
            raise ValidationError(f"lateral displacement exceeds +-{self.w_b / 2}")
        if np.any(v < self.v_min - 1e-12) or np.any(v > self.v_max + 1e-12):
            raise ValidationError(f"node speeds outside [{self.v_min}, {self.v_max}]")


def equidistant_nodes(path: PathSpline, n: int) -> np.ndarray:
    """n node positions equidistant in arc length."""
    if path.closed:
        return np.linspace(0.0, path.L, n, endpoint=False)
    return np.linspace(0.0, path.L, n)


def perturb_trajectory(base: Trajectory, params: TrajectoryParams) -> Trajectory:
    """Displace nodes along the path normal and re-spline path and speed."""
    s_nodes = np.asarray(params.s_nodes, dtype=float)
    base_pts = base.path.position(s_nodes)
    normals = base.path.normal(s_nodes)
    waypoints = base_pts + np.asarray(params.W, dtype=float)[:, None] * normals
    new_path = fit_path(waypoints, closed=base.path.closed)
    new_speed = fit_speed_profile(
        new_path.waypoint_s, np.asarray(params.V, dtype=float), new_path.L,
        new_path.closed, v_min=params.v_min, v_max=params.v_max)
    return Trajectory(path=new_path, speed=new_speed)


def lemniscate_path(a: float = 1.5, n_samples: int = 64) -> PathSpline:
    """Closed Gerono-lemniscate template used for training trajectories."""
    tau = np.linspace(0.0, 2.0 * math.pi, n_samples, endpoint=False)
    pts = np.stack([a * np.sin(tau), a * np.sin(tau) * np.cos(tau)], axis=1)
    return fit_path(pts, closed=True)


def lemniscate_trajectory(a: float = 1.5, v: float = 1.25,
                          n_samples: int = 64) -> Trajectory:
    path = lemniscate_path(a=a, n_samples=n_samples)
    return Trajectory(path=path, speed=constant_speed_profile(path, v))


def save_trajectory(traj: Trajectory, csv_path, json_path, resolution: float = 0.05,
                    node_params: TrajectoryParams | None = None) -> None:
    """Serialize to a (s, x, y, kappa, v_ref) CSV plus a JSON header."""
    n = max(int(round(traj.path.L / resolution)), 8)
    s = np.linspace(0.0, traj.path.L, n, endpoint=not traj.path.closed)
    pos, _, kappa = eval_path(traj.path, s)
    v = traj.speed.speed_at(s)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "x", "y", "kappa", "v_ref"])
        for i in range(n):
            writer.writerow([f"{s[i]:.9g}", f"{pos[i, 0]:.9g}", f"{pos[i, 1]:.9g}",
                             f"{kappa[i]:.9g}", f"{v[i]:.9g}"])
    header = {"L": traj.path.L, "closed": traj.path.closed,
              "v_min": traj.speed.v_min, "v_max": traj.speed.v_max}
    if node_params is not None:
        header["nodes"] = {
            "s": list(map(float, node_params.s_nodes)),
            "W": list(map(float, node_params.W)),
            "V": list(map(float, node_params.V)),
            "w_b": node_params.w_b,
        }
    with open(json_path, "w") as fh:
        json.dump(header, fh, indent=2)


def load_trajectory(csv_path, json_path) -> Trajectory:
    """Rebuild a trajectory from its serialized form (re-fitting the splines)."""
    with open(json_path) as fh:
        header = json.load(fh)
    rows = np.loadtxt(csv_path, delimiter=",", skiprows=1)
    path = fit_path(rows[:, 1:3], closed=bool(header["closed"]))
    s_nodes = rows[:, 0] * (path.L / max(header["L"], 1e-12))
    stride = max(len(rows) // 32, 1)
    speed = fit_speed_profile(s_nodes[::stride], rows[::stride, 4], path.L,
                              path.closed, v_min=header["v_min"],
                              v_max=header["v_max"])
    return Trajectory(path=path, speed=speed)
