"""Induced-L2-gain certification of the tracking closed loops.

Assembles the continuous-time closed loop over an extended state
x = [q, e_s, theta_e, v_y, vx_tilde, omega, vr_filt] with disturbance
w = [vr_tilde, kappa], learns a state-dependent quadratic storage function
V(x) = x^T P(x) x with P(x) = P_0 + sum_i P_i x_i by convex optimization,
and verifies the dissipation inequality by multistart nonlinear
maximization inside the region-of-interest box. Counterexamples found by
the verifier are fed back to the learner until no violation remains; a
Monte Carlo audit double-checks verified certificates.

Everything is dimension-generic so the same loop certifies a scalar test
system and the 7-state vehicle loop.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from . import active_learning, control, gp, sdp, simulate, track
from .dynamics import VehicleParams
from .errors import InfeasibleError, NumericError, ValidationError

#: Region-of-interest box over [q, e_s, theta_e, v_y, vx_tilde, omega, vr_filt].
X_BOX_DEFAULT = np.array([[-0.2, 0.2], [-0.2, 0.2], [-0.5, 0.5], [-0.5, 0.5],
                          [-0.75, 0.75], [-3.5, 3.5], [-0.75, 0.75]])
#: Disturbance box over [vr_tilde, kappa].
W_BOX_DEFAULT = np.array([[-0.75, 0.75], [-1.44, 1.44]])
#: Centering speed of the velocity reference band [0.5, 2] m/s.
V_R_CENT = 1.25
#: Reference low-pass cutoff [Hz].
FILTER_CUTOFF = 10.0


@dataclass(frozen=True)
class PlantRealization:
    """One plant parameterization inside the uncertainty set."""

    p: VehicleParams
    tag: str = "nominal"

    @staticmethod
    def from_xi(xi, nominal: VehicleParams, tag: str = "grid",
                max_rel: float = 0.30) -> "PlantRealization":
        xi = np.asarray(xi, dtype=float)
        xi0 = nominal.xi
        if np.any(np.abs(xi / xi0 - 1.0) > max_rel + 1e-9):
            raise ValidationError("xi outside the +-30% uncertainty set")
        return PlantRealization(p=nominal.with_xi(xi), tag=tag)


class ClosedLoop:
    """Batched derivative and output maps of the assembled loop.

    ``__call__(X, W)`` takes row-stacked states and disturbances and
    returns (dX, h) with the performance output h = [vx_tilde - vr_filt,
    e_s]. The controller runs on the nominal parameters; the plant
    integrates its own.
    """

    def __init__(self, plant: PlantRealization, gains_lo, gains_la,
                 p_nominal: VehicleParams,
                 models: control.GpModels | None = None,
                 filter_cutoff: float = FILTER_CUTOFF,
                 v_r_cent: float = V_R_CENT,
                 saturate: bool = False,
                 trim: bool = True):
        self.plant = plant
        self.gains_lo = gains_lo
        self.gains_la = gains_la
        self.p_nom = p_nominal
        self.models = models
        self.omega_c = 2.0 * math.pi * filter_cutoff
        self.v_c = v_r_cent
        self.saturate = saturate
        self.dim = 7
        self.w_dim = 2
        self._d_shift = 0.0
        self._delta_shift = 0.0
        if trim:
            self._compute_trim()

    def _gain_la(self, v_x):
        g = self.gains_la
        rho = np.clip(v_x, g.rho_min, g.rho_max)
        Y = sum(g.Y[i][0][:, None] * rho[None, :] ** i
                for i in range(g.degree + 1))
        return (g.X_inv.T @ Y).T

    def _gain_lo(self, delta):
        g = self.gains_lo
        rho = np.clip(delta, g.rho_min, g.rho_max)
        y = sum(g.Y[i, 0, 0] * rho ** i for i in range(g.degree + 1))
        return y * g.X_inv[0, 0]

    def _control(self, Xt, W):
        p = self.p_nom
        q, e_s, th, vy, vxt, om, xf = Xt.T
        kap = W[:, 1]
        v_x = np.maximum(vxt + self.v_c, 0.05)
        v_r = self.v_c + xf
        de_s = v_x * np.sin(th) + vy * np.cos(th)
        K = self._gain_la(v_x)
        b_la3 = p.C_f / p.m
        b_k3 = (p.l_r * p.C_r - p.l_f * p.C_f) / p.m - 1.0
        delta = (K[:, 0] * q + K[:, 1] * e_s + K[:, 2] * de_s
                 - th - (b_k3 / b_la3) * kap)
        if self.models is not None:
            z = np.column_stack([v_x, vy, om])
            delta = delta - (p.m / p.C_f) * gp.posterior_sparse(
                self.models.la, z).mu
        g_lo = (1.0 + np.cos(delta)) / p.m
        a_lo = -p.C_m2 * g_lo
        b_lo = p.C_m1 * g_lo
        w_0 = -p.C_m3 * g_lo
        k_lo = self._gain_lo(delta)
        d = k_lo * (v_x - v_r) - (a_lo * v_r + w_0) / b_lo
        if self.models is not None:
            d = d - gp.posterior_sparse(self.models.lo, z).mu / b_lo
        return d, delta

    def _compute_trim(self):
        x0 = np.zeros((1, self.dim))
        w0 = np.zeros((1, self.w_dim))
        d0, delta0 = self._control(x0, w0)
        p = self.p_nom
        a, b, w_ = (-2.0 * p.C_m2 / p.m, 2.0 * p.C_m1 / p.m, -2.0 * p.C_m3 / p.m)
        d_eq = -(a * self.v_c + w_) / b
        self._d_shift = float(d0[0]) - d_eq
        self._delta_shift = float(delta0[0])

    def __call__(self, Xt, W):
        Xt = np.atleast_2d(np.asarray(Xt, dtype=float))
        W = np.atleast_2d(np.asarray(W, dtype=float))
        q, e_s, th, vy, vxt, om, xf = Xt.T
        vr_t, kap = W.T
        v_x = np.maximum(vxt + self.v_c, 0.05)
        d, delta = self._control(Xt, W)
        d = d - self._d_shift
        delta = delta - self._delta_shift
        if self.saturate:
            d = np.clip(d, 0.0, 1.0)
            delta = np.clip(delta, -0.5, 0.5)

        pp = self.plant.p
        f_x = pp.C_m1 * d - pp.C_m2 * v_x - pp.C_m3
        f_ry = pp.C_r * np.arctan((-vy + pp.l_r * om) / v_x)
        f_fy = pp.C_f * np.arctan(delta - (vy + pp.l_f * om) / v_x)
        cd, sd = np.cos(delta), np.sin(delta)
        dvx = ((1.0 + cd) * f_x - f_fy * sd) / pp.m + vy * om
        dvy = (f_ry + f_x * sd + f_fy * cd) / pp.m - v_x * om
        dom = (f_fy * pp.l_f * cd + f_x * pp.l_f * sd - f_ry * pp.l_r) / pp.I_z

        denom = 1.0 - kap * e_s
        s_dot = (v_x * np.cos(th) - vy * np.sin(th)) / denom
        de_s = v_x * np.sin(th) + vy * np.cos(th)
        dth = om - kap * s_dot
        dxf = self.omega_c * (vr_t - xf)

        dX = np.column_stack([e_s, de_s, dth, dvy, dvx, dom, dxf])
        h = np.column_stack([vxt - xf, e_s])
        return dX, h


class ScalarTestLoop:
    """First-order lag dx = -x + w, z = x; analytic L2 gain 1."""

    dim = 1
    w_dim = 1

    def __call__(self, Xt, W):
        Xt = np.atleast_2d(np.asarray(Xt, dtype=float))
        W = np.atleast_2d(np.asarray(W, dtype=float))
        return -Xt + W, Xt.copy()


def assemble_closed_loop(plant: PlantRealization, gains_lo, gains_la,
                         p_nominal: VehicleParams,
                         models: control.GpModels | None = None,
                         filter_cutoff: float = FILTER_CUTOFF,
                         **kwargs) -> ClosedLoop:
    """Build the batched closed-loop map; see ClosedLoop."""
    return ClosedLoop(plant, gains_lo, gains_la, p_nominal, models=models,
                      filter_cutoff=filter_cutoff, **kwargs)


# ---------------------------------------------------------------------------
# Storage function and dissipation residual
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StorageFn:
    """State-dependent quadratic storage: P(x) = P[0] + sum_i P[i+1] x_i."""

    P: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 3 or P.shape[1] != P.shape[2] or P.shape[0] != P.shape[1] + 1:
            raise ValidationError("need dim+1 square coefficient matrices")
        object.__setattr__(self, "P", 0.5 * (P + np.swapaxes(P, 1, 2)))

    @property
    def dim(self) -> int:
        return self.P.shape[1]

    def matrix(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.P[0] + np.tensordot(x, self.P[1:], axes=(0, 0))

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.matrix(x) @ x)


def dissipation_residual_batch(Xt, W, f_cl, storage: StorageFn,
                               gamma2: float) -> np.ndarray:
    """J = 2 x^T P(x) f + x^T (sum_i P_i f_i) x - gamma^2 w^T w + h^T h."""
    Xt = np.atleast_2d(np.asarray(Xt, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    F, H = f_cl(Xt, W)
    P0, Pi = storage.P[0], storage.P[1:]
    Px = P0[None] + np.einsum("nk,kij->nij", Xt, Pi)
    term1 = 2.0 * np.einsum("ni,nij,nj->n", Xt, Px, F)
    Pdot = np.einsum("nk,kij->nij", F, Pi)
    term2 = np.einsum("ni,nij,nj->n", Xt, Pdot, Xt)
    return term1 + term2 - gamma2 * np.sum(W * W, axis=1) + np.sum(H * H, axis=1)


def dissipation_residual(x, w, f_cl, storage: StorageFn, gamma2: float) -> float:
    return float(dissipation_residual_batch(np.asarray(x)[None],
                                            np.asarray(w)[None],
                                            f_cl, storage, gamma2)[0])


# ---------------------------------------------------------------------------
# Learner
# ---------------------------------------------------------------------------

def _tri_indices(dim):
    return [(a, b) for a in range(dim) for b in range(a, dim)]


def _vec_to_storage(v, dim) -> tuple[StorageFn, float]:
    tri = _tri_indices(dim)
    n_tri = len(tri)
    P = np.zeros((dim + 1, dim, dim))
    for i in range(dim + 1):
        for k, (a, b) in enumerate(tri):
            P[i, a, b] = P[i, b, a] = v[i * n_tri + k]
    return StorageFn(P=P), float(v[-1])


def _corner_points(box):
    dim = len(box)
    corners = np.array(np.meshgrid(*[box[i] for i in range(dim)],
                                   indexing="ij")).reshape(dim, -1).T
    return corners


def _psd_corner_blocks(box, dim, n_var):
    """P(x) >= eps I at every box corner, as one batched block family.

    Corner enforcement is box-wide valid: the smallest eigenvalue of an
    affine matrix function is concave, so its minimum over the box sits at
    a vertex."""
    tri = _tri_indices(dim)
    n_tri = len(tri)
    corners = _corner_points(box)
    Fi = np.zeros((len(corners), n_var, dim, dim))
    for c, corner in enumerate(corners):
        for i in range(dim + 1):
            scale = 1.0 if i == 0 else corner[i - 1]
            for k, (a, b) in enumerate(tri):
                Fi[c, i * n_tri + k, a, b] += scale
                Fi[c, i * n_tri + k, b, a] += scale * (a != b)
    return [sdp.SdpBlock(F0=np.zeros((len(corners), dim, dim)), Fi=Fi)]


def _j_rows(Xt, W, f_cl, dim):
    """Affine coefficients of J per sample: rows G (over the storage/gamma2
    variable vector) and offsets so that J <= 0 reads G v <= rhs."""
    F, H = f_cl(Xt, W)
    n = len(Xt)
    tri = _tri_indices(dim)
    n_tri = len(tri)
    mult = 2.0 - np.eye(dim)
    S1 = Xt[:, :, None] * F[:, None, :] + Xt[:, None, :] * F[:, :, None]
    S2 = Xt[:, :, None] * Xt[:, None, :]
    base1 = S1 * mult[None]
    base2 = S2 * mult[None]
    a_idx = [t[0] for t in tri]
    b_idx = [t[1] for t in tri]
    seg0 = base1[:, a_idx, b_idx]
    G = np.zeros((n, (dim + 1) * n_tri + 1))
    G[:, :n_tri] = seg0
    for i in range(dim):
        G[:, (i + 1) * n_tri:(i + 2) * n_tri] = (
            Xt[:, i, None] * seg0 + F[:, i, None] * base2[:, a_idx, b_idx])
    G[:, -1] = -np.sum(W * W, axis=1)
    rhs = -np.sum(H * H, axis=1)
    # drop trivial rows (zero coefficients); they carry no constraint but
    # would destroy the strict interior the barrier method needs
    norm = np.max(np.abs(G), axis=1)
    if np.any((norm <= 1e-12) & (rhs < -1e-10)):
        raise InfeasibleError("sample with no storage influence violates J <= 0")
    keep = norm > 1e-12
    return G[keep], rhs[keep]


@dataclass
class LearnerState:
    """Persistent learner data across counterexample iterations."""

    G: np.ndarray
    rhs: np.ndarray
    active: np.ndarray
    x_warm: np.ndarray | None = None


def _learner_solve(state: LearnerState, blocks, n_var, p_bound: float,
                   max_rounds: int = 60, add_per_round: int = 400,
                   tol: float = 1e-9):
    """Minimize gamma^2 with an active-set over the J rows."""
    c = np.zeros(n_var)
    c[-1] = 1.0
    bound_rows = np.vstack([np.eye(n_var - 1, n_var),
                            -np.eye(n_var - 1, n_var)])
    bound_rhs = np.full(2 * (n_var - 1), p_bound)
    gamma_row = np.zeros((1, n_var))
    gamma_row[0, -1] = -1.0
    active = set(int(i) for i in state.active)
    x = state.x_warm
    g2_ref = None if x is None else float(x[-1])
    for _ in range(max_rounds):
        idx = np.array(sorted(active), dtype=int)
        G = np.vstack([state.G[idx], bound_rows, gamma_row])
        h = np.concatenate([state.rhs[idx], bound_rhs, [0.0]])
        if x is not None:
            # repair the warm start by raising gamma^2: the J rows enter
            # gamma^2 with coefficient -|w|^2 and nothing else constrains it,
            # so a bump restores strict feasibility without a new phase 1
            slack = state.rhs[idx] - state.G[idx] @ x
            w2 = -state.G[idx, -1]
            bad = slack < 1e-9
            if np.any(bad):
                if np.any(w2[bad] <= 1e-12):
                    x = None
                else:
                    x = x.copy()
                    x[-1] += float(np.max((1e-4 - slack[bad]) / w2[bad]))
        problem = sdp.SdpProblem(c=c, blocks=tuple(blocks), G=G, h=h)
        sol = sdp.solve(problem, x0=x, gap_tol=1e-7)
        x = sol.x
        if g2_ref is not None and x[-1] > 4.0 * g2_ref + 1.0:
            # a big feasibility bump can leave the warm start so far off the
            # central path that the centering steps stall; fall back to a
            # cold solve rather than return the inflated gamma^2
            sol = sdp.solve(problem, x0=None, gap_tol=1e-7)
            x = sol.x
        viol = state.G @ x - state.rhs
        bad = np.where(viol > tol)[0]
        bad = bad[~np.isin(bad, idx)]
        if len(bad) == 0:
            state.active = idx
            state.x_warm = x
            return x
        order = bad[np.argsort(viol[bad])[::-1]]
        for i in order[:add_per_round]:
            active.add(int(i))
    raise NumericError("learner active set failed to close")


def learner(Xt, W, f_cl, box, p_bound: float = 1e3,
            state: LearnerState | None = None,
            margin: float = 0.0) -> tuple[StorageFn, float, LearnerState]:
    """Fit (P(x), gamma^2) to the sample set by semidefinite programming.

    A positive ``margin`` tightens every sample constraint to J <= -margin,
    trading a slightly larger gamma for uniform slack that absorbs the
    interpolation error between samples and closes the counterexample loop
    in far fewer iterations.
    """
    Xt = np.atleast_2d(np.asarray(Xt, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if len(Xt) == 0:
        raise ValidationError("learner needs at least one sample")
    dim = Xt.shape[1]
    n_var = (dim + 1) * len(_tri_indices(dim)) + 1
    blocks = _psd_corner_blocks(np.asarray(box, dtype=float), dim, n_var)
    G, rhs = _j_rows(Xt, W, f_cl, dim)
    if margin > 0.0:
        # scale the slack with the row magnitude so near-origin samples,
        # where J vanishes quadratically, stay feasible
        rhs = rhs - margin * np.max(np.abs(G), axis=1)
    if state is None:
        seed_idx = np.unique(np.linspace(0, len(G) - 1,
                                         min(len(G), 500)).astype(int))
        state = LearnerState(G=G, rhs=rhs, active=seed_idx)
    else:
        state.G = np.vstack([state.G, G])
        state.rhs = np.concatenate([state.rhs, rhs])
        state.active = np.concatenate(
            [state.active,
             np.arange(len(state.G) - len(G), len(state.G))])
    try:
        x = _learner_solve(state, blocks, n_var, p_bound)
    except InfeasibleError:
        raise InfeasibleError("storage structure insufficient")
    storage, gamma2 = _vec_to_storage(x, dim)
    return storage, gamma2, state


# ---------------------------------------------------------------------------
# Verifier
# ---------------------------------------------------------------------------

def _verifier_starts(x_box, w_box, n_random, seed):
    dim, wd = len(x_box), len(w_box)
    rng = np.random.default_rng(seed)
    box = np.vstack([x_box, w_box])
    lo, hi = box[:, 0], box[:, 1]
    starts = [lo + rng.random(dim + wd) * (hi - lo) for _ in range(n_random)]
    n_sign = min(dim + wd, 6)
    for bits in range(2 ** n_sign):
        c = hi.copy()
        for k in range(n_sign):
            if bits >> k & 1:
                c[k] = lo[k]
        starts.append(c)
    return starts


def verifier(storage: StorageFn, gamma2: float, f_cl, x_box, w_box,
             n_starts: int = 20, fd_step: float = 1e-6,
             seed: int = 0) -> tuple[np.ndarray, np.ndarray, float]:
    """Multistart local maximization of J inside the box.

    Returns the worst (x, w, J) found. Best-effort by construction.
    """
    x_box = np.asarray(x_box, dtype=float)
    w_box = np.asarray(w_box, dtype=float)
    dim = len(x_box)
    bounds = [tuple(b) for b in np.vstack([x_box, w_box])]

    def neg_j(v):
        return -dissipation_residual_batch(v[None, :dim], v[None, dim:],
                                           f_cl, storage, gamma2)[0]

    best_v, best_j = None, -np.inf
    violations = []
    for v0 in _verifier_starts(x_box, w_box, n_starts, seed):
        res = minimize(neg_j, v0, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 200, "eps": fd_step})
        j = -res.fun
        if not np.isfinite(j):
            continue
        if j > 0 and not any(np.linalg.norm(res.x - v) < 1e-6
                             for v, _ in violations):
            violations.append((res.x.copy(), float(j)))
        if j > best_j:
            best_j, best_v = float(j), res.x
    return best_v[:dim], best_v[dim:], best_j, violations


# ---------------------------------------------------------------------------
# Certification loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CertifyConfig:
    x_box: np.ndarray = field(default_factory=lambda: X_BOX_DEFAULT.copy())
    w_box: np.ndarray = field(default_factory=lambda: W_BOX_DEFAULT.copy())
    grid_pts: int = 3
    max_iters: int = 400
    verifier_starts: int = 20
    fd_step: float = 1e-6
    violation_tol: float = 1e-9
    mc_samples: int = 1_000_000
    seed: int = 0
    p_bound: float = 1e3
    #: Per-row learner slack; see learner().
    margin: float = 0.0
    #: Extra jittered samples added around each counterexample. Densifies the
    #: constraint set near found violations so the learner stops re-violating
    #: in small neighborhoods of old counterexamples.
    cloud: int = 0
    #: Cloud jitter half-width as a fraction of the box span per axis.
    cloud_radius: float = 0.02
    #: Extra stacked [x, w] sample rows appended to the initial grid; lets a
    #: sweep reuse counterexamples found on a neighboring realization.
    extra_points: np.ndarray | None = None


@dataclass
class L2Certificate:
    gamma: float
    storage: StorageFn
    iterations: int
    counterexamples: list
    audit_residual: float
    status: str

    def to_json(self, path, extra=None) -> None:
        payload = {
            "gamma": self.gamma,
            "P": [Pi.tolist() for Pi in self.storage.P],
            "iterations": self.iterations,
            "counterexamples": [list(map(float, c)) for c in self.counterexamples],
            "audit_residual": self.audit_residual,
            "status": self.status,
        }
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)


def _initial_grid(x_box, w_box, pts):
    box = np.vstack([x_box, w_box])
    axes = [np.linspace(lo, hi, pts) for lo, hi in box]
    full = np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(box), -1).T
    dim = len(x_box)
    return full[:, :dim], full[:, dim:]


def monte_carlo_audit(storage: StorageFn, gamma2: float, f_cl, x_box, w_box,
                      n_samples: int, seed: int = 0,
                      chunk: int = 100_000) -> float:
    """Worst J over uniform samples of the box; sharded evaluation."""
    rng = np.random.default_rng(seed)
    box = np.vstack([np.asarray(x_box, float), np.asarray(w_box, float)])
    lo, hi = box[:, 0], box[:, 1]
    dim = len(x_box)
    worst = -np.inf
    remaining = int(n_samples)
    while remaining > 0:
        n = min(chunk, remaining)
        V = lo + rng.random((n, len(box))) * (hi - lo)
        J = dissipation_residual_batch(V[:, :dim], V[:, dim:], f_cl,
                                       storage, gamma2)
        worst = max(worst, float(np.max(J)))
        remaining -= n
    return worst


def certify_l2(f_cl, cfg: CertifyConfig = CertifyConfig()) -> L2Certificate:
    """Counterexample-guided certification of a closed-loop map.

    ``f_cl`` must expose ``dim``/``w_dim`` and the batched call signature of
    ClosedLoop. The learner-verifier loop runs until the verifier finds no
    positive residual, the learner reports infeasibility, or the iteration
    cap is reached.
    """
    x_box = np.asarray(cfg.x_box, dtype=float)[:f_cl.dim]
    w_box = np.asarray(cfg.w_box, dtype=float)[:f_cl.w_dim]
    Xs, Ws = _initial_grid(x_box, w_box, cfg.grid_pts)
    if cfg.extra_points is not None and len(cfg.extra_points):
        extra = np.atleast_2d(np.asarray(cfg.extra_points, dtype=float))
        Xs = np.vstack([Xs, extra[:, :f_cl.dim]])
        Ws = np.vstack([Ws, extra[:, f_cl.dim:f_cl.dim + f_cl.w_dim]])
    state = None
    counterexamples = []
    gamma2 = np.inf
    storage = None
    verbose = os.environ.get("GPTRACK_CERTIFY_VERBOSE", "") not in ("", "0")
    t_start = time.perf_counter()
    for it in range(1, cfg.max_iters + 1):
        try:
            storage, gamma2, state = learner(
                Xs, Ws, f_cl, x_box, p_bound=cfg.p_bound, state=state,
                margin=cfg.margin)
        except InfeasibleError:
            return L2Certificate(gamma=float("nan"), storage=storage,
                                 iterations=it, counterexamples=counterexamples,
                                 audit_residual=float("nan"),
                                 status="infeasible")
        x_bad, w_bad, j_bad, violations = verifier(
            storage, gamma2, f_cl, x_box, w_box,
            n_starts=cfg.verifier_starts, fd_step=cfg.fd_step,
            seed=cfg.seed + it)
        if verbose:
            print(f"[certify] iter {it}: gamma={math.sqrt(max(gamma2, 0)):.6f} "
                  f"worst_J={j_bad:.3e} n_viol={len(violations)} "
                  f"active={len(state.active)} "
                  f"t={time.perf_counter() - t_start:.1f}s", flush=True)
        if j_bad <= cfg.violation_tol:
            audit = monte_carlo_audit(storage, gamma2, f_cl, x_box, w_box,
                                      cfg.mc_samples, seed=cfg.seed)
            status = "verified" if audit <= 1e-6 else "audit_failed"
            return L2Certificate(gamma=math.sqrt(max(gamma2, 0.0)),
                                 storage=storage, iterations=it,
                                 counterexamples=counterexamples,
                                 audit_residual=audit, status=status)
        pts = np.array([v for v, _ in violations])
        counterexamples.extend(
            np.concatenate([v, [j]]) for v, j in violations)
        if cfg.cloud > 0:
            rng = np.random.default_rng(cfg.seed + 7919 * it)
            box = np.vstack([x_box, w_box])
            reps = np.repeat(pts, cfg.cloud, axis=0)
            jit = rng.uniform(-1.0, 1.0, size=reps.shape)
            scattered = np.clip(
                reps + cfg.cloud_radius * (box[:, 1] - box[:, 0]) * jit,
                box[:, 0], box[:, 1])
            pts = np.vstack([pts, scattered])
        Xs, Ws = pts[:, :f_cl.dim], pts[:, f_cl.dim:]
    return L2Certificate(gamma=math.sqrt(max(gamma2, 0.0)), storage=storage,
                         iterations=cfg.max_iters,
                         counterexamples=counterexamples,
                         audit_residual=float("nan"), status="iteration_cap")


# ---------------------------------------------------------------------------
# Plant-grid sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepStrategy:
    """Fixed learning strategy applied inside each sweep cell."""

    M: int = 20
    Z: int = 20
    n_alpha: int = 5
    alpha: float = 0.1
    N_act: int = 2
    collect_duration: float = 20.0
    lemniscate_a: float = 4.0
    collect_speed: float = 1.25
    bo_init: int = 6
    bo_iter: int = 4
    seed: int = 0
    use_models: bool = True
    filter_cutoff: float = FILTER_CUTOFF


def xi_grid(nominal: VehicleParams, pts_per_dim: int = 2,
            rel: float = 0.30) -> np.ndarray:
    """Equidistant grid of plant parameter vectors within +-rel."""
    xi0 = nominal.xi
    axes = [np.linspace((1 - rel) * v, (1 + rel) * v, pts_per_dim) for v in xi0]
    return np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(xi0), -1).T


def _cell_models(plant: PlantRealization, gains_lo, gains_la,
                 p_nom: VehicleParams, strategy: SweepStrategy):
    """Data collection, sparse training, frozen-hyperparameter refinement."""
    traj = track.lemniscate_trajectory(a=strategy.lemniscate_a,
                                       v=strategy.collect_speed)
    res = simulate.run_closed_loop(traj, simulate.PlantSpec(p=plant.p),
                                   gains_lo, gains_la, p_nom,
                                   duration=strategy.collect_duration)
    d_lo, d_la = gp.build_datasets(res.log, p_nom)
    model_lo = gp.train_sparse(d_lo, strategy.M, seed=strategy.seed, max_iter=80)
    model_la = gp.train_sparse(d_la, strategy.M, seed=strategy.seed, max_iter=80)
    models = control.GpModels(lo=model_lo, la=model_la)
    params = track.TrajectoryParams(
        s_nodes=track.equidistant_nodes(traj.path, 7),
        W=np.zeros(7), V=np.full(7, strategy.collect_speed))
    cfg = active_learning.RolloutConfig(
        theta_lo=model_lo.theta, theta_la=model_la.theta,
        gains_lo=gains_lo, gains_la=gains_la, p=p_nom, duration=8.0)
    bo = active_learning.BoConfig(n_init=strategy.bo_init,
                                  n_iter=strategy.bo_iter, seed=strategy.seed)
    adapt = simulate.AdaptConfig(Z=strategy.Z, n_alpha=strategy.n_alpha,
                                 alpha=strategy.alpha,
                                 update_hyperparams=False)
    raw_lo, raw_la = d_lo, d_la
    for _ in range(strategy.N_act):
        out = active_learning.active_learning_round(
            models, traj, params, cfg, simulate.PlantSpec(p=plant.p),
            bo=bo, adapt=adapt, raw_lo=raw_lo, raw_la=raw_la)
        models, raw_lo, raw_la = out.models, out.raw_lo, out.raw_la
    return models


def sweep_cell(xi, nominal: VehicleParams, gains_lo, gains_la,
               strategy: SweepStrategy, cfg: CertifyConfig) -> dict:
    """Full learning strategy plus certification for one realization."""
    try:
        plant = PlantRealization.from_xi(xi, nominal)
        models = (_cell_models(plant, gains_lo, gains_la, nominal, strategy)
                  if strategy.use_models else None)
        loop = assemble_closed_loop(plant, gains_lo, gains_la, nominal,
                                    models=models,
                                    filter_cutoff=strategy.filter_cutoff)
        cert = certify_l2(loop, cfg)
        ce = (np.array([c[:-1] for c in cert.counterexamples])
              if cert.counterexamples else np.zeros((0, loop.dim + loop.w_dim)))
        return {"xi": np.asarray(xi, float), "gamma": cert.gamma,
                "status": cert.status, "iters": cert.iterations, "ce": ce}
    except Exception as exc:  # per-cell failures recorded, sweep continues
        return {"xi": np.asarray(xi, float), "gamma": float("nan"),
                "status": f"error:{type(exc).__name__}", "iters": 0}


def grid_sweep(Xi, nominal: VehicleParams, gains_lo, gains_la,
               strategy: SweepStrategy = SweepStrategy(),
               cfg: CertifyConfig = CertifyConfig(),
               jobs: int = 1, seed_from_nominal: bool = True) -> list[dict]:
    """Certify every plant realization in Xi; cells run in parallel.

    With ``seed_from_nominal`` a reference cell at the nominal parameters
    runs first and its counterexample set seeds every grid cell, which cuts
    the per-cell learner-verifier iterations sharply. The reference row is
    prepended to the output.
    """
    Xi = np.atleast_2d(np.asarray(Xi, dtype=float))
    rows = []
    if seed_from_nominal:
        ref = sweep_cell(nominal.xi, nominal, gains_lo, gains_la, strategy,
                         cfg)
        rows.append(ref)
        ce = ref.get("ce")
        if isinstance(ce, np.ndarray) and len(ce):
            cfg = replace(cfg, extra_points=ce)
    if jobs <= 1:
        rows.extend(sweep_cell(xi, nominal, gains_lo, gains_la, strategy, cfg)
                    for xi in Xi)
        return rows
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futs = [pool.submit(sweep_cell, xi, nominal, gains_lo, gains_la,
                            strategy, cfg) for xi in Xi]
        rows.extend(f.result() for f in futs)
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write("xi_1,xi_2,xi_3,xi_4,xi_5,xi_6,gamma,status,iters\n")
        for r in rows:
            xi = ",".join(f"{v:.10g}" for v in r["xi"])
            fh.write(f"{xi},{r['gamma']:.10g},{r['status']},{r['iters']}\n")
