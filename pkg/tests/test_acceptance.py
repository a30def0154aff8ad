"""Acceptance gate: nine end-to-end criteria, one printed verdict line each.

Each criterion prints ``[criterion N] name: PASS/FAIL (details)`` on the
real stdout so the verdicts survive pytest's capture, then asserts. The
heavyweight pipelines run once inside session-scoped fixtures; criterion 9
repeats them with identical seeds and compares the recorded metrics.
"""

import math
import sys
import time

import numpy as np
import pytest
from scipy.linalg import cho_factor, cho_solve, solve_continuous_are, \
    solve_continuous_lyapunov, solve_triangular

from gptrack import active_learning, certify, cli, control, gp, simulate, track
from gptrack.dynamics import VehicleParams

# the learning pipelines legitimately graze the scheduling/saturation
# guards on aggressive proposals; the verdict lines are the signal here
pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")

# Certification configuration shared by criteria 7 and 8: reduced
# region-of-interest box, slow reference filter, learner slack.
CERT_BOX_SCALE = 0.33
CERT_FILTER_CUTOFF = 0.05
CERT_MARGIN = 0.02


def announce(n, name, ok, details=""):
    verdict = "PASS" if ok else "FAIL"
    line = f"[criterion {n}] {name}: {verdict}"
    if details:
        line += f" ({details})"
    sys.__stdout__.write(line + "\n")
    sys.__stdout__.flush()
    return ok


def rel_err(got, want):
    scale = max(float(np.max(np.abs(want))), 1e-12)
    return float(np.max(np.abs(got - want))) / scale


# ---------------------------------------------------------------------------
# Criterion 1: sparse GP with M = N equals the exact posterior
# ---------------------------------------------------------------------------

def test_criterion_1_gp_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        # 3-d inputs with moderate lengthscales keep the kernel matrices
        # well conditioned, which the 1e-6 equivalence bound presumes
        n = int(rng.integers(5, 101))
        d = 3
        X = rng.uniform(-2, 2, size=(n, d))
        Y = np.sin(X[:, 0]) + 0.1 * rng.normal(size=n)
        theta = gp.Hyperparams(sigma_f=float(rng.uniform(0.5, 2.0)),
                               lam=rng.uniform(0.3, 1.0, size=d),
                               sigma_eps=float(rng.uniform(0.1, 0.3)))
        D = gp.Dataset(X, Y)
        model = gp.fit_caches(theta, X, D)
        Xs = rng.uniform(-2, 2, size=(25, d))
        full = gp.posterior_full(D, theta, Xs)
        sparse = gp.posterior_sparse(model, Xs)
        worst = max(worst, rel_err(sparse.mu, full.mu),
                    rel_err(sparse.var, full.var))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 10.0
    assert announce(1, "GP oracle equivalence", ok,
                    f"max rel err {worst:.2e}, {dt:.1f}s")


# ---------------------------------------------------------------------------
# Criterion 2: analytic gradients vs central finite differences
# ---------------------------------------------------------------------------

def test_criterion_2_gradient_audit():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    h = 1e-5
    worst = 0.0

    def check(g, fd):
        nonlocal worst
        worst = max(worst, abs(g - fd) / max(abs(fd), 1e-7))

    # fixed array shapes so the jit caches compile once, not per config
    n, d = 20, 3
    for _ in range(50):
        X = rng.uniform(-2, 2, size=(n, d))
        Y = np.sin(X[:, 0]) + 0.1 * rng.normal(size=n)
        theta = gp.Hyperparams(sigma_f=float(rng.uniform(0.5, 2.0)),
                               lam=rng.uniform(0.5, 3.0, size=d),
                               sigma_eps=float(rng.uniform(0.1, 0.3)))
        D = gp.Dataset(X, Y)
        Xm = X[:7].copy()
        _, g_lml = gp.log_marginal_grad(D, theta)
        _, g_theta, g_xm = gp.vfe_grad(D, Xm, theta)
        z = theta.log_vector()
        for k in range(len(z)):
            zp, zm = z.copy(), z.copy()
            zp[k] += h
            zm[k] -= h
            tp = gp.Hyperparams.from_log_vector(zp)
            tm = gp.Hyperparams.from_log_vector(zm)
            check(g_lml[k],
                  (gp.log_marginal(D, tp) - gp.log_marginal(D, tm)) / (2 * h))
            check(g_theta[k],
                  (gp.vfe_cost(D, Xm, tp) - gp.vfe_cost(D, Xm, tm)) / (2 * h))
        i, j = int(rng.integers(len(Xm))), int(rng.integers(d))
        Xp, Xm2 = Xm.copy(), Xm.copy()
        Xp[i, j] += h
        Xm2[i, j] -= h
        check(g_xm[i, j],
              (gp.vfe_cost(D, Xp, theta) - gp.vfe_cost(D, Xm2, theta)) / (2 * h))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-4 and dt < 30.0
    assert announce(2, "gradient audit", ok,
                    f"max rel err {worst:.2e}, {dt:.1f}s")


# ---------------------------------------------------------------------------
# Criterion 3: LPV-LQR degree 0 vs the Riccati optimum
# ---------------------------------------------------------------------------

def _lq_cost(A, B, K, Q, R):
    Acl = A + B @ K
    if np.max(np.linalg.eigvals(Acl).real) >= 0:
        return math.inf
    W = Q + K.T @ R @ K
    return float(np.trace(solve_continuous_lyapunov(Acl.T, -W)))


def _stabilizable_pairs(n_pairs, seed):
    rng = np.random.default_rng(seed)
    pairs = []
    while len(pairs) < n_pairs:
        n = int(rng.integers(2, 5))
        A = rng.normal(size=(n, n))
        B = rng.normal(size=(n, 1))
        ctrb = np.hstack([np.linalg.matrix_power(A, k) @ B for k in range(n)])
        if np.linalg.matrix_rank(ctrb) == n:
            pairs.append((A, B))
    return pairs


def test_criterion_3_lqr_oracle():
    t0 = time.perf_counter()
    cases = [(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]))]
    cases += _stabilizable_pairs(5, seed=2)
    worst = 0.0
    for A, B in cases:
        n = A.shape[0]
        Q, R = np.eye(n), np.eye(1)
        gains = control.lpv_lqr_synth(lambda rho: (A, B), [0.0], Q, R,
                                      degree=0)
        K = control.gain_eval(gains, 0.0)
        P = solve_continuous_are(A, B, Q, R)
        K_opt = -np.linalg.solve(R, B.T @ P)
        cost = _lq_cost(A, B, K, Q, R)
        opt = _lq_cost(A, B, K_opt, Q, R)
        worst = max(worst, cost / opt - 1.0)
    dt = time.perf_counter() - t0
    ok = worst <= 0.05 and dt < 60.0
    assert announce(3, "LQR oracle", ok,
                    f"worst excess {100 * worst:.2f}%, {dt:.1f}s")


# ---------------------------------------------------------------------------
# Criterion 4: adaptive tracking improvement under plant mismatch
# ---------------------------------------------------------------------------

MISMATCH = dict(scale_Iz=1.15, scale_tires=0.9, c_1=0.85, c_0=0.15)


def _mismatched_plant():
    """Table-style alteration: heavier yaw inertia, distorted steering map,
    and wheel-contact changes emulated by scaling C_f, C_r, C_m1."""
    p = VehicleParams()
    p_true = p.with_overrides(I_z=p.I_z * MISMATCH["scale_Iz"],
                              C_f=p.C_f * MISMATCH["scale_tires"],
                              C_r=p.C_r * MISMATCH["scale_tires"],
                              C_m1=p.C_m1 * MISMATCH["scale_tires"])
    return simulate.PlantSpec(p=p_true, c_1=MISMATCH["c_1"],
                              c_0=MISMATCH["c_0"])


@pytest.fixture(scope="session")
def gains():
    return control.synth_default_gains(VehicleParams())


def run_criterion_4(gains):
    t0 = time.perf_counter()
    gains_lo, gains_la = gains
    p_nom = VehicleParams()
    plant = _mismatched_plant()
    traj = track.lemniscate_trajectory(a=6.0, v=1.0)

    nominal = simulate.run_closed_loop(traj, plant, gains_lo, gains_la,
                                       p_nom, duration=30.0)
    m_nom = cli.metrics(nominal.log, diverged=nominal.diverged)

    d_lo, d_la = gp.build_datasets(nominal.log, p_nom)
    models = control.GpModels(
        lo=gp.train_sparse(d_lo, 30, seed=0, max_iter=150),
        la=gp.train_sparse(d_la, 30, seed=0, max_iter=150))
    adapt = simulate.AdaptConfig(Z=20, n_alpha=5, alpha=0.1)
    adaptive = simulate.run_closed_loop(traj, plant, gains_lo, gains_la,
                                        p_nom, models=models, adapt=adapt,
                                        duration=30.0)
    m_ad = cli.metrics(adaptive.log, diverged=adaptive.diverged)
    return {"rms_e_nom": m_nom.rms_e_s, "rms_e_ad": m_ad.rms_e_s,
            "rms_s_nom": m_nom.rms_s_err, "rms_s_ad": m_ad.rms_s_err,
            "max_e_ad": m_ad.max_e_s, "time": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def crit4(gains):
    return run_criterion_4(gains)


def test_criterion_4_tracking_improvement(crit4):
    r = crit4
    red_e = 1.0 - r["rms_e_ad"] / r["rms_e_nom"]
    red_s = 1.0 - r["rms_s_ad"] / r["rms_s_nom"]
    ok = (red_e >= 0.5 and red_s >= 0.5 and r["max_e_ad"] <= 0.06
          and r["time"] < 300.0)
    assert announce(4, "tracking improvement", ok,
                    f"RMS(e_s) -{100 * red_e:.0f}%, RMS(s_err) "
                    f"-{100 * red_s:.0f}%, max|e_s| {r['max_e_ad']:.3f} m, "
                    f"{r['time']:.0f}s")


# ---------------------------------------------------------------------------
# Criterion 5: active learning decreases held-out accumulated variance
# ---------------------------------------------------------------------------

def _held_out_variance_curve(raw_counts, X_full, theta, Z_eval):
    """Sum of posterior variances at Z_eval conditioned on growing prefixes
    of X_full, sharing one Cholesky factor of the largest set."""
    K = gp.gram(X_full, X_full, theta)
    K[np.diag_indices_from(K)] += theta.sigma_eps ** 2
    L = np.linalg.cholesky(K)
    Ks = gp.gram(X_full, Z_eval, theta)
    prior = theta.sigma_f ** 2
    out = []
    for n in raw_counts:
        V = solve_triangular(L[:n, :n], Ks[:n], lower=True,
                             check_finite=False)
        out.append(float(np.sum(prior - np.einsum("ij,ij->j", V, V))))
    return out


def run_criterion_5(gains):
    t0 = time.perf_counter()
    gains_lo, gains_la = gains
    p_nom = VehicleParams()
    plant = _mismatched_plant()
    traj = track.lemniscate_trajectory(a=4.0, v=1.25)

    seed_run = simulate.run_closed_loop(traj, plant, gains_lo, gains_la,
                                        p_nom, duration=20.0)
    d_lo, d_la = gp.build_datasets(seed_run.log, p_nom)
    models = control.GpModels(
        lo=gp.train_sparse(d_lo, 20, seed=0, max_iter=80),
        la=gp.train_sparse(d_la, 20, seed=0, max_iter=80))
    theta_lo, theta_la = models.lo.theta, models.la.theta

    held_out = track.lemniscate_trajectory(a=5.0, v=1.1)
    ro = simulate.run_nominal_rollout(held_out, p_nom, gains_lo, gains_la,
                                      duration=12.0, dt=1.0 / 15.0)
    Z_eval = ro.z

    params = track.TrajectoryParams(
        s_nodes=track.equidistant_nodes(traj.path, 7),
        W=np.zeros(7), V=np.full(7, 1.25))
    cfg = active_learning.RolloutConfig(
        theta_lo=theta_lo, theta_la=theta_la, gains_lo=gains_lo,
        gains_la=gains_la, p=p_nom, duration=8.0)
    bo = active_learning.BoConfig(n_init=6, n_iter=4, seed=0)
    adapt = simulate.AdaptConfig(Z=20, n_alpha=5, alpha=0.1,
                                 update_hyperparams=False)

    # evaluation conditioning sets: stride-thinned copies of the raw data
    # that still grow by concatenation, so each round's set is a prefix of
    # the final one and variances stay monotone
    stride = 8
    raw_lo, raw_la = d_lo, d_la
    ev_lo, ev_la = [d_lo.X[::stride]], [d_la.X[::stride]]
    counts = [len(ev_lo[0])]
    for _ in range(5):
        n_lo, n_la = len(raw_lo), len(raw_la)
        out = active_learning.active_learning_round(
            models, traj, params, cfg, plant, bo=bo, adapt=adapt,
            raw_lo=raw_lo, raw_la=raw_la)
        models, raw_lo, raw_la = out.models, out.raw_lo, out.raw_la
        ev_lo.append(raw_lo.X[n_lo::stride])
        ev_la.append(raw_la.X[n_la::stride])
        counts.append(counts[-1] + len(ev_lo[-1]))

    J_lo = _held_out_variance_curve(counts, np.vstack(ev_lo), theta_lo, Z_eval)
    J_la = _held_out_variance_curve(counts, np.vstack(ev_la), theta_la, Z_eval)
    J = [a + b for a, b in zip(J_lo, J_la)]
    return {"J": J, "time": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def crit5(gains):
    return run_criterion_5(gains)


def test_criterion_5_active_learning_monotonicity(crit5):
    J = crit5["J"]
    drops = [J[k + 1] < 1.01 * J[k] for k in range(5)]
    total = 1.0 - J[-1] / J[0]
    ok = all(drops) and total >= 0.30 and crit5["time"] < 900.0
    assert announce(5, "active-learning monotonicity", ok,
                    "J_GP " + " -> ".join(f"{j:.1f}" for j in J)
                    + f", total -{100 * total:.0f}%, {crit5['time']:.0f}s")


# ---------------------------------------------------------------------------
# Criterion 6: scalar analytic L2 oracle
# ---------------------------------------------------------------------------

def run_criterion_6():
    t0 = time.perf_counter()
    cfg = certify.CertifyConfig(x_box=np.array([[-1.0, 1.0]]),
                                w_box=np.array([[-1.0, 1.0]]),
                                grid_pts=5, mc_samples=1_000_000, seed=0)
    cert = certify.certify_l2(certify.ScalarTestLoop(), cfg)
    return {"gamma": cert.gamma, "status": cert.status,
            "iters": cert.iterations, "audit": cert.audit_residual,
            "time": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def crit6():
    return run_criterion_6()


def test_criterion_6_l2_analytic_oracle(crit6):
    r = crit6
    ok = (r["status"] == "verified" and 0.999 <= r["gamma"] <= 1.01
          and r["time"] < 60.0)
    assert announce(6, "L2 analytic oracle", ok,
                    f"gamma {r['gamma']:.6f}, {r['status']}, "
                    f"{r['time']:.1f}s")


# ---------------------------------------------------------------------------
# Criterion 7: nominal closed-loop certification
# ---------------------------------------------------------------------------

def _cert_cfg(mc_samples=1_000_000, seed=0):
    return certify.CertifyConfig(
        x_box=CERT_BOX_SCALE * certify.X_BOX_DEFAULT,
        w_box=CERT_BOX_SCALE * certify.W_BOX_DEFAULT,
        mc_samples=mc_samples, margin=CERT_MARGIN, seed=seed)


def run_criterion_7(gains):
    t0 = time.perf_counter()
    gains_lo, gains_la = gains
    p_nom = VehicleParams()
    loop = certify.assemble_closed_loop(
        certify.PlantRealization(p=p_nom), gains_lo, gains_la, p_nom,
        filter_cutoff=CERT_FILTER_CUTOFF)
    cert = certify.certify_l2(loop, _cert_cfg())
    return {"gamma": cert.gamma, "status": cert.status,
            "iters": cert.iterations, "audit": cert.audit_residual,
            "time": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def crit7(gains):
    return run_criterion_7(gains)


def test_criterion_7_nominal_certification(crit7):
    r = crit7
    ok = (r["status"] == "verified" and np.isfinite(r["gamma"])
          and r["gamma"] <= 0.5 and r["iters"] <= 400
          and r["audit"] <= 1e-6 and r["time"] < 1800.0)
    assert announce(7, "nominal closed-loop certification", ok,
                    f"gamma {r['gamma']:.4f}, {r['iters']} iters, audit "
                    f"{r['audit']:.2e}, {r['status']}, {r['time']:.0f}s")


# ---------------------------------------------------------------------------
# Criterion 8: desk-scale plant-grid sweep
# ---------------------------------------------------------------------------

def _sweep_strategy():
    return certify.SweepStrategy(N_act=2, filter_cutoff=CERT_FILTER_CUTOFF)


def run_criterion_8(gains, Xi=None, seed_from_nominal=True):
    t0 = time.perf_counter()
    gains_lo, gains_la = gains
    p_nom = VehicleParams()
    if Xi is None:
        Xi = certify.xi_grid(p_nom, pts_per_dim=2, rel=0.30)
    rows = certify.grid_sweep(Xi, p_nom, gains_lo, gains_la,
                              strategy=_sweep_strategy(),
                              cfg=_cert_cfg(mc_samples=100_000),
                              jobs=1, seed_from_nominal=seed_from_nominal)
    return {"rows": [{k: r[k] for k in ("xi", "gamma", "status", "iters")}
                     for r in rows],
            "time": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def crit8(gains):
    return run_criterion_8(gains)


def test_criterion_8_desk_scale_sweep(crit8):
    rows = crit8["rows"]
    ref, cells = rows[0], rows[1:]
    n_ok = sum(r["status"] == "verified" for r in cells)
    g_ref = ref["gamma"]
    in_band = [0.5 * g_ref <= r["gamma"] <= 1.5 * g_ref
               for r in cells if r["status"] == "verified"]
    ok = (len(cells) == 64 and ref["status"] == "verified"
          and n_ok >= 0.9 * len(cells) and all(in_band)
          and crit8["time"] < 4 * 3600.0)
    assert announce(8, "desk-scale sweep", ok,
                    f"{n_ok}/64 verified, gamma_ref {g_ref:.4f}, "
                    f"{sum(in_band)}/{len(in_band)} in band, "
                    f"{crit8['time'] / 60:.0f} min")


# ---------------------------------------------------------------------------
# Criterion 9: determinism of criteria 4-8 under identical seeds
# ---------------------------------------------------------------------------

def test_criterion_9_determinism(gains, crit4, crit5, crit6, crit7, crit8):
    same = []
    r4 = run_criterion_4(gains)
    same.append(all(r4[k] == crit4[k] for k in
                    ("rms_e_nom", "rms_e_ad", "rms_s_nom", "rms_s_ad",
                     "max_e_ad")))
    r5 = run_criterion_5(gains)
    same.append(r5["J"] == crit5["J"])
    r6 = run_criterion_6()
    same.append(all(r6[k] == crit6[k] for k in
                    ("gamma", "status", "iters", "audit")))
    r7 = run_criterion_7(gains)
    same.append(all(r7[k] == crit7[k] for k in
                    ("gamma", "status", "iters", "audit")))
    # sweep determinism on a fixed subset of cells: the reference cell plus
    # the first seven grid cells, rerun with identical seeds
    p_nom = VehicleParams()
    Xi_sub = certify.xi_grid(p_nom, pts_per_dim=2, rel=0.30)[:7]
    r8 = run_criterion_8(gains, Xi=Xi_sub)
    first = crit8["rows"][:8]
    again = r8["rows"]
    same.append(len(again) == 8 and all(
        a["status"] == b["status"] and a["iters"] == b["iters"]
        and (a["gamma"] == b["gamma"]
             or (np.isnan(a["gamma"]) and np.isnan(b["gamma"])))
        for a, b in zip(again, first)))
    ok = all(same)
    labels = ["c4", "c5", "c6", "c7", "c8-subset"]
    detail = ", ".join(f"{l}={'ok' if s else 'DIFF'}"
                       for l, s in zip(labels, same))
    assert announce(9, "determinism", ok, detail)
