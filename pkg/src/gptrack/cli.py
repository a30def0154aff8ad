"""Command-line front end: scenario configs, orchestration, metrics, reports.

A single YAML file (``schema: 1``) describes a scenario: plant perturbation,
trajectory, controller mode and learning knobs, seeds. Each subcommand reads
the sections it needs and writes its artifacts plus a replay manifest into
the output directory.

Plant perturbation vocabulary mirrors a physical alteration of the vehicle:
a distorted steering map delta_hat = c_1 * delta + c_0, absolute parameter
``overrides`` (e.g. a heavier flywheel raising I_z) and multiplicative
``scale`` factors. Tire-contact alterations (wheel friction / radius) have
no direct counterpart in the single-track parameterization and are emulated
by scaling C_f, C_r and C_m1; this mapping is an interpretation, not an
identity.

Exit codes: 0 success, 2 validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__, active_learning, certify, control, gp, simulate, track
from .dynamics import VehicleParams
from .errors import GptrackError, NumericError, ValidationError

SCHEMA_VERSION = 1

#: Parameter names accepted by ``overrides`` and ``scale``.
PARAM_FIELDS = tuple(f.name for f in dataclasses.fields(VehicleParams))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario description (see module docstring for the schema)."""

    raw: dict
    path: Path
    digest: str

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    def section(self, name: str, default=None) -> dict:
        val = self.raw.get(name, default if default is not None else {})
        if not isinstance(val, dict):
            raise ValidationError(f"config section '{name}' must be a mapping")
        return val


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    blob = path.read_bytes()
    try:
        raw = yaml.safe_load(blob)
    except yaml.YAMLError as exc:
        raise ValidationError(f"config parse error: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError("config root must be a mapping")
    if raw.get("schema") != SCHEMA_VERSION:
        raise ValidationError(
            f"config must declare 'schema: {SCHEMA_VERSION}'")
    return ScenarioConfig(raw=raw, path=path,
                          digest=hashlib.sha256(blob).hexdigest())


def build_plant(cfg: ScenarioConfig) -> simulate.PlantSpec:
    """Perturbed true plant from the ``plant`` section."""
    sec = cfg.section("plant")
    values = {f: getattr(VehicleParams(), f) for f in PARAM_FIELDS}
    for name, val in sec.get("overrides", {}).items():
        if name not in values:
            raise ValidationError(f"unknown plant parameter '{name}'")
        values[name] = float(val)
    for name, fac in sec.get("scale", {}).items():
        if name not in values:
            raise ValidationError(f"unknown plant parameter '{name}'")
        values[name] *= float(fac)
    return simulate.PlantSpec(p=VehicleParams(**values),
                              c_1=float(sec.get("c_1", 1.0)),
                              c_0=float(sec.get("c_0", 0.0)))


def build_trajectory(cfg: ScenarioConfig) -> track.Trajectory:
    sec = cfg.section("trajectory", {"kind": "lemniscate"})
    kind = sec.get("kind", "lemniscate")
    if kind == "lemniscate":
        return track.lemniscate_trajectory(a=float(sec.get("a", 4.0)),
                                           v=float(sec.get("v", 1.25)))
    if kind == "file":
        csv_path, json_path = sec.get("csv"), sec.get("json")
        for p in (csv_path, json_path):
            if p is None or not Path(p).is_file():
                raise ValidationError(f"trajectory file not found: {p}")
        return track.load_trajectory(csv_path, json_path)
    raise ValidationError(f"unknown trajectory kind '{kind}'")


def _load_models(sec: dict) -> control.GpModels:
    for key in ("lo", "la", "lo_data", "la_data"):
        p = sec.get(key)
        if p is None or not Path(p).is_file():
            raise ValidationError(f"model file missing for '{key}': {p}")
    lo = gp.load_model(sec["lo"], gp.Dataset.from_csv(sec["lo_data"]))
    la = gp.load_model(sec["la"], gp.Dataset.from_csv(sec["la_data"]))
    return control.GpModels(lo=lo, la=la)


def _adapt_config(sec: dict) -> simulate.AdaptConfig:
    return simulate.AdaptConfig(
        Z=int(sec.get("Z", 20)), n_alpha=int(sec.get("n_alpha", 5)),
        alpha=float(sec.get("alpha", 0.1)),
        update_hyperparams=bool(sec.get("update_hyperparams", True)))


def write_manifest(out: Path, cfg: ScenarioConfig, command: str,
                   seed: int, extra: dict | None = None) -> None:
    """Replay manifest: config hash, seeds, module versions."""
    manifest = {
        "command": command,
        "config_path": str(cfg.path),
        "config_sha256": cfg.digest,
        "seed": seed,
        "versions": {
            "gptrack": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Metrics and scenario execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunMetrics:
    """Tracking-error statistics of one closed-loop run."""

    max_e_s: float
    max_s_err: float
    rms_e_s: float
    rms_s_err: float
    mean_cycle_time: float
    diverged: bool = False

    def __post_init__(self):
        if self.rms_e_s > self.max_e_s + 1e-12:
            raise ValidationError("RMS(e_s) exceeds max|e_s|")
        if self.rms_s_err > self.max_s_err + 1e-12:
            raise ValidationError("RMS(s_err) exceeds max|s_err|")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def metrics(log: dict, mean_cycle_time: float = 0.0,
            diverged: bool = False) -> RunMetrics:
    """Max and RMS of the lateral and progress errors of a log."""
    e_s = np.asarray(log["e_s"], dtype=float)
    if len(e_s) == 0:
        raise ValidationError("empty log")
    s_err = np.asarray(log["s"], dtype=float) - np.asarray(log["s_ref"],
                                                           dtype=float)
    rms = lambda v: float(np.sqrt(np.mean(v ** 2)))
    return RunMetrics(max_e_s=float(np.max(np.abs(e_s))),
                      max_s_err=float(np.max(np.abs(s_err))),
                      rms_e_s=rms(e_s), rms_s_err=rms(s_err),
                      mean_cycle_time=mean_cycle_time, diverged=diverged)


def run_scenario(cfg: ScenarioConfig, out: Path | None = None,
                 seed: int | None = None) -> tuple[dict, RunMetrics]:
    """Simulate the configured scenario; optionally write log and metrics."""
    plant = build_plant(cfg)
    traj = build_trajectory(cfg)
    ctrl_sec = cfg.section("controller")
    mode = ctrl_sec.get("mode", "nominal")
    if mode not in ("nominal", "adaptive"):
        raise ValidationError(f"controller mode must be nominal|adaptive, "
                              f"got '{mode}'")
    p_nom = VehicleParams()
    gains_lo, gains_la = _default_gains(ctrl_sec, p_nom)
    models, adapt = None, None
    if mode == "adaptive":
        models = _load_models(ctrl_sec.get("models", {}))
        adapt = _adapt_config(ctrl_sec.get("adapt", {}))

    duration = cfg.raw.get("duration")
    t0 = time.perf_counter()
    res = simulate.run_closed_loop(
        traj, plant, gains_lo, gains_la, p_nom, models=models, adapt=adapt,
        duration=None if duration is None else float(duration),
        k_v=float(ctrl_sec.get("k_v", control.K_V_DEFAULT)))
    elapsed = time.perf_counter() - t0
    n = max(len(res.log["t"]), 1)
    m = metrics(res.log, mean_cycle_time=elapsed / n, diverged=res.diverged)

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        simulate.write_log_csv(res.log, out / "log.csv")
        with open(out / "metrics.json", "w") as fh:
            json.dump(m.to_dict(), fh, indent=2, sort_keys=True)
        write_manifest(out, cfg, "sim",
                       cfg.seed if seed is None else seed,
                       extra={"controller_mode": mode})
    return res.log, m


def _default_gains(sec: dict, p_nom: VehicleParams):
    """Load gains from files when given, else synthesize the defaults."""
    g = sec.get("gains", {})
    if g:
        for key in ("lo", "la"):
            if g.get(key) is None or not Path(g[key]).is_file():
                raise ValidationError(f"gain file missing for '{key}'")
        return control.load_gains(g["lo"]), control.load_gains(g["la"])
    return control.synth_default_gains(p_nom)


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("run", "mode", "max_e_s", "rms_e_s", "max_s_err",
                  "rms_s_err", "mean_cycle_time")


def report(run_dirs, out: Path) -> dict:
    """Comparison table across runs plus rendered figures.

    Each run directory must contain ``metrics.json`` and ``log.csv`` as
    written by the sim subcommand. Missing metric values render as empty
    cells. Rows are ordered by run id.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    runs = []
    for d in sorted(Path(d) for d in run_dirs):
        if not (d / "metrics.json").is_file():
            raise ValidationError(f"no metrics.json in {d}")
        with open(d / "metrics.json") as fh:
            met = json.load(fh)
        mode = ""
        if (d / "manifest.json").is_file():
            with open(d / "manifest.json") as fh:
                mode = json.load(fh).get("controller_mode", "")
        log = (simulate.read_log_csv(d / "log.csv")
               if (d / "log.csv").is_file() else None)
        runs.append({"run": d.name, "mode": mode, "metrics": met, "log": log})
    if not runs:
        raise ValidationError("report needs at least one run directory")

    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for r in runs:
        row = {"run": r["run"], "mode": r["mode"]}
        for k in REPORT_COLUMNS[2:]:
            v = r["metrics"].get(k)
            row[k] = "" if v is None else f"{v:.6g}"
        rows.append(row)
    with open(out / "report.csv", "w") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(str(row[k]) for k in REPORT_COLUMNS) + "\n")
    with open(out / "report.json", "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)

    figures = []
    with_logs = [r for r in runs if r["log"] is not None]
    if with_logs:
        fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
        for r in with_logs:
            log = r["log"]
            axes[0].plot(log["t"], log["e_s"], label=r["run"])
            axes[1].plot(log["t"], log["s"] - log["s_ref"], label=r["run"])
        axes[0].set_ylabel("e_s [m]")
        axes[1].set_ylabel("s - s_ref [m]")
        axes[1].set_xlabel("t [s]")
        axes[0].legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out / "errors.png", dpi=150)
        plt.close(fig)
        figures.append("errors.png")

        fig, ax = plt.subplots(figsize=(6, 5))
        for r in with_logs:
            log = r["log"]
            ax.plot(log["vx"], np.abs(log["e_s"]), ".", ms=2, label=r["run"])
        ax.set_xlabel("v_x [m/s]")
        ax.set_ylabel("|e_s| [m]")
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out / "error_vs_speed.png", dpi=150)
        plt.close(fig)
        figures.append("error_vs_speed.png")
    return {"rows": rows, "figures": figures}


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_sim(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    _, m = run_scenario(cfg, out=out, seed=args.seed)
    print(f"sim: max|e_s|={m.max_e_s:.4f} rms(e_s)={m.rms_e_s:.4f} "
          f"max|s_err|={m.max_s_err:.4f} rms(s_err)={m.rms_s_err:.4f} "
          f"diverged={m.diverged}")
    return 0


def _train_models(cfg: ScenarioConfig, out: Path, seed: int):
    sec = cfg.section("gp")
    M = int(sec.get("M", 30))
    data = cfg.section("data")
    if "log" in data:
        log_path = Path(data["log"])
        if not log_path.is_file():
            raise ValidationError(f"log file not found: {log_path}")
        log = simulate.read_log_csv(log_path)
        log["kappa"] = _recover_kappa(cfg, log)
        d_lo, d_la = gp.build_datasets(log, VehicleParams())
    else:
        for key in ("lo_csv", "la_csv"):
            if data.get(key) is None or not Path(data[key]).is_file():
                raise ValidationError(f"dataset file missing for '{key}'")
        d_lo = gp.Dataset.from_csv(data["lo_csv"])
        d_la = gp.Dataset.from_csv(data["la_csv"])
    model_lo = gp.train_sparse(d_lo, M, seed=seed,
                               max_iter=int(sec.get("max_iter", 200)))
    model_la = gp.train_sparse(d_la, M, seed=seed,
                               max_iter=int(sec.get("max_iter", 200)))
    out.mkdir(parents=True, exist_ok=True)
    gp.save_model(model_lo, out / "model_lo.json")
    gp.save_model(model_la, out / "model_la.json")
    d_lo.to_csv(out / "data_lo.csv")
    d_la.to_csv(out / "data_la.csv")
    return model_lo, model_la, d_lo, d_la


def _recover_kappa(cfg: ScenarioConfig, log: dict) -> np.ndarray:
    """Curvature along a logged run, re-evaluated on the config trajectory."""
    traj = build_trajectory(cfg)
    return np.asarray([float(traj.path.curvature(s % traj.path.L))
                       for s in log["s"]])


def _cmd_gp_train(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out)
    model_lo, model_la, d_lo, d_la = _train_models(cfg, out, seed)
    write_manifest(out, cfg, "gp-train", seed,
                   extra={"M": model_lo.M, "N_lo": len(d_lo),
                          "N_la": len(d_la)})
    print(f"gp-train: M={model_lo.M} N_lo={len(d_lo)} N_la={len(d_la)}")
    return 0


def _cmd_gp_update(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out)
    models = _load_models(cfg.section("controller").get("models", {}))
    adapt = _adapt_config(cfg.section("controller").get("adapt", {}))
    batch_sec = cfg.section("batch")
    for key in ("lo_csv", "la_csv"):
        if batch_sec.get(key) is None or not Path(batch_sec[key]).is_file():
            raise ValidationError(f"batch file missing for '{key}'")
    b_lo = gp.Dataset.from_csv(batch_sec["lo_csv"])
    b_la = gp.Dataset.from_csv(batch_sec["la_csv"])
    lo, _ = gp.rgb_update(models.lo, b_lo, alpha=adapt.alpha,
                          n_alpha=adapt.n_alpha,
                          update_hyperparams=adapt.update_hyperparams)
    la, _ = gp.rgb_update(models.la, b_la, alpha=adapt.alpha,
                          n_alpha=adapt.n_alpha,
                          update_hyperparams=adapt.update_hyperparams)
    out.mkdir(parents=True, exist_ok=True)
    gp.save_model(lo, out / "model_lo.json")
    gp.save_model(la, out / "model_la.json")
    write_manifest(out, cfg, "gp-update", seed)
    print(f"gp-update: applied batches of {len(b_lo)}/{len(b_la)} points")
    return 0


def _cmd_lqr_synth(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gains_lo, gains_la = control.synth_default_gains(VehicleParams())
    control.save_gains(gains_lo, out / "gains_lo.json")
    control.save_gains(gains_la, out / "gains_la.json")
    write_manifest(out, cfg, "lqr-synth", cfg.seed if args.seed is None
                   else args.seed)
    print(f"lqr-synth: degree={gains_lo.degree} grids "
          f"{len(gains_lo.grid)}/{len(gains_la.grid)} points")
    return 0


def _cmd_active_learn(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plant = build_plant(cfg)
    traj = build_trajectory(cfg)
    p_nom = VehicleParams()
    gains_lo, gains_la = _default_gains(cfg.section("controller"), p_nom)
    sec = cfg.section("active")
    rounds = int(sec.get("rounds", 2))
    n_nodes = int(sec.get("nodes", 7))
    collect = float(sec.get("collect_duration", 20.0))

    res = simulate.run_closed_loop(traj, plant, gains_lo, gains_la, p_nom,
                                   duration=collect)
    d_lo, d_la = gp.build_datasets(res.log, p_nom)
    M = int(cfg.section("gp").get("M", 30))
    model_lo = gp.train_sparse(d_lo, M, seed=seed, max_iter=80)
    model_la = gp.train_sparse(d_la, M, seed=seed, max_iter=80)
    models = control.GpModels(lo=model_lo, la=model_la)

    v_min = float(sec.get("v_min", 0.5))
    params = track.TrajectoryParams(
        s_nodes=track.equidistant_nodes(traj.path, n_nodes),
        W=np.zeros(n_nodes), V=np.full(n_nodes, v_min),
        w_b=float(sec.get("w_b", 0.5)),
        v_min=v_min, v_max=float(sec.get("v_max", 2.0)))
    ro_cfg = active_learning.RolloutConfig(
        theta_lo=model_lo.theta, theta_la=model_la.theta,
        gains_lo=gains_lo, gains_la=gains_la, p=p_nom,
        duration=float(sec.get("rollout_duration", 8.0)))
    bo_sec = sec.get("bo", {})
    bo = active_learning.BoConfig(n_init=int(bo_sec.get("n_init", 10)),
                                  n_iter=int(bo_sec.get("n_iter", 10)),
                                  seed=seed)
    adapt = _adapt_config(cfg.section("controller").get("adapt", {}))

    raw_lo, raw_la = d_lo, d_la
    summary = []
    for r in range(rounds):
        outr = active_learning.active_learning_round(
            models, traj, params, ro_cfg, plant, bo=bo, adapt=adapt,
            raw_lo=raw_lo, raw_la=raw_la)
        models, raw_lo, raw_la = outr.models, outr.raw_lo, outr.raw_la
        active_learning.save_bo_trace(outr.bo_state,
                                      out / f"bo_round_{r}.csv")
        summary.append((r, outr.J_best, len(raw_lo)))
        print(f"active-learn: round {r} J_best={outr.J_best:.4f} "
              f"raw={len(raw_lo)}")
    gp.save_model(models.lo, out / "model_lo.json")
    gp.save_model(models.la, out / "model_la.json")
    raw_lo.to_csv(out / "data_lo.csv")
    raw_la.to_csv(out / "data_la.csv")
    with open(out / "rounds.csv", "w") as fh:
        fh.write("round,J_best,n_raw\n")
        for r, j, n in summary:
            fh.write(f"{r},{j:.10g},{n}\n")
    write_manifest(out, cfg, "active-learn", seed,
                   extra={"rounds": rounds})
    return 0


def _cmd_certify(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sec = cfg.section("certify")
    p_nom = VehicleParams()
    gains_lo, gains_la = _default_gains(cfg.section("controller"), p_nom)
    xi = sec.get("xi")
    plant = (certify.PlantRealization(p=p_nom, tag="nominal") if xi is None
             else certify.PlantRealization.from_xi(np.asarray(xi, float),
                                                   p_nom))
    models = None
    models_sec = cfg.section("controller").get("models")
    if models_sec:
        models = _load_models(models_sec)
    loop = certify.assemble_closed_loop(
        plant, gains_lo, gains_la, p_nom, models=models,
        filter_cutoff=float(sec.get("filter_cutoff", certify.FILTER_CUTOFF)))
    scale = float(sec.get("box_scale", 1.0))
    ccfg = certify.CertifyConfig(
        x_box=scale * certify.X_BOX_DEFAULT,
        w_box=scale * certify.W_BOX_DEFAULT,
        grid_pts=int(sec.get("grid_pts", 3)),
        max_iters=int(sec.get("max_iters", 400)),
        verifier_starts=int(sec.get("verifier_starts", 20)),
        mc_samples=int(sec.get("mc_samples", 1_000_000)),
        margin=float(sec.get("margin", 0.0)),
        cloud=int(sec.get("cloud", 0)), seed=seed)
    cert = certify.certify_l2(loop, ccfg)
    cert.to_json(out / "certificate.json",
                 extra={"filter_cutoff": loop.omega_c / (2.0 * np.pi),
                        "xi": None if xi is None else list(map(float, xi))})
    write_manifest(out, cfg, "certify", seed, extra={"status": cert.status})
    print(f"certify: status={cert.status} gamma={cert.gamma:.6f} "
          f"iters={cert.iterations} audit={cert.audit_residual:.3g}")
    return 0 if cert.status == "verified" else 3


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sec = cfg.section("sweep")
    p_nom = VehicleParams()
    gains_lo, gains_la = _default_gains(cfg.section("controller"), p_nom)
    Xi = certify.xi_grid(p_nom, pts_per_dim=int(sec.get("pts_per_dim", 2)),
                         rel=float(sec.get("rel", 0.30)))
    strat = certify.SweepStrategy(
        M=int(sec.get("M", 20)), N_act=int(sec.get("N_act", 2)),
        seed=seed, use_models=bool(sec.get("use_models", True)),
        filter_cutoff=float(sec.get("filter_cutoff",
                                    certify.FILTER_CUTOFF)))
    csec = cfg.section("certify")
    scale = float(csec.get("box_scale", 1.0))
    ccfg = certify.CertifyConfig(
        x_box=scale * certify.X_BOX_DEFAULT,
        w_box=scale * certify.W_BOX_DEFAULT,
        grid_pts=int(csec.get("grid_pts", 3)),
        max_iters=int(csec.get("max_iters", 400)),
        mc_samples=int(csec.get("mc_samples", 100_000)),
        margin=float(csec.get("margin", 0.0)),
        cloud=int(csec.get("cloud", 0)), seed=seed)
    rows = certify.grid_sweep(Xi, p_nom, gains_lo, gains_la,
                              strategy=strat, cfg=ccfg, jobs=args.jobs)
    certify.write_sweep_csv(rows, out / "sweep.csv")
    write_manifest(out, cfg, "sweep", seed, extra={"cells": len(rows)})
    ok = sum(r["status"] == "verified" for r in rows)
    print(f"sweep: {ok}/{len(rows)} cells verified")
    return 0


def _cmd_report(args) -> int:
    out = Path(args.out)
    res = report(args.runs, out)
    print(f"report: {len(res['rows'])} runs, figures: "
          f"{', '.join(res['figures']) or 'none'}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gptrack",
                                 description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, needs_config=True):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=1)
        p.set_defaults(fn=fn)
        return p

    add("sim", _cmd_sim)
    add("gp-train", _cmd_gp_train)
    add("gp-update", _cmd_gp_update)
    add("lqr-synth", _cmd_lqr_synth)
    add("active-learn", _cmd_active_learn)
    add("certify", _cmd_certify)
    add("sweep", _cmd_sweep)
    rep = add("report", _cmd_report, needs_config=False)
    rep.add_argument("runs", nargs="+")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, GptrackError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
