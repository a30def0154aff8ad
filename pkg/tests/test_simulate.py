"""Closed-loop simulator tests on small, fast scenarios."""

import numpy as np
import pytest

from gptrack import control, gp, simulate, track
from gptrack.dynamics import VehicleParams
from gptrack.errors import ValidationError
from gptrack.simulate import AdaptConfig, PlantSpec


@pytest.fixture(scope="module")
def gains():
    return control.synth_default_gains(VehicleParams())


@pytest.fixture(scope="module")
def traj():
    return track.lemniscate_trajectory(a=4.0, v=1.25)


class TestPlantSpec:
    def test_steering_map(self):
        spec = PlantSpec(p=VehicleParams(), c_1=0.85, c_0=0.15)
        assert spec.apply_steering(0.2) == pytest.approx(0.85 * 0.2 + 0.15)

    def test_rejects_nonpositive_gain(self):
        with pytest.raises(ValidationError):
            PlantSpec(p=VehicleParams(), c_1=0.0)


class TestAdaptConfig:
    def test_validation(self):
        with pytest.raises(ValidationError):
            AdaptConfig(Z=0)
        with pytest.raises(ValidationError):
            AdaptConfig(sample_stride=0)
        with pytest.raises(ValidationError):
            AdaptConfig(alpha=-0.1)


class TestClosedLoop:
    def test_nominal_tracking_is_tight(self, gains, traj):
        """An unperturbed plant with the nominal controller stays close to
        an easy figure-eight reference."""
        gains_lo, gains_la = gains
        easy = track.lemniscate_trajectory(a=6.0, v=1.0)
        res = simulate.run_closed_loop(easy, PlantSpec(p=VehicleParams()),
                                       gains_lo, gains_la, VehicleParams(),
                                       duration=10.0)
        assert not res.diverged
        e_s = res.log["e_s"]
        assert np.sqrt(np.mean(e_s ** 2)) < 0.05
        # speed settles near the reference
        assert abs(res.log["vx"][-1] - 1.0) < 0.1

    def test_log_schema_and_rate(self, gains, traj):
        gains_lo, gains_la = gains
        res = simulate.run_closed_loop(traj, PlantSpec(p=VehicleParams()),
                                       gains_lo, gains_la, VehicleParams(),
                                       duration=2.0)
        for k in simulate.LOG_COLUMNS:
            assert k in res.log and len(res.log[k]) == len(res)
        dt = np.diff(res.log["t"])
        assert np.allclose(dt, 1.0 / 60.0, atol=1e-12)
        assert len(res) == 120

    def test_progress_monotone_across_laps(self, gains):
        """Lap unwrapping keeps the logged progress monotone on a closed
        path even after crossing s = L."""
        gains_lo, gains_la = gains
        traj = track.lemniscate_trajectory(a=4.0, v=1.5)
        dur = 1.2 * traj.path.L / 1.5
        res = simulate.run_closed_loop(traj, PlantSpec(p=VehicleParams()),
                                       gains_lo, gains_la, VehicleParams(),
                                       duration=dur)
        assert not res.diverged
        s = res.log["s"]
        assert s[-1] > traj.path.L  # at least one full lap
        assert np.all(np.diff(s) > -1e-6)

    def test_divergence_flag(self, gains, traj):
        """A grossly wrong plant triggers the divergence guard."""
        gains_lo, gains_la = gains
        bad = PlantSpec(p=VehicleParams(), c_1=1.0, c_0=0.45)
        with pytest.warns(UserWarning):
            res = simulate.run_closed_loop(
                traj, bad, gains_lo, gains_la, VehicleParams(), duration=20.0,
                e_s_limit=0.3)
        assert res.diverged
        assert len(res) < 1200

    def test_deterministic(self, gains, traj):
        gains_lo, gains_la = gains
        spec = PlantSpec(p=VehicleParams(), c_1=0.9, c_0=0.05)
        a = simulate.run_closed_loop(traj, spec, gains_lo, gains_la,
                                     VehicleParams(), duration=3.0)
        b = simulate.run_closed_loop(traj, spec, gains_lo, gains_la,
                                     VehicleParams(), duration=3.0)
        for k in simulate.LOG_COLUMNS:
            assert np.array_equal(a.log[k], b.log[k])

    def test_online_updates_move_models(self, gains, traj):
        gains_lo, gains_la = gains
        p = VehicleParams()
        spec = PlantSpec(p=p.with_overrides(I_z=p.I_z * 1.15), c_1=0.9)
        seed_run = simulate.run_closed_loop(traj, spec, gains_lo, gains_la, p,
                                            duration=6.0)
        d_lo, d_la = gp.build_datasets(seed_run.log, p)
        models = control.GpModels(
            lo=gp.train_sparse(d_lo, 15, seed=0, max_iter=40),
            la=gp.train_sparse(d_la, 15, seed=0, max_iter=40))
        adapt = AdaptConfig(Z=20, n_alpha=2, alpha=0.05, sample_stride=4)
        res = simulate.run_closed_loop(traj, spec, gains_lo, gains_la, p,
                                       models=models, adapt=adapt,
                                       duration=4.0)
        assert not res.diverged
        assert res.models is not None
        assert not np.array_equal(res.models.lo.X_M, models.lo.X_M)


class TestLogCsv:
    def test_roundtrip(self, tmp_path, gains, traj):
        gains_lo, gains_la = gains
        res = simulate.run_closed_loop(traj, PlantSpec(p=VehicleParams()),
                                       gains_lo, gains_la, VehicleParams(),
                                       duration=1.0)
        path = tmp_path / "log.csv"
        simulate.write_log_csv(res.log, path)
        header = path.read_text().splitlines()[0]
        assert header == "t,s,s_ref,e_s,theta_e,vx,vy,omega,d,delta,v_ref,v_r"
        back = simulate.read_log_csv(path)
        for k in simulate.LOG_COLUMNS:
            assert np.allclose(back[k], res.log[k], atol=1e-9)


class TestNominalRollout:
    def test_tracks_and_records_inputs(self, gains, traj):
        gains_lo, gains_la = gains
        ro = simulate.run_nominal_rollout(traj, VehicleParams(), gains_lo,
                                          gains_la, duration=6.0, dt=1.0 / 15.0)
        assert not ro.diverged
        assert ro.z.shape == (ro.n_steps, 3)
        assert np.all(np.abs(ro.states[:, 1]) < 0.5)

    def test_truncates_outside_sanity_box(self, gains, traj):
        """Destabilized lateral feedback drives e_s out of the sanity box;
        the rollout must truncate with the flag instead of erroring."""
        import dataclasses

        gains_lo, gains_la = gains
        unstable = control.LpvGains(
            Y=-gains_la.Y, X=gains_la.X, degree=gains_la.degree,
            rho_min=gains_la.rho_min, rho_max=gains_la.rho_max,
            grid=gains_la.grid, Q=gains_la.Q, R=gains_la.R)
        with pytest.warns(UserWarning):
            ro = simulate.run_nominal_rollout(traj, VehicleParams(), gains_lo,
                                              unstable, duration=20.0,
                                              dt=1.0 / 15.0)
        assert ro.diverged
        assert ro.n_steps < 300
