"""Time-stepping tests: fixed points, decay oracles, symmetries, guards."""

import numpy as np
import pytest

from torusflow import (
    Background,
    ConformalMetric,
    FlowConfig,
    FlowDegeneracyError,
    FlowError,
    FlowState,
    ScalarField,
    field_from_fn,
    make_grid,
    run_flow,
    scalar_curvature,
    stable_dt,
    step_rk4,
    yamabe_rhs,
)
from torusflow.diagnostics import flat_distance

from conftest import metric, positive_band_field


def single_mode(grid, eps):
    return field_from_fn(grid, lambda *xs: 1 + eps * np.cos(2 * np.pi * xs[0]))


class TestYamabeRhs:
    def test_flat_constant_is_static(self, flat16, grid16):
        rhs = yamabe_rhs(metric(flat16, np.full(grid16.shape, 2.0)))
        assert np.all(rhs.values == 0.0)

    def test_linearization_about_one(self, flat32, grid32):
        # u = 1 + eps cos: rhs = -(n-1)(2 pi)^2 eps cos + O(eps^2)
        eps = 1e-4
        u = single_mode(grid32, eps)
        rhs = yamabe_rhs(ConformalMetric(flat32, u))
        lin = -2.0 * (2 * np.pi) ** 2 * (u.values - 1.0)
        # quadratic remainder bounded by ~ 4 (n-1) (2 pi)^2 eps^2
        assert np.abs(rhs.values - lin).max() < 10 * (2 * np.pi) ** 2 * eps**2

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_equals_minus_curvature_form(self, flat16, grid16, seed):
        # rhs + ((n-2)/4) R_g u = 0 pointwise, the two faces of the evolution
        u = positive_band_field(grid16, seed, 3, 0.3)
        cm = ConformalMetric(flat16, u)
        r = scalar_curvature(cm)
        mismatch = yamabe_rhs(cm).values + 0.25 * (grid16.n - 2) * r.values * u.values
        assert np.abs(mismatch).max() <= 1e-9 * u.sup_norm()

    def test_form_equivalence_conformally_flat(self, grid16):
        v = positive_band_field(grid16, 8, 2, 0.15)
        bg = Background.conformally_flat(v)
        u = positive_band_field(grid16, 9, 2, 0.2)
        cm = ConformalMetric(bg, u)
        r = scalar_curvature(cm)
        mismatch = yamabe_rhs(cm).values + 0.25 * (grid16.n - 2) * r.values * u.values
        assert np.abs(mismatch).max() <= 1e-9 * max(np.abs(r.values).max(), 1.0) * u.sup_norm()


class TestStableDt:
    def test_reference_value(self, flat32, grid32):
        cm = metric(flat32, np.ones(grid32.shape))
        dt = stable_dt(cm, FlowConfig(t_max=1.0))
        assert dt == pytest.approx(0.25 * (1 / 32) ** 2 / 12.0, rel=1e-15)

    def test_doubling_m_quarters_dt(self, flat16, flat32, grid16, grid32):
        dt16 = stable_dt(metric(flat16, np.ones(grid16.shape)), FlowConfig(t_max=1.0))
        dt32 = stable_dt(metric(flat32, np.ones(grid32.shape)), FlowConfig(t_max=1.0))
        assert dt32 == dt16 / 4

    def test_monotone_in_min_u(self, flat16, grid16):
        cfg = FlowConfig(t_max=1.0)
        dts = [
            stable_dt(metric(flat16, np.full(grid16.shape, c)), cfg)
            for c in (0.5, 0.8, 1.0, 2.0)
        ]
        assert all(b > a for a, b in zip(dts[:-1], dts[1:]))


class TestStepRk4:
    def test_static_fixed_point(self, flat16, grid16):
        state = FlowState(0.0, metric(flat16, np.ones(grid16.shape)))
        dt = stable_dt(state.cm, FlowConfig(t_max=1.0))
        for _ in range(100):
            state = step_rk4(state, dt)
        assert np.abs(state.cm.u.values - 1.0).max() <= 1e-13

    def test_single_mode_amplitude_decay(self, grid16, flat16):
        # linearized oracle: amplitude eps e^{-(n-1)(2 pi)^2 tau} within 1%
        eps = 1e-4
        tau = 0.005
        state = FlowState(0.0, ConformalMetric(flat16, single_mode(grid16, eps)))
        dt = stable_dt(state.cm, FlowConfig(t_max=1.0))
        steps = int(np.ceil(tau / dt))
        dt = tau / steps
        for _ in range(steps):
            state = step_rk4(state, dt)
        amp = 2.0 * abs(np.fft.rfftn(state.cm.u.values)[1, 0, 0]) / grid16.size
        expected = eps * np.exp(-2.0 * (2 * np.pi) ** 2 * tau)
        assert amp == pytest.approx(expected, rel=0.01)

    def test_fourth_order_time_convergence(self, grid16, flat16):
        # Richardson: halving dt shrinks the error against a dt/4 reference ~16x
        u0 = positive_band_field(grid16, 13, 2, 0.2)
        cm0 = ConformalMetric(flat16, u0)
        t_end = 64 * stable_dt(cm0, FlowConfig(t_max=1.0, cfl_safety=0.125))

        def final(dt):
            state = FlowState(0.0, cm0)
            for _ in range(int(round(t_end / dt))):
                state = step_rk4(state, dt)
            return state.cm.u.values

        base = t_end / 64
        ref = final(base / 4)
        err1 = np.abs(final(base) - ref).max()
        err2 = np.abs(final(base / 2) - ref).max()
        # err(dt) ~ C dt^4: ratio err1/err2 ~ 16/(1 - 1/16 corrections)
        assert 10.0 < err1 / err2 < 22.0

    def test_positivity_floor_failure(self, flat16, grid16):
        vals = np.ones(grid16.shape)
        vals[1, 2, 3] = 5e-9  # below the default floor
        state = FlowState(0.0, metric(flat16, vals))
        with pytest.raises(FlowDegeneracyError, match=r"\(1, 2, 3\)"):
            step_rk4(state, 1e-9)

    def test_oversized_dt_rejected(self, flat16, grid16):
        state = FlowState(0.0, metric(flat16, np.ones(grid16.shape)))
        ceiling = stable_dt(state.cm, FlowConfig(t_max=1.0, cfl_safety=1.0))
        with pytest.raises(ValueError, match="ceiling"):
            step_rk4(state, ceiling * 1.5)


class TestRunFlow:
    def test_static_terminates_immediately_with_two_records(self, flat16, grid16):
        cm = metric(flat16, np.ones(grid16.shape))
        res = run_flow(cm, FlowConfig(t_max=1.0))
        assert res.termination == "tol_R"
        assert res.state.step_count == 0
        assert len(res.records) == 2

    def test_flat_convergence_long_run(self):
        # sup|R| decays monotonically to the stopping tolerance and the final
        # metric is close to flat; amplitude 0.01 keeps the oracle linear:
        # sup|R| ~ 315.8 * 0.01 * e^{-78.96 t} < 1e-6 needs t ~ 0.19
        g = make_grid(3, 16, [1, 1, 1])
        bg = Background.flat(g)
        cm = ConformalMetric(bg, single_mode(g, 0.01))
        res = run_flow(cm, FlowConfig(t_max=0.25, tol_R=1e-6, record_every=100))
        sups = [max(abs(r.R_min), abs(r.R_max)) for r in res.records]
        assert res.termination == "tol_R"
        assert sups[-1] < 1e-6
        assert all(b <= a * (1 + 1e-9) for a, b in zip(sups[:-1], sups[1:]))
        assert flat_distance(res.state.cm) <= 1e-4

    def test_scaling_symmetry(self, grid16, flat16):
        # u -> lam u, t -> lam^{4/(n-2)} t is an exact symmetry; with lam = 2
        # the rescalings are powers of two, so trajectories match bitwise-tight
        lam = 2.0
        u0 = single_mode(grid16, 0.05)
        cfg = FlowConfig(t_max=2e-3, tol_R=0.0, record_every=25)
        res = run_flow(ConformalMetric(flat16, u0), cfg)
        cfg_l = FlowConfig(t_max=16 * cfg.t_max, tol_R=0.0, record_every=25)
        res_l = run_flow(metric(flat16, lam * u0.values), cfg_l)
        assert len(res.trajectory.snapshots) == len(res_l.trajectory.snapshots)
        for s, sl in zip(res.trajectory.snapshots, res_l.trajectory.snapshots):
            assert sl.t == 16 * s.t
            assert np.abs(sl.u - lam * s.u).max() <= 1e-8 * lam

    def test_translation_equivariance_fd_bitwise(self, grid16, flat16):
        u0 = positive_band_field(grid16, 17, 3, 0.2)
        cfg = FlowConfig(t_max=3e-4, tol_R=0.0, record_every=50, laplacian="fd")
        res = run_flow(ConformalMetric(flat16, u0), cfg)
        shifted = ScalarField(grid16, np.roll(u0.values, 1, axis=2))
        res_s = run_flow(ConformalMetric(flat16, shifted), cfg)
        assert np.array_equal(
            res_s.state.cm.u.values, np.roll(res.state.cm.u.values, 1, axis=2)
        )

    def test_fd_vs_spectral_second_order(self):
        # the oracle backend perturbs the final state at O(spacing^2); the
        # same fixed dt (stable at the finer size) isolates the spatial error
        g32 = make_grid(3, 32, [1, 1, 1])
        dt = stable_dt(
            ConformalMetric(Background.flat(g32), single_mode(g32, 0.1)),
            FlowConfig(t_max=1.0),
        )
        errs = {}
        for m in (16, 32):
            g = make_grid(3, m, [1, 1, 1])
            bg = Background.flat(g)
            u0 = single_mode(g, 0.1)
            cfg_s = FlowConfig(t_max=3e-3, tol_R=0.0, record_every=1000, dt=dt)
            cfg_f = FlowConfig(t_max=3e-3, tol_R=0.0, record_every=1000, dt=dt, laplacian="fd")
            u_s = run_flow(ConformalMetric(bg, u0), cfg_s).state.cm.u.values
            u_f = run_flow(ConformalMetric(bg, u0), cfg_f).state.cm.u.values
            errs[m] = np.abs(u_s - u_f).max()
        order = np.log2(errs[16] / errs[32])
        assert abs(order - 2.0) < 0.2

    def test_min_max_principles_flat(self, grid16, flat16):
        res = run_flow(
            ConformalMetric(flat16, single_mode(grid16, 0.1)),
            FlowConfig(t_max=2e-3, tol_R=0.0, record_every=5),
        )
        mins = [float(s.u.min()) for s in res.trajectory.snapshots]
        maxs = [float(s.u.max()) for s in res.trajectory.snapshots]
        assert all(b >= a - 1e-10 for a, b in zip(mins[:-1], mins[1:]))
        assert all(b <= a + 1e-10 for a, b in zip(maxs[:-1], maxs[1:]))

    def test_conformally_flat_extrema_envelopes(self, grid16):
        # with curved background the factor extrema stay inside the explicit
        # envelope (min u0^k - sup|R_h| t)^(1/k) <= u <= (max u0^k + sup|R_h| t)^(1/k)
        v = positive_band_field(grid16, 42, 2, 0.1)
        bg = Background.conformally_flat(v)
        u0 = positive_band_field(grid16, 43, 2, 0.08)
        res = run_flow(
            ConformalMetric(bg, u0), FlowConfig(t_max=2e-4, tol_R=0.0, record_every=20)
        )
        r_h_sup = float(np.abs(bg.r_h.values).max())
        kap = 4 // (grid16.n - 2)
        lo0 = float(u0.values.min()) ** kap
        hi0 = float(u0.values.max()) ** kap
        for s in res.trajectory.snapshots:
            lo = (lo0 - r_h_sup * s.t) ** (1.0 / kap)
            hi = (hi0 + r_h_sup * s.t) ** (1.0 / kap)
            assert float(s.u.min()) >= lo - 1e-6
            assert float(s.u.max()) <= hi + 1e-6

    def test_rhs_curvature_form_equivalence_along_run(self, grid16, flat16):
        res = run_flow(
            ConformalMetric(flat16, single_mode(grid16, 0.1)),
            FlowConfig(t_max=1e-3, tol_R=0.0, record_every=10),
        )
        for s in res.trajectory.snapshots:
            cm = ConformalMetric(flat16, ScalarField(grid16, s.u))
            r = scalar_curvature(cm)
            mism = yamabe_rhs(cm).values + 0.25 * (grid16.n - 2) * r.values * s.u
            assert np.abs(mism).max() <= 1e-9 * float(np.abs(s.u).max())

    def test_failure_reported_with_partial_trajectory(self, grid16, flat16):
        # corner-mode content at cfl_safety = 1 sits outside the RK4 stability
        # region for the spectral operator (the margin needs safety < ~0.56),
        # so the growing oscillation breaches the positivity floor
        u0 = field_from_fn(
            grid16,
            lambda x, y, z: 1
            + 0.01
            * np.cos(2 * np.pi * 7 * x)
            * np.cos(2 * np.pi * 7 * y)
            * np.cos(2 * np.pi * 7 * z),
        )
        cfg = FlowConfig(
            t_max=0.1, tol_R=0.0, cfl_safety=1.0, record_every=10, u_floor=0.9
        )
        with pytest.raises(FlowError) as exc_info:
            run_flow(ConformalMetric(flat16, u0), cfg)
        traj = exc_info.value.trajectory
        assert traj is not None
        assert traj.failure is not None
        assert len(traj.snapshots) >= 1

    def test_config_validation(self):
        with pytest.raises(ValueError, match="t_max"):
            FlowConfig(t_max=0.0)
        with pytest.raises(ValueError, match="cfl_safety"):
            FlowConfig(t_max=1.0, cfl_safety=1.5)
        with pytest.raises(ValueError, match="laplacian"):
            FlowConfig(t_max=1.0, laplacian="upwind")
        with pytest.raises(ValueError, match="record_every"):
            FlowConfig(t_max=1.0, record_every=0)
