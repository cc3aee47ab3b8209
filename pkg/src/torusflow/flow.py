"""Explicit time integration of the conformal-factor evolution.

The non-conservative form of the evolution is integrated directly:

    du/dt = (n-1) * u**(-4/(n-2)) * Lap_h u  -  ((n-2)/4) * R_h * u**((n-6)/(n-2)),

which is pointwise equal to -((n-2)/4) * R_g * u and keeps constant factors
over a flat background exact fixed points of the discrete scheme.  Stepping
is classical four-stage Runge-Kutta under a diffusive CFL restriction; the
stability ceiling for the spectral Laplacian sits near cfl_safety ~ 0.56, so
the default 0.25 leaves a factor-two margin.  Positivity is enforced by
failure, never by clamping: a factor at or below the configured floor aborts
the step with the offending location.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import conformal
from .conformal import Background, ConformalMetric, exponent, ipow
from .grid import ScalarField, fd_gradient_values, fd_laplacian_values

__all__ = [
    "FlowError",
    "FlowDegeneracyError",
    "FlowInstabilityError",
    "FlowConfig",
    "FlowState",
    "TrajectorySnapshot",
    "Trajectory",
    "FlowResult",
    "yamabe_rhs",
    "stable_dt",
    "step_rk4",
    "run_flow",
]


class FlowError(RuntimeError):
    """Base class for time-stepping failures; may carry a partial trajectory."""

    def __init__(self, message: str, trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


class FlowDegeneracyError(FlowError):
    """The conformal factor hit the positivity floor."""


class FlowInstabilityError(FlowError):
    """Non-finite values appeared; the step size is too aggressive."""


@dataclass(frozen=True)
class FlowConfig:
    """Knobs for one flow run.

    ``dt`` fixes the step size when set (it must respect the stability
    ceiling); otherwise each step uses the CFL-safe size recomputed from the
    current factor.  ``tol_R = 0`` disables the curvature stopping test.
    ``laplacian`` selects the derivative backend: "spectral" (primary) or
    "fd" (second-order oracle).
    """

    t_max: float
    cfl_safety: float = 0.25
    tol_R: float = 1e-8
    record_every: int = 1
    u_floor: float = 1e-8
    dt: Optional[float] = None
    laplacian: str = "spectral"

    def __post_init__(self):
        if not self.t_max > 0:
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if self.tol_R < 0:
            raise ValueError(f"tol_R must be non-negative, got {self.tol_R}")
        if int(self.record_every) < 1:
            raise ValueError(f"record_every must be >= 1, got {self.record_every}")
        if not self.u_floor > 0:
            raise ValueError(f"u_floor must be positive, got {self.u_floor}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive when given, got {self.dt}")
        if self.laplacian not in ("spectral", "fd"):
            raise ValueError(f"laplacian must be 'spectral' or 'fd', got {self.laplacian!r}")


@dataclass(frozen=True)
class FlowState:
    """One instant of the flow: time, metric, and the step counter."""

    t: float
    cm: ConformalMetric
    step_count: int = 0


@dataclass(frozen=True)
class TrajectorySnapshot:
    step: int
    t: float
    dt: float  # step size used on the most recent step (0.0 before stepping)
    u: np.ndarray  # read-only copy of the factor values


@dataclass
class Trajectory:
    """Recorded history of one run, dense enough to recompute diagnostics."""

    background: Background
    config: FlowConfig
    snapshots: list[TrajectorySnapshot] = field(default_factory=list)
    failure: str | None = None

    def state(self, index: int) -> FlowState:
        snap = self.snapshots[index]
        return FlowState(
            t=snap.t,
            cm=ConformalMetric(self.background, ScalarField(self.background.grid, snap.u)),
            step_count=snap.step,
        )

    def final_state(self) -> FlowState:
        return self.state(-1)


@dataclass
class FlowResult:
    state: FlowState
    trajectory: Trajectory
    records: list  # DiagnosticsRecord rows, in time order
    termination: str  # "tol_R" or "t_max"


# -- right-hand side -------------------------------------------------------


def _make_rhs(background: Background, method: str) -> Callable[[np.ndarray], np.ndarray]:
    """Compile the evolution right-hand side for one background and backend."""
    grid = background.grid
    n = grid.n
    neg_kappa = -exponent(4, n)
    drift_exp = exponent(n - 6, n)
    coef_diff = float(n - 1)
    coef_drift = (n - 2) / 4.0
    ws = background.workspace

    if background.kind == "flat":
        if method == "spectral":

            def rhs(u: np.ndarray) -> np.ndarray:
                return coef_diff * ipow(u, neg_kappa) * ws.laplacian_values(u)

        else:

            def rhs(u: np.ndarray) -> np.ndarray:
                return coef_diff * ipow(u, neg_kappa) * fd_laplacian_values(u, grid)

        return rhs

    r_h = background.r_h.values
    v_neg_kappa = background._v_neg_kappa
    grad_log_v = background._grad_log_v

    if method == "spectral":

        def rhs(u: np.ndarray) -> np.ndarray:
            lap, grad = ws.laplacian_and_gradient_values(u)
            inner = grad_log_v[0] * grad[0]
            for gv, gu in zip(grad_log_v[1:], grad[1:]):
                inner += gv * gu
            lap_h = v_neg_kappa * (lap + 2.0 * inner)
            return coef_diff * ipow(u, neg_kappa) * lap_h - coef_drift * r_h * ipow(
                u, drift_exp
            )

    else:

        def rhs(u: np.ndarray) -> np.ndarray:
            lap = fd_laplacian_values(u, grid)
            grad = fd_gradient_values(u, grid)
            inner = grad_log_v[0] * grad[0]
            for gv, gu in zip(grad_log_v[1:], grad[1:]):
                inner += gv * gu
            lap_h = v_neg_kappa * (lap + 2.0 * inner)
            return coef_diff * ipow(u, neg_kappa) * lap_h - coef_drift * r_h * ipow(
                u, drift_exp
            )

    return rhs


def yamabe_rhs(cm: ConformalMetric) -> ScalarField:
    """du/dt for the factor evolution; equals -((n-2)/4) * R_g * u pointwise."""
    rhs = _make_rhs(cm.background, "spectral")
    return ScalarField(cm.grid, rhs(cm.u.values))


# -- step control -----------------------------------------------------------


def _max_diffusivity(cm: ConformalMetric) -> float:
    """max over the grid of (u * v)**(-4/(n-2)), the fast-diffusion coefficient."""
    comp = cm.composite_values()
    return float(ipow(comp, -exponent(4, cm.n)).max())


def _dt_ceiling(cm: ConformalMetric) -> float:
    """Stability ceiling (the CFL formula at safety factor 1)."""
    grid = cm.grid
    n = grid.n
    h_min = min(grid.spacing)
    return h_min * h_min / (2.0 * n * (n - 1) * _max_diffusivity(cm))


def stable_dt(cm: ConformalMetric, cfg: FlowConfig) -> float:
    """CFL-safe step: cfl_safety * min_spacing**2 / (2 n (n-1) max diffusivity)."""
    return cfg.cfl_safety * _dt_ceiling(cm)


# -- stepping ---------------------------------------------------------------


def _guard_stage(u: np.ndarray, u_floor: float, t: float, step: int):
    mn = float(u.min())
    if np.isnan(mn):
        raise FlowInstabilityError(
            f"non-finite factor at t = {t!r} (step {step}); reduce cfl_safety"
        )
    if mn <= u_floor:
        idx = tuple(int(i) for i in np.unravel_index(int(u.argmin()), u.shape))
        raise FlowDegeneracyError(
            f"factor min {mn!r} at grid index {idx} fell to the positivity "
            f"floor {u_floor!r} at t = {t!r} (step {step})"
        )


def _rk4_values(
    u: np.ndarray,
    dt: float,
    rhs: Callable[[np.ndarray], np.ndarray],
    u_floor: float,
    t: float,
    step: int,
) -> np.ndarray:
    k1 = rhs(u)
    u2 = u + (0.5 * dt) * k1
    _guard_stage(u2, u_floor, t, step)
    k2 = rhs(u2)
    u3 = u + (0.5 * dt) * k2
    _guard_stage(u3, u_floor, t, step)
    k3 = rhs(u3)
    u4 = u + dt * k3
    _guard_stage(u4, u_floor, t, step)
    k4 = rhs(u4)
    out = u + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
    if not np.isfinite(out).all():
        raise FlowInstabilityError(
            f"non-finite factor after step {step} at t = {t!r}; reduce cfl_safety"
        )
    _guard_stage(out, u_floor, t, step)
    return out


def step_rk4(
    state: FlowState,
    dt: float,
    *,
    u_floor: float = 1e-8,
    method: str = "spectral",
) -> FlowState:
    """Advance one classical Runge-Kutta step of size dt.

    dt must not exceed the stability ceiling (the CFL bound at safety 1).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    _guard_stage(state.cm.u.values, u_floor, state.t, state.step_count)
    ceiling = _dt_ceiling(state.cm)
    if dt > ceiling * (1.0 + 1e-12):
        raise ValueError(f"dt = {dt!r} exceeds the stability ceiling {ceiling!r}")
    rhs = _make_rhs(state.cm.background, method)
    u_next = _rk4_values(
        state.cm.u.values, dt, rhs, u_floor, state.t, state.step_count
    )
    u_next.setflags(write=False)
    cm_next = ConformalMetric(state.cm.background, ScalarField(state.cm.grid, u_next))
    return FlowState(t=state.t + dt, cm=cm_next, step_count=state.step_count + 1)


# -- full run ---------------------------------------------------------------


def run_flow(
    cm0: ConformalMetric,
    cfg: FlowConfig,
    sink: Callable[[object], None] | None = None,
    *,
    record_p: float = 2.0,
    moser_eps: float = 0.5,
) -> FlowResult:
    """Integrate until t >= t_max or sup|R_g| < tol_R.

    Snapshots are taken at t = 0, after every ``record_every`` steps, and
    again at termination (so a run that stops immediately still yields two
    records).  Diagnostics rows are derived from the snapshots afterwards
    and pushed to ``sink`` in time order, one per snapshot.  On a stepping
    failure the partial trajectory is attached to the raised error.
    """
    background = cm0.background
    rhs = _make_rhs(background, cfg.laplacian)
    u = np.array(cm0.u.values)
    _guard_stage(u, cfg.u_floor, 0.0, 0)

    traj = Trajectory(background=background, config=cfg)
    t = 0.0
    step = 0
    last_dt = 0.0

    def snap():
        frozen = u.copy()
        frozen.setflags(write=False)
        traj.snapshots.append(TrajectorySnapshot(step=step, t=t, dt=last_dt, u=frozen))

    def current_dt() -> float:
        if cfg.dt is not None:
            ceiling = _dt_ceiling_values(background, u)
            if cfg.dt > ceiling * (1.0 + 1e-12):
                raise FlowInstabilityError(
                    f"configured dt = {cfg.dt!r} exceeds the stability ceiling "
                    f"{ceiling!r} at t = {t!r}; reduce dt or cfl_safety"
                )
            return cfg.dt
        return cfg.cfl_safety * _dt_ceiling_values(background, u)

    termination = "t_max"
    snap()
    try:
        while True:
            r_sup = float(np.abs(conformal.scalar_curvature_values(background, u)).max())
            if cfg.tol_R > 0.0 and r_sup < cfg.tol_R:
                termination = "tol_R"
                break
            if t >= cfg.t_max:
                break
            for _ in range(cfg.record_every):
                dt_step = current_dt()
                # Treat arrival within a relative ulp of t_max as arrival, so
                # accumulated rounding never spawns a microscopic extra step.
                clipped = t + dt_step >= cfg.t_max * (1.0 - 1e-12)
                if clipped:
                    dt_step = cfg.t_max - t
                u = _rk4_values(u, dt_step, rhs, cfg.u_floor, t, step)
                step += 1
                last_dt = dt_step
                t = cfg.t_max if clipped else t + dt_step
                if clipped:
                    break
            snap()
    except FlowError as err:
        traj.failure = str(err)
        snap()
        err.trajectory = traj
        raise
    snap()

    from .diagnostics import trajectory_records  # deferred: diagnostics imports flow

    records = trajectory_records(traj, p=record_p, eps=moser_eps)
    if sink is not None:
        for rec in records:
            sink(rec)
    final = traj.final_state()
    return FlowResult(state=final, trajectory=traj, records=records, termination=termination)


def _dt_ceiling_values(background: Background, u: np.ndarray) -> float:
    comp = u if background.v is None else u * background.v.values
    n = background.grid.n
    h_min = min(background.grid.spacing)
    diffus = float(ipow(comp, -exponent(4, n)).max())
    return h_min * h_min / (2.0 * n * (n - 1) * diffus)
