"""Per-record diagnostics and quantitative audits of a flow trajectory.

Everything here is a pure function of recorded data: recomputing the
diagnostics of a saved trajectory reproduces the same values bitwise.  Two
exact identities of the evolution are monitored as residuals,

    d/dt Vol(M, g(t)) = -(n/2) * int R dmu_g,
    (d/dt - (n-1) Lap_g) R = R^2,

discretized with centered differences over uniformly spaced records, plus a
family of audits: extrema monotonicity, volume drift envelopes, metric
distances, the moment-product diagnostic, and the hypothesis checks used by
the stability experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import conformal
from .conformal import ConformalMetric, ipow, exponent
from .flow import FlowState, Trajectory
from .grid import ScalarField

__all__ = [
    "DiagnosticsRecord",
    "CSV_HEADER",
    "AuditItem",
    "AssumptionsAudit",
    "assumptions_check",
    "trajectory_records",
    "volume_identity_residual",
    "scalar_evolution_residual",
    "min_R_monotonicity",
    "MinRMonotonicityReport",
    "volume_drift_fit",
    "lp_convergence_check",
    "LpConvergenceReport",
    "flat_distance",
]


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One row of per-snapshot scalar diagnostics (all entries finite)."""

    t: float
    dt: float
    u_min: float
    u_max: float
    vol_g: float
    R_min: float
    R_max: float
    R_l1: float
    vol_identity_residual: float
    evoR_residual_l2: float
    lp_dist_initial: float
    lp_dist_flat: float
    moser_ratio: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise ValueError(f"non-finite diagnostics entry {f.name} = {v!r}")
        if not self.vol_g > 0:
            raise ValueError(f"vol_g must be positive, got {self.vol_g}")
        if not self.u_min > 0:
            raise ValueError(f"u_min must be positive, got {self.u_min}")


CSV_HEADER = ",".join(f.name for f in fields(DiagnosticsRecord))
assert CSV_HEADER == (
    "t,dt,u_min,u_max,vol_g,R_min,R_max,R_l1,vol_identity_residual,"
    "evoR_residual_l2,lp_dist_initial,lp_dist_flat,moser_ratio"
)


def flat_distance(cm: ConformalMetric) -> float:
    """Sup-distance to the best constant-factor flat metric.

    With phi = (u*v)**(4/(n-2)) the Euclidean factor of g, this is
    min over c > 0 of sup|phi - c| / c, attained at c = (min + max)/2 with
    value (max - min)/(max + min).  Zero exactly when g is a constant
    multiple of the Euclidean metric on the grid.
    """
    phi = ipow(cm.composite_values(), exponent(4, cm.n))
    lo = float(phi.min())
    hi = float(phi.max())
    return (hi - lo) / (hi + lo)


# -- assumptions audit -------------------------------------------------------


@dataclass(frozen=True)
class AuditItem:
    name: str
    value: float
    bound: float
    relation: str  # "<=" or ">="
    passed: bool


@dataclass(frozen=True)
class AssumptionsAudit:
    """Measured values and pass/fail for the hypothesis budget (Lambda, p0, delta).

    Items mirror the two hypothesis sets: (B) bounds on the factor u over h
    (Lp budget, volume non-collapse, curvature floor, diameter budget) and,
    for conformally flat backgrounds, (A)-analogues on h itself (scalar
    curvature of h against n * Lambda, diameter of h against Lambda).
    """

    lambda_budget: float
    p0: float
    delta: float
    items: tuple[AuditItem, ...]

    @property
    def passed(self) -> bool:
        return all(item.passed for item in self.items)

    def item(self, name: str) -> AuditItem:
        for it in self.items:
            if it.name == name:
                return it
        raise KeyError(name)


def assumptions_check(
    cm: ConformalMetric, lambda_budget: float, p0: float, delta: float
) -> AssumptionsAudit:
    """Audit a metric against the hypothesis budget; never raises, never mutates."""
    if not (lambda_budget > 0 and p0 > 0 and delta > 0):
        raise ValueError("lambda_budget, p0 and delta must all be positive")
    one = ScalarField(cm.grid, np.ones(cm.grid.shape))
    items = []

    def add(name, value, bound, relation):
        ok = value <= bound if relation == "<=" else value >= bound
        items.append(AuditItem(name, float(value), float(bound), relation, bool(ok)))

    u_lp0 = conformal.lp_norm(cm, cm.u, p0, measure="h")
    add("B.u_lp0_budget", u_lp0, lambda_budget, "<=")
    add("B.vol_g_noncollapse", conformal.volume(cm), 1.0 / lambda_budget, ">=")
    r_min = float(conformal.scalar_curvature(cm).values.min())
    add("B.scalar_floor", r_min, -delta, ">=")
    add("diam_g_budget", conformal.diameter_estimate(cm), lambda_budget, "<=")
    if cm.background.kind == "conformally_flat":
        r_h_sup = float(np.abs(cm.background.r_h.values).max())
        add("A.sup_abs_r_h_budget", r_h_sup, cm.n * lambda_budget, "<=")
        cm_h = ConformalMetric(cm.background, one)
        add("A.diam_h_budget", conformal.diameter_estimate(cm_h), lambda_budget, "<=")
    return AssumptionsAudit(
        lambda_budget=float(lambda_budget),
        p0=float(p0),
        delta=float(delta),
        items=tuple(items),
    )


# -- residuals of the exact identities ---------------------------------------


def _vol_and_curv_integrals(cm: ConformalMetric) -> tuple[float, float]:
    """(Vol(g), int R dmu_g) sharing the volume weight."""
    w_g = conformal.volume_weight_values(cm)
    r = conformal.scalar_curvature_values(cm.background, cm.u.values)
    bg = cm.background
    return bg.integrate_h(w_g), bg.integrate_h(r * w_g)


def _vol_residual(t1, vol1, curv1, t2, vol2, curv2, n) -> float:
    if not t2 > t1:
        raise ValueError(f"records must be increasing in time, got t1 = {t1}, t2 = {t2}")
    lhs = (vol2 - vol1) / (t2 - t1)
    rhs = -(n / 2.0) * 0.5 * (curv1 + curv2)
    return abs(lhs - rhs) / vol1


def volume_identity_residual(state: FlowState, prev: FlowState) -> float:
    """Trapezoidal residual of d/dt Vol = -(n/2) int R dmu_g, relative to Vol."""
    v1, c1 = _vol_and_curv_integrals(prev.cm)
    v2, c2 = _vol_and_curv_integrals(state.cm)
    return _vol_residual(prev.t, v1, c1, state.t, v2, c2, state.cm.n)


def _uniform_spacing(t_prev: float, t_mid: float, t_next: float) -> float:
    d1 = t_mid - t_prev
    d2 = t_next - t_mid
    if not (d1 > 0 and d2 > 0) or abs(d1 - d2) > 1e-9 * max(d1, d2):
        raise ValueError(
            f"records are not uniformly spaced in time: {t_prev}, {t_mid}, {t_next}"
        )
    return 0.5 * (d1 + d2)


def _evoR_residual_values(
    cm_mid: ConformalMetric,
    r_prev: np.ndarray,
    r_mid: np.ndarray,
    r_next: np.ndarray,
    dt: float,
) -> float:
    bg = cm_mid.background
    dR_dt = (r_next - r_prev) / (2.0 * dt)
    lap_g_r = conformal.conformal_laplacian(cm_mid, ScalarField(cm_mid.grid, r_mid))
    mism = dR_dt - (cm_mid.n - 1) * lap_g_r.values - r_mid * r_mid
    norm_sq = bg.integrate_h(r_mid * r_mid)
    return float(np.sqrt(bg.integrate_h(mism * mism)) / (1.0 + norm_sq))


def scalar_evolution_residual(state: FlowState, prev: FlowState, next_: FlowState) -> float:
    """Centered residual of (d/dt - (n-1) Lap_g) R = R^2 at the middle record.

    Requires three consecutive records at uniform spacing; the L2 norm is
    taken against dmu_h and normalized by (1 + |R|_2^2).
    """
    dt = _uniform_spacing(prev.t, state.t, next_.t)
    bg = state.cm.background
    r_prev = conformal.scalar_curvature_values(bg, prev.cm.u.values)
    r_mid = conformal.scalar_curvature_values(bg, state.cm.u.values)
    r_next = conformal.scalar_curvature_values(bg, next_.cm.u.values)
    return _evoR_residual_values(state.cm, r_prev, r_mid, r_next, dt)


# -- record assembly ----------------------------------------------------------


def trajectory_records(traj: Trajectory, p: float = 2.0, eps: float = 0.5) -> list[DiagnosticsRecord]:
    """Assemble one DiagnosticsRecord per snapshot.

    Residual columns need neighbors: the volume-identity column is 0.0 on the
    first row and on rows not advancing in time, the evolution residual is
    0.0 on boundary rows and wherever the local record spacing is not
    uniform.  All other columns are instantaneous.
    """
    bg = traj.background
    n = bg.grid.n
    kap = exponent(4, n)
    vol_h_sq = bg.vol_h * bg.vol_h
    snaps = traj.snapshots
    sqrt_n = np.sqrt(float(n))

    cms = [ConformalMetric(bg, ScalarField(bg.grid, s.u)) for s in snaps]
    r_vals = [conformal.scalar_curvature_values(bg, s.u) for s in snaps]
    scalars = []
    phi0_kappa = ipow(cms[0].composite_values(), kap) if cms else None
    for cm, r in zip(cms, r_vals):
        w_g = conformal.volume_weight_values(cm)
        vol_g = bg.integrate_h(w_g)
        curv_int = bg.integrate_h(r * w_g)
        r_l1 = bg.integrate_h(np.abs(r) * w_g)
        phi_kappa = ipow(cm.composite_values(), kap)
        c_star = 0.5 * (float(phi_kappa.min()) + float(phi_kappa.max()))
        lp_flat = bg.integrate_h((sqrt_n * np.abs(phi_kappa - c_star)) ** p) ** (1.0 / p)
        lp_init = bg.integrate_h((sqrt_n * np.abs(phi_kappa - phi0_kappa)) ** p) ** (
            1.0 / p
        )
        moser = conformal.moser_product(cm, eps) / vol_h_sq
        scalars.append((vol_g, curv_int, r_l1, lp_init, lp_flat, moser))

    records = []
    for j, (snap, cm, r) in enumerate(zip(snaps, cms, r_vals)):
        vol_g, curv_int, r_l1, lp_init, lp_flat, moser = scalars[j]
        vol_res = 0.0
        if j > 0 and snap.t > snaps[j - 1].t:
            v1, c1 = scalars[j - 1][0], scalars[j - 1][1]
            vol_res = _vol_residual(snaps[j - 1].t, v1, c1, snap.t, vol_g, curv_int, n)
        evo_res = 0.0
        if 0 < j < len(snaps) - 1:
            try:
                dt = _uniform_spacing(snaps[j - 1].t, snap.t, snaps[j + 1].t)
            except ValueError:
                dt = None
            if dt is not None:
                evo_res = _evoR_residual_values(cm, r_vals[j - 1], r, r_vals[j + 1], dt)
        records.append(
            DiagnosticsRecord(
                t=snap.t,
                dt=snap.dt,
                u_min=float(snap.u.min()),
                u_max=float(snap.u.max()),
                vol_g=vol_g,
                R_min=float(r.min()),
                R_max=float(r.max()),
                R_l1=r_l1,
                vol_identity_residual=vol_res,
                evoR_residual_l2=evo_res,
                lp_dist_initial=lp_init,
                lp_dist_flat=lp_flat,
                moser_ratio=moser,
            )
        )
    return records


# -- trajectory-level reports --------------------------------------------------


@dataclass(frozen=True)
class MinRMonotonicityReport:
    worst_step_drop: float  # min over consecutive records of R_min(t2) - R_min(t1)
    tolerance: float
    passed: bool
    steps: int


def min_R_monotonicity(records: list[DiagnosticsRecord]) -> MinRMonotonicityReport:
    """Check that the curvature minimum never drops between records.

    Passes when every consecutive difference R_min(t2) - R_min(t1) stays
    above -tol with tol = 1e-6 * (1 + max|R|) over the trajectory.
    """
    if len(records) < 2:
        raise ValueError("need at least two records")
    drops = [b.R_min - a.R_min for a, b in zip(records[:-1], records[1:])]
    worst = min(drops)
    sup_r = max(max(abs(r.R_min), abs(r.R_max)) for r in records)
    tol = 1e-6 * (1.0 + sup_r)
    return MinRMonotonicityReport(
        worst_step_drop=float(worst),
        tolerance=float(tol),
        passed=bool(worst >= -tol),
        steps=len(drops),
    )


def volume_drift_fit(
    records: list[DiagnosticsRecord], alpha: float
) -> tuple[float, float]:
    """Envelope constant for |Vol(t) - Vol(0)| <= C * t**(1-alpha).

    Returns (c_fit, max_violation): the max of |Vol(t) - Vol(0)| / t**(1-alpha)
    over all positive-time records, and the worst ratio over the trailing
    quarter of records relative to c_fit (a self-consistency figure; 0 when
    the drift is identically zero).  The constant is reported, not asserted.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if len(records) < 10:
        raise ValueError(f"need at least 10 records, got {len(records)}")
    vol0 = records[0].vol_g
    pos = [(r.t, abs(r.vol_g - vol0) / r.t ** (1.0 - alpha)) for r in records if r.t > 0]
    if not pos:
        raise ValueError("no records at positive time")
    ratios = [q for _, q in pos]
    c_fit = max(ratios)
    tail = ratios[-max(1, len(ratios) // 4):]
    max_violation = 0.0 if c_fit == 0.0 else max(tail) / c_fit
    return float(c_fit), float(max_violation)


@dataclass(frozen=True)
class LpConvergenceReport:
    p: float
    sup_ratio: float
    times: tuple[float, ...]
    ratios: tuple[float, ...]


def lp_convergence_check(traj: Trajectory, p: float) -> LpConvergenceReport:
    """Report sup over records of dist_p(g(t), g(0))**p / (t + t**p)."""
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    bg = traj.background
    cms = [ConformalMetric(bg, ScalarField(bg.grid, s.u)) for s in traj.snapshots]
    times, ratios = [], []
    for snap, cm in zip(traj.snapshots, cms):
        if snap.t <= 0:
            continue
        dist = conformal.metric_lp_distance(cm, cms[0], p)
        times.append(snap.t)
        ratios.append(dist**p / (snap.t + snap.t**p))
    sup_ratio = max(ratios) if ratios else 0.0
    return LpConvergenceReport(
        p=float(p), sup_ratio=float(sup_ratio), times=tuple(times), ratios=tuple(ratios)
    )
