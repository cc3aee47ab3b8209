"""Fast standalone property suites backing the `check` CLI subcommand.

Each suite exercises a handful of exact identities of the discrete operators
and the stepping loop at small sizes, printing one line per property.  These
are smoke-level versions of the full test suite, kept cheap enough to run
anywhere the package is installed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import conformal, diagnostics, flow
from .conformal import Background, ConformalMetric
from .experiment import bandlimited_shape, gen_bandlimited
from .grid import (
    ScalarField,
    SpectralWorkspace,
    field_from_fn,
    grad_inner,
    integrate,
    laplacian_fd,
    laplacian_spectral,
    make_grid,
)

__all__ = ["CheckResult", "run_suite", "SUITES"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _result(name: str, passed: bool, detail: str) -> CheckResult:
    return CheckResult(name, bool(passed), detail)


def _grid_suite() -> list[CheckResult]:
    out = []
    grid = make_grid(3, 16, [1.0, 1.0, 1.0])
    ws = SpectralWorkspace(grid)
    f = field_from_fn(grid, lambda x, y, z: np.cos(2 * np.pi * x))

    lap = laplacian_spectral(f, ws)
    err = np.abs(lap.values + (2 * np.pi) ** 2 * f.values).max()
    out.append(_result("spectral_eigenfunction", err < 1e-10, f"sup err {err:.3e}"))

    s = ScalarField(grid, bandlimited_shape(grid, 11, 3))
    g = ScalarField(grid, bandlimited_shape(grid, 12, 3))
    lhs = integrate(laplacian_spectral(s, ws), g)
    rhs = -integrate(grad_inner(s, g, ws))
    rel = abs(lhs - rhs) / (abs(rhs) + 1e-30)
    out.append(_result("integration_by_parts", rel < 1e-9, f"rel err {rel:.3e}"))

    errs = {}
    for m in (16, 32):
        gm = make_grid(3, m, [1.0, 1.0, 1.0])
        fm = ScalarField(gm, bandlimited_shape(gm, 11, 2))
        diff = laplacian_fd(fm).values - laplacian_spectral(fm, SpectralWorkspace(gm)).values
        errs[m] = np.abs(diff).max()
    order = np.log2(errs[16] / errs[32])
    out.append(_result("fd_order_two", abs(order - 2.0) < 0.2, f"observed order {order:.3f}"))

    shifted = ScalarField(grid, np.roll(s.values, 1, axis=0))
    fd_a = laplacian_fd(shifted).values
    fd_b = np.roll(laplacian_fd(s).values, 1, axis=0)
    out.append(_result("fd_translation_bitwise", np.array_equal(fd_a, fd_b), "bitwise"))

    q = field_from_fn(grid, lambda x, y, z: (1 + 0.5 * np.cos(2 * np.pi * x)) ** 2)
    val = integrate(q)
    out.append(_result("integrate_oracle", abs(val - 1.125) < 1e-13, f"value {val!r}"))
    return out


def _flow_suite() -> list[CheckResult]:
    out = []
    grid = make_grid(3, 16, [1.0, 1.0, 1.0])
    bg = Background.flat(grid)
    ones = ScalarField(grid, np.ones(grid.shape))
    cm1 = ConformalMetric(bg, ones)
    cfg = flow.FlowConfig(t_max=1e-3, tol_R=0.0, record_every=50)
    res = flow.run_flow(cm1, cfg)
    drift = np.abs(res.state.cm.u.values - 1.0).max()
    out.append(_result("static_fixed_point", drift <= 1e-14, f"sup drift {drift:.3e}"))

    u = gen_bandlimited(grid, 5, 0.1, 3)
    cm = ConformalMetric(bg, u)
    rhs = flow.yamabe_rhs(cm)
    r = conformal.scalar_curvature(cm)
    mism = np.abs(rhs.values + 0.25 * (grid.n - 2) * r.values * u.values).max()
    bound = 1e-9 * u.sup_norm()
    out.append(_result("rhs_form_equivalence", mism <= bound, f"sup mismatch {mism:.3e}"))

    eps = 1e-4
    u1 = field_from_fn(grid, lambda x, y, z: 1 + eps * np.cos(2 * np.pi * x))
    cmd = ConformalMetric(bg, u1)
    cfgd = flow.FlowConfig(t_max=2e-3, tol_R=0.0, record_every=10)
    resd = flow.run_flow(cmd, cfgd)
    amp = [
        2.0 * abs(np.fft.rfftn(s.u)[1, 0, 0]) / grid.size for s in resd.trajectory.snapshots
    ]
    rate = np.log(amp[0] / amp[-1]) / resd.trajectory.snapshots[-1].t
    target = (grid.n - 1) * (2 * np.pi) ** 2
    rel = abs(rate - target) / target
    out.append(_result("linear_decay_rate", rel < 0.02, f"rate {rate:.3f} vs {target:.3f}"))

    lam = 2.0
    u_l = ScalarField(grid, lam * u1.values)
    scale = lam ** (-4.0 / (grid.n - 2))
    cfg_l = flow.FlowConfig(t_max=cfgd.t_max / scale, tol_R=0.0, record_every=10)
    res_l = flow.run_flow(ConformalMetric(bg, u_l), cfg_l)
    worst = 0.0
    for s, sl in zip(resd.trajectory.snapshots, res_l.trajectory.snapshots):
        worst = max(worst, np.abs(sl.u - lam * s.u).max() / lam)
    out.append(_result("scaling_symmetry", worst < 1e-10, f"sup rel mismatch {worst:.3e}"))

    mins = [float(s.u.min()) for s in resd.trajectory.snapshots]
    maxs = [float(s.u.max()) for s in resd.trajectory.snapshots]
    ok_min = all(b >= a - 1e-10 for a, b in zip(mins[:-1], mins[1:]))
    ok_max = all(b <= a + 1e-10 for a, b in zip(maxs[:-1], maxs[1:]))
    out.append(_result("min_max_principles", ok_min and ok_max, "per-record extrema"))
    return out


def _diagnostics_suite() -> list[CheckResult]:
    out = []
    grid = make_grid(3, 16, [1.0, 1.0, 1.0])
    bg = Background.flat(grid)
    ones = ScalarField(grid, np.ones(grid.shape))
    cfg = flow.FlowConfig(t_max=1e-3, tol_R=0.0, record_every=10, dt=1e-5)
    res = flow.run_flow(ConformalMetric(bg, ones), cfg)
    worst = max(
        max(r.vol_identity_residual, r.evoR_residual_l2) for r in res.records
    )
    out.append(_result("static_residuals", worst <= 1e-12, f"max residual {worst:.3e}"))

    u = gen_bandlimited(grid, 5, 0.05, 3)
    cm = ConformalMetric(bg, u)
    vol_h_sq = bg.vol_h**2
    ratio = conformal.moser_product(cm, 0.5) / vol_h_sq
    ratio_const = conformal.moser_product(ConformalMetric(bg, ones), 0.5) / vol_h_sq
    ok = ratio >= 1 - 1e-10 and abs(ratio_const - 1.0) <= 1e-8
    out.append(_result("moser_floor", ok, f"ratio {ratio!r}, constant {ratio_const!r}"))

    resd = flow.run_flow(cm, flow.FlowConfig(t_max=2e-3, tol_R=0.0, record_every=10))
    rep = diagnostics.min_R_monotonicity(resd.records)
    out.append(
        _result("min_R_monotone", rep.passed, f"worst drop {rep.worst_step_drop:.3e}")
    )
    flipped = list(resd.records)
    flipped[-1] = replace(
        flipped[-1], R_min=flipped[0].R_min - 10.0 * (1.0 + rep.tolerance)
    )
    rep_bad = diagnostics.min_R_monotonicity(flipped)
    out.append(_result("min_R_adversarial", not rep_bad.passed, "flipped step rejected"))

    vols = [r.vol_g for r in resd.records]
    ok_vol = all(b <= a + 1e-12 for a, b in zip(vols[:-1], vols[1:]))
    out.append(_result("volume_nonincreasing_flat", ok_vol, "per-record volumes"))

    fd = diagnostics.flat_distance(cm)
    phi = conformal.ipow(cm.composite_values(), 4 // (grid.n - 2))
    expect = (phi.max() - phi.min()) / (phi.max() + phi.min())
    out.append(
        _result("flat_distance_formula", abs(fd - expect) < 1e-14, f"value {fd:.3e}")
    )
    return out


SUITES = {
    "grid": _grid_suite,
    "flow": _flow_suite,
    "diagnostics": _diagnostics_suite,
}


def run_suite(name: str) -> list[CheckResult]:
    """Run one suite ('grid', 'flow', 'diagnostics') or 'all'."""
    if name == "all":
        results = []
        for suite in SUITES.values():
            results.extend(suite())
        return results
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from all, {', '.join(SUITES)}")
    return SUITES[name]()
