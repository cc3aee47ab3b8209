"""Experiment configuration, initial-data generation, and the stability run.

A configuration is a JSON document with five blocks (grid, background,
initial_data, flow, diagnostics) plus an optional sequence block and an
output directory.  Parsing fills defaults, rejects unknown keys with the
path to the offending field, and validates the exponent threshold

    p0 > n/2 + 2n(n+4)/((n-2)(n+2))

(9.9 for n = 3, 22/3 for n = 4) required by the hypothesis set (B).

Initial data is generated as u = exp(a * s) for a seeded band-limited shape
s.  The shape is a random combination of pure sine modes, hence odd under
x -> -x, so after sup-normalization its extremes are exactly +-1 and the
factor extremes are exactly exp(+-a).  The stability experiment calibrates
the amplitude of one fixed shape per family by bisection so that
min R(g_i) = -delta_i within 1%, runs each member flow, and summarizes how
the distance to the flat metric behaves as delta_i -> 0.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import asdict, dataclass, replace
from fractions import Fraction

import numpy as np

from . import conformal, diagnostics
from .conformal import Background, ConformalMetric
from .diagnostics import AssumptionsAudit, DiagnosticsRecord
from .flow import FlowConfig, FlowError, FlowResult, run_flow, stable_dt
from .grid import PeriodicGrid, ScalarField, make_grid

__all__ = [
    "ConfigError",
    "CalibrationError",
    "SequenceError",
    "GridSpec",
    "BackgroundSpec",
    "InitialDataSpec",
    "SequenceSpec",
    "DiagnosticsSpec",
    "ExperimentConfig",
    "p0_threshold",
    "parse_config",
    "config_to_text",
    "gen_bandlimited",
    "bandlimited_shape",
    "family_shape",
    "CalibratedMember",
    "calibrate_delta_family",
    "RunOutcome",
    "run_experiment",
    "MemberResult",
    "SequenceResult",
    "run_sequence_experiment",
]


class ConfigError(ValueError):
    """Configuration text violates the schema; message carries the field path."""


class CalibrationError(RuntimeError):
    """Amplitude bisection failed to pin the curvature floor."""


class SequenceError(RuntimeError):
    """A sequence member failed; partial results are attached."""

    def __init__(self, message: str, members: list["MemberResult"]):
        super().__init__(message)
        self.members = members


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    n: int = 3
    m: int = 32
    lengths: tuple[float, ...] = (1.0, 1.0, 1.0)

    def build(self) -> PeriodicGrid:
        return make_grid(self.n, self.m, self.lengths)


@dataclass(frozen=True)
class BackgroundSpec:
    kind: str = "flat"
    seed: int = 0
    amplitude: float = 0.0
    kmax: int = 2

    def build(self, grid: PeriodicGrid) -> Background:
        if self.kind == "flat":
            return Background.flat(grid)
        v = gen_bandlimited(grid, self.seed, self.amplitude, self.kmax)
        return Background.conformally_flat(v)


@dataclass(frozen=True)
class InitialDataSpec:
    kind: str = "bandlimited"
    seed: int = 7
    amplitude: float = 0.1
    kmax: int = 4
    value: float = 1.0  # used by kind = "constant"

    def build(self, grid: PeriodicGrid) -> ScalarField:
        if self.kind == "constant":
            if not self.value > 0:
                raise ConfigError(f"initial_data.value: must be positive, got {self.value}")
            return ScalarField(grid, np.full(grid.shape, float(self.value)))
        return gen_bandlimited(grid, self.seed, self.amplitude, self.kmax)


@dataclass(frozen=True)
class SequenceSpec:
    count: int = 8
    base_seed: int = 7
    deltas: tuple[float, ...] | None = None  # default schedule: 1/i, i = 1..count

    def schedule(self) -> tuple[float, ...]:
        if self.deltas is not None:
            return self.deltas
        return tuple(1.0 / i for i in range(1, self.count + 1))


@dataclass(frozen=True)
class DiagnosticsSpec:
    p0: float = 12.0
    p: tuple[float, ...] = (1.0, 2.0)
    alpha: tuple[float, ...] = (0.6, 0.9)
    eps: float = 0.5
    lambda_budget: float = 2.0
    delta: float = 1e-3


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridSpec = GridSpec()
    background: BackgroundSpec = BackgroundSpec()
    initial_data: InitialDataSpec = InitialDataSpec()
    flow: FlowConfig = FlowConfig(t_max=0.1)
    diagnostics: DiagnosticsSpec = DiagnosticsSpec()
    sequence: SequenceSpec = SequenceSpec()
    output_dir: str = "out"


def p0_threshold(n: int) -> float:
    """Least admissible Lp exponent for the factor: n/2 + 2n(n+4)/((n-2)(n+2))."""
    thr = Fraction(n, 2) + Fraction(2 * n * (n + 4), (n - 2) * (n + 2))
    return float(thr)


_SCHEMAS = {
    "grid": {"n": int, "m": int, "lengths": "float_list"},
    "background": {"kind": str, "seed": int, "amplitude": float, "kmax": int},
    "initial_data": {
        "kind": str,
        "seed": int,
        "amplitude": float,
        "kmax": int,
        "value": float,
    },
    "flow": {
        "t_max": float,
        "cfl_safety": float,
        "tol_R": float,
        "record_every": int,
        "u_floor": float,
        "dt": "float_or_null",
        "laplacian": str,
    },
    "diagnostics": {
        "p0": float,
        "p": "float_list",
        "alpha": "float_list",
        "eps": float,
        "lambda_budget": float,
        "delta": float,
    },
    "sequence": {
        "count": int,
        "base_seed": int,
        "deltas": "float_list_or_null",
    },
}


def _coerce(path: str, value, kind):
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {value!r}")
        return value
    if kind == "float_list":
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{path}: expected non-empty list of numbers, got {value!r}")
        return tuple(_coerce(f"{path}[{i}]", v, float) for i, v in enumerate(value))
    if kind == "float_or_null":
        return None if value is None else _coerce(path, value, float)
    if kind == "float_list_or_null":
        return None if value is None else _coerce(path, value, "float_list")
    raise AssertionError(kind)


def _parse_section(name: str, raw: dict, defaults) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    schema = _SCHEMAS[name]
    out = dict(defaults)
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"{name}: unknown key '{key}'")
        out[key] = _coerce(f"{name}.{key}", value, schema[key])
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment configuration."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected an object")
    known = set(_SCHEMAS) | {"output_dir"}
    for key in doc:
        if key not in known:
            raise ConfigError(f"top level: unknown key '{key}'")

    grid_kw = _parse_section("grid", doc.get("grid", {}), asdict(GridSpec()))
    grid = GridSpec(**grid_kw)
    try:
        grid.build()
    except ValueError as err:
        raise ConfigError(f"grid: {err}") from err

    bg_kw = _parse_section("background", doc.get("background", {}), asdict(BackgroundSpec()))
    if bg_kw["kind"] not in ("flat", "conformally_flat"):
        raise ConfigError(f"background.kind: expected 'flat' or 'conformally_flat', got {bg_kw['kind']!r}")
    background = BackgroundSpec(**bg_kw)

    init_kw = _parse_section(
        "initial_data", doc.get("initial_data", {}), asdict(InitialDataSpec())
    )
    if init_kw["kind"] not in ("bandlimited", "constant"):
        raise ConfigError(
            f"initial_data.kind: expected 'bandlimited' or 'constant', got {init_kw['kind']!r}"
        )
    initial_data = InitialDataSpec(**init_kw)

    flow_defaults = {
        "t_max": 0.1,
        "cfl_safety": 0.25,
        "tol_R": 1e-8,
        "record_every": 1,
        "u_floor": 1e-8,
        "dt": None,
        "laplacian": "spectral",
    }
    flow_kw = _parse_section("flow", doc.get("flow", {}), flow_defaults)
    try:
        flow = FlowConfig(**flow_kw)
    except ValueError as err:
        raise ConfigError(f"flow: {err}") from err

    diag_kw = _parse_section(
        "diagnostics", doc.get("diagnostics", {}), asdict(DiagnosticsSpec())
    )
    diag = DiagnosticsSpec(**diag_kw)
    thr = p0_threshold(grid.n)
    if not diag.p0 > thr:
        raise ConfigError(
            f"diagnostics.p0: hypothesis (B) exponent too small: p0 = {diag.p0} "
            f"must exceed n/2 + 2n(n+4)/((n-2)(n+2)) = {thr} for n = {grid.n}"
        )
    for label, vals in (("p", diag.p), ("alpha", diag.alpha)):
        for v in vals:
            if not v > 0:
                raise ConfigError(f"diagnostics.{label}: entries must be positive, got {v}")
    for v in diag.alpha:
        if not v < 1:
            raise ConfigError(f"diagnostics.alpha: entries must lie in (0, 1), got {v}")
    if not diag.eps > 0:
        raise ConfigError(f"diagnostics.eps: must be positive, got {diag.eps}")
    if not (diag.lambda_budget > 0 and diag.delta > 0):
        raise ConfigError("diagnostics: lambda_budget and delta must be positive")

    seq_kw = _parse_section("sequence", doc.get("sequence", {}), asdict(SequenceSpec()))
    seq = SequenceSpec(**seq_kw)
    if seq.count < 1:
        raise ConfigError(f"sequence.count: must be >= 1, got {seq.count}")
    sched = seq.schedule()
    if len(sched) != seq.count:
        raise ConfigError(
            f"sequence.deltas: expected {seq.count} entries, got {len(sched)}"
        )
    if any(not d > 0 for d in sched):
        raise ConfigError("sequence.deltas: entries must be positive")
    if any(b > a for a, b in zip(sched[:-1], sched[1:])):
        raise ConfigError("sequence.deltas: entries must be non-increasing")

    out_dir = doc.get("output_dir", "out")
    if not isinstance(out_dir, str):
        raise ConfigError(f"output_dir: expected string, got {out_dir!r}")

    return ExperimentConfig(
        grid=grid,
        background=background,
        initial_data=initial_data,
        flow=flow,
        diagnostics=diag,
        sequence=seq,
        output_dir=out_dir,
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = {
        "grid": {"n": cfg.grid.n, "m": cfg.grid.m, "lengths": list(cfg.grid.lengths)},
        "background": asdict(cfg.background),
        "initial_data": asdict(cfg.initial_data),
        "flow": {
            "t_max": cfg.flow.t_max,
            "cfl_safety": cfg.flow.cfl_safety,
            "tol_R": cfg.flow.tol_R,
            "record_every": cfg.flow.record_every,
            "u_floor": cfg.flow.u_floor,
            "dt": cfg.flow.dt,
            "laplacian": cfg.flow.laplacian,
        },
        "diagnostics": {
            "p0": cfg.diagnostics.p0,
            "p": list(cfg.diagnostics.p),
            "alpha": list(cfg.diagnostics.alpha),
            "eps": cfg.diagnostics.eps,
            "lambda_budget": cfg.diagnostics.lambda_budget,
            "delta": cfg.diagnostics.delta,
        },
        "sequence": {
            "count": cfg.sequence.count,
            "base_seed": cfg.sequence.base_seed,
            "deltas": None if cfg.sequence.deltas is None else list(cfg.sequence.deltas),
        },
        "output_dir": cfg.output_dir,
    }
    return doc


def config_to_text(cfg: ExperimentConfig) -> str:
    """Canonical JSON form (defaults filled, keys sorted); parses back losslessly."""
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


# -- initial data ---------------------------------------------------------------


def bandlimited_shape(grid: PeriodicGrid, seed: int, kmax: int) -> np.ndarray:
    """Seeded band-limited shape, odd under x -> -x, sup-normalized to 1.

    A weighted sum of sine modes over 0 < max_j |k_j| <= kmax (one
    representative per +-k pair, fixed enumeration order, weights decaying
    like (1 + |k|^2)^(-3/2)), divided by its sup.  Oddness makes the value
    set symmetric, so min = -1 and max = +1 exactly on the lattice.
    """
    if kmax < 1 or kmax > grid.m // 4:
        raise ValueError(
            f"kmax must lie in [1, m/4] = [1, {grid.m // 4}] (aliasing guard), got {kmax}"
        )
    rng = np.random.default_rng(seed)
    mesh = grid.mesh()
    s = np.zeros(grid.shape)
    zero = (0,) * grid.n
    for k in itertools.product(range(-kmax, kmax + 1), repeat=grid.n):
        if k <= zero:
            continue
        k2 = float(sum(kj * kj for kj in k))
        coeff = rng.standard_normal() * (1.0 + k2) ** -1.5
        phase = np.zeros(grid.shape)
        for kj, xj, lj in zip(k, mesh, grid.lengths):
            if kj:
                phase = phase + (2.0 * np.pi * kj / lj) * xj
        s += coeff * np.sin(phase)
    sup = float(np.abs(s).max())
    if sup > 0.0:
        s /= sup
    return s


def gen_bandlimited(grid: PeriodicGrid, seed: int, amplitude: float, kmax: int) -> ScalarField:
    """Positive factor u = exp(amplitude * s) for the seeded shape s.

    Deterministic per seed; extremes are exactly exp(+-|amplitude|), and
    amplitude 0 yields the constant-one field.
    """
    if not np.isfinite(amplitude):
        raise ValueError(f"amplitude must be finite, got {amplitude}")
    s = bandlimited_shape(grid, seed, kmax)
    return ScalarField(grid, np.exp(amplitude * s))


def family_shape(grid: PeriodicGrid, seed: int) -> np.ndarray:
    """Lowest-band shape for the calibrated families: a random combination of
    the n axis sine modes, sup-normalized.

    All such shapes share one Laplace eigenvalue per axis, so the curvature
    response per unit amplitude is seed-stable and the floor schedule delta_i
    is the only scale in the family.  (The single-mode calibration oracle
    min R ~ -8 (2 pi)^2 a for n = 3 is the coefficient (1, 0, 0) case.)
    """
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal(grid.n)
    mesh = grid.mesh()
    s = np.zeros(grid.shape)
    for c, xj, lj in zip(coeffs, mesh, grid.lengths):
        s = s + c * np.sin((2.0 * np.pi / lj) * xj)
    sup = float(np.abs(s).max())
    if sup > 0.0:
        s /= sup
    return s


# -- delta-calibrated families ----------------------------------------------------


@dataclass(frozen=True)
class CalibratedMember:
    index: int
    delta: float
    amplitude: float
    metric: ConformalMetric
    audit: AssumptionsAudit


def _min_r(background: Background, shape: np.ndarray, amplitude: float) -> float:
    """Curvature minimum at the given amplitude; nan when exp overflows."""
    with np.errstate(all="ignore"):
        u = np.exp(amplitude * shape)
        r = conformal.scalar_curvature_values(background, u)
    return float(r.min())


def calibrate_delta_family(
    grid: PeriodicGrid,
    base_seed: int,
    count: int,
    deltas: tuple[float, ...] | None = None,
    *,
    lambda_budget: float = 2.0,
    p0: float = 12.0,
    background: Background | None = None,
    rel_tol: float = 0.009,
) -> list[CalibratedMember]:
    """Build metrics with min R(g_i) = -delta_i within 1% by amplitude bisection.

    One fixed band-limited shape (from base_seed) serves the whole family;
    only the amplitude varies, so the family shrinks continuously to the
    constant factor as delta -> 0.  Every member is audited against the
    hypothesis budget and must pass.
    """
    if background is None:
        background = Background.flat(grid)
    sched = tuple(deltas) if deltas is not None else tuple(1.0 / i for i in range(1, count + 1))
    if len(sched) != count:
        raise ValueError(f"expected {count} deltas, got {len(sched)}")
    if any(not d > 0 for d in sched) or any(b > a for a, b in zip(sched[:-1], sched[1:])):
        raise ValueError("delta schedule must be positive and non-increasing")

    shape = family_shape(grid, base_seed)
    members = []
    for i, delta in enumerate(sched, start=1):
        a_hi = delta / 1000.0
        for _ in range(80):
            r = _min_r(background, shape, a_hi)
            if np.isfinite(r) and r <= -delta:
                break
            a_hi *= 2.0
            if a_hi > 64.0 or not np.isfinite(r):
                raise CalibrationError(
                    f"member {i}: no reachable amplitude attains min R = {-delta}; "
                    f"try a different base_seed"
                )
        else:
            raise CalibrationError(
                f"member {i}: bracketing failed for delta = {delta}; try a different base_seed"
            )
        a_lo = 0.0
        amplitude = None
        for _ in range(200):
            mid = 0.5 * (a_lo + a_hi)
            r = _min_r(background, shape, mid)
            if abs(r + delta) <= rel_tol * delta:
                amplitude = mid
                break
            if r > -delta:
                a_lo = mid
            else:
                a_hi = mid
        if amplitude is None:
            raise CalibrationError(
                f"member {i}: bisection did not converge to min R = {-delta} within 1%; "
                f"the shape response may not be monotone, try a different base_seed"
            )
        cm = ConformalMetric(background, ScalarField(grid, np.exp(amplitude * shape)))
        audit = diagnostics.assumptions_check(cm, lambda_budget, p0, delta * 1.01)
        if not audit.passed:
            failing = [it.name for it in audit.items if not it.passed]
            raise CalibrationError(
                f"member {i}: calibrated metric fails the hypothesis audit on {failing}"
            )
        members.append(
            CalibratedMember(index=i, delta=delta, amplitude=amplitude, metric=cm, audit=audit)
        )
    return members


# -- single run --------------------------------------------------------------------


@dataclass
class RunOutcome:
    config: ExperimentConfig
    result: FlowResult
    audit: AssumptionsAudit
    final_flat_distance: float
    final_R_sup: float
    flat_distance_series: list[float]
    runtime_s: float


def run_experiment(cfg: ExperimentConfig) -> RunOutcome:
    """Build the configured metric, audit it, run the flow, and summarize."""
    t0 = time.perf_counter()
    grid = cfg.grid.build()
    background = cfg.background.build(grid)
    u0 = cfg.initial_data.build(grid)
    cm0 = ConformalMetric(background, u0)
    audit = diagnostics.assumptions_check(
        cm0, cfg.diagnostics.lambda_budget, cfg.diagnostics.p0, cfg.diagnostics.delta
    )
    result = run_flow(
        cm0,
        cfg.flow,
        record_p=cfg.diagnostics.p[0],
        moser_eps=cfg.diagnostics.eps,
    )
    traj = result.trajectory
    fd_series = [
        diagnostics.flat_distance(
            ConformalMetric(background, ScalarField(grid, s.u))
        )
        for s in traj.snapshots
    ]
    final_rec = result.records[-1]
    return RunOutcome(
        config=cfg,
        result=result,
        audit=audit,
        final_flat_distance=fd_series[-1],
        final_R_sup=max(abs(final_rec.R_min), abs(final_rec.R_max)),
        flat_distance_series=fd_series,
        runtime_s=time.perf_counter() - t0,
    )


# -- sequence experiment -------------------------------------------------------------


@dataclass
class MemberResult:
    index: int
    delta: float
    amplitude: float
    audit: AssumptionsAudit
    records: list[DiagnosticsRecord]
    flat_distance_series: list[float]  # one entry per record
    final_flat_distance: float
    final_R_sup: float
    vol_drift_c: float  # max over records of |Vol(t) - Vol(0)| / t
    steps: int
    runtime_s: float  # wall clock; excluded from deterministic outputs


@dataclass
class MonotonicitySummary:
    slack: float
    non_increasing_within_slack: bool
    final_flat_distance: float
    final_below_threshold: bool
    threshold: float
    vol_drift_c: tuple[float, ...]
    violations: tuple[str, ...]


@dataclass
class SequenceResult:
    config: ExperimentConfig
    members: list[MemberResult]
    monotonicity: MonotonicitySummary


def run_sequence_experiment(cfg: ExperimentConfig) -> SequenceResult:
    """Run the family of flows over the decreasing curvature-floor schedule.

    Members are calibrated from one shared shape, audited, then flowed
    independently with a fixed per-member step size (the CFL-safe step of
    the initial factor) so the records are uniformly spaced.  The summary
    reports whether the final distance to the flat metric is non-increasing
    in the member index within 10% slack; violations are listed, never
    suppressed.
    """
    grid = cfg.grid.build()
    background = cfg.background.build(grid)
    seq = cfg.sequence
    members_cal = calibrate_delta_family(
        grid,
        seq.base_seed,
        seq.count,
        seq.deltas,
        lambda_budget=cfg.diagnostics.lambda_budget,
        p0=cfg.diagnostics.p0,
        background=background,
    )

    members: list[MemberResult] = []
    for cal in members_cal:
        t0 = time.perf_counter()
        flow_cfg = replace(cfg.flow, dt=stable_dt(cal.metric, cfg.flow))
        try:
            result = run_flow(
                cal.metric,
                flow_cfg,
                record_p=cfg.diagnostics.p[0],
                moser_eps=cfg.diagnostics.eps,
            )
        except FlowError as err:
            raise SequenceError(
                f"member {cal.index} (delta = {cal.delta}) failed: {err}", members
            ) from err
        recs = result.records
        vol0 = recs[0].vol_g
        drift = [abs(r.vol_g - vol0) / r.t for r in recs if r.t > 0]
        final_rec = recs[-1]
        fd_series = [
            diagnostics.flat_distance(
                ConformalMetric(background, ScalarField(grid, s.u))
            )
            for s in result.trajectory.snapshots
        ]
        members.append(
            MemberResult(
                index=cal.index,
                delta=cal.delta,
                amplitude=cal.amplitude,
                audit=cal.audit,
                records=recs,
                flat_distance_series=fd_series,
                final_flat_distance=fd_series[-1],
                final_R_sup=max(abs(final_rec.R_min), abs(final_rec.R_max)),
                vol_drift_c=max(drift) if drift else 0.0,
                steps=result.state.step_count,
                runtime_s=time.perf_counter() - t0,
            )
        )

    slack = 0.10
    threshold = 1e-3
    violations = []
    for a, b in zip(members[:-1], members[1:]):
        if b.final_flat_distance > a.final_flat_distance * (1.0 + slack):
            violations.append(
                f"member {b.index}: flat distance {b.final_flat_distance!r} exceeds "
                f"member {a.index} value {a.final_flat_distance!r} beyond {slack:.0%} slack"
            )
    summary = MonotonicitySummary(
        slack=slack,
        non_increasing_within_slack=not violations,
        final_flat_distance=members[-1].final_flat_distance,
        final_below_threshold=members[-1].final_flat_distance < threshold,
        threshold=threshold,
        vol_drift_c=tuple(m.vol_drift_c for m in members),
        violations=tuple(violations),
    )
    return SequenceResult(config=cfg, members=members, monotonicity=summary)
