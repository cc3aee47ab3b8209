"""Serialization of runs: CSV trajectories, JSON summaries, raw snapshots, plots.

All numeric text uses shortest round-trip float formatting, so re-ingesting a
CSV reproduces the diagnostics bitwise and rerunning a configuration
reproduces the files byte-for-byte (wall-clock timings are segregated under
a "timing" key and are the only non-reproducible output).

Raw field snapshots are flat little-endian float64 arrays behind a 32-byte
header: magic b"TORUSFLW", int32 n, int32 m, then four float32 side lengths
(unused slots zero).  Lengths are stored at reduced precision as a geometry
tag; exact values belong to the run summary.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .diagnostics import CSV_HEADER, DiagnosticsRecord
from .experiment import RunOutcome, SequenceResult, config_to_dict
from .grid import ScalarField, make_grid

__all__ = [
    "SNAPSHOT_MAGIC",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "write_field_snapshot",
    "read_field_snapshot",
    "emit_outputs",
]

SNAPSHOT_MAGIC = b"TORUSFLW"
_HEADER = struct.Struct("<8sii4f")
assert _HEADER.size == 32


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trajectory_csv(records: list[DiagnosticsRecord], path: Path) -> Path:
    path = Path(path)
    lines = [CSV_HEADER]
    names = [f.name for f in dataclasses.fields(DiagnosticsRecord)]
    for rec in records:
        lines.append(",".join(_fmt(getattr(rec, name)) for name in names))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_trajectory_csv(path: Path) -> list[DiagnosticsRecord]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: unexpected CSV header")
    out = []
    for ln in lines[1:]:
        vals = [float(tok) for tok in ln.split(",")]
        out.append(DiagnosticsRecord(*vals))
    return out


def write_field_snapshot(field: ScalarField, path: Path) -> Path:
    path = Path(path)
    grid = field.grid
    lengths4 = list(grid.lengths) + [0.0] * (4 - grid.n)
    header = _HEADER.pack(SNAPSHOT_MAGIC, grid.n, grid.m, *lengths4)
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    path.write_bytes(header + payload)
    return path


def read_field_snapshot(path: Path) -> ScalarField:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated snapshot")
    magic, n, m, *lengths4 = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    grid = make_grid(n, m, lengths4[:n])
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return ScalarField(grid, values)


# -- summaries ----------------------------------------------------------------


def _audit_dict(audit) -> dict:
    return {
        "lambda_budget": audit.lambda_budget,
        "p0": audit.p0,
        "delta": audit.delta,
        "passed": audit.passed,
        "items": [dataclasses.asdict(item) for item in audit.items],
    }


def _json_text(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _run_summary(outcome: RunOutcome) -> dict:
    res = outcome.result
    return {
        "schema": "torusflow/run-summary/v1",
        "config": config_to_dict(outcome.config),
        "results": {
            "termination": res.termination,
            "steps": res.state.step_count,
            "final_t": res.state.t,
            "final_R_sup": outcome.final_R_sup,
            "final_flat_distance": outcome.final_flat_distance,
            "final_vol_g": res.records[-1].vol_g,
            "records": len(res.records),
            "audit": _audit_dict(outcome.audit),
        },
        "timing": {"runtime_s": outcome.runtime_s},
    }


def _sequence_summary(seq: SequenceResult) -> dict:
    mono = seq.monotonicity
    return {
        "schema": "torusflow/sequence-summary/v1",
        "config": config_to_dict(seq.config),
        "members": [
            {
                "index": m.index,
                "delta": m.delta,
                "amplitude": m.amplitude,
                "audit": _audit_dict(m.audit),
                "final_flat_distance": m.final_flat_distance,
                "final_R_sup": m.final_R_sup,
                "vol_drift_c": m.vol_drift_c,
                "steps": m.steps,
                "csv": f"member_{m.index:02d}.csv",
            }
            for m in seq.members
        ],
        "monotonicity": {
            "slack": mono.slack,
            "non_increasing_within_slack": mono.non_increasing_within_slack,
            "final_flat_distance": mono.final_flat_distance,
            "final_below_threshold": mono.final_below_threshold,
            "threshold": mono.threshold,
            "vol_drift_c": list(mono.vol_drift_c),
            "violations": list(mono.violations),
        },
        "timing": {"runtime_s": [m.runtime_s for m in seq.members]},
    }


# -- plots ---------------------------------------------------------------------


def _plot_series(
    out_dir: Path, stem: str, times: list[float], series: list[float], ylabel: str
) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "torusflow"
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.plot(times, series, lw=1.2)
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out_dir / f"{stem}.svg"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _emit_trajectory_plots(
    out_dir: Path,
    prefix: str,
    records: list[DiagnosticsRecord],
    flat_distance_series: list[float] | None,
) -> list[Path]:
    times = [r.t for r in records]
    written = [
        _plot_series(out_dir, f"{prefix}R_min", times, [r.R_min for r in records], "min R"),
        _plot_series(out_dir, f"{prefix}vol", times, [r.vol_g for r in records], "Vol(g)"),
    ]
    if flat_distance_series is not None:
        written.append(
            _plot_series(
                out_dir, f"{prefix}flat_distance", times, flat_distance_series, "flat distance"
            )
        )
    return written


# -- top-level emitter -----------------------------------------------------------


def emit_outputs(
    result: "RunOutcome | SequenceResult",
    out_dir: Path,
    *,
    plots: bool = False,
    snapshot: bool = False,
) -> list[Path]:
    """Write the serialized outputs of a run or sequence into out_dir.

    Returns the written paths.  I/O errors propagate as OSError with the
    offending path in the message.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if isinstance(result, RunOutcome):
        written.append(write_trajectory_csv(result.result.records, out_dir / "trajectory.csv"))
        summary = out_dir / "summary.json"
        summary.write_text(_json_text(_run_summary(result)), encoding="utf-8")
        written.append(summary)
        if snapshot:
            final_u = result.result.state.cm.u
            written.append(write_field_snapshot(final_u, out_dir / "final_u.bin"))
        if plots:
            written.extend(
                _emit_trajectory_plots(
                    out_dir, "", result.result.records, result.flat_distance_series
                )
            )
        return written
    if isinstance(result, SequenceResult):
        for m in result.members:
            written.append(
                write_trajectory_csv(m.records, out_dir / f"member_{m.index:02d}.csv")
            )
            if plots:
                written.extend(
                    _emit_trajectory_plots(
                        out_dir,
                        f"member_{m.index:02d}_",
                        m.records,
                        m.flat_distance_series,
                    )
                )
        summary = out_dir / "summary.json"
        summary.write_text(_json_text(_sequence_summary(result)), encoding="utf-8")
        written.append(summary)
        return written
    raise TypeError(f"cannot emit outputs for {type(result).__name__}")
