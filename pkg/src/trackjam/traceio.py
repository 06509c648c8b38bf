"""Trace persistence: one CSV row per step, floats as shortest round-trip
decimals so re-reading reconstructs every value exactly."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .models import OFF
from .sim import ScenarioConfig, StepRecord, Trace

_TRUTH_COLS = ["truth_x", "truth_y", "truth_z", "truth_vx", "truth_vy", "truth_vz"]
_EST_SUFFIX = ["est_x", "est_y", "est_z", "est_vx", "est_vy", "est_vz"]
_FUSED_COLS = ["fused_x", "fused_y", "fused_z", "fused_vx", "fused_vy", "fused_vz"]


def _agent_columns(k: int) -> list[str]:
    p = f"a{k}_"
    return (
        [p + "pos_x", p + "pos_y", p + "pos_z", p + "level_dbw"]
        + [p + "axis_x", p + "axis_y", p + "axis_z", p + "existence"]
        + [p + s for s in _EST_SUFFIX]
        + [p + "interference_w"]
    )


def trace_columns(n_agents: int) -> list[str]:
    cols = ["step", "truth_present"] + list(_TRUTH_COLS)
    for k in range(1, n_agents + 1):
        cols += _agent_columns(k)
    cols += ["fused_existence"] + list(_FUSED_COLS) + ["target_received_w", "ospa_m"]
    return cols


def _fmt(x) -> str:
    return repr(float(x))


def _fmt_level(level: float) -> str:
    return "OFF" if level == OFF else _fmt(level)


def write_trace_csv(trace: Trace, path) -> None:
    """Write the trace with the fixed column schema; absent estimates become
    empty cells, never zeros."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = trace.config.n_agents
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(trace_columns(n))
        for rec in trace.records:
            row: list[str] = [str(rec.step), "1" if rec.truth_present else "0"]
            row += [_fmt(v) for v in rec.truth_state]
            for j in range(n):
                row += [_fmt(v) for v in rec.agent_positions[j]]
                row.append(_fmt_level(rec.agent_levels_dbw[j]))
                row += [_fmt(v) for v in rec.agent_axes[j]]
                row.append(_fmt(rec.agent_existence[j]))
                est = rec.agent_estimates[j]
                row += [""] * 6 if est is None else [_fmt(v) for v in est]
                row.append(_fmt(rec.agent_interference_w[j]))
            row.append(_fmt(rec.fused_existence))
            fused = rec.fused_estimate
            row += [""] * 6 if fused is None else [_fmt(v) for v in fused]
            row.append(_fmt(rec.target_received_w))
            row.append(_fmt(rec.ospa_m))
            writer.writerow(row)


def read_trace_csv(path, config: ScenarioConfig) -> Trace:
    """Reconstruct a Trace from a CSV written by write_trace_csv.

    Measurement counts and the planner flag are not part of the CSV schema;
    they come back as zeros/None.
    """
    n = config.n_agents
    expected = trace_columns(n)
    records: list[StepRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != expected:
            raise ValueError(f"unexpected trace columns in {path}")
        for raw in reader:
            row = dict(zip(expected, raw))
            positions = np.zeros((n, 3))
            levels = np.zeros(n)
            axes = np.zeros((n, 3))
            existence = np.zeros(n)
            estimates: list[np.ndarray | None] = []
            interference = np.zeros(n)
            for j in range(n):
                p = f"a{j + 1}_"
                positions[j] = [float(row[p + c]) for c in ("pos_x", "pos_y", "pos_z")]
                levels[j] = OFF if row[p + "level_dbw"] == "OFF" else float(row[p + "level_dbw"])
                axes[j] = [float(row[p + c]) for c in ("axis_x", "axis_y", "axis_z")]
                existence[j] = float(row[p + "existence"])
                if row[p + "est_x"] == "":
                    estimates.append(None)
                else:
                    estimates.append(np.array([float(row[p + s]) for s in _EST_SUFFIX]))
                interference[j] = float(row[p + "interference_w"])
            fused = (
                None
                if row["fused_x"] == ""
                else np.array([float(row[c]) for c in _FUSED_COLS])
            )
            records.append(
                StepRecord(
                    step=int(row["step"]),
                    truth_present=row["truth_present"] == "1",
                    truth_state=np.array([float(row[c]) for c in _TRUTH_COLS]),
                    agent_positions=positions,
                    agent_levels_dbw=levels,
                    agent_axes=axes,
                    agent_existence=existence,
                    agent_estimates=estimates,
                    agent_interference_w=interference,
                    agent_n_measurements=np.zeros(n, dtype=int),
                    fused_existence=float(row["fused_existence"]),
                    fused_estimate=fused,
                    target_received_w=float(row["target_received_w"]),
                    ospa_m=float(row["ospa_m"]),
                    planner_solved=None,
                )
            )
    return Trace(config=config, records=records)
