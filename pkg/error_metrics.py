"""
Error Metrics
Relative error norms, cell averages and comparison reports/tables
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from time_solver import energy_norm

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ["DOF_H", "M", "e1_h", "e2_h", "t_sol"]


@dataclass
class ErrorSummary:
    """One run compared against a reference; errors are percentages"""

    label: str
    e1_h: float | None = None
    e2_h: float | None = None
    e1_H: float | None = None
    dof_h: int = 0
    dof_H: int = 0
    M: int | None = None
    timings: dict = field(default_factory=dict)
    seed: int | None = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("e1_h", "e2_h", "e1_H"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} must be nonnegative, got {value}")
        negative = {k: v for k, v in self.timings.items() if v < 0}
        if negative:
            raise ValueError(f"negative timings: {negative}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def _relative(diff_norm, ref_norm, what):
    if ref_norm == 0:
        raise ValueError(f"reference has zero {what}; relative error is undefined")
    return 100.0 * diff_norm / ref_norm


def _pair(u_ref, u_test):
    u_ref = np.asarray(u_ref, dtype=float)
    u_test = np.asarray(u_test, dtype=float)
    if u_ref.shape != u_test.shape:
        raise ValueError(f"length mismatch: reference {u_ref.shape}, test {u_test.shape}")
    return u_ref, u_test


def l2_error(u_ref, u_test):
    """100 * ||u_ref - u_test|| / ||u_ref||"""
    u_ref, u_test = _pair(u_ref, u_test)
    return _relative(np.linalg.norm(u_ref - u_test), np.linalg.norm(u_ref), "L2 norm")


def energy_error(u_ref, u_test, L):
    """100 * ||u_ref - u_test||_L / ||u_ref||_L"""
    u_ref, u_test = _pair(u_ref, u_test)
    return _relative(energy_norm(L, u_ref - u_test), energy_norm(L, u_ref), "energy")


def cell_average(u, assignment, volumes=None, weighted=True):
    """Per-cell mean of u, weighted by `volumes` (capacities) unless weighted=False; NaN for empty cells"""
    u = np.asarray(u, dtype=float)
    n_cells = len(assignment.cell_nodes)
    if not weighted or volumes is None:
        volumes = np.ones(len(u))
    totals = np.bincount(assignment.owner, weights=volumes, minlength=n_cells)
    sums = np.bincount(assignment.owner, weights=u * volumes, minlength=n_cells)
    empty = totals == 0
    if empty.any():
        logger.info("%d empty cells excluded from cell averages", int(empty.sum()))
    averages = np.full(n_cells, np.nan)
    averages[~empty] = sums[~empty] / totals[~empty]
    return averages


def coarse_error(u_bar_ref, u_bar_test):
    """e1_H over the cells where both averages exist"""
    u_bar_ref, u_bar_test = _pair(u_bar_ref, u_bar_test)
    ok = np.isfinite(u_bar_ref) & np.isfinite(u_bar_test)
    return l2_error(u_bar_ref[ok], u_bar_test[ok])


def summarize(label, u_ref, u_test, L, assignment=None, volumes=None, **fields):
    """ErrorSummary for u_test against u_ref, including e1_H when a cell assignment is given"""
    e1_H = None
    if assignment is not None:
        e1_H = coarse_error(cell_average(u_ref, assignment, volumes), cell_average(u_test, assignment, volumes))
    return ErrorSummary(label, l2_error(u_ref, u_test), energy_error(u_ref, u_test, L), e1_H,
                        dof_h=len(np.asarray(u_ref)), **fields)


def write_report(summaries, path):
    """report.json with one entry per summary"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = {"runs": [s.to_dict() for s in summaries]}
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_report(path):
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    return [ErrorSummary.from_dict(run) for run in data["runs"]]


def error_table(summaries):
    """DOF_H, M, e1_h, e2_h, t_sol rows sorted by M"""
    rows = [{
        "label": s.label,
        "DOF_H": s.dof_H,
        "M": s.M,
        "e1_h": s.e1_h,
        "e2_h": s.e2_h,
        "e1_H": s.e1_H,
        "t_sol": s.timings.get("solve", np.nan),
    } for s in summaries]
    df = pd.DataFrame(rows, columns=["label"] + TABLE_COLUMNS + ["e1_H"])
    df["M"] = df["M"].astype("Int64")
    return df.sort_values(["M", "label"], kind="stable", na_position="first").reset_index(drop=True)


def write_table(df, txt=None, csv=None, xlsx=None):
    """Aligned text table, plot-data CSV and (optionally) an Excel sheet"""
    written = []
    if txt:
        Path(txt).write_text(df.to_string(index=False, float_format=lambda v: f"{v:.4f}") + "\n",
                             encoding="utf-8")
        written.append(Path(txt))
    if csv:
        df.to_csv(csv, index=False, float_format="%.17g", lineterminator="\n")
        written.append(Path(csv))
    if xlsx:
        df.to_excel(xlsx, index=False, sheet_name="errors", engine="openpyxl")
        written.append(Path(xlsx))
    return written


def error_curves(ref_trajectory, test_trajectory, L):
    """Per-step e1_h and e2_h over the steps stored in both trajectories"""
    rows = []
    for step, u_ref in zip(ref_trajectory.steps, ref_trajectory.snapshots):
        if step not in test_trajectory.steps:
            continue
        u_test = test_trajectory.at(step)
        if not np.any(u_ref):
            continue
        rows.append({
            "step": step,
            "e1_h": l2_error(u_ref, u_test),
            "e2_h": energy_error(u_ref, u_test, L) if energy_norm(L, u_ref) > 0 else np.nan,
        })
    return pd.DataFrame(rows, columns=["step", "e1_h", "e2_h"])


def monotone_trend(values, slack=0.05):
    """True when each value is at most (1 + slack) times its predecessor"""
    values = [v for v in values if v is not None and np.isfinite(v)]
    return all(b <= a * (1.0 + slack) for a, b in zip(values, values[1:]))
