"""Readers for the delimited artifacts the training pipeline writes.

Every pipeline file starts with "# key=value" comment lines followed by
one column-header row and data rows. The three tables consumed here:

    trace_{method}_seed{NNNN}.csv
        batch_index,mean_train_estimator_value,test_risk,test_accuracy,theta_norm
    summary_{method}.csv
        seed,final_test_risk,final_test_accuracy,final_theta_norm,
        risk_variance,accuracy_variance,averaged_model_risk,averaged_model_accuracy
        (per-seed rows, then one "aggregate" row carrying the variances
        and the averaged-model evaluation)
    bias_scan.csv
        truncation_order,margin_variance,bias_sup

Everything in this module is read-only; nothing writes or rewrites an
input file.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "PlotInputError",
    "Trace",
    "Summary",
    "BiasScan",
    "METHODS",
    "TRACE_COLUMNS",
    "SUMMARY_COLUMNS",
    "SCAN_COLUMNS",
    "load_trace",
    "load_summary",
    "load_bias_scan",
    "peek_columns",
]

METHODS = ("real", "noisy", "iwp")

TRACE_COLUMNS = (
    "batch_index",
    "mean_train_estimator_value",
    "test_risk",
    "test_accuracy",
    "theta_norm",
)
SUMMARY_COLUMNS = (
    "seed",
    "final_test_risk",
    "final_test_accuracy",
    "final_theta_norm",
    "risk_variance",
    "accuracy_variance",
    "averaged_model_risk",
    "averaged_model_accuracy",
)
SCAN_COLUMNS = ("truncation_order", "margin_variance", "bias_sup")


class PlotInputError(Exception):
    """An input table is missing, empty, or does not match its documented shape."""


@dataclass(frozen=True)
class Trace:
    """Per-batch test risk of one training run."""

    method: str
    batch_index: np.ndarray
    test_risk: np.ndarray

    def __len__(self) -> int:
        return len(self.batch_index)


@dataclass(frozen=True)
class Summary:
    """Across-seed summary of one method: per-seed final risks plus the aggregate row."""

    method: str
    seed_risks: np.ndarray
    risk_mean: float
    risk_variance: float
    averaged_model_risk: float


@dataclass(frozen=True)
class BiasScan:
    """Flat (order, variance, bias) triples from a truncation scan."""

    order: np.ndarray
    variance: np.ndarray
    bias: np.ndarray


def _read_table(path, expected_columns):
    """Return (comment header dict, data rows as string lists) or raise."""
    path = Path(path)
    if not path.exists():
        raise PlotInputError(f"missing input file {path}")
    header = {}
    body = []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            key, sep, value = line.lstrip("#").strip().partition("=")
            if sep:
                header[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    rows = [row for row in csv.reader(body) if row]
    if not rows:
        raise PlotInputError(f"{path} has no column header row")
    if rows[0] != list(expected_columns):
        raise PlotInputError(
            f"{path} has columns {rows[0]}, expected {list(expected_columns)}"
        )
    if len(rows) == 1:
        raise PlotInputError(f"{path} has no data rows")
    return header, rows[1:]


def peek_columns(path):
    """Return the column-header row of a table, or None if there is none."""
    path = Path(path)
    if not path.exists():
        return None
    for line in path.read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        return next(csv.reader([line]))
    return None


def load_trace(path) -> Trace:
    header, rows = _read_table(path, TRACE_COLUMNS)
    if "method" not in header:
        raise PlotInputError(f"{path} lacks the '# method=' header line")
    return Trace(
        method=header["method"],
        batch_index=np.array([int(r[0]) for r in rows]),
        test_risk=np.array([float(r[2]) for r in rows]),
    )


def load_summary(path) -> Summary:
    header, rows = _read_table(path, SUMMARY_COLUMNS)
    if "method" not in header:
        raise PlotInputError(f"{path} lacks the '# method=' header line")
    seed_rows = [r for r in rows if r[0] != "aggregate"]
    aggregate = [r for r in rows if r[0] == "aggregate"]
    if not seed_rows or len(aggregate) != 1:
        raise PlotInputError(
            f"{path} must contain per-seed rows and exactly one aggregate row"
        )
    agg = aggregate[0]
    return Summary(
        method=header["method"],
        seed_risks=np.array([float(r[1]) for r in seed_rows]),
        risk_mean=float(agg[1]),
        risk_variance=float(agg[4]),
        averaged_model_risk=float(agg[6]),
    )


def load_bias_scan(path) -> BiasScan:
    _, rows = _read_table(path, SCAN_COLUMNS)
    return BiasScan(
        order=np.array([int(r[0]) for r in rows]),
        variance=np.array([float(r[1]) for r in rows]),
        bias=np.array([float(r[2]) for r in rows]),
    )
