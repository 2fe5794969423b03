"""Dataset generation, CSV ingestion, splitting and one-shot release.

File format: plain comma-delimited text with an optional block of
"# key=value" comment lines before the header row, then columns
x_1,...,x_p,y. Floats are written with repr(), the shortest exact
round-trip form, so write -> read -> write reproduces a file byte for
byte (comment lines keep their order; values read back as strings are
written back verbatim).

Releases derive one child RNG per record from the master seed and the
record index, so record i's noise never depends on how many records
precede it and any single record can be re-released for inspection.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .errors import ConfigError, DataError, LabelError
from .mechanisms import LdpRecord, PrivacyBudget, RawRecord, ldp_release

__all__ = [
    "DatasetSpec",
    "ColumnSpec",
    "ColumnSchema",
    "generate_synthetic",
    "ingest_csv",
    "split",
    "release_dataset",
    "records_to_arrays",
    "arrays_to_records",
    "write_records_csv",
    "read_records_csv",
]

_ROLES = ("feature", "label", "ignore")


@dataclass(frozen=True)
class DatasetSpec:
    """Parameters of the two-cluster synthetic task."""

    n: int
    p: int
    class_separation: float = 2.0
    label_balance: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.p < 1:
            raise ConfigError(f"p must be >= 1, got {self.p}")
        if self.class_separation < 0:
            raise ConfigError(f"class_separation must be >= 0, got {self.class_separation}")
        if not 0.0 < self.label_balance < 1.0:
            raise ConfigError(
                f"label_balance must lie strictly in (0, 1), got {self.label_balance}"
            )


@dataclass(frozen=True)
class ColumnSpec:
    """One CSV column: its header name, role, and (for labels) value mapping."""

    name: str
    role: str = "feature"
    label_map: tuple[tuple[str, float], ...] | None = None

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ConfigError(f"unknown column role {self.role!r}; expected one of {_ROLES}")


@dataclass(frozen=True)
class ColumnSchema:
    """Ordered column layout of an input CSV: exactly one label, >= 1 feature."""

    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        labels = [c for c in self.columns if c.role == "label"]
        features = [c for c in self.columns if c.role == "feature"]
        if len(labels) != 1:
            raise ConfigError(f"schema needs exactly one label column, found {len(labels)}")
        if not features:
            raise ConfigError("schema needs at least one feature column")

    @property
    def feature_names(self) -> list[str]:
        return [c.name for c in self.columns if c.role == "feature"]

    @property
    def label_column(self) -> ColumnSpec:
        return next(c for c in self.columns if c.role == "label")


def generate_synthetic(spec: DatasetSpec) -> list[RawRecord]:
    """Two Gaussian clusters at +-separation along a random unit direction.

    Labels are +1 with probability label_balance. After sampling, each
    feature column is divided by its max absolute value so the data fits
    in [-1, 1]^p; the per-column scaling is linear, so the classes stay
    linearly separable to the same degree. Deterministic per seed.
    """
    rng = np.random.default_rng(spec.seed)
    direction = rng.standard_normal(spec.p)
    direction /= np.linalg.norm(direction)
    labels = np.where(rng.random(spec.n) < spec.label_balance, 1.0, -1.0)
    x = labels[:, None] * (spec.class_separation * direction)[None, :]
    x = x + rng.standard_normal((spec.n, spec.p))
    col_max = np.max(np.abs(x), axis=0)
    col_max[col_max == 0.0] = 1.0
    x = x / col_max
    return [RawRecord(x[i], float(labels[i])) for i in range(spec.n)]


def ingest_csv(path, schema: ColumnSchema, norm_bound: float) -> list[RawRecord]:
    """Read an external CSV into records scaled for release.

    Features are min-max scaled per column into [-1, 1] (a constant
    column maps to 0), then any row whose feature norm still exceeds
    norm_bound is scaled down onto the bound, so every record is
    releasable under a budget with that bound.
    """
    label_spec = schema.label_column
    label_map = dict(label_spec.label_map) if label_spec.label_map else None
    rows: list[list[float]] = []
    labels: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        header = reader.fieldnames or []
        for col in schema.columns:
            if col.role != "ignore" and col.name not in header:
                raise DataError(f"missing column {col.name!r} in {path}")
        for lineno, row in enumerate(reader, start=2):
            feats = []
            for name in schema.feature_names:
                cell = row[name]
                try:
                    feats.append(float(cell))
                except (TypeError, ValueError):
                    raise DataError(
                        f"parse error at {path} line {lineno}, column {name!r}: {cell!r}"
                    ) from None
            cell = row[label_spec.name]
            if label_map is not None:
                if cell not in label_map:
                    raise LabelError(
                        f"unknown label value {cell!r} at {path} line {lineno}"
                    )
                labels.append(label_map[cell])
            else:
                try:
                    labels.append(float(cell))
                except (TypeError, ValueError):
                    raise DataError(
                        f"parse error at {path} line {lineno}, column "
                        f"{label_spec.name!r}: {cell!r}"
                    ) from None
            rows.append(feats)
    if not rows:
        raise DataError(f"no data rows in {path}")
    x = np.asarray(rows, dtype=float)
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = hi - lo
    constant = span == 0.0
    span[constant] = 1.0
    x = 2.0 * (x - lo) / span - 1.0
    x[:, constant] = 0.0
    norms = np.linalg.norm(x, axis=1)
    over = norms > norm_bound
    x[over] *= (norm_bound / norms[over])[:, None]
    return [RawRecord(x[i], labels[i]) for i in range(len(rows))]


def split(records: list, test_fraction: float, seed: int) -> tuple[list, list]:
    """Shuffled train/test split: ceil((1 - f) n) training records, rest test."""
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    n = len(records)
    order = np.random.default_rng(seed).permutation(n)
    n_train = math.ceil((1.0 - test_fraction) * n)
    train = [records[i] for i in order[:n_train]]
    test = [records[i] for i in order[n_train:]]
    return train, test


def release_dataset(
    train: list[RawRecord], budget: PrivacyBudget, seed: int
) -> tuple[list[LdpRecord], dict]:
    """One-shot release of a training split under the budget.

    Each record gets its own generator seeded by (seed, index). Returns
    the released records and a manifest describing exactly how they were
    produced; the budget's one-shot guard marks every record spent, so a
    second release of the same records under the same budget raises.
    """
    released = []
    for index, record in enumerate(train):
        rng = np.random.default_rng([seed, index])
        released.append(ldp_release(record, budget, rng))
    manifest = {
        "epsilon_x": budget.epsilon_x,
        "epsilon_y": budget.epsilon_y,
        "delta": budget.delta,
        "feature_norm_bound": budget.feature_norm_bound,
        "sigma_squared": budget.sigma_squared(),
        "seed": seed,
        "n_records": len(train),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    return released, manifest


def records_to_arrays(records: list) -> tuple[np.ndarray, np.ndarray]:
    """Stack records into (X, y) float arrays, raw or released alike."""
    if not records:
        raise DataError("dataset is empty")
    first = records[0]
    if isinstance(first, LdpRecord):
        x = np.asarray([r.features_noisy for r in records], dtype=float)
        y = np.asarray([r.label_noisy for r in records], dtype=float)
    else:
        x = np.asarray([r.features for r in records], dtype=float)
        y = np.asarray([r.label for r in records], dtype=float)
    return x, y


def arrays_to_records(x: np.ndarray, y: np.ndarray, released: bool = False) -> list:
    """Inverse of records_to_arrays; released=True builds LdpRecord objects."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DataError(f"expected features (n, p) with labels (n,), got {x.shape} and {y.shape}")
    cls = LdpRecord if released else RawRecord
    return [cls(x[i], float(y[i])) for i in range(x.shape[0])]


def _format_value(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records_csv(path, x: np.ndarray, y: np.ndarray, header: dict | None = None) -> None:
    """Write (X, y) as x_1..x_p,y with optional # key=value comment lines."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = x.shape[1]
    with open(path, "w", newline="") as fh:
        if header:
            for key, value in header.items():
                fh.write(f"# {key}={_format_value(value)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x_{j + 1}" for j in range(p)] + ["y"])
        for i in range(x.shape[0]):
            writer.writerow([repr(float(v)) for v in x[i]] + [repr(float(y[i]))])


def read_records_csv(path) -> tuple[np.ndarray, np.ndarray, dict]:
    """Read a file written by write_records_csv; header values stay strings."""
    header: dict[str, str] = {}
    data_lines = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                key, sep, value = body.partition("=")
                if not sep:
                    raise DataError(f"malformed comment line in {path}: {line.strip()!r}")
                header[key.strip()] = value.strip()
            else:
                data_lines.append(line)
    reader = csv.reader(data_lines)
    try:
        columns = next(reader)
    except StopIteration:
        raise DataError(f"no header row in {path}") from None
    if not columns or columns[-1] != "y":
        raise DataError(f"expected final column 'y' in {path}, got {columns!r}")
    p = len(columns) - 1
    xs, ys = [], []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != p + 1:
            raise DataError(f"row length mismatch at {path} line {lineno}")
        try:
            xs.append([float(v) for v in row[:p]])
            ys.append(float(row[p]))
        except ValueError as exc:
            raise DataError(f"parse error at {path} line {lineno}: {exc}") from None
    if not xs:
        raise DataError(f"no data rows in {path}")
    return np.asarray(xs, dtype=float), np.asarray(ys, dtype=float), header
