"""Figure rendering: convergence bands, fitted vs averaged risk, truncation bias.

Each figure kind reads one family of pipeline tables and writes one
image. All styling decisions live in FigureSpec (axis labels, log
scale, output format via the output suffix); the renderers add nothing
configurable on top. Saving is deterministic: rendering the same spec
twice produces byte-identical vector output, and input files are never
touched.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import sqrt
from pathlib import Path

import matplotlib
import matplotlib.pyplot as plt
import numpy as np

from .io import (
    METHODS,
    SCAN_COLUMNS,
    SUMMARY_COLUMNS,
    TRACE_COLUMNS,
    PlotInputError,
    load_bias_scan,
    load_summary,
    load_trace,
    peek_columns,
)

__all__ = ["FigureSpec", "KINDS", "plot_convergence", "plot_averaged", "plot_truncation", "render"]

KINDS = ("convergence", "averaged", "truncation")

_COLUMNS_FOR_KIND = {
    "convergence": TRACE_COLUMNS,
    "averaged": SUMMARY_COLUMNS,
    "truncation": SCAN_COLUMNS,
}
_METHOD_COLORS = {"real": "tab:green", "noisy": "tab:red", "iwp": "tab:blue"}
_INPUT_GLOBS = {
    "convergence": "trace_*_seed*.csv",
    "averaged": "summary_*.csv",
    "truncation": "bias_scan.csv",
}


@dataclass(frozen=True)
class FigureSpec:
    """One figure: which tables go in, what kind of plot, where the image goes.

    Construction validates the inputs: every path must exist and carry
    the column header documented for the kind. The output format
    follows the output suffix; a suffixless path gets ".svg" so the
    default stays a vector format.
    """

    inputs: tuple
    kind: str
    output: Path
    xlabel: str = None
    ylabel: str = None
    log_scale: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        inputs = tuple(Path(p) for p in self.inputs)
        if not inputs:
            raise PlotInputError("FigureSpec needs at least one input file")
        object.__setattr__(self, "inputs", inputs)
        output = Path(self.output)
        if not output.suffix:
            output = output.with_suffix(".svg")
        object.__setattr__(self, "output", output)
        expected = list(_COLUMNS_FOR_KIND[self.kind])
        for path in inputs:
            if not path.exists():
                raise PlotInputError(f"missing input file {path}")
            if peek_columns(path) != expected:
                raise PlotInputError(
                    f"{path} does not have the {self.kind} columns {expected}"
                )

    @classmethod
    def from_dir(cls, kind, in_dir, output, xlabel=None, ylabel=None, log_scale=False):
        """Collect the kind's tables from a pipeline output directory."""
        if kind not in KINDS:
            raise ValueError(f"unknown figure kind {kind!r}; expected one of {KINDS}")
        in_dir = Path(in_dir)
        inputs = sorted(in_dir.glob(_INPUT_GLOBS[kind]))
        if not inputs:
            raise PlotInputError(f"no {_INPUT_GLOBS[kind]} files under {in_dir}")
        return cls(
            inputs=tuple(inputs),
            kind=kind,
            output=output,
            xlabel=xlabel,
            ylabel=ylabel,
            log_scale=log_scale,
        )


def _save(fig, path: Path) -> Path:
    """Write the figure and close it; vector outputs are byte-stable across runs."""
    suffix = path.suffix.lower()
    metadata = None
    if suffix == ".svg":
        metadata = {"Date": None}
    elif suffix == ".pdf":
        metadata = {"CreationDate": None}
    with matplotlib.rc_context({"svg.hashsalt": "ldpplots", "svg.fonttype": "none"}):
        fig.savefig(path, metadata=metadata)
    plt.close(fig)
    return path


def _build_convergence(spec: FigureSpec):
    groups = {method: [] for method in METHODS}
    for path in spec.inputs:
        trace = load_trace(path)
        if trace.method not in groups:
            raise PlotInputError(
                f"{path} has method {trace.method!r}; expected one of {METHODS}"
            )
        groups[trace.method].append(trace)
    missing = [m for m in METHODS if not groups[m]]
    if missing:
        raise PlotInputError(f"no trace files for method(s): {', '.join(missing)}")

    lengths = {len(t) for traces in groups.values() for t in traces}
    n_common = min(lengths)
    if len(lengths) > 1:
        warnings.warn(
            f"traces disagree on batch count {sorted(lengths)}; "
            f"plotting the common prefix of {n_common} batches"
        )

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for method in METHODS:
        risks = np.vstack([t.test_risk[:n_common] for t in groups[method]])
        batches = groups[method][0].batch_index[:n_common]
        mean = risks.mean(axis=0)
        color = _METHOD_COLORS[method]
        ax.plot(batches, mean, color=color, linewidth=1.6, label=method)
        if risks.shape[0] > 1:
            std = risks.std(axis=0, ddof=1)
            ax.fill_between(batches, mean - std, mean + std, color=color,
                            alpha=0.2, linewidth=0)
    ax.set_xlabel(spec.xlabel or "batch")
    ax.set_ylabel(spec.ylabel or "test risk")
    if spec.log_scale:
        ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    return fig


def _build_averaged(spec: FigureSpec):
    summaries = {}
    for path in spec.inputs:
        summary = load_summary(path)
        summaries[summary.method] = summary
    missing = [m for m in METHODS if m not in summaries]
    if missing:
        raise PlotInputError(f"no summary files for method(s): {', '.join(missing)}")

    fig, (ax_fit, ax_avg) = plt.subplots(1, 2, figsize=(8.0, 4.0), sharey=True)
    xs = np.arange(len(METHODS))
    colors = [_METHOD_COLORS[m] for m in METHODS]
    fitted = [summaries[m].risk_mean for m in METHODS]
    spread = [sqrt(summaries[m].risk_variance) for m in METHODS]
    averaged = [summaries[m].averaged_model_risk for m in METHODS]
    ax_fit.bar(xs, fitted, yerr=spread, color=colors, capsize=4)
    ax_fit.set_title("fitted models (mean over seeds)")
    ax_avg.bar(xs, averaged, color=colors)
    ax_avg.set_title("averaged model")
    for ax in (ax_fit, ax_avg):
        ax.set_xticks(xs)
        ax.set_xticklabels(METHODS)
        if spec.xlabel:
            ax.set_xlabel(spec.xlabel)
    ax_fit.set_ylabel(spec.ylabel or "final test risk")
    if spec.log_scale:
        ax_fit.set_yscale("log")
    fig.tight_layout()
    return fig


def _build_truncation(spec: FigureSpec):
    scans = [load_bias_scan(path) for path in spec.inputs]
    order = np.concatenate([s.order for s in scans])
    variance = np.concatenate([s.variance for s in scans])
    bias = np.concatenate([s.bias for s in scans])

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for k in sorted(set(order.tolist())):
        mask = order == k
        idx = np.argsort(variance[mask])
        ax.plot(variance[mask][idx], bias[mask][idx], marker="o", label=f"K={k}")
    ax.set_xlabel(spec.xlabel or "margin noise variance")
    ax.set_ylabel(spec.ylabel or "sup truncation bias")
    if spec.log_scale:
        ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    return fig


def plot_convergence(spec: FigureSpec) -> Path:
    """Across-seed test-risk curves, one per method, with a ±1 std band.

    Single-seed methods get a mean-only curve. Traces with differing
    batch counts are plotted over their common prefix with a warning.
    """
    return _save(_build_convergence(spec), spec.output)


def plot_averaged(spec: FigureSpec) -> Path:
    """Final risk of the fitted models next to the risk of the averaged model."""
    return _save(_build_averaged(spec), spec.output)


def plot_truncation(spec: FigureSpec) -> Path:
    """Truncation bias over the margin-variance axis, one curve per series order."""
    return _save(_build_truncation(spec), spec.output)


_RENDERERS = {
    "convergence": plot_convergence,
    "averaged": plot_averaged,
    "truncation": plot_truncation,
}


def render(spec: FigureSpec) -> Path:
    """Render whatever kind the spec asks for; returns the written path."""
    return _RENDERERS[spec.kind](spec)
