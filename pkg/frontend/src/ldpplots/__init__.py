"""Publication figures for the ldp debiasing pipeline's CSV artifacts.

This package never imports the core library; it talks to it purely
through the delimited files the pipeline writes, so the two install and
run independently.
"""

__version__ = "0.1.0"

from .figures import FigureSpec, KINDS, plot_averaged, plot_convergence, plot_truncation, render
from .io import BiasScan, PlotInputError, Summary, Trace, load_bias_scan, load_summary, load_trace
