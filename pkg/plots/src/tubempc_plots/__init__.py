"""Post-hoc figure scripts for tubempc CSV/JSON outputs."""

from .common import DPI, FIGSIZE, FigureSpec, PlotError
from .scaling import plot_scaling
from .timings import plot_timings
from .trajectory import plot_trajectory

__version__ = "0.1.0"
