"""Figures from lubytwin experiment exports."""

from .figures import (
    FIGURE_KINDS,
    FigureSpec,
    plot_accuracy,
    plot_dutycycle_vs_load,
    plot_perlink,
    plot_policies,
    plot_queue_vs_load,
    plot_queue_vs_overload,
)

__version__ = "0.1.0"
