"""Optional SVG line plots. CSV output stays canonical."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


def _check_matplotlib() -> bool:
    """Check if matplotlib is importable."""
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        return False
    return True


def plot_lines(
    path: Path,
    x: np.ndarray,
    series: dict[str, np.ndarray],
    xlabel: str,
    ylabel: str,
    title: str = "",
    log_y: bool = True,
) -> Path | None:
    """Write a line chart as SVG; returns None when matplotlib is unavailable."""
    if not _check_matplotlib():
        logger.warning("matplotlib is not installed; skipping %s", path.name)
        return None

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "dynpriv"
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        for label, values in series.items():
            ax.plot(x, values, label=label)
        if log_y:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend()
        ax.grid(True, alpha=0.3)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return path
