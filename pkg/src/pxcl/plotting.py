"""SVG figures for the strategy comparison and the buffer-size sweep."""

from __future__ import annotations

from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed id salt and no date stamp -> byte-stable SVG output
_RC = {
    "svg.hashsalt": "pxcl",
    "svg.fonttype": "none",
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def comparison_bar(strategies: Sequence[str], means: Sequence[float],
                   stds: Sequence[Optional[float]], path) -> None:
    """Bar chart of average accuracy per strategy."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        err = [s if s is not None else 0.0 for s in stds]
        bars = ax.bar(strategies, means, yerr=err, capsize=4, color="#4c72b0", edgecolor="black", linewidth=0.6)
        for bar, m in zip(bars, means):
            ax.annotate(f"{m:.2f}", (bar.get_x() + bar.get_width() / 2, m),
                        xytext=(0, 3), textcoords="offset points", ha="center", va="bottom", fontsize=8)
        ax.set_ylabel("Average accuracy (%)")
        low = min(means) if means else 0.0
        ax.set_ylim(max(0.0, low - 15.0), 100.0)
        _save(fig, path)


def sweep_line(capacities: Sequence[int], means: Sequence[float],
               stds: Sequence[Optional[float]], path) -> None:
    """Average accuracy against replay buffer capacity."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        err = [s if s is not None else 0.0 for s in stds]
        ax.errorbar(capacities, means, yerr=err, marker="o", capsize=4, color="#c44e52")
        ax.set_xlabel("Buffer size")
        ax.set_ylabel("Average accuracy (%)")
        ax.set_xticks(list(capacities))
        _save(fig, path)
