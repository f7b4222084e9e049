"""Figures for evaluation reports, written straight to image files."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.5, 3.4),
    "figure.dpi": 100,
    "font.size": 8,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 7,
    "legend.frameon": False,
    "lines.linewidth": 1.2,
    "savefig.dpi": 150,
}

MODE_COLORS = {"second_order": "#1f5f99", "first_order_ablation": "#c0612b", "position_kmeans": "#7a7a7a"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # No timestamp/software metadata so identical data gives identical bytes.
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_metric_curves(rows: Sequence[Mapping], path, title: str = "") -> Path:
    """ARI/NMI/F mean over sequences against window origin, with one-sigma bands."""
    rows = sorted(rows, key=lambda r: r["t0"])
    t0 = [r["t0"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for key, color in (("ari", "#1f5f99"), ("nmi", "#3d9970"), ("f", "#c0612b")):
            mean = [r[f"{key}_mean"] for r in rows]
            std = [r[f"{key}_std"] for r in rows]
            ax.plot(t0, mean, color=color, marker="o", markersize=2.5, label=key.upper())
            ax.fill_between(t0, [m - s for m, s in zip(mean, std)], [m + s for m, s in zip(mean, std)],
                            color=color, alpha=0.15, linewidth=0)
        ax.set_xlabel("window origin t0 (step)")
        ax.set_ylabel("score")
        ax.set_ylim(-0.55, 1.05)
        ax.axhline(0.0, color="0.6", linewidth=0.5)
        ax.legend(loc="lower right")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_comparison(table: Sequence[Mapping], path, metric: str = "ari") -> Path:
    """Grouped bars: one group per swarm configuration, one bar per inference mode."""
    swarms = sorted({r["swarm"] for r in table})
    modes = [m for m in MODE_COLORS if any(r["mode"] == m for r in table)]
    width = 0.8 / max(len(modes), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for j, mode in enumerate(modes):
            xs, means, stds = [], [], []
            for i, sw in enumerate(swarms):
                hit = [r for r in table if r["swarm"] == sw and r["mode"] == mode]
                if hit:
                    xs.append(i + (j - (len(modes) - 1) / 2) * width)
                    means.append(hit[0][f"{metric}_mean"])
                    stds.append(hit[0][f"{metric}_std"])
            ax.bar(xs, means, width=width * 0.9, yerr=stds, capsize=2, color=MODE_COLORS[mode],
                   label=mode.replace("_", " "), error_kw={"linewidth": 0.6})
        ax.set_xticks(range(len(swarms)), [f"Swarm {s}" for s in swarms])
        ax.set_ylabel(f"{metric.upper()} (mean over windows)")
        ax.axhline(0.0, color="0.6", linewidth=0.5)
        ax.legend(loc="upper right")
        return _save(fig, path)
