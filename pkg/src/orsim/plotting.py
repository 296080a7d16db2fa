"""Report figures. Everything renders off-screen to files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

MODE_COLORS = {"visual": "#4d4d4d", "o": "#1f77b4", "r": "#2ca02c", "or": "#d62728"}

RC = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "legend.fontsize": 9,
    "xtick.direction": "out",
    "ytick.direction": "out",
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}

# PNG metadata only; keeps files free of version strings
PNG_META = {"Software": None}


def _figure(width=6.0, height=None):
    return plt.subplots(figsize=(width, height or width * 0.62))


def plot_score_histograms(hist, path, threshold=0.9):
    """Positive vs distractor detection-score histograms, as fractions per class."""
    with plt.rc_context(RC):
        fig, ax = _figure()
        centers = 0.5 * (hist.edges[:-1] + hist.edges[1:])
        width = hist.edges[1] - hist.edges[0]
        for counts, label, color, shift in ((hist.positive, "Positive", "#1f77b4", -0.2),
                                            (hist.distractor, "Distractor", "#ff7f0e", 0.2)):
            total = counts.sum()
            frac = counts / total if total else counts * 0.0
            ax.bar(centers + shift * width, frac, width=0.4 * width, label=f"{label} (n={int(total)})", color=color)
        ax.axvline(threshold, color="k", lw=0.8, ls="--")
        ax.set_xlim(0, 1)
        ax.set_xlabel("Detection score")
        ax.set_ylabel("Fraction of detections")
        ax.legend(loc="upper left")
        fig.savefig(path, metadata=PNG_META)
        plt.close(fig)


def plot_ablation(summary_rows, path, metric="map"):
    """mAP (or top-1) against gallery size, one line per scoring mode."""
    with plt.rc_context(RC):
        fig, ax = _figure()
        by_mode = {}
        for r in summary_rows:
            by_mode.setdefault(r["mode"], []).append(r)
        sizes = sorted({r["gallery_size"] for r in summary_rows}, key=lambda s: float("inf") if s is None else s)
        xpos = {s: i for i, s in enumerate(sizes)}
        for mode, rows in by_mode.items():
            rows = sorted(rows, key=lambda r: xpos[r["gallery_size"]])
            ax.plot([xpos[r["gallery_size"]] for r in rows], [100 * r[metric] for r in rows],
                    marker="o", label=mode.label, color=MODE_COLORS.get(mode.value))
        ax.set_xticks(range(len(sizes)))
        ax.set_xticklabels(["full" if s is None else str(s) for s in sizes])
        ax.set_xlabel("Gallery size")
        ax.set_ylabel("mAP (%)" if metric == "map" else "Top-1 (%)")
        ax.legend()
        fig.savefig(path, metadata=PNG_META)
        plt.close(fig)
