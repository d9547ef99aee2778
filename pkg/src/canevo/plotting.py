"""Figure rendering for reports. Figures are written to files, never shown."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
    "svg.hashsalt": "canevo",  # stable element ids across runs
    "svg.fonttype": "none",
}


def _save(fig, path, header=()):
    meta = {}
    if str(path).endswith((".svg", ".pdf")):
        meta = {"Date": None}
        if header:
            meta["Description"] = "\n".join(header)
    fig.savefig(path, bbox_inches="tight", metadata=meta)
    plt.close(fig)


def normalized_fitness_chart(labels, values, path, optimistic=None, title="Normalised fitness (lower is better)",
                             header=()):
    """Bar chart of normalised fitness, one bar per formula, log-scaled when values span decades."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        bars = ax.bar(range(len(values)), values, color="#4c72b0", edgecolor="black", linewidth=0.5)
        if optimistic is not None:
            for bar, n in zip(bars, optimistic):
                if n:
                    bar.set_color("#c44e52")
                    bar.set_edgecolor("black")
        ax.set_xticks(range(len(values)))
        ax.set_xticklabels(labels)
        positive = [v for v in values if v > 0]
        if positive and max(positive) / min(positive) > 100:
            ax.set_yscale("log")
        ax.set_ylabel("fitness / fitness of (1)")
        ax.set_title(title)
        ax.axhline(1.0, color="grey", linewidth=0.5, linestyle="--")
        _save(fig, path, header)


def convergence_plot(generations, best, mean, path, ylabel="fitness"):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        ax.plot(generations, best, label="best")
        ax.plot(generations, mean, label="mean", alpha=0.6)
        if min(best) > 0:
            ax.set_yscale("log")
        ax.set_xlabel("generation")
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        _save(fig, path)
