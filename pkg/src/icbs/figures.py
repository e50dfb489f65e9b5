"""Report figures rendered to files alongside the delimited output."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_accuracy_figure(report, path: str):
    """Bar chart of baseline vs verified accuracy for one run."""
    s = report.summary
    baseline = s.get("baseline_accuracy") or 0.0
    verified = s.get("verified_accuracy") or 0.0
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    bars = ax.bar(["baseline", "verified"], [baseline, verified],
                  color=["#888888", "#2b7bba"], width=0.55)
    for bar, val in zip(bars, (baseline, verified)):
        ax.annotate(f"{val:.3f}", (bar.get_x() + bar.get_width() / 2, val),
                    ha="center", va="bottom", fontsize=9)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("accuracy")
    ax.set_title(f"{report.scenario_name}: prediction accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_distance_figure(report, path: str):
    """Distribution of color distances per compare round."""
    rounds = [vals for vals in report.per_round_distances if vals]
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    if rounds:
        ax.boxplot(rounds, tick_labels=[str(i + 1) for i in range(len(rounds))],
                   showfliers=False)
        means = [float(np.mean(v)) for v in rounds]
        ax.plot(range(1, len(rounds) + 1), means, "o-", color="#2b7bba",
                label="mean")
        ax.legend(fontsize=8)
    ax.set_xlabel("compare round")
    ax.set_ylabel("color distance")
    ax.set_ylim(0, 1.0)
    ax.set_title(f"{report.scenario_name}: distance per round")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_report_figures(report, csv_path: str) -> list:
    """Render the standard figures next to the CSV; returns their paths."""
    stem = csv_path[:-4] if csv_path.endswith(".csv") else csv_path
    return [save_accuracy_figure(report, stem + ".accuracy.png"),
            save_distance_figure(report, stem + ".distances.png")]
