"""Rendering of training curves and comparison tables: PNG figures next to
the CSV/JSON outputs."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

METRIC_KEYS = ["bleu1", "bleu4", "slot_precision", "slot_recall", "sentinel_accuracy"]


def save_training_curves(log: list[dict], path: str) -> None:
    """Loss and accuracy against epoch, twin y-axes."""
    epochs = [rec["epoch"] for rec in log]
    losses = [rec["train_loss"] for rec in log]
    accs = [rec["accuracy"] for rec in log]
    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.plot(epochs, losses, color="tab:red", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:red")
    ax1.tick_params(axis="y", labelcolor="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(epochs, accs, color="tab:blue", label="token accuracy")
    ax2.set_ylabel("token accuracy", color="tab:blue")
    ax2.set_ylim(0.0, 1.05)
    ax2.tick_params(axis="y", labelcolor="tab:blue")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_comparison_chart(compare: dict, path: str) -> None:
    """Grouped bars with std error bars for each metric, one group per model."""
    models = list(compare["models"].keys())
    width = 0.8 / len(models)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for mi, model in enumerate(models):
        stats = compare["models"][model]
        xs = [i + mi * width for i in range(len(METRIC_KEYS))]
        means = [stats[k]["mean"] for k in METRIC_KEYS]
        stds = [stats[k]["std"] for k in METRIC_KEYS]
        ax.bar(xs, means, width=width, yerr=stds, capsize=3, label=model)
    ax.set_xticks([i + width * (len(models) - 1) / 2 for i in range(len(METRIC_KEYS))])
    ax.set_xticklabels(METRIC_KEYS, rotation=20)
    ax.set_ylabel("score")
    ax.set_title(f"decoder comparison over {len(compare['seeds'])} seeds")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_compare_csv(compare: dict, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        header = ["model"]
        for key in METRIC_KEYS:
            header += [f"{key}_mean", f"{key}_std"]
        header += ["params", "parameter_overhead"]
        writer.writerow(header)
        for model, stats in compare["models"].items():
            rec = [model]
            for key in METRIC_KEYS:
                rec += [f"{stats[key]['mean']:.6f}", f"{stats[key]['std']:.6f}"]
            overhead = compare["parameter_overhead"] if model == "ntt" else 0.0
            rec += [stats["params"], f"{overhead:.6f}"]
            writer.writerow(rec)


def format_compare_table(compare: dict) -> str:
    """Aligned text table for the terminal."""
    cols = ["model"] + METRIC_KEYS + ["params", "overhead"]
    rows = []
    for model, stats in compare["models"].items():
        row = [model]
        for key in METRIC_KEYS:
            row.append(f"{stats[key]['mean']:.4f}±{stats[key]['std']:.4f}")
        row.append(str(stats["params"]))
        overhead = compare["parameter_overhead"] if model == "ntt" else 0.0
        row.append(f"{overhead:+.2%}")
        rows.append(row)
    widths = [max(len(cols[i]), *(len(r[i]) for r in rows)) for i in range(len(cols))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)
