"""Figure rendering for training curves and per-category accuracy.

Figures are written next to the delimited metric tables so every run
directory is self-describing. matplotlib is imported lazily and always in
Agg mode; nothing here needs a display.
"""

from __future__ import annotations

from pathlib import Path


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def _row_value(row, key):
    return row[key] if isinstance(row, dict) else getattr(row, key)


def save_history_figures(rows, out_dir) -> list[Path]:
    """Render train/val accuracy and loss curves; returns the written paths."""
    plt = _plt()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    epochs = [_row_value(r, "epoch") for r in rows]
    written = []
    panels = (
        ("accuracy.png", "train_acc", "val_acc", "accuracy", "train_acc vs val_acc"),
        ("loss.png", "train_loss", "val_loss", "loss", "train_loss vs val_loss"),
    )
    for fname, train_key, val_key, ylabel, title in panels:
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        ax.plot(epochs, [_row_value(r, train_key) for r in rows], color="tab:blue", label="train")
        ax.plot(epochs, [_row_value(r, val_key) for r in rows], color="tab:green", label="val")
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.grid(True, linestyle="--", alpha=0.5)
        ax.legend()
        fig.tight_layout()
        path = out_dir / fname
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def save_category_figure(category_accuracy: dict[str, float], path) -> Path:
    """Bar chart of per-category accuracy (values in [0, 1])."""
    plt = _plt()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(category_accuracy)
    values = [100.0 * category_accuracy[n] for n in names]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    bars = ax.bar(names, values, color="tab:blue")
    ax.bar_label(bars, fmt="%.2f", fontsize=8)
    ax.set_ylim(0, 105)
    ax.set_xlabel("category")
    ax.set_ylabel("accuracy (%)")
    ax.grid(True, axis="y", linestyle="--", alpha=0.5)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
