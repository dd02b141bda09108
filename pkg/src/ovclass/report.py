"""Figure rendering for training curves, K sweeps, and evaluation summaries.

Figures are written next to the delimited outputs (CSV/JSON) the CLI
produces. Rendering is deterministic: the Agg backend, fixed metadata, and
no timestamps, so repeated runs yield byte-identical image files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_PNG_METADATA = {"Software": "ovclass"}


def _save(fig, path: str) -> None:
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


def render_training_curve(epoch_losses: list[float], path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = range(1, len(epoch_losses) + 1)
    ax.plot(list(epochs), epoch_losses, marker="o", color="#d62728")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean contrastive loss")
    ax.set_title("aggregator training")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def render_sweep(rows: list[dict], path: str) -> None:
    """``rows``: one dict per K with keys k, aggregator_top1, mean_top1."""
    ks = [r["k"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, [100 * r["aggregator_top1"] for r in rows], "r--o", label="aggregator")
    ax.plot(ks, [100 * r["mean_top1"] for r in rows], "b-s", label="vector mean")
    ax.set_xlabel("exemplars per class (K)")
    ax.set_ylabel("top-1 retrieval accuracy (%)")
    ax.set_xticks(ks)
    ax.set_ylim(0, 102)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def render_eval_summary(metrics: dict[str, float | None], path: str) -> None:
    names = [k for k, v in metrics.items() if v is not None]
    values = [100 * metrics[k] for k in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(names, values, color="#1f77b4")
    ax.set_ylabel("AP (%)")
    ax.set_ylim(0, 102)
    for name, value in zip(names, values):
        ax.text(name, value + 1, f"{value:.1f}", ha="center", fontsize=8)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
