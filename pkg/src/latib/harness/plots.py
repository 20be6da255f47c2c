"""Training-curve figures. Output is byte-stable for a fixed history."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_PNG_META = {"Software": None}
_TERM_PREFIXES = ("loss_", "term_")


def phase_boundaries(history) -> list[int]:
    """Last epoch of every phase that is followed by a different phase."""
    out = []
    for prev, cur in zip(history, history[1:]):
        if cur["phase"] != prev["phase"]:
            out.append(prev["epoch"])
    return out


def _mark(ax, history):
    for b in phase_boundaries(history):
        ax.axvline(b, color="0.5", linestyle="--", linewidth=0.8)


def emit_plots(history: list[dict], out_dir, quality: dict[int, dict] | None = None) -> list[str]:
    """Write accuracy, loss-term and (optionally) selector-quality curves.

    ``quality`` maps epoch -> selector precision/recall record. Returns the paths.
    """
    if not history:
        raise ValueError("empty history")
    os.makedirs(out_dir, exist_ok=True)
    epochs = [r["epoch"] for r in history]
    paths = []

    fig, ax = plt.subplots(figsize=(6, 4), dpi=80)
    for key, label in (("acc_s_test", "S test"), ("acc_t_test", "T test"), ("acc_s_train", "S train (observed)")):
        ys = [_num(r.get(key)) for r in history]
        ax.plot(epochs, ys, marker="o" if len(epochs) == 1 else None, label=label)
    _mark(ax, history)
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.legend(loc="lower right")
    paths.append(_save(fig, out_dir, "accuracy.png"))

    fig, ax = plt.subplots(figsize=(6, 4), dpi=80)
    keys = sorted({k for r in history for k in r if k.startswith(_TERM_PREFIXES)})
    for key in keys:
        ax.plot(epochs, [_num(r.get(key)) for r in history], marker="o" if len(epochs) == 1 else None,
                label=key)
    _mark(ax, history)
    ax.set_xlabel("epoch")
    ax.set_ylabel("value")
    ax.set_yscale("symlog")
    if keys:
        ax.legend(fontsize=6, loc="upper right")
    paths.append(_save(fig, out_dir, "loss_terms.png"))

    if quality:
        fig, ax = plt.subplots(figsize=(6, 4), dpi=80)
        qe = sorted(quality)
        for key in ("clean_precision", "clean_recall", "noise_precision", "noise_recall"):
            ys = [quality[e].get(key) for e in qe]
            ax.plot(qe, [float("nan") if v is None else v for v in ys], marker="o" if len(qe) == 1 else None,
                    label=key)
        ax.set_xlabel("epoch")
        ax.set_ylim(0, 1)
        ax.legend(loc="lower right")
        paths.append(_save(fig, out_dir, "selector_quality.png"))
    return paths


def _num(v):
    return float("nan") if v is None else v


def _save(fig, out_dir, name):
    path = os.path.join(out_dir, name)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)
    return path
