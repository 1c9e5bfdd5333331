"""Figures written next to the CSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "svg.hashsalt": "painvit",
}

STAGE_TITLES = {"layers": "Unfrozen attention layers", "lr": "Learning rate", "sam": "SAM", "mixup": "Mixup alpha"}


def _stage_label(entry) -> str:
    c = entry.config
    if entry.stage == "layers":
        return str(c.unfrozen_layers)
    if entry.stage == "lr":
        return f"{c.learning_rate:.0e}"
    if entry.stage == "sam":
        return "on" if c.use_sam else "off"
    return f"{c.mixup_alpha:g}"


def _bars(ax, labels, means, stds, selected):
    x = np.arange(len(labels))
    colors = ["tab:red" if s else "tab:blue" for s in selected]
    ax.bar(x, np.nan_to_num(means), yerr=np.nan_to_num(stds), color=colors, capsize=3, width=0.6)
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 1)


def plot_sweep(entries, kind: str, out_path) -> Path:
    """Mean F1 (± population std over folds) for every stage of one model kind."""
    rows = [e for e in entries if e.model_kind == kind]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 4, figsize=(11, 2.8), sharey=True,
                                 gridspec_kw={"width_ratios": [6, 4, 1.5, 3]})
        for ax, stage in zip(axes, STAGE_TITLES):
            stage_rows = [e for e in rows if e.stage == stage]
            if stage_rows:
                _bars(ax, [_stage_label(e) for e in stage_rows], [e.f1_mean for e in stage_rows],
                      [e.f1_std for e in stage_rows], [e.selected for e in stage_rows])
            ax.set_title(STAGE_TITLES[stage])
        axes[0].set_ylabel("F1 (pain class)")
        fig.suptitle(f"{kind.upper()} sweep")
        fig.tight_layout()
        out_path = Path(out_path)
        fig.savefig(out_path, metadata={"Software": None})
        plt.close(fig)
    return out_path


def plot_top_folds(entries, kind: str, out_path, top: int = 2) -> Path:
    """Per-fold F1 of the ``top`` best configurations."""
    rows = sorted((e for e in entries if e.model_kind == kind and np.isfinite(e.f1_mean)),
                  key=lambda e: (-e.f1_mean, e.config_id))[:top]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        for e in rows:
            folds = [r.fold_index for r in e.folds]
            ax.plot(folds, [r.f1 for r in e.folds], marker="o",
                    label=f"#{e.config_id} al={e.config.unfrozen_layers} lr={e.config.learning_rate:.0e}")
        ax.set_xlabel("fold")
        ax.set_ylabel("F1 (pain class)")
        ax.set_ylim(0, 1)
        if rows:
            ax.set_xticks([r.fold_index for r in rows[0].folds])
            ax.legend()
        fig.tight_layout()
        out_path = Path(out_path)
        fig.savefig(out_path, metadata={"Software": None})
        plt.close(fig)
    return out_path


def plot_fold_results(results, out_path, title: str = "") -> Path:
    """F1 and AUC per fold for a single configuration."""
    folds = [r.fold_index for r in results]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        x = np.arange(len(folds))
        ax.bar(x - 0.18, [r.f1 for r in results], width=0.36, label="F1")
        ax.bar(x + 0.18, np.nan_to_num([r.auc for r in results]), width=0.36, label="AUC")
        ax.set_xticks(x)
        ax.set_xticklabels([str(f) for f in folds])
        ax.set_xlabel("fold")
        ax.set_ylim(0, 1)
        ax.legend()
        if title:
            ax.set_title(title)
        fig.tight_layout()
        out_path = Path(out_path)
        fig.savefig(out_path, metadata={"Software": None})
        plt.close(fig)
    return out_path
