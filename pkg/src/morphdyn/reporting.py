"""Static figure emission for the report path: every evaluation command
that writes a delimited table also renders the matching figure next to it
(SVG, Agg backend, no display required)."""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import FRAME_PHASES
from .synthdata import AGE_GROUP_LABELS

GENDER_COLORS = {"male": "#2c7fb8", "female": "#d95f8a"}


def save_volume_curves(path, curves: dict, title: str = "Volume over the cycle"):
    """curves: label -> 20 volumes (mL)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, vols in curves.items():
        ax.plot(np.asarray(FRAME_PHASES) * 100, vols, marker="o", ms=3,
                label=label)
    ax.set_xlabel("cycle phase [%]")
    ax.set_ylabel("volume [mL]")
    ax.set_title(title)
    if len(curves) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_fc_boxplot(path, stats, title: str = "Fractional change by subgroup"):
    """stats: list of SubgroupStats (8 gender x age cells)."""
    fig, ax = plt.subplots(figsize=(7, 4))
    positions, data, colors, labels = [], [], [], []
    pos = 0
    for age in range(4):
        for gender in ("male", "female"):
            cell = next(s for s in stats
                        if s.gender == gender and s.age_group == age)
            if cell.fc_values:
                positions.append(pos)
                data.append(cell.fc_values)
                colors.append(GENDER_COLORS[gender])
            pos += 1
        labels.append(AGE_GROUP_LABELS[age])
    if data:
        boxes = ax.boxplot(data, positions=positions, widths=0.7,
                           patch_artist=True)
        for patch, color in zip(boxes["boxes"], colors):
            patch.set_facecolor(color)
            patch.set_alpha(0.6)
    ax.set_xticks([0.5 + 2 * k for k in range(4)])
    ax.set_xticklabels(labels)
    ax.set_xlabel("age group")
    ax.set_ylabel("FC")
    ax.set_title(title)
    handles = [plt.Line2D([], [], color=c, lw=6, alpha=0.6, label=g)
               for g, c in GENDER_COLORS.items()]
    ax.legend(handles=handles, fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_pca_scatter(path, projections, genders, explained, title: str):
    fig, ax = plt.subplots(figsize=(5, 4.5))
    genders = list(genders)
    pts = np.asarray(projections)
    for gender, color in GENDER_COLORS.items():
        mask = np.array([g == gender for g in genders])
        if mask.any():
            ax.scatter(pts[mask, 0], pts[mask, 1], s=18, alpha=0.75,
                       color=color, label=gender)
    ax.set_xlabel(f"PC1 ({explained[0] * 100:.0f}% var)")
    ax.set_ylabel(f"PC2 ({explained[1] * 100:.0f}% var)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_training_curve(path, report):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(report.epochs, report.l1, label="clamped L1")
    ax.semilogy(report.epochs, report.reg, label="latent regularizer")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss term")
    ax.set_title("Training loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
