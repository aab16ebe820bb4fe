"""PNG figures for the evaluate and leakage reports."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiments import ConfusionMatrix, LeakageRow, gamma_label  # noqa: E402

_META = {"Software": None}  # keep files byte-stable across matplotlib builds


def plot_confusion(matrix: ConfusionMatrix, path: Path | str) -> None:
    """False positives and false negatives per gamma, as grouped bars."""
    gammas = matrix.gammas
    xs = range(len(gammas))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar([x - 0.2 for x in xs], [matrix.false_positives(g) for g in gammas], 0.4, label="false positives")
    ax.bar([x + 0.2 for x in xs], [matrix.false_negatives(g) for g in gammas], 0.4, label="false negatives")
    ax.set_xticks(list(xs), [str(g) for g in gammas])
    ax.set_xlabel("gamma")
    ax.set_ylabel("traces")
    ax.set_title("Detection errors by suspicion threshold")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)


def plot_leakage(rows: Sequence[LeakageRow], path: Path | str) -> None:
    """Percent of the secret extracted against the victim's read delay, one line per gamma."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    by_gamma: dict[str, list[LeakageRow]] = {}
    for r in rows:
        by_gamma.setdefault(gamma_label(r.gamma), []).append(r)
    for label, group in by_gamma.items():
        group = sorted(group, key=lambda r: r.delay_us)
        ax.plot([r.delay_us for r in group], [r.percent for r in group], marker="o", label=f"gamma={label}")
    ax.set_xscale("log")
    ax.set_ylim(0, 105)
    ax.set_xlabel("victim read delay (us)")
    ax.set_ylabel("secret extracted (%)")
    ax.set_title("Leakage before detection")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
