"""PNG figures rendered next to the CSV/JSON outputs."""
from __future__ import annotations

from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import ErrorReport  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)


def error_histograms(report: ErrorReport, path, bins: int = 30) -> None:
    fig, axes = plt.subplots(2, 2, figsize=(9, 6.5))
    panels = (("Point-wise horizontal error (nmi)", report.phe), ("Point-wise vertical error (ft)", report.pve),
              ("Trajectory horizontal error (nmi)", report.the), ("Trajectory vertical error (ft)", report.tve))
    for ax, (title, vals) in zip(axes.ravel(), panels):
        ax.hist(vals, bins=bins, color="#4477aa", edgecolor="white")
        ax.set_title(title, fontsize=10)
        ax.set_ylabel("count")
    _save(fig, path)


def trajectories(path, truth: Sequence[np.ndarray], predicted: Sequence[np.ndarray],
                 plans: Optional[Sequence[np.ndarray]] = None, bands: Optional[Sequence[np.ndarray]] = None,
                 max_flights: int = 12) -> None:
    """Lon/lat view of true and predicted tracks; ``bands`` are 3-sigma horizontal radii in nmi."""
    fig, ax = plt.subplots(figsize=(8, 6))
    for i, (tr, pr) in enumerate(zip(truth[:max_flights], predicted[:max_flights])):
        if plans is not None:
            pl = np.asarray(plans[i])
            ax.plot(pl[:, 0], pl[:, 1], ":", color="0.6", lw=0.8, label="plan" if i == 0 else None)
        ax.plot(tr[:, 0], tr[:, 1], "-", color="#228833", lw=1, label="actual" if i == 0 else None)
        ax.plot(pr[:, 0], pr[:, 1], "-", color="#ee6677", lw=1, label="predicted" if i == 0 else None)
        if bands is not None:
            r = np.asarray(bands[i]) / 60.0
            ax.scatter(pr[:, 0], pr[:, 1], s=(r * 20) ** 2, facecolors="none", edgecolors="#ee6677",
                       alpha=0.15, lw=0.5)
    ax.set_xlabel("longitude (deg)")
    ax.set_ylabel("latitude (deg)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best", fontsize=8)
    _save(fig, path)


def activation_maps(acts: np.ndarray, path, max_maps: int = 16) -> None:
    """Feature maps of one cube, shape (H, W, C)."""
    c = min(acts.shape[-1], max_maps)
    cols = 4
    rows = int(np.ceil(c / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.2 * rows), squeeze=False)
    for k, ax in enumerate(axes.ravel()):
        ax.axis("off")
        if k < c:
            ax.imshow(acts[..., k].T, origin="lower", cmap="viridis")
            ax.set_title(f"map {k}", fontsize=8)
    _save(fig, path)


def loss_curve(epochs, losses, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses, color="#4477aa")
    ax.set_xlabel("epoch")
    ax.set_ylabel("NLL per step")
    _save(fig, path)
