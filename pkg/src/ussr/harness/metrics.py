"""AUC and the per-epoch metrics CSV."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

METRICS_COLUMNS = ("epoch", "phase", "loss", "val_auc", "wall_seconds")


class MetricsError(ValueError):
    pass


def evaluate_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(random positive outranks random negative), ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricsError("scores and labels must be 1-d and of equal length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("undefined AUC: need at least one positive and one negative label")
    ranks = rankdata(scores, method="average")
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


class MetricsWriter:
    """Appends rows to a metrics CSV (or just keeps them in memory)."""

    def __init__(self, path: str | Path | None = None, append: bool = False):
        self.path = Path(path) if path else None
        self.rows: list[dict] = []
        if self.path is not None and not (append and self.path.exists()):
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(METRICS_COLUMNS)

    def write(self, epoch: int, phase: str, loss: float, val_auc: float, wall_seconds: float) -> None:
        row = {"epoch": epoch, "phase": phase, "loss": repr(float(loss)),
               "val_auc": repr(float(val_auc)), "wall_seconds": f"{wall_seconds:.3f}"}
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([row[c] for c in METRICS_COLUMNS])
