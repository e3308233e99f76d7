"""Classification, feature-consistency and combined training losses.

The numpy functions operate on a single batch element and serve as the
reference definitions; the ``batch_*`` torch versions are what training
differentiates, and reduce by the mean over the batch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    con: float
    total: float
    lam: float

    @classmethod
    def from_parts(cls, ce: float, con: float, lam: float) -> "LossBreakdown":
        return cls(float(ce), float(con), total_loss(float(ce), float(con), lam), float(lam))


def cross_entropy(logits, label: int) -> float:
    """``-log softmax(logits)[label]`` via log-sum-exp."""
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < z.size:
        raise ValueError(f"label {label} out of range for {z.size} classes")
    top = z.max()
    return float(top + np.log(np.exp(z - top).sum()) - z[label])


def _features(features) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"features must be [N, D], got shape {f.shape}")
    if f.shape[0] < 2:
        raise ValueError("consistency needs at least two experts")
    return f


def consistency_loss(features) -> float:
    """Half the summed squared distance of each expert feature from their mean."""
    dev = _deviations(_features(features))
    return float(0.5 * np.sum(dev * dev))


def consistency_grad(features) -> np.ndarray:
    """Gradient of :func:`consistency_loss` w.r.t. each feature: ``f_n - mean``.

    The mean's own dependence on ``f_n`` drops out because deviations sum
    to zero.
    """
    return _deviations(_features(features))


def _deviations(f: np.ndarray) -> np.ndarray:
    # centre relative to the first row so identical rows give exact zeros
    rel = f - f[0]
    return rel - rel.mean(axis=0)


def total_loss(ce: float, con: float, lam: float) -> float:
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return ce + lam * con


def batch_cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, labels, reduction="mean")


def batch_consistency(features: torch.Tensor) -> torch.Tensor:
    """``features`` is ``[N, B, D]``; returns the batch-mean consistency loss."""
    dev = features - features.mean(dim=0, keepdim=True)
    return 0.5 * dev.pow(2).sum(dim=(0, 2)).mean()


LOG_FIELDS = ("iteration", "ce", "con", "total", "lambda")


def write_loss_log(path, rows) -> None:
    """Write ``(iteration, LossBreakdown)`` pairs as CSV."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)
        for it, lb in rows:
            writer.writerow([it, repr(lb.ce), repr(lb.con), repr(lb.total), repr(lb.lam)])


def read_loss_log(path) -> list[tuple[int, LossBreakdown]]:
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                (
                    int(rec["iteration"]),
                    LossBreakdown(float(rec["ce"]), float(rec["con"]), float(rec["total"]), float(rec["lambda"])),
                )
            )
    return rows


__all__ = [
    "LossBreakdown",
    "cross_entropy",
    "consistency_loss",
    "consistency_grad",
    "total_loss",
    "batch_cross_entropy",
    "batch_consistency",
    "write_loss_log",
    "read_loss_log",
]
