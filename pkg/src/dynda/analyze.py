"""Post-hoc analysis of gate weights and expert features.

All outputs are CSV so external plotting/embedding tools (t-SNE etc.) can
read them directly. Nothing here modifies the model.
"""

from __future__ import annotations

import csv
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import augment as aug
from .model import GatedModel, forward_batch, gating_forward
from .series import to_arrays

STAGES = ("pre_gate", "fused")


@dataclass(frozen=True, eq=False)
class AlphaRecord:
    sample_index: int
    label: int
    alphas: np.ndarray

    @property
    def identity(self) -> float:
        return float(self.alphas[0])

    def __eq__(self, other):
        if not isinstance(other, AlphaRecord):
            return NotImplemented
        return (
            self.sample_index == other.sample_index
            and self.label == other.label
            and np.array_equal(self.alphas, other.alphas)
        )

    __hash__ = None


@contextmanager
def _frozen_eval(model: GatedModel):
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            yield
    finally:
        model.train(was_training)


def collect_alphas(model: GatedModel, split, cfg: aug.AugmentConfig | None = None, seed: int = 0) -> list[AlphaRecord]:
    """Gate weights per sample, fed with a seeded augmented bundle.

    Sample ``i`` uses substream ``RngStream(seed).child(i)``, so records are
    reproducible and independent of ordering.
    """
    if model.variant != "proposed" or model.gate is None:
        raise ValueError(f"{model.variant} model has no gating network")
    cfg = cfg or aug.AugmentConfig()
    root = aug.RngStream(seed)
    records = []
    with _frozen_eval(model):
        for i, s in enumerate(split):
            bundle = aug.apply_all(s, cfg, root.child(i))
            alphas = gating_forward(model.gate, bundle, train_mode=False)
            records.append(AlphaRecord(i, s.label, alphas.double().numpy()))
    return records


def alpha_table(records) -> np.ndarray:
    if not records:
        raise ValueError("no alpha records")
    return np.mean(np.stack([r.alphas for r in records]), axis=0)


@dataclass(frozen=True)
class HistogramBin:
    label: int
    bin_lo: float
    bin_hi: float
    count: int


def alpha_histogram(records, bins: int = 10) -> list[HistogramBin]:
    """Per-class counts of the identity weight over ``bins`` equal bins of [0, 1].

    The top bin is closed, so a weight of exactly 1 lands in it.
    """
    if not records:
        raise ValueError("no alpha records")
    if bins < 2:
        raise ValueError("need at least two bins")
    edges = np.linspace(0.0, 1.0, bins + 1)
    out = []
    for label in sorted({r.label for r in records}):
        values = np.clip([r.identity for r in records if r.label == label], 0.0, 1.0)
        counts, _ = np.histogram(values, bins=edges)
        out.extend(HistogramBin(label, float(edges[j]), float(edges[j + 1]), int(counts[j])) for j in range(bins))
    return out


def extreme_samples(records, k: int) -> tuple[list[AlphaRecord], list[AlphaRecord]]:
    """The ``k`` highest and ``k`` lowest identity-weight records.

    Order is identity weight descending, then sample index ascending. The
    bottom list runs from the lowest upward, so ``k == len(records)`` gives
    ``bottom == top[::-1]``.
    """
    if k < 0 or k > len(records):
        raise ValueError(f"k={k} outside [0, {len(records)}]")
    ranked = sorted(records, key=lambda r: (-r.identity, r.sample_index))
    return ranked[:k], ranked[::-1][:k]


def extract_features(model: GatedModel, split, stage: str = "fused", seed: int | None = None,
                     cfg: aug.AugmentConfig | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature rows, labels and branch index per row.

    ``fused`` gives one row per sample (branch -1); ``pre_gate`` gives the N
    expert features per sample, branch-major. With ``seed`` the experts see
    augmented views, otherwise identity.
    """
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}")
    X, y = to_arrays(split)
    with _frozen_eval(model):
        if seed is None:
            out = forward_batch(model, X)
        else:
            out = forward_batch(model, X, cfg, aug.RngStream(seed), stochastic_eval=True)
    if stage == "fused":
        return out.fused.double().numpy(), y, np.full(len(y), -1)
    feats = out.features.double().numpy()  # [N, B, D]
    N, B, D = feats.shape
    return feats.reshape(N * B, D), np.tile(y, N), np.repeat(np.arange(N), B)


def export_features(model: GatedModel, split, path, stage: str = "fused", seed: int | None = None,
                    cfg: aug.AugmentConfig | None = None) -> Path:
    feats, labels, branch = extract_features(model, split, stage, seed, cfg)
    n = len(split)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "label", "method"] + [f"f{j}" for j in range(feats.shape[1])])
        for row, (vec, label, b) in enumerate(zip(feats, labels, branch)):
            method = "fused" if b < 0 else aug.METHODS[b]
            writer.writerow([row % n, int(label), method] + [repr(float(v)) for v in vec])
    return path


def read_features(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Load a features CSV back as (matrix, labels, methods)."""
    rows, labels, methods = [], [], []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rec in reader:
            labels.append(int(rec[1]))
            methods.append(rec[2])
            rows.append([float(v) for v in rec[3:]])
    return np.asarray(rows), np.asarray(labels), methods


# ---------------------------------------------------------------------------
# CSV writers


def _alpha_header(n: int) -> list[str]:
    return [f"alpha_{m}" for m in aug.METHODS[:n]] if n <= len(aug.METHODS) else [f"alpha_{j + 1}" for j in range(n)]


def write_alphas(path, records, seed: int | None = None) -> Path:
    path = Path(path)
    n = len(records[0].alphas) if records else 0
    with path.open("w", newline="") as fh:
        if seed is not None:
            fh.write(f"# bundle_seed={seed}\n")
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "label"] + _alpha_header(n))
        for r in records:
            writer.writerow([r.sample_index, r.label] + [repr(float(a)) for a in r.alphas])
    return path


def read_alphas(path) -> list[AlphaRecord]:
    with Path(path).open(newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(lines)
    next(reader)
    return [AlphaRecord(int(r[0]), int(r[1]), np.array([float(v) for v in r[2:]])) for r in reader]


def write_alpha_table(path, table: np.ndarray, n_records: int) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "mean_alpha", "n_samples"])
        names = aug.METHODS if len(table) <= len(aug.METHODS) else [str(j + 1) for j in range(len(table))]
        for name, value in zip(names, table):
            writer.writerow([name, repr(float(value)), n_records])
    return path


def write_histogram(path, hist: list[HistogramBin]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "bin_lo", "bin_hi", "count"])
        for b in hist:
            writer.writerow([b.label, repr(b.bin_lo), repr(b.bin_hi), b.count])
    return path


def write_extremes(path, top, bottom) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "rank", "sample_index", "label", "alpha_identity"])
        for group, recs in (("top", top), ("bottom", bottom)):
            for rank, r in enumerate(recs):
                writer.writerow([group, rank, r.sample_index, r.label, repr(r.identity)])
    return path
