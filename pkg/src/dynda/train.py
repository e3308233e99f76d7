"""Training, evaluation, multi-trial runs and test-time augmentation."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import augment as aug
from .loss import LossBreakdown, batch_consistency, write_loss_log
from .model import VARIANTS, ArchConfig, GatedModel, forward_batch, init_model, save_checkpoint
from .series import Dataset, to_arrays

log = logging.getLogger(__name__)

# Substream tags under the trial seed.
_SHUFFLE, _AUGMENT = 1, 2


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "proposed"
    lam: float = 1.0
    iterations: int = 10_000
    batch_size: int = 64
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    augment_cfg: aug.AugmentConfig = field(default_factory=aug.AugmentConfig)
    arch_cfg: ArchConfig | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")

    @property
    def effective_lambda(self) -> float:
        # the consistency term only exists for the gated model
        return self.lam if self.variant == "proposed" else 0.0


def arch_for(data: Dataset, **overrides) -> ArchConfig:
    C, T = data.shape
    return ArchConfig(n_classes=data.n_classes, input_channels=C, input_length=T, **overrides)


def _resolve_arch(cfg: TrainConfig, data: Dataset) -> ArchConfig:
    if cfg.arch_cfg is None:
        return arch_for(data)
    a = cfg.arch_cfg
    C, T = data.shape
    if (a.input_channels, a.input_length) != (C, T) or a.n_classes != data.n_classes:
        raise ValueError(
            f"arch expects C={a.input_channels}, T={a.input_length}, K={a.n_classes}; "
            f"data has C={C}, T={T}, K={data.n_classes}"
        )
    return a


def _batches(n: int, batch_size: int, rng: aug.RngStream):
    """Endless minibatches from reshuffled epochs; a short tail is dropped."""
    size = min(batch_size, n)
    epoch = 0
    while True:
        perm = rng.child(epoch).permutation(n)
        for start in range(0, n - size + 1, size):
            yield perm[start:start + size]
        epoch += 1


@dataclass
class TrainResult:
    model: GatedModel
    log: list[tuple[int, LossBreakdown]]
    arch: ArchConfig


def train(cfg: TrainConfig, data: Dataset, dtype=torch.float32, callback=None) -> TrainResult:
    """Train one model from scratch; fully determined by ``cfg`` and ``data``."""
    arch = _resolve_arch(cfg, data)
    model = init_model(arch, cfg.seed, cfg.variant, dtype=dtype)
    X, y = to_arrays(data.train)
    labels = torch.as_tensor(y)
    root = aug.RngStream(cfg.seed)
    batches = _batches(len(y), cfg.batch_size, root.child(_SHUFFLE))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=tuple(cfg.adam_betas))
    lam = cfg.effective_lambda
    history = []
    for it in range(1, cfg.iterations + 1):
        idx = next(batches)
        out = forward_batch(model, X[idx], cfg.augment_cfg, root.child(_AUGMENT, it), train_mode=True)
        ce = F.cross_entropy(out.logits, labels[idx])
        con = batch_consistency(out.features) if model.n_views > 1 else torch.zeros((), dtype=ce.dtype)
        total = ce + lam * con if lam else ce
        if not torch.isfinite(total):
            raise TrainingDiverged(
                f"non-finite loss at iteration {it}: ce={ce.item()}, con={con.item()}"
            )
        opt.zero_grad(set_to_none=True)
        total.backward()
        opt.step()
        lb = LossBreakdown.from_parts(ce.item(), con.item(), lam)
        history.append((it, lb))
        if callback is not None:
            callback(it, lb)
    model.eval()
    return TrainResult(model, history, arch)


# ---------------------------------------------------------------------------
# evaluation


@torch.no_grad()
def predict_logits(model: GatedModel, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    model.eval()
    chunks = [
        forward_batch(model, X[i:i + batch_size]).logits.double().numpy()
        for i in range(0, len(X), batch_size)
    ]
    return np.concatenate(chunks)


def accuracy_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate(model: GatedModel, split, batch_size: int = 256) -> float:
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty split")
    X, y = to_arrays(split)
    return accuracy_from_logits(predict_logits(model, X, batch_size), y)


@torch.no_grad()
def mean_consistency(model: GatedModel, split, aug_cfg=None, seed=None, batch_size: int = 256) -> float:
    """Average per-sample consistency loss of the expert features.

    Uses identity inputs unless ``seed`` is given, in which case every
    sample gets its own augmented bundle.
    """
    if model.n_views < 2:
        raise ValueError(f"{model.variant} model has a single branch")
    model.eval()
    X, _ = to_arrays(split)
    total = 0.0
    for i in range(0, len(X), batch_size):
        xb = X[i:i + batch_size]
        if seed is None:
            out = forward_batch(model, xb)
        else:
            out = forward_batch(model, xb, aug_cfg, aug.RngStream(seed).child(i), stochastic_eval=True)
        total += batch_consistency(out.features.double()).item() * len(xb)
    return total / len(X)


# ---------------------------------------------------------------------------
# multiple trials


@dataclass
class TrialReport:
    per_trial_accuracy: list[float]
    seeds: list[int]
    final_losses: list[LossBreakdown] = field(default_factory=list)
    loss_logs: list[Path] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_trial_accuracy))

    @property
    def std(self) -> float:
        return float(np.std(self.per_trial_accuracy))


def run_trials(cfg: TrainConfig, data: Dataset, n_trials: int = 5, seeds=None, out_dir=None,
               tag: str = "trial") -> TrialReport:
    """Independent runs with seeds ``cfg.seed + k``; test accuracy per run."""
    seeds = list(seeds) if seeds is not None else [cfg.seed + k for k in range(n_trials)]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    report = TrialReport([], seeds)
    for k, seed in enumerate(seeds):
        result = train(replace(cfg, seed=seed), data)
        acc = evaluate(result.model, data.test)
        log.info("%s %d (seed %d): test accuracy %.4f", tag, k, seed, acc)
        report.per_trial_accuracy.append(acc)
        if result.log:
            report.final_losses.append(result.log[-1][1])
        if out is not None:
            ckpt = out / f"{tag}_{k}.pt"
            save_checkpoint(ckpt, result.model, {
                "dataset": data.name,
                "seed": seed,
                "train_config": _config_meta(replace(cfg, seed=seed)),
                "test_accuracy": acc,
            })
            loss_csv = out / f"{tag}_{k}_loss.csv"
            write_loss_log(loss_csv, result.log)
            report.checkpoints.append(ckpt)
            report.loss_logs.append(loss_csv)
    return report


def _config_meta(cfg: TrainConfig) -> dict:
    meta = asdict(cfg)
    meta.pop("arch_cfg")
    meta["augment_cfg"] = asdict(cfg.augment_cfg)
    return meta


RESULT_FIELDS = ("dataset", "variant", "lambda", "mean", "std", "per_trial")


def append_result(path, dataset: str, variant: str, lam: float, report: TrialReport) -> None:
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(RESULT_FIELDS)
        writer.writerow([
            dataset, variant, lam, repr(report.mean), repr(report.std),
            ";".join(repr(a) for a in report.per_trial_accuracy),
        ])


# ---------------------------------------------------------------------------
# test-time augmentation


def average_prediction(probabilities) -> int:
    """Class with the highest mean probability across views."""
    p = np.asarray(probabilities, dtype=np.float64)
    return int(np.argmax(p.mean(axis=0)))


@torch.no_grad()
def tta_probabilities(model: GatedModel, x, aug_cfg: aug.AugmentConfig, rng) -> np.ndarray:
    """Softmax outputs ``[N, n_classes]`` of ``model`` on every view of ``x``."""
    if model.variant != "no_aug":
        raise ValueError("test-time augmentation expects a no_aug model")
    model.eval()
    bundle = aug.apply_all(x, aug_cfg, aug.as_rng(rng))
    views = bundle.stack()[None]  # one branch, batch of N views
    logits = model(torch.as_tensor(views, dtype=next(model.parameters()).dtype)).logits
    return torch.softmax(logits.double(), dim=-1).numpy()


def tta_predict(model: GatedModel, x, aug_cfg: aug.AugmentConfig, rng) -> int:
    return average_prediction(tta_probabilities(model, x, aug_cfg, rng))


def tta_evaluate(model: GatedModel, split, aug_cfg: aug.AugmentConfig, seed: int) -> float:
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty split")
    root = aug.RngStream(seed)
    hits = [tta_predict(model, s, aug_cfg, root.child(i)) == s.label for i, s in enumerate(split)]
    return float(np.mean(hits))
