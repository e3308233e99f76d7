"""Gated multi-expert temporal CNN.

One expert CNN per augmentation view, a gating CNN that reads all views
stacked along the channel axis and emits softmax weights over experts, a
weighted sum of expert features, and a two-layer classifier head. The
``no_aug`` and ``concat`` variants reuse the same blocks as baselines.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import augment as aug

VARIANTS = ("proposed", "no_aug", "concat")
CHECKPOINT_FORMAT = "dynda-checkpoint/1"


@dataclass(frozen=True)
class ArchConfig:
    n_classes: int
    input_channels: int = 1
    input_length: int = 128
    n_experts: int = 5
    conv_filters: tuple[int, ...] = (32, 64, 128)
    kernel_size: int = 5
    pool_size: int = 2
    fc_width: int = 512
    feature_dim: int | None = None
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(int(f) for f in self.conv_filters))
        if self.feature_dim is None:
            object.__setattr__(self, "feature_dim", self.fc_width)
        if self.n_experts < 2:
            raise ValueError("need at least two experts")
        if not self.conv_filters:
            raise ValueError("conv_filters must be nonempty")
        if self.feature_dim != self.fc_width:
            raise ValueError("feature_dim must equal fc_width")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd for same-padding")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.pooled_length < 1:
            raise ValueError(
                f"input_length {self.input_length} is too short for "
                f"{len(self.conv_filters)} pooling stages of size {self.pool_size}"
            )

    @property
    def pooled_length(self) -> int:
        length = self.input_length
        for _ in self.conv_filters:
            length //= self.pool_size
        return length

    @property
    def flat_width(self) -> int:
        return self.conv_filters[-1] * self.pooled_length


class ConvTrunk(nn.Module):
    """``[conv -> batch norm -> ReLU -> max pool] x len(filters)`` then flatten."""

    def __init__(self, in_channels: int, cfg: ArchConfig):
        super().__init__()
        layers = []
        for width in cfg.conv_filters:
            layers += [
                nn.Conv1d(in_channels, width, cfg.kernel_size, padding=cfg.kernel_size // 2),
                nn.BatchNorm1d(width, eps=cfg.bn_eps, momentum=cfg.bn_momentum),
                nn.ReLU(),
                nn.MaxPool1d(cfg.pool_size),
            ]
            in_channels = width
        self.layers = nn.Sequential(*layers)

    def forward(self, x):
        return self.layers(x).flatten(1)


class Expert(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.trunk = ConvTrunk(cfg.input_channels, cfg)
        self.fc1 = nn.Linear(cfg.flat_width, cfg.fc_width)
        self.fc2 = nn.Linear(cfg.fc_width, cfg.feature_dim)

    def forward(self, x):
        return self.fc2(F.relu(self.fc1(self.trunk(x))))


class GatingNetwork(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.trunk = ConvTrunk(cfg.n_experts * cfg.input_channels, cfg)
        self.fc1 = nn.Linear(cfg.flat_width, cfg.fc_width)
        self.fc2 = nn.Linear(cfg.fc_width, cfg.fc_width)
        self.out = nn.Linear(cfg.fc_width, cfg.n_experts)

    def logits(self, stacked):
        h = F.relu(self.fc1(self.trunk(stacked)))
        return self.out(F.relu(self.fc2(h)))

    def forward(self, stacked):
        """``stacked`` is ``[B, N*C, T]``; returns ``[B, N]`` weights."""
        return torch.softmax(self.logits(stacked), dim=-1)


class Classifier(nn.Module):
    def __init__(self, in_width: int, cfg: ArchConfig):
        super().__init__()
        self.fc1 = nn.Linear(in_width, cfg.fc_width)
        self.fc2 = nn.Linear(cfg.fc_width, cfg.n_classes)

    def forward(self, fused):
        return self.fc2(F.relu(self.fc1(fused)))


@dataclass
class ForwardOutput:
    logits: torch.Tensor  # [B, n_classes]
    alphas: torch.Tensor | None  # [B, N]; None when there is no gate
    features: torch.Tensor  # [N, B, D]
    fused: torch.Tensor  # [B, D], or [B, N*D] for concat


def stack_views(views: torch.Tensor) -> torch.Tensor:
    """``[N, B, C, T]`` -> ``[B, N*C, T]``, view-major along channels."""
    N, B, C, T = views.shape
    return views.permute(1, 0, 2, 3).reshape(B, N * C, T)


def combine_features(alphas, features):
    """Weighted sum of expert features.

    Accepts a single element (``alphas [N]``, ``features [N, D]``) or a
    batch (``alphas [B, N]``, ``features [N, B, D]``), as numpy or torch.
    """
    lib = torch if isinstance(features, torch.Tensor) else np
    if alphas.shape[-1] != features.shape[0]:
        raise ValueError(f"{alphas.shape[-1]} weights for {features.shape[0]} experts")
    if alphas.ndim == 1:
        return lib.einsum("n,nd->d", alphas, features)
    if features.shape[1] != alphas.shape[0]:
        raise ValueError("batch sizes of alphas and features differ")
    return lib.einsum("bn,nbd->bd", alphas, features)


class GatedModel(nn.Module):
    def __init__(self, cfg: ArchConfig, variant: str = "proposed"):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.cfg = cfg
        self.variant = variant
        n_branches = 1 if variant == "no_aug" else cfg.n_experts
        self.experts = nn.ModuleList(Expert(cfg) for _ in range(n_branches))
        self.gate = GatingNetwork(cfg) if variant == "proposed" else None
        cls_in = cfg.n_experts * cfg.feature_dim if variant == "concat" else cfg.feature_dim
        self.classifier = Classifier(cls_in, cfg)

    @property
    def n_views(self) -> int:
        return len(self.experts)

    def forward(self, views: torch.Tensor) -> ForwardOutput:
        """``views`` is ``[N, B, C, T]`` (only ``views[0]`` is read by no_aug)."""
        features = torch.stack([e(views[n]) for n, e in enumerate(self.experts)])
        alphas = None
        if self.variant == "proposed":
            alphas = self.gate(stack_views(views))
            fused = combine_features(alphas, features)
        elif self.variant == "concat":
            fused = torch.cat(list(features), dim=-1)
        else:
            fused = features[0]
        return ForwardOutput(self.classifier(fused), alphas, features, fused)


def _init_weights(model: nn.Module, generator: torch.Generator) -> None:
    for module in model.modules():
        if isinstance(module, (nn.Conv1d, nn.Linear)):
            nn.init.kaiming_uniform_(module.weight, nonlinearity="relu", generator=generator)
            nn.init.zeros_(module.bias)
        elif isinstance(module, nn.BatchNorm1d):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)
            module.reset_running_stats()


def init_model(cfg: ArchConfig, seed: int = 0, variant: str = "proposed", dtype=torch.float32) -> GatedModel:
    """He-uniform weights, zero biases; identical for identical seeds."""
    model = GatedModel(cfg, variant)
    g = torch.Generator().manual_seed(int(seed) & (2**63 - 1))
    with torch.no_grad():
        _init_weights(model, g)
    return model.to(dtype)


def count_parameters(model: nn.Module, include_buffers: bool = False) -> int:
    n = sum(p.numel() for p in model.parameters())
    if include_buffers:
        n += sum(b.numel() for name, b in model.named_buffers() if not name.endswith("num_batches_tracked"))
    return n


# ---------------------------------------------------------------------------
# functional entry points


def _as_tensor(x, like: nn.Module) -> torch.Tensor:
    dtype = next(like.parameters()).dtype
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    x = np.asarray(x)
    if not x.flags.writeable:
        x = x.copy()  # series values are read-only views
    return torch.as_tensor(x, dtype=dtype)


def expert_forward(expert: Expert, x, train_mode: bool = False) -> torch.Tensor:
    """Feature of one ``[C, T]`` input (or a ``[B, C, T]`` batch)."""
    expert.train(train_mode)
    t = _as_tensor(x, expert)
    single = t.ndim == 2
    out = expert(t[None] if single else t)
    return out[0] if single else out


def gating_forward(gate: GatingNetwork, bundle, train_mode: bool = False) -> torch.Tensor:
    """Gate weights for one bundle (``[N]``) or a ``[N, B, C, T]`` view batch (``[B, N]``)."""
    gate.train(train_mode)
    views = bundle.stack() if isinstance(bundle, aug.AugmentedBundle) else bundle
    t = _as_tensor(views, gate)
    single = t.ndim == 3
    if single:
        t = t[:, None]
    out = gate(stack_views(t))
    return out[0] if single else out


def classifier_forward(classifier: Classifier, fused) -> torch.Tensor:
    return classifier(_as_tensor(fused, classifier))


def build_views(model: GatedModel, X: np.ndarray, aug_cfg: aug.AugmentConfig | None, rng,
                train_mode: bool, stochastic_eval: bool = False) -> np.ndarray:
    """Inputs for every branch: augmented when training, identity otherwise.

    ``no_aug`` models never touch the augmentation code.
    """
    X = np.asarray(X, dtype=np.float64)
    if model.variant == "no_aug":
        return X[None]
    if train_mode or stochastic_eval:
        return aug.augment_batch(X, aug_cfg or aug.AugmentConfig(), aug.as_rng(rng))
    return aug.identity_batch(X, model.cfg.n_experts)


def forward_batch(model: GatedModel, X, aug_cfg=None, rng=0, train_mode: bool = False,
                  stochastic_eval: bool = False) -> ForwardOutput:
    model.train(train_mode)
    views = build_views(model, X, aug_cfg, rng, train_mode, stochastic_eval)
    return model(_as_tensor(views, model))


def model_forward(model: GatedModel, x, aug_cfg=None, rng=0, train_mode: bool = False,
                  stochastic_eval: bool = False) -> ForwardOutput:
    """Forward one series; outputs keep a leading batch axis of size 1."""
    values = getattr(x, "values", x)
    return forward_batch(model, np.asarray(values)[None], aug_cfg, rng, train_mode, stochastic_eval)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: GatedModel, meta: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "arch": asdict(model.cfg),
        "variant": model.variant,
        "dtype": str(next(model.parameters()).dtype).removeprefix("torch."),
        "state": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "meta": dict(meta or {}),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[GatedModel, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {payload.get('format')!r}")
    cfg = ArchConfig(**payload["arch"])
    model = GatedModel(cfg, payload["variant"]).to(getattr(torch, payload["dtype"]))
    model.load_state_dict(payload["state"])
    model.eval()
    return model, payload["meta"]
