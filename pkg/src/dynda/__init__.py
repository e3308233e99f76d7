"""Dynamic data augmentation for time-series classification.

Expert CNNs, one per augmentation, fused by a learned gating network and
trained with a feature consistency penalty.
"""

from .augment import AugmentConfig, AugmentedBundle, RngStream, apply_all
from .loss import LossBreakdown, consistency_loss, cross_entropy, total_loss
from .model import ArchConfig, GatedModel, init_model, load_checkpoint, save_checkpoint
from .series import Dataset, Normalizer, TimeSeries, load_dataset, parse_ucr_tsv, prepare
from .train import TrainConfig, evaluate, run_trials, train

__version__ = "0.1.0"
