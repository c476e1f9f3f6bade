"""Desk-scale simulation lab for active generalized category discovery.

Trains a prototypical classifier over fixed feature embeddings, runs
multi-round active sample selection with an adaptive novel-class strategy and
seven baselines, keeps label mappings stable via an EMA model, and evaluates
clustering accuracy plus novelty metrics.
"""

from .assignment import LabelMapping, cluster_accuracy, compute_mapping, hungarian, mapping_diff
from .data import (
    FeatureDataset,
    Oracle,
    PoolState,
    SplitConfig,
    generate_synthetic,
    load_feature_dir,
    make_split,
    query_oracle,
    save_feature_dir,
)
from .estimation import estimate_k
from .metrics import accuracy_breakdown, confidence_histogram, novelty_metrics
from .model import (
    EmaModel,
    Model,
    ModelConfig,
    TrainConfig,
    ema_update,
    loss_cls_sup,
    loss_cls_unsup,
    loss_con_sup,
    loss_con_unsup,
    make_views,
    posterior,
    train_round,
)
from .pipeline import RunConfig, SyntheticSpec, holdout_split, run_agcd, run_base_training, run_experiment
from .strategies import STRATEGIES, StrategyContext, uncertainty_scores, update_transfer

__version__ = "0.1.0"
