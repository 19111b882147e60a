"""Distribution-guided crack segmentation on synthetic scenes.

Pipeline: synthetic scene generation with controllable annotation noise,
a fixed filter-bank feature extractor, a per-pixel adapter/MLP classifier
trained with Dice+BCE, class-level Gaussian mixtures fitted by EM whose MAP
pseudo-labels add a guidance loss, and tolerant (disc-dilated) evaluation.
"""

from .config import ExperimentConfig, RunRecord, load_config, save_config
from .features import FEATURE_DIM, extract_features, image_features, standardize
from .losses import LossBreakdown, bce_loss, dice_loss, supervised_loss, total_loss
from .metrics import (MetricsReport, TolerantCounts, compute_metrics, dilate_disc,
                      disc_structure, tolerant_counts)
from .model import (AdamW, AdapterBlock, ClassifierHead, ModelParams, TrainConfig,
                    adapter_forward, backward, cosine_lr, forward, gelu, init_params,
                    load_checkpoint, save_checkpoint)
from .mog import (ClassMixture, EmFit, GaussianComponent, MoGModel, PseudoLabels,
                  em_fit, fit_dataset, generate_pseudo_labels, init_per_image,
                  pool_mixtures, posterior, responsibilities)
from .synthdata import (CrackSpec, NoiseSpec, Sample, SceneSpec, corrupt_labels,
                        generate_sample, make_dataset)
from .train import EpochRecord, train, write_log

__all__ = [
    "AdamW", "AdapterBlock", "ClassMixture", "ClassifierHead", "CrackSpec",
    "EmFit", "EpochRecord", "ExperimentConfig", "FEATURE_DIM", "GaussianComponent",
    "LossBreakdown", "MetricsReport", "MoGModel", "ModelParams", "NoiseSpec",
    "PseudoLabels", "RunRecord", "Sample", "SceneSpec", "TolerantCounts",
    "TrainConfig", "adapter_forward", "backward", "bce_loss", "compute_metrics",
    "corrupt_labels", "cosine_lr", "dice_loss", "dilate_disc", "disc_structure",
    "em_fit", "extract_features", "fit_dataset", "forward", "gelu",
    "generate_pseudo_labels", "generate_sample", "image_features", "init_params",
    "init_per_image", "load_checkpoint", "load_config", "make_dataset",
    "pool_mixtures", "posterior", "responsibilities", "save_checkpoint",
    "save_config", "standardize", "supervised_loss", "tolerant_counts",
    "total_loss", "train", "write_log",
]
