"""Saliency explanations for vision models, trainable against human attention.

The package is organized as a numpy/scipy library:

* :mod:`hagxai.tensor_ops` — maps, stacks, and the numeric kernels
* :mod:`hagxai.attention` — fixation ingest and attention-map smoothing
* :mod:`hagxai.bundles` — explanation-bundle types and archive I/O
* :mod:`hagxai.explainers` — the four untrained gradient-based methods
* :mod:`hagxai.hag` — the learnable method, its loss and exact gradients
* :mod:`hagxai.training` — Adam, LR schedule, early stopping, k-fold CV
* :mod:`hagxai.metrics` — plausibility/faithfulness metrics and statistics
* :mod:`hagxai.scoring` — HTTP client for a model-hosting scorer
* :mod:`hagxai.cli` — the ``hagxai`` command-line entry point
"""

from .attention import AttentionMap, FixationRecord, build_attention_map, load_fixations
from .bundles import BranchTensors, ExplanationBundle, ObjectSlot, read_bundle, write_bundle
from .errors import DataError, HagxaiError, ScorerError, UndefinedResultError
from .explainers import SaliencyMap, fullgrad_cam, fullgrad_cam_pp, grad_cam, grad_cam_pp
from .hag import HagParams, hag_forward, hag_grad, hag_loss, load_params, save_params
from .metrics import (
    ConditionLabel,
    Curve,
    PerturbationConfig,
    auc,
    deletion_curve,
    insertion_curve,
    pcc,
    pearson_with_p,
    perturbation_curve,
    rmse,
    stratified_eval,
    welch_t_test,
)
from .scoring import ScorerClient
from .tensor_ops import (
    GaussianKernelSpec,
    area_normalize,
    convolve_same,
    gaussian_kernel,
    max_min_normalize,
    piecewise_linear,
    resize_bilinear,
)
from .training import AdamState, TrainConfig, TrainRecord, adam_step, cross_validate, lr_schedule, train

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AttentionMap",
    "BranchTensors",
    "ConditionLabel",
    "Curve",
    "DataError",
    "ExplanationBundle",
    "FixationRecord",
    "GaussianKernelSpec",
    "HagParams",
    "HagxaiError",
    "ObjectSlot",
    "PerturbationConfig",
    "SaliencyMap",
    "ScorerClient",
    "ScorerError",
    "TrainConfig",
    "TrainRecord",
    "UndefinedResultError",
    "adam_step",
    "area_normalize",
    "auc",
    "build_attention_map",
    "convolve_same",
    "cross_validate",
    "deletion_curve",
    "fullgrad_cam",
    "fullgrad_cam_pp",
    "gaussian_kernel",
    "grad_cam",
    "grad_cam_pp",
    "hag_forward",
    "hag_grad",
    "hag_loss",
    "insertion_curve",
    "load_fixations",
    "load_params",
    "lr_schedule",
    "max_min_normalize",
    "pcc",
    "pearson_with_p",
    "perturbation_curve",
    "piecewise_linear",
    "read_bundle",
    "resize_bilinear",
    "rmse",
    "save_params",
    "stratified_eval",
    "train",
    "welch_t_test",
    "write_bundle",
]
