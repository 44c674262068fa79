"""Collective action under differentially private SGD.

Training with per-example clipping and Gaussian noise, Rényi accounting,
signal-planting collectives, success lower bounds and likelihood-ratio
membership inference, driven by the ``aca-dp`` command line tool.
"""

from .accountant import epsilon, sigma_for_epsilon
from .bounds import BoundInputs, compute_bound, simulate_dynamics, verify_bound
from .collective import FeatureOffset, GridPerturb, PatchSet, Strategy, build_mixture, measure_success
from .data import Dataset, load_csv_dataset, load_idx_images, make_gaussian_blobs
from .kernels import active_backend
from .mia import attack, lira_score, roc, train_shadows
from .models import ModelSpec, init_model, per_example_gradient
from .optimizer import PrivacyParams, TrainConfig, dpsgd_step, train

__version__ = "0.1.0"

__all__ = [
    "BoundInputs", "Dataset", "FeatureOffset", "GridPerturb", "ModelSpec", "PatchSet", "PrivacyParams",
    "Strategy", "TrainConfig", "active_backend", "attack", "build_mixture", "compute_bound", "dpsgd_step",
    "epsilon", "init_model", "lira_score", "load_csv_dataset", "load_idx_images", "make_gaussian_blobs",
    "measure_success", "per_example_gradient", "roc", "sigma_for_epsilon", "simulate_dynamics", "train",
    "train_shadows", "verify_bound",
]
