"""Open-set domain adaptation with class-conditional extreme value theory.

Prediction entropies of target samples are grouped by predicted class and
modelled with per-class GEV distributions. The fitted CDFs give per-class
entropy thresholds, which drive both the instance weights of a weighted
domain-adversarial loss and the rejection of unknown-class samples.
"""

from .data import Dataset, SyntheticConfig, generate_synthetic, load_features, save_features
from .entropy import ClassGevBank, build_gev_bank, conditional_weight, prediction_entropy
from .gev import FitOptions, GevParams, fit_gev, gev_cdf, gev_pdf, gev_quantile
from .openset import MetricsReport, compute_metrics, predict_open_set
from .training import TrainConfig, train

__all__ = [
    "ClassGevBank",
    "Dataset",
    "FitOptions",
    "GevParams",
    "MetricsReport",
    "SyntheticConfig",
    "TrainConfig",
    "build_gev_bank",
    "compute_metrics",
    "conditional_weight",
    "fit_gev",
    "generate_synthetic",
    "gev_cdf",
    "gev_pdf",
    "gev_quantile",
    "load_features",
    "predict_open_set",
    "prediction_entropy",
    "save_features",
    "train",
]
