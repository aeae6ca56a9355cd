"""Subsample CNN for seven-segment meter digits."""

from .layers import subsample_extract
from .network import (DigitLabel, Gradients, ScnnConfig, ScnnParams, cross_entropy_loss,
                      init_params, load_params, predict_categories, predict_digit,
                      predict_proba, save_params, scnn_backward, scnn_forward)
from .training import (EpochMetrics, Evaluation, GradCheckReport, TrainResult, evaluate,
                       gradient_check, train)

__all__ = [
    "DigitLabel", "Gradients", "ScnnConfig", "ScnnParams", "cross_entropy_loss", "init_params",
    "load_params", "predict_categories", "predict_digit", "predict_proba", "save_params",
    "scnn_backward", "scnn_forward", "subsample_extract", "EpochMetrics", "Evaluation",
    "GradCheckReport", "TrainResult", "evaluate", "gradient_check", "train",
]
