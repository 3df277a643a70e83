"""Gaussian-process prediction under input location error.

KALE predicts the noise-free surface, KALEN the response at a noisy input,
and stochastic Kriging serves as the nugget-based approximation to both.
"""

from .asymptotics import bound_report, kalen_limit, no_noise_upper_bound
from .convolved import CLOSED_FORM, MONTE_CARLO, ConvolvedKernel
from .estimate import EstimationProblem, EstimationResult, fit, model_from_fit
from .kernels import GAUSSIAN, MATERN, KernelSpec, NoiseModel
from .numerics import RngStream
from .predict import KALE, KALEN, SK, Dataset, FittedModel, build_model, predict, predict_batch

__version__ = "0.1.0"

__all__ = [
    "CLOSED_FORM",
    "MONTE_CARLO",
    "GAUSSIAN",
    "MATERN",
    "KALE",
    "KALEN",
    "SK",
    "ConvolvedKernel",
    "Dataset",
    "EstimationProblem",
    "EstimationResult",
    "FittedModel",
    "KernelSpec",
    "NoiseModel",
    "RngStream",
    "bound_report",
    "build_model",
    "fit",
    "kalen_limit",
    "model_from_fit",
    "no_noise_upper_bound",
    "predict",
    "predict_batch",
]
