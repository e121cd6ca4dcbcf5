"""Delay-adjusted conversion prediction: thermometer-encoded delay-bucket
sub-models with label completion, plus the baseline/ablation benchmark."""

__version__ = "0.1.0"

from .core import (
    DAY,
    ClickExample,
    ContractViolation,
    ConversionEvent,
    DelayBucketing,
    MetricsAccumulator,
    bucket_labels,
    mature_label,
    observed_prefix,
    poisson_nll,
    poisson_nll_grad_lograte,
    thermometer_labels,
)
from .ensemble import BUCKET, THERMOMETER, EnsembleConfig, SubModelEnsemble
from .regressor import FeatureVector, PoissonRegressor, RegressorConfig

__all__ = [
    "DAY",
    "ClickExample",
    "ContractViolation",
    "ConversionEvent",
    "DelayBucketing",
    "MetricsAccumulator",
    "bucket_labels",
    "mature_label",
    "observed_prefix",
    "poisson_nll",
    "poisson_nll_grad_lograte",
    "thermometer_labels",
    "BUCKET",
    "THERMOMETER",
    "EnsembleConfig",
    "SubModelEnsemble",
    "FeatureVector",
    "PoissonRegressor",
    "RegressorConfig",
]
