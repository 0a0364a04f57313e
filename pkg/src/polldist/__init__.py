"""Toolkit for subpopulation opinion distributions: weighted survey
targets, Wasserstein/KL scoring of logprob-exposing models, bootstrap
performance brackets, and fine-tuning data export."""

from .errors import (
    CapabilityError,
    ConfigError,
    DatasetError,
    DegenerateGapError,
    EvaluationError,
    MetricError,
    NoDataError,
    ParseError,
    PolldistError,
    PromptError,
    TransportError,
)
from .metrics import MetricConfig, kl_forward, one_hot, quantize_counts, uniform, wasserstein
from .survey import (
    AnswerOption,
    Distribution,
    Question,
    Respondent,
    ResponseRecord,
    Subpopulation,
    SurveyDataset,
    load_dataset,
    members,
    weighted_distribution,
)

__version__ = "0.1.0"

__all__ = [
    "AnswerOption",
    "CapabilityError",
    "ConfigError",
    "DatasetError",
    "DegenerateGapError",
    "Distribution",
    "EvaluationError",
    "MetricConfig",
    "MetricError",
    "NoDataError",
    "ParseError",
    "PolldistError",
    "PromptError",
    "Question",
    "Respondent",
    "ResponseRecord",
    "Subpopulation",
    "SurveyDataset",
    "TransportError",
    "kl_forward",
    "load_dataset",
    "members",
    "one_hot",
    "quantize_counts",
    "uniform",
    "wasserstein",
    "weighted_distribution",
]
