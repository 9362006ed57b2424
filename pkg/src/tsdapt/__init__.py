"""Class-wise domain adaptation of time-series embeddings with selection at inference."""

from .coral import CoralTransform, coral_fit
from .data import LabeledEmbeddings, SinusoidConfig, read_embeddings_file, synthetic_splits, write_embeddings_file
from .errors import (
    ConfigError,
    DegenerateCovariance,
    EmptyClass,
    InvalidLength,
    InvalidWeights,
    MissingTargetClass,
    MissingTransform,
    NumericalFailure,
    ParseError,
    TsdaptError,
)
from .metrics import MetricKind, score
from .ot import build_cost_matrix, solve_emd, solve_emd_laplacian, solve_sinkhorn, solve_sinkhorn_class_reg
from .pipeline import OtParams, evaluate, fit_class_transforms, fit_classifier, select_and_classify

__version__ = "0.1.0"
