"""Normalization strategies, a from-scratch transformer encoder and
expressivity bounds for multivariate time series."""

from .errors import (ConfigError, ConvergenceError, DegeneracyWarning, NumericError, ParseError,
                     ShapeError, TrainingError, TsNormLabError, UnsupportedDimensionError,
                     UnsupportedError)
from .normalize import STRATEGY_NAMES, NormStrategy, fit, transform, inverse_transform
from .model import ModelConfig, ModelWeights, init_weights, forward
from .expressivity import BoundQuery, compute_bound, estimate_expressivity, lipschitz_scan

__version__ = "0.1.0"
