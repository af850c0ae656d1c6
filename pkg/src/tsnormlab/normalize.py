"""Per-channel preprocessing strategies: fit, transform, inverse.

Strategy names are the strings written to result records::

    none, standard_instance, standard_global, minmax_instance,
    minmax_global, robust, quantile

``*_instance`` strategies keep one statistic per channel; ``*_global``
strategies pool a single statistic over every channel. The *scope* says
which data the statistics come from: ``"instance"`` (the series being
transformed) or ``"dataset"`` (all training instances).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, TimeSeriesInstance
from .errors import DegeneracyWarning, ShapeError, UnsupportedError

STRATEGY_NAMES = (
    "none",
    "standard_instance",
    "standard_global",
    "minmax_instance",
    "minmax_global",
    "robust",
    "quantile",
)
# the four strategies covered by the expressivity theorems
THEOREM_STRATEGIES = ("standard_instance", "standard_global", "minmax_instance", "minmax_global")
SCOPES = ("instance", "dataset")
EPS_FLOOR = 1e-8


@dataclass(frozen=True)
class NormStrategy:
    kind: str = "none"
    quantile_count: int | None = None
    eps_floor: float = EPS_FLOOR

    def __post_init__(self):
        if self.kind not in STRATEGY_NAMES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGY_NAMES}")
        if self.kind == "quantile" and self.quantile_count is not None and self.quantile_count < 2:
            raise ValueError("quantile_count must be >= 2")
        if self.eps_floor <= 0:
            raise ValueError("eps_floor must be positive")

    @classmethod
    def parse(cls, value: "str | NormStrategy") -> "NormStrategy":
        return value if isinstance(value, NormStrategy) else cls(value)

    @property
    def name(self) -> str:
        return self.kind

    @property
    def is_global(self) -> bool:
        return self.kind.endswith("_global")


def _ro(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FittedNormalizer:
    """Immutable statistics produced by :func:`fit`.

    Per-channel arrays have one entry per channel; global fields are scalars
    (``nan`` when the strategy does not use them). ``scale`` holds standard
    deviations, already clamped to ``eps_floor``.
    """

    strategy: NormStrategy
    scope: str
    channels: int
    mean: np.ndarray
    scale: np.ndarray
    min: np.ndarray
    max: np.ndarray
    median: np.ndarray
    iqr: np.ndarray
    quantile_levels: np.ndarray | None = None
    quantile_table: np.ndarray | None = None
    global_mean: float = float("nan")
    global_scale: float = float("nan")
    global_min: float = float("nan")
    global_max: float = float("nan")
    degenerate: tuple[int, ...] = ()
    warnings: tuple[str, ...] = field(default=())
    # max - min kept as its own field so the range never depends on the location
    span: np.ndarray | None = None
    global_span: float = float("nan")

    @property
    def ranges(self) -> np.ndarray:
        """Per-channel ``max - min`` clamped to the eps floor."""
        span = self.max - self.min if self.span is None else self.span
        return np.maximum(span, self.strategy.eps_floor)

    @property
    def global_range(self) -> float:
        span = self.global_max - self.global_min if math.isnan(self.global_span) else self.global_span
        return max(span, self.strategy.eps_floor)

    def affine(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(shift, scale)`` with ``transform(x) = (x - shift) / scale`` per channel."""
        k = self.strategy.kind
        ones = np.ones(self.channels)
        if k == "none":
            return np.zeros(self.channels), ones
        if k == "standard_instance":
            return self.mean.copy(), self.scale.copy()
        if k == "standard_global":
            return self.global_mean * ones, self.global_scale * ones
        if k == "minmax_instance":
            return self.min.copy(), self.ranges
        if k == "minmax_global":
            return self.global_min * ones, self.global_range * ones
        if k == "robust":
            return self.median.copy(), self.iqr.copy()
        raise UnsupportedError(f"strategy {k!r} is not an affine map")


def _pooled_values(data) -> tuple[np.ndarray, str]:
    """Return ``(channels, observations)`` values and the natural scope."""
    if isinstance(data, TimeSeriesInstance):
        return data.values, "instance"
    if isinstance(data, Dataset):
        insts: Sequence[TimeSeriesInstance] = data.instances
    elif isinstance(data, np.ndarray):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim == 2:
            return arr, "instance"
        if arr.ndim == 3:
            return np.concatenate(list(arr), axis=1), "dataset"
        raise ShapeError(f"cannot fit on array of shape {arr.shape}")
    else:
        insts = list(data)
    if not insts:
        raise ValueError("cannot fit a normalizer on empty data")
    k = insts[0].channels
    for inst in insts:
        if inst.channels != k:
            raise ShapeError("instances disagree on channel count")
    return np.concatenate([inst.values for inst in insts], axis=1), "dataset"


def fit(strategy: "NormStrategy | str", data, scope: str | None = None) -> FittedNormalizer:
    """Fit ``strategy`` on a single instance or on a collection of instances.

    Parameters
    ----------
    strategy
        A :class:`NormStrategy` or one of :data:`STRATEGY_NAMES`.
    data
        A :class:`TimeSeriesInstance`, a ``channels x length`` array, a
        :class:`Dataset`, or a sequence of instances.
    scope
        Recorded scope tag. Defaults to ``"instance"`` for a single series and
        ``"dataset"`` for collections.

    Constant channels do not fail: their scale is clamped to the eps floor,
    the channel index is stored in ``degenerate`` and a
    :class:`DegeneracyWarning` is emitted.
    """
    strategy = NormStrategy.parse(strategy)
    values, natural = _pooled_values(data)
    scope = scope or natural
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    channels, nobs = values.shape
    if nobs < 1:
        raise ValueError("every channel needs at least one observation")
    if strategy.kind in ("robust", "quantile") and nobs < 2:
        raise ValueError(f"{strategy.kind} needs at least two observations per channel")
    floor = strategy.eps_floor

    mean = values.mean(axis=1)
    std = values.std(axis=1)
    vmin = values.min(axis=1)
    vmax = values.max(axis=1)
    q1, median, q3 = np.quantile(values, [0.25, 0.5, 0.75], axis=1)
    iqr = q3 - q1

    degenerate: list[int] = []
    notes: list[str] = []
    kind = strategy.kind
    if kind == "standard_instance":
        degenerate = np.flatnonzero(std < floor).tolist()
    elif kind == "minmax_instance":
        degenerate = np.flatnonzero(vmax - vmin < floor).tolist()
    elif kind == "robust":
        degenerate = np.flatnonzero(iqr < floor).tolist()
    elif kind == "quantile":
        degenerate = np.flatnonzero(vmax - vmin < floor).tolist()
    g_mean = float(values.mean())
    g_std = float(values.std())
    g_min = float(values.min())
    g_max = float(values.max())
    if kind == "standard_global" and g_std < floor:
        degenerate = list(range(channels))
    if kind == "minmax_global" and g_max - g_min < floor:
        degenerate = list(range(channels))
    if degenerate:
        msg = f"{kind}: zero scale on channel(s) {degenerate}; clamped to {floor:g}"
        notes.append(msg)
        warnings.warn(msg, DegeneracyWarning, stacklevel=2)

    levels = table = None
    if kind == "quantile":
        qc = strategy.quantile_count or min(1000, nobs)
        levels = np.linspace(0.0, 1.0, qc)
        table = np.quantile(values, levels, axis=1).T
        table = np.maximum.accumulate(table, axis=1)

    return FittedNormalizer(
        strategy=strategy,
        scope=scope,
        channels=channels,
        mean=_ro(mean),
        scale=_ro(np.maximum(std, floor)),
        min=_ro(vmin),
        max=_ro(vmax),
        median=_ro(median),
        iqr=_ro(np.maximum(iqr, floor)),
        quantile_levels=None if levels is None else _ro(levels),
        quantile_table=None if table is None else _ro(table),
        global_mean=g_mean,
        global_scale=max(g_std, floor),
        global_min=g_min,
        global_max=g_max,
        degenerate=tuple(degenerate),
        warnings=tuple(notes),
        span=_ro(vmax - vmin),
        global_span=g_max - g_min,
    )


def _check_channels(norm: FittedNormalizer, values: np.ndarray):
    if values.ndim < 2 or values.shape[-2] != norm.channels:
        raise ShapeError(
            f"normalizer was fit on {norm.channels} channels, got array of shape {values.shape}")


def apply(norm: FittedNormalizer, values: np.ndarray) -> np.ndarray:
    """Transform a ``(..., channels, length)`` array."""
    values = np.asarray(values, dtype=np.float64)
    _check_channels(norm, values)
    if norm.strategy.kind == "quantile":
        out = np.empty_like(values)
        for c in range(norm.channels):
            out[..., c, :] = np.interp(values[..., c, :], norm.quantile_table[c], norm.quantile_levels)
        return out
    shift, scale = norm.affine()
    return (values - shift[:, None]) / scale[:, None]


def apply_inverse(norm: FittedNormalizer, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    _check_channels(norm, values)
    if norm.degenerate and norm.strategy.kind != "none":
        warnings.warn(f"inverting degenerate channel(s) {list(norm.degenerate)}",
                      DegeneracyWarning, stacklevel=3)
    if norm.strategy.kind == "quantile":
        if np.any(values < 0.0) or np.any(values > 1.0):
            warnings.warn("quantile inverse input outside [0, 1]; clamped", DegeneracyWarning,
                          stacklevel=3)
        clipped = np.clip(values, 0.0, 1.0)
        out = np.empty_like(clipped)
        for c in range(norm.channels):
            out[..., c, :] = np.interp(clipped[..., c, :], norm.quantile_levels, norm.quantile_table[c])
        return out
    shift, scale = norm.affine()
    return values * scale[:, None] + shift[:, None]


def transform(norm: FittedNormalizer, x: TimeSeriesInstance) -> TimeSeriesInstance:
    """Apply the fitted map to ``x`` (and to its forecast target, if any)."""
    target = None if x.target is None else apply(norm, x.target)
    return TimeSeriesInstance(apply(norm, x.values), x.label, target)


def inverse_transform(norm: FittedNormalizer, y: TimeSeriesInstance) -> TimeSeriesInstance:
    target = None if y.target is None else apply_inverse(norm, y.target)
    return TimeSeriesInstance(apply_inverse(norm, y.values), y.label, target)


def fit_transform(strategy: "NormStrategy | str", x: TimeSeriesInstance) -> TimeSeriesInstance:
    return transform(fit(strategy, x, "instance"), x)
