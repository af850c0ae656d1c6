"""Lipschitz constants, the expressivity bound and its Monte-Carlo estimate.

The bound is ``gamma = S * (epsilon / sigma) * L`` with the core constant
``L = (d / (d - 1))**2 * (1 + C1) * C2`` of a one-layer encoder and a
strategy factor ``S`` that measures how much the preprocessing stretches
its input. ``gamma`` above 1 is vacuous; reports carry both the raw and the
clamped value.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .data import Dataset
from .errors import DegeneracyWarning, UnsupportedDimensionError, UnsupportedError
from .linalg import RngStream, spectral_norm
from .model import ModelConfig, ModelWeights, check_weights, representation
from .normalize import FittedNormalizer, NormStrategy, apply, fit

C1_VARIANTS = ("appendix", "theorem2")
MODES = ("pair", "max-of-k")
WILSON_Z = 1.959963984540054  # two-sided 95%
DEGENERATE_TOKEN_STD = 0.1


# --------------------------------------------------------------------------
# constants and the analytic bound

@dataclass(frozen=True)
class HeadNorms:
    head: int
    q: float
    k: float
    v: float
    term: float


def compute_constants(cfg: ModelConfig, weights: ModelWeights,
                      c1_variant: str = "appendix") -> tuple[float, float, list[HeadNorms]]:
    """Return ``(C1, C2, per-head norms)`` for a single-layer encoder.

    ``C1 = ||W_O|| sqrt(H) max_h ||W_V,h|| (4 n / sqrt(d/H) ||W_Q,h|| ||W_K,h|| + 1)``
    and ``C2 = 1 + ||W_2|| ||W_1||``. The ``"theorem2"`` variant adds 1 to C1.
    All norms are spectral.
    """
    if c1_variant not in C1_VARIANTS:
        raise ValueError(f"c1_variant must be one of {C1_VARIANTS}")
    if cfg.layers != 1:
        raise UnsupportedError("the bound covers a single encoder layer only")
    if cfg.ln_affine:
        raise UnsupportedError("the bound assumes layer norms without affine parameters")
    check_weights(cfg, weights)
    lw = weights.layer(0)
    scale = 4.0 * cfg.n / math.sqrt(cfg.d / cfg.heads)
    heads = []
    for h in range(cfg.heads):
        q = spectral_norm(lw["wq"][h])
        k = spectral_norm(lw["wk"][h])
        v = spectral_norm(lw["wv"][h])
        heads.append(HeadNorms(h, q, k, v, v * (scale * q * k + 1.0)))
    c1 = spectral_norm(lw["wo"]) * math.sqrt(cfg.heads) * max(t.term for t in heads)
    if c1_variant == "theorem2":
        c1 += 1.0
    c2 = 1.0 + spectral_norm(lw["w2"]) * spectral_norm(lw["w1"])
    return c1, c2, heads


def lipschitz_core(d: int, c1: float, c2: float) -> float:
    if d < 2:
        raise UnsupportedDimensionError("the layer-norm factor d/(d-1) needs d >= 2")
    return (d / (d - 1)) ** 2 * (1.0 + c1) * c2


def strategy_factor(stats: FittedNormalizer | None, strategy: NormStrategy | str,
                    v_is_variance: bool = False) -> float:
    """Lipschitz factor ``S`` of the preprocessing step.

    ``v_is_variance`` reads the scale symbol ``v`` as a variance, so the
    standard strategies use ``1 / std**2`` where they would use ``1 / std``.
    """
    kind = NormStrategy.parse(strategy).kind
    if kind == "none":
        return 1.0
    if kind not in ("standard_instance", "standard_global", "minmax_instance", "minmax_global"):
        raise UnsupportedError(f"no expressivity bound for strategy {kind!r}")
    if stats is None:
        raise ValueError(f"strategy {kind!r} needs fitted statistics")
    d = stats.channels
    power = 2.0 if v_is_variance and kind.startswith("standard") else 1.0
    if kind == "standard_instance":
        return float(np.sqrt(np.sum(stats.scale ** (-2.0 * power))))
    if kind == "standard_global":
        return math.sqrt(d) / stats.global_scale ** power
    if kind == "minmax_instance":
        return float(np.sqrt(np.sum(stats.ranges ** -2.0)))
    return math.sqrt(d) / stats.global_range


@dataclass(frozen=True)
class BoundQuery:
    epsilon: float
    sigma: float
    strategy: NormStrategy | str
    stats: FittedNormalizer | None
    cfg: ModelConfig
    weights: ModelWeights | None
    c1_variant: str = "appendix"
    v_is_variance: bool = False

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.cfg.d < 2:
            raise UnsupportedDimensionError("expressivity bounds need d >= 2")
        if self.c1_variant not in C1_VARIANTS:
            raise ValueError(f"c1_variant must be one of {C1_VARIANTS}")


@dataclass(frozen=True)
class BoundReport:
    c1: float
    c2: float
    lipschitz_core: float
    strategy_factor: float
    gamma_raw: float
    gamma_clamped: float
    per_head: list[HeadNorms]
    notes: list[str] = field(default_factory=list)

    @property
    def vacuous(self) -> bool:
        return self.gamma_raw >= 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)


def compute_bound(q: BoundQuery) -> BoundReport:
    """Evaluate the constants, the strategy factor and ``gamma`` for ``q``."""
    kind = NormStrategy.parse(q.strategy).kind
    if q.stats is not None and kind != "none":
        if q.stats.channels != q.cfg.d:
            raise ValueError(f"stats have {q.stats.channels} channels, model expects d={q.cfg.d}")
        if q.stats.degenerate:
            warnings.warn(f"scale of channel(s) {list(q.stats.degenerate)} sits at the eps floor; "
                          "the bound is driven by the floor", DegeneracyWarning, stacklevel=2)
    if q.weights is None:
        # identity bypass: f is the identity, so L = 1
        c1, c2, heads, core = 0.0, 1.0, [], 1.0
    else:
        c1, c2, heads = compute_constants(q.cfg, q.weights, q.c1_variant)
        core = lipschitz_core(q.cfg.d, c1, c2)
    s = strategy_factor(q.stats, kind, q.v_is_variance)
    raw = s * (q.epsilon / q.sigma) * core
    notes = [f"c1 variant: {q.c1_variant}", "scale sums run over the d channels"]
    if q.weights is None:
        notes.append("identity bypass: encoder skipped, L = 1")
    if kind == "none":
        notes.append("S = 1 for the identity preprocessing is a derived extension")
    if q.v_is_variance:
        notes.append("scale v read as a variance")
    if raw >= 1.0:
        notes.append("gamma_raw >= 1: the bound is vacuous")
    return BoundReport(c1, c2, core, s, raw, min(1.0, raw), heads, notes)


# --------------------------------------------------------------------------
# Monte-Carlo machinery

def wilson_ci(successes: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("n must be positive")
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # clamping to p keeps lo <= p <= hi when round-off leaves the centre off by an ulp
    return max(0.0, min(p, centre - half)), min(1.0, max(p, centre + half))


@dataclass(frozen=True)
class ExpressivityEstimate:
    p_hat: float
    samples: int
    wilson_ci: tuple[float, float]
    max_ratio: float
    seed: int

    @property
    def standard_error(self) -> float:
        return math.sqrt(self.p_hat * (1.0 - self.p_hat) / self.samples)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["wilson_ci"] = list(self.wilson_ci)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


class _Pipeline:
    """Raw series -> normalised tokens -> pooled encoder output.

    ``normalizer`` is either a fitted normalizer applied to every series, or
    a strategy fitted separately on each clean series; the perturbed copy of a
    series reuses the statistics of its clean original.
    """

    def __init__(self, cfg, weights, normalizer, dataset, v_is_variance=False):
        raw = dataset.values_array() if isinstance(dataset, Dataset) else np.asarray(dataset, float)
        if raw.ndim != 3 or raw.shape[0] == 0:
            raise ValueError("dataset must contain at least one series")
        if cfg is not None and (raw.shape[1] != cfg.d or raw.shape[2] != cfg.n):
            raise ValueError(f"series shape {raw.shape[1:]} does not match (d, n) = ({cfg.d}, {cfg.n})")
        self.cfg, self.weights, self.raw = cfg, weights, raw
        N, C, _ = raw.shape
        if isinstance(normalizer, FittedNormalizer):
            self.fixed = normalizer
            self.per_instance = None
            self.kind = normalizer.strategy.kind
            s = strategy_factor(normalizer, self.kind, v_is_variance) if self._bounded() else np.nan
            self.factors = np.full(N, s)
        else:
            self.fixed = None
            self.kind = NormStrategy.parse(normalizer).kind
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegeneracyWarning)
                self.per_instance = [fit(self.kind, raw[i], "instance") for i in range(N)]
            self.factors = np.array([
                strategy_factor(st, self.kind, v_is_variance) if self._bounded() else np.nan
                for st in self.per_instance])
            if self.kind != "quantile":
                aff = [st.affine() for st in self.per_instance]
                self.shift = np.stack([a[0] for a in aff])
                self.scale = np.stack([a[1] for a in aff])

    def _bounded(self) -> bool:
        return self.kind in ("none", "standard_instance", "standard_global",
                             "minmax_instance", "minmax_global")

    def normalise(self, values: np.ndarray, idx: np.ndarray) -> np.ndarray:
        if self.fixed is not None:
            return apply(self.fixed, values)
        if self.kind == "quantile":
            return np.stack([apply(self.per_instance[i], v) for i, v in zip(idx, values)])
        return (values - self.shift[idx][:, :, None]) / self.scale[idx][:, :, None]

    def features(self, tokens: np.ndarray, chunk: int = 2048) -> np.ndarray:
        """``f`` on a batch of ``(B, n, d)`` normalised token matrices."""
        if self.weights is None:
            return tokens.reshape(tokens.shape[0], -1)
        out = [representation(self.cfg, self.weights, tokens[s:s + chunk])
               for s in range(0, tokens.shape[0], chunk)]
        return np.concatenate(out)


def _draws(raw: np.ndarray, epsilon: float, count: int, base: RngStream, k: int = 1):
    """Per-sample instance index and ``k`` ball offsets, one stream per sample."""
    N = raw.shape[0]
    shape = raw.shape[1:]
    size = int(np.prod(shape))
    idx = np.empty(count, dtype=np.int64)
    offs = np.empty((count, k, *shape))
    for i in range(count):
        gen = base.child(i).generator()
        idx[i] = gen.integers(N)
        direction = gen.standard_normal((k, size))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = epsilon * gen.random(k) ** (1.0 / size)
        offs[i] = (direction * radius[:, None]).reshape((k, *shape))
    return idx, offs


def _as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    return RngStream(int(rng), 0)


def _pair_distances(pipe: _Pipeline, idx, offs, perturb: str):
    """Feature distances and input distances for each (sample, offset)."""
    count, k = offs.shape[:2]
    clean_raw = pipe.raw[idx]
    rep_idx = np.repeat(idx, k)
    if perturb == "raw":
        clean = pipe.normalise(clean_raw, idx)
        pert = pipe.normalise(np.repeat(clean_raw, k, axis=0) + offs.reshape(count * k, *offs.shape[2:]),
                              rep_idx)
        in_dist = np.linalg.norm(offs.reshape(count * k, -1), axis=1)
    elif perturb == "normalized":
        clean = pipe.normalise(clean_raw, idx)
        pert = np.repeat(clean, k, axis=0) + offs.reshape(count * k, *offs.shape[2:])
        in_dist = np.linalg.norm(offs.reshape(count * k, -1), axis=1)
    else:
        raise ValueError("perturb must be 'raw' or 'normalized'")
    clean_tok = np.swapaxes(clean, 1, 2)
    pert_tok = np.swapaxes(pert, 1, 2)
    fc = pipe.features(clean_tok)
    fp = pipe.features(pert_tok)
    dist = np.linalg.norm(fp - np.repeat(fc, k, axis=0), axis=1)
    return dist.reshape(count, k), in_dist.reshape(count, k), clean_tok, pert_tok.reshape(count, k, *pert_tok.shape[1:])


def estimate_expressivity(cfg: ModelConfig | None, weights: ModelWeights | None, normalizer,
                          dataset, epsilon: float, sigma: float, samples: int = 10_000,
                          rng=0, mode: str = "pair", k: int = 8,
                          perturb: str = "raw") -> ExpressivityEstimate:
    """Estimate ``P[ ||f(X~) - f(X)|| > sigma ]`` with ``X~`` uniform in the epsilon-ball.

    ``X`` is drawn uniformly from ``dataset`` and ``f`` is the mean-pooled
    encoder output; ``weights=None`` bypasses the encoder so ``f`` is the
    identity on normalised inputs. In ``"max-of-k"`` mode each ``X`` counts
    once, using its largest distance over ``k`` perturbations.
    """
    if samples < 100:
        raise ValueError("samples must be >= 100")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    base = _as_stream(rng)
    pipe = _Pipeline(cfg, weights, normalizer, dataset)
    kk = 1 if mode == "pair" else k
    idx, offs = _draws(pipe.raw, epsilon, samples, base, kk)
    dist, in_dist, _, _ = _pair_distances(pipe, idx, offs, perturb)
    hits = int(np.sum(dist.max(axis=1) > sigma))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(in_dist > 0, dist / in_dist, 0.0)
    return ExpressivityEstimate(hits / samples, samples, wilson_ci(hits, samples),
                                float(ratios.max()), base.seed)


class ScanResult(NamedTuple):
    max_ratio: float
    violations: int
    evaluated: int
    excluded: int


def _token_std_min(tokens: np.ndarray) -> np.ndarray:
    return tokens.std(axis=-1).min(axis=-1)


def lipschitz_scan(cfg: ModelConfig | None, weights: ModelWeights | None, normalizer, dataset,
                   epsilon: float, pairs: int, rng=0, lipschitz: float | None = None,
                   exclude_std: float = DEGENERATE_TOKEN_STD,
                   perturb: str = "raw") -> ScanResult:
    """Check ``||f(X~) - f(X)|| / ||X~ - X||_F <= S * L`` on sampled pairs.

    ``L`` is computed from the weights unless ``lipschitz`` overrides it (the
    identity bypass uses ``L = 1``). ``S`` comes from the statistics applied
    to each pair; it is 1 when perturbing after normalisation. Pairs in which
    a normalised token of ``X`` or ``X~`` has standard deviation below
    ``exclude_std`` are skipped: bare layer norm is not uniformly Lipschitz
    near constant tokens.
    """
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    base = _as_stream(rng)
    pipe = _Pipeline(cfg, weights, normalizer, dataset)
    if not pipe._bounded():
        raise UnsupportedError(f"no expressivity bound for strategy {pipe.kind!r}")
    if lipschitz is None:
        if weights is None:
            lipschitz = 1.0
        else:
            c1, c2, _ = compute_constants(cfg, weights)
            lipschitz = lipschitz_core(cfg.d, c1, c2)
    idx, offs = _draws(pipe.raw, epsilon, pairs, base, 1)
    dist, in_dist, clean_tok, pert_tok = _pair_distances(pipe, idx, offs, perturb)
    dist, in_dist = dist[:, 0], in_dist[:, 0]
    keep = in_dist > 0
    if exclude_std > 0:
        keep &= _token_std_min(clean_tok) >= exclude_std
        keep &= _token_std_min(pert_tok[:, 0]) >= exclude_std
    s = pipe.factors[idx] if perturb == "raw" else np.ones(pairs)
    ratios = dist[keep] / in_dist[keep]
    limit = s[keep] * lipschitz
    # relative slack absorbs round-off when the bound is tight (identity bypass)
    violations = int(np.sum(ratios > limit * (1.0 + 1e-9)))
    return ScanResult(float(ratios.max()) if ratios.size else 0.0, violations,
                      int(keep.sum()), int(pairs - keep.sum()))
