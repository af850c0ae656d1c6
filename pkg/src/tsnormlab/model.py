"""Post-norm multi-head self-attention encoder with mean pooling and a task head.

One encoder block computes::

    Y = LayerNorm(X + MH(X))
    Z = LayerNorm(Y + FFN(Y)),   FFN(Y) = act(Y W1 + b1) W2 + b2

and the head maps ``mean_t Z[t]`` to class logits or forecast values.
All forward functions accept a single ``(n, d)`` token matrix or a batch
``(B, n, d)``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import NumericError, ShapeError
from .linalg import LAYER_NORM_EPS, RngStream, softmax_rows

ACTIVATIONS = ("relu", "tanh")
TASKS = ("classification", "forecast")


@dataclass(frozen=True)
class ModelConfig:
    n: int
    d: int
    heads: int = 1
    ff_width: int = 8
    layers: int = 1
    positional_encoding: bool = False
    activation: str = "relu"
    task: str = "classification"
    n_classes: int = 2
    horizon: int = 1
    ln_affine: bool = False
    ln_eps: float = LAYER_NORM_EPS

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.d < 2:
            raise ValueError("token dimension d must be >= 2")
        if self.heads < 1 or self.d % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide d ({self.d})")
        if self.ff_width < 1 or self.layers < 1:
            raise ValueError("ff_width and layers must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.task == "classification" and self.n_classes < 2:
            raise ValueError("classification needs at least 2 classes")
        if self.task == "forecast" and self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    @property
    def output_dim(self) -> int:
        return self.n_classes if self.task == "classification" else self.horizon * self.d

    def tensor_shapes(self) -> list[tuple[str, tuple[int, ...], int]]:
        """``(name, shape, fan_in)`` for every weight tensor in serialisation order."""
        d, h, dh, m = self.d, self.heads, self.head_dim, self.ff_width
        out = []
        for i in range(self.layers):
            p = f"layer{i}."
            out += [
                (p + "wq", (h, d, dh), d),
                (p + "wk", (h, d, dh), d),
                (p + "wv", (h, d, dh), d),
                (p + "wo", (d, d), d),
                (p + "w1", (d, m), d),
                (p + "b1", (m,), 0),
                (p + "w2", (m, d), m),
                (p + "b2", (d,), 0),
            ]
            if self.ln_affine:
                out += [(p + "ln1_g", (d,), -1), (p + "ln1_b", (d,), 0),
                        (p + "ln2_g", (d,), -1), (p + "ln2_b", (d,), 0)]
        out += [("head_w", (d, self.output_dim), d), ("head_b", (self.output_dim,), 0)]
        return out


@dataclass
class ModelWeights:
    """Named weight tensors in a fixed order (see :meth:`ModelConfig.tensor_shapes`).

    Per-head projections are stacked: ``layer0.wq[h]`` is the ``d x d/H``
    query matrix of head ``h``. Gradients use the same container.
    """

    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray):
        self.tensors[name] = value

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def copy(self) -> "ModelWeights":
        return ModelWeights({k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> "ModelWeights":
        return ModelWeights({k: np.zeros_like(v) for k, v in self.tensors.items()})

    def layer(self, i: int) -> dict[str, np.ndarray]:
        p = f"layer{i}."
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}

    def equals(self, other: "ModelWeights") -> bool:
        return list(self.tensors) == list(other.tensors) and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors)


Gradients = ModelWeights


def check_weights(cfg: ModelConfig, w: ModelWeights):
    expected = cfg.tensor_shapes()
    if [name for name, _, _ in expected] != list(w.tensors):
        raise ShapeError("weight tensor names do not match the model config")
    for name, shape, _ in expected:
        if w[name].shape != shape:
            raise ShapeError(f"{name} has shape {w[name].shape}, expected {shape}")
        if not np.all(np.isfinite(w[name])):
            raise NumericError(f"{name} has non-finite entries", stage=name)


def init_weights(cfg: ModelConfig, seed: int, scale: float = 1.0) -> ModelWeights:
    """Gaussian init with variance ``scale**2 / fan_in``; biases zero, LN gains one."""
    if scale < 0:
        raise ValueError("scale must be non-negative")
    gen = RngStream(seed, 0).generator()
    tensors = {}
    for name, shape, fan_in in cfg.tensor_shapes():
        if fan_in > 0:
            tensors[name] = gen.standard_normal(shape) * (scale / np.sqrt(fan_in))
        elif fan_in < 0:
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return ModelWeights(tensors)


def zero_weights(cfg: ModelConfig) -> ModelWeights:
    return init_weights(cfg, 0, 0.0)


def unit_weights(cfg: ModelConfig) -> ModelWeights:
    """Every matrix a rectangular identity (spectral norm 1); biases zero."""
    tensors = {}
    for name, shape, fan_in in cfg.tensor_shapes():
        if len(shape) == 3:
            tensors[name] = np.stack([np.eye(shape[1], shape[2]) for _ in range(shape[0])])
        elif len(shape) == 2:
            tensors[name] = np.eye(*shape)
        else:
            tensors[name] = np.ones(shape) if fan_in < 0 else np.zeros(shape)
    return ModelWeights(tensors)


def positional_encoding(n: int, d: int) -> np.ndarray:
    """Sinusoidal encoding: ``sin`` on even columns, ``cos`` on odd columns."""
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def _act(cfg: ModelConfig, x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) if cfg.activation == "relu" else np.tanh(x)


def attention_head(x: np.ndarray, wq: np.ndarray, wk: np.ndarray, wv: np.ndarray) -> np.ndarray:
    """``softmax((X Wq)(X Wk)^T / sqrt(d_h)) (X Wv)`` for one head."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != wq.shape[0] or wq.shape != wk.shape or wq.shape[0] != wv.shape[0]:
        raise ShapeError(f"attention_head: input {x.shape} vs Wq {wq.shape}, Wk {wk.shape}, Wv {wv.shape}")
    q, k, v = x @ wq, x @ wk, x @ wv
    p = softmax_rows(q @ np.swapaxes(k, -1, -2) / np.sqrt(wq.shape[1]))
    return p @ v


@dataclass
class ForwardTrace:
    """Cached intermediates of :func:`encoder_forward` for the backward pass.

    ``layers[i]`` holds, for block ``i``: ``x`` (block input), ``q/k/v``
    ``(B, H, n, d_h)``, ``p`` attention matrices ``(B, H, n, n)``, ``concat``,
    ``r1`` (pre-LN residual), ``n1``/``inv1`` (normalised activations and
    inverse std), ``y``, ``f1`` (FFN pre-activation), ``a1``, ``r2``,
    ``n2``/``inv2`` and ``z``.
    """

    input: np.ndarray
    layers: list[dict[str, np.ndarray]]
    output: np.ndarray
    batched: bool
    pooled: np.ndarray | None = None


def _layer_norm(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    c = x - x.mean(axis=-1, keepdims=True)
    c -= c.mean(axis=-1, keepdims=True)  # second pass removes round-off in the mean
    inv = 1.0 / np.sqrt(np.mean(c * c, axis=-1, keepdims=True) + eps)
    return c * inv, inv


def _finite(arr: np.ndarray, stage: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite activation in {stage}", stage=stage)


def encoder_forward(cfg: ModelConfig, w: ModelWeights, x: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    """Run every encoder block; returns the final token matrix and the trace."""
    check_weights(cfg, w)
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 3
    xb = x if batched else x[None]
    if xb.ndim != 3 or xb.shape[1:] != (cfg.n, cfg.d):
        raise ShapeError(f"expected input (n, d) = ({cfg.n}, {cfg.d}), got {x.shape}")
    if cfg.positional_encoding:
        xb = xb + positional_encoding(cfg.n, cfg.d)
    B, n, d = xb.shape
    H, dh = cfg.heads, cfg.head_dim
    scale = 1.0 / np.sqrt(dh)
    caches = []
    h = xb
    for i in range(cfg.layers):
        lw = w.layer(i)
        q = np.einsum("bnd,hde->bhne", h, lw["wq"])
        k = np.einsum("bnd,hde->bhne", h, lw["wk"])
        v = np.einsum("bnd,hde->bhne", h, lw["wv"])
        scores = q @ np.swapaxes(k, -1, -2) * scale
        _finite(scores, f"layer{i}.attention_scores")
        p = softmax_rows(scores)
        heads_out = p @ v
        concat = np.swapaxes(heads_out, 1, 2).reshape(B, n, d)
        r1 = h + concat @ lw["wo"]
        _finite(r1, f"layer{i}.attention_residual")
        n1, inv1 = _layer_norm(r1, cfg.ln_eps)
        y = n1 * lw["ln1_g"] + lw["ln1_b"] if cfg.ln_affine else n1
        f1 = y @ lw["w1"] + lw["b1"]
        a1 = _act(cfg, f1)
        r2 = y + a1 @ lw["w2"] + lw["b2"]
        _finite(r2, f"layer{i}.ffn_residual")
        n2, inv2 = _layer_norm(r2, cfg.ln_eps)
        z = n2 * lw["ln2_g"] + lw["ln2_b"] if cfg.ln_affine else n2
        caches.append(dict(x=h, q=q, k=k, v=v, p=p, concat=concat, r1=r1, n1=n1, inv1=inv1,
                           y=y, f1=f1, a1=a1, r2=r2, n2=n2, inv2=inv2, z=z))
        h = z
    trace = ForwardTrace(input=xb, layers=caches, output=h, batched=batched)
    return (h if batched else h[0]), trace


def pooled_output(cfg: ModelConfig, trace: ForwardTrace, w: ModelWeights) -> np.ndarray:
    """Mean-pool the encoder output over tokens, then apply the head."""
    pooled = trace.output.mean(axis=1)
    trace.pooled = pooled
    out = pooled @ w["head_w"] + w["head_b"]
    return out if trace.batched else out[0]


def forward(cfg: ModelConfig, w: ModelWeights, x: np.ndarray) -> np.ndarray:
    _, trace = encoder_forward(cfg, w, x)
    return pooled_output(cfg, trace, w)


def representation(cfg: ModelConfig, w: ModelWeights, x: np.ndarray) -> np.ndarray:
    """The mean-pooled encoder output (the representation ``f(X)`` in ``R^d``)."""
    out, _ = encoder_forward(cfg, w, x)
    return out.mean(axis=-2)


# --------------------------------------------------------------------------
# binary container: b"TSNL", u16 version, config block, float64 LE tensors

MAGIC = b"TSNL"
VERSION = 1
_CFG = struct.Struct("<IIIIIBBBIBd")


def dump_weights(cfg: ModelConfig, w: ModelWeights) -> bytes:
    check_weights(cfg, w)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    buf.write(_CFG.pack(cfg.n, cfg.d, cfg.heads, cfg.ff_width, cfg.layers,
                        int(cfg.positional_encoding), ACTIVATIONS.index(cfg.activation),
                        TASKS.index(cfg.task),
                        cfg.n_classes if cfg.task == "classification" else cfg.horizon,
                        int(cfg.ln_affine), cfg.ln_eps))
    for name, _, _ in cfg.tensor_shapes():
        buf.write(np.ascontiguousarray(w[name], dtype="<f8").tobytes())
    return buf.getvalue()


def parse_weights(blob: bytes) -> tuple[ModelConfig, ModelWeights]:
    if blob[:4] != MAGIC:
        raise ValueError("not a TSNL weight file (bad magic)")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise ValueError(f"unsupported TSNL version {version}")
    n, d, h, m, layers, pe, act, task, outp, ln_aff, ln_eps = _CFG.unpack_from(blob, 6)
    task_name = TASKS[task]
    cfg = ModelConfig(n=n, d=d, heads=h, ff_width=m, layers=layers, positional_encoding=bool(pe),
                      activation=ACTIVATIONS[act], task=task_name,
                      n_classes=outp if task_name == "classification" else 2,
                      horizon=outp if task_name == "forecast" else 1,
                      ln_affine=bool(ln_aff), ln_eps=ln_eps)
    offset = 6 + _CFG.size
    tensors = {}
    for name, shape, _ in cfg.tensor_shapes():
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(blob):
            raise ValueError(f"TSNL file truncated while reading {name}")
        tensors[name] = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(blob):
        raise ValueError("trailing bytes after last tensor")
    return cfg, ModelWeights(tensors)


def save_weights(path: str | Path, cfg: ModelConfig, w: ModelWeights):
    Path(path).write_bytes(dump_weights(cfg, w))


def load_weights(path: str | Path) -> tuple[ModelConfig, ModelWeights]:
    return parse_weights(Path(path).read_bytes())
