"""Hand-derived backward pass, finite-difference checking, Adam and training."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericError, TrainingError
from .linalg import RngStream
from .model import ForwardTrace, ModelConfig, ModelWeights, encoder_forward, init_weights, pooled_output

LOSSES = ("cross_entropy", "squared_error")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 100
    patience: int = 10
    batch_size: int | None = None
    seed: int = 0
    loss: str = "cross_entropy"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_scale: float = 1.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.patience <= self.epochs:
            raise ValueError("patience must lie in [0, epochs]")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")


# --------------------------------------------------------------------------
# losses

def _loss_head(kind: str, out: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-instance losses and d(mean loss)/d(out)."""
    B = out.shape[0]
    if kind == "cross_entropy":
        shifted = out - out.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - logz
        idx = np.asarray(y, dtype=np.int64)
        per = -logp[np.arange(B), idx]
        dout = np.exp(logp)
        dout[np.arange(B), idx] -= 1.0
        return per, dout / B
    if kind == "squared_error":
        diff = out - np.asarray(y, dtype=np.float64).reshape(out.shape)
        per = np.mean(diff * diff, axis=1)
        return per, 2.0 * diff / diff.size
    raise ValueError(f"unknown loss {kind!r}")


def _ln_backward(dn: np.ndarray, normed: np.ndarray, inv: np.ndarray) -> np.ndarray:
    # exact gradient of (x - mean) / sqrt(var + eps), eps included
    return inv * (dn - dn.mean(axis=-1, keepdims=True)
                  - normed * np.mean(dn * normed, axis=-1, keepdims=True))


def backward(cfg: ModelConfig, w: ModelWeights, trace: ForwardTrace, dout: np.ndarray) -> ModelWeights:
    """Gradients of a scalar loss given ``dout = dL/d(head output)`` of shape ``(B, out)``."""
    g = w.zeros_like()
    pooled = trace.output.mean(axis=1)
    g["head_w"] = pooled.T @ dout
    g["head_b"] = dout.sum(axis=0)
    B, n, d = trace.output.shape
    dz = np.broadcast_to((dout @ w["head_w"].T)[:, None, :] / n, (B, n, d)).copy()
    H, dh = cfg.heads, cfg.head_dim
    scale = 1.0 / np.sqrt(dh)
    for i in reversed(range(cfg.layers)):
        c = trace.layers[i]
        lw = w.layer(i)
        p = f"layer{i}."
        # second layer norm
        if cfg.ln_affine:
            g[p + "ln2_g"] = np.einsum("bnd,bnd->d", dz, c["n2"])
            g[p + "ln2_b"] = dz.sum(axis=(0, 1))
            dn2 = dz * lw["ln2_g"]
        else:
            dn2 = dz
        dr2 = _ln_backward(dn2, c["n2"], c["inv2"])
        # feed-forward block
        g[p + "w2"] = np.einsum("bnm,bnd->md", c["a1"], dr2)
        g[p + "b2"] = dr2.sum(axis=(0, 1))
        da1 = dr2 @ lw["w2"].T
        if cfg.activation == "relu":
            df1 = da1 * (c["f1"] > 0)
        else:
            df1 = da1 * (1.0 - c["a1"] ** 2)
        g[p + "w1"] = np.einsum("bnd,bnm->dm", c["y"], df1)
        g[p + "b1"] = df1.sum(axis=(0, 1))
        dy = dr2 + df1 @ lw["w1"].T
        # first layer norm
        if cfg.ln_affine:
            g[p + "ln1_g"] = np.einsum("bnd,bnd->d", dy, c["n1"])
            g[p + "ln1_b"] = dy.sum(axis=(0, 1))
            dn1 = dy * lw["ln1_g"]
        else:
            dn1 = dy
        dr1 = _ln_backward(dn1, c["n1"], c["inv1"])
        # multi-head attention
        g[p + "wo"] = np.einsum("bnd,bne->de", c["concat"], dr1)
        dconcat = dr1 @ lw["wo"].T
        dheads = np.swapaxes(dconcat.reshape(B, n, H, dh), 1, 2)
        P = c["p"]
        dP = dheads @ np.swapaxes(c["v"], -1, -2)
        dv = np.swapaxes(P, -1, -2) @ dheads
        dS = P * (dP - np.sum(dP * P, axis=-1, keepdims=True)) * scale
        dq = dS @ c["k"]
        dk = np.swapaxes(dS, -1, -2) @ c["q"]
        x = c["x"]
        g[p + "wq"] = np.einsum("bnd,bhne->hde", x, dq)
        g[p + "wk"] = np.einsum("bnd,bhne->hde", x, dk)
        g[p + "wv"] = np.einsum("bnd,bhne->hde", x, dv)
        dz = (dr1
              + np.einsum("bhne,hde->bnd", dq, lw["wq"])
              + np.einsum("bhne,hde->bnd", dk, lw["wk"])
              + np.einsum("bhne,hde->bnd", dv, lw["wv"]))
    return g


def batch_loss(cfg: ModelConfig, w: ModelWeights, x: np.ndarray, y: np.ndarray, loss_kind: str) -> float:
    _, trace = encoder_forward(cfg, w, x)
    out = pooled_output(cfg, trace, w)
    per, _ = _loss_head(loss_kind, out, y)
    return float(per.mean())


def loss_and_grad(cfg: ModelConfig, w: ModelWeights, batch: tuple[np.ndarray, np.ndarray],
                  loss_kind: str = "cross_entropy") -> tuple[float, ModelWeights]:
    """Mean loss over ``batch = (x, y)`` and its exact gradient for every tensor.

    ``x`` is ``(B, n, d)``; ``y`` holds class indices for cross-entropy or
    ``(B, output_dim)`` targets for the squared error.
    """
    x, y = batch
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
        y = np.asarray(y)[None] if np.ndim(y) else np.array([y])
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    _, trace = encoder_forward(cfg, w, x)
    out = pooled_output(cfg, trace, w)
    per, dout = _loss_head(loss_kind, out, y)
    bad = np.flatnonzero(~np.isfinite(per))
    if bad.size:
        raise NumericError(f"non-finite loss for instance {int(bad[0])}", stage="loss",
                           index=int(bad[0]))
    return float(per.mean()), backward(cfg, w, trace, dout)


# --------------------------------------------------------------------------
# finite-difference verification

@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tol: float
    floor: float

    @property
    def failing(self) -> list[str]:
        return [k for k, v in self.max_rel_error.items() if not v < self.tol]

    @property
    def passed(self) -> bool:
        return not self.failing

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values())


def grad_check(cfg: ModelConfig, w: ModelWeights, batch, h: float = 1e-5,
               loss_kind: str = "cross_entropy", tol: float = 1e-4, floor: float = 1e-7,
               analytic: ModelWeights | None = None) -> GradCheckReport:
    """Compare analytic gradients with central differences, tensor by tensor.

    The relative error of an entry is ``|a - f| / max(|a|, |f|, floor)``;
    ``floor`` keeps entries whose true gradient is ~0 from dividing round-off
    by round-off. Pass ``analytic`` to check externally supplied gradients.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x, y = batch
    if analytic is None:
        _, analytic = loss_and_grad(cfg, w, batch, loss_kind)
    probe = w.copy()
    errors = {}
    for name, arr in probe.items():
        worst = 0.0
        flat = arr.reshape(-1)
        agrad = analytic[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp = batch_loss(cfg, probe, x, y, loss_kind)
            flat[j] = orig - h
            lm = batch_loss(cfg, probe, x, y, loss_kind)
            flat[j] = orig
            num = (lp - lm) / (2 * h)
            denom = max(abs(agrad[j]), abs(num), floor)
            worst = max(worst, abs(agrad[j] - num) / denom)
        errors[name] = worst
    return GradCheckReport(errors, tol, floor)


# --------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: ModelWeights
    v: ModelWeights
    t: int = 0

    @classmethod
    def fresh(cls, w: ModelWeights) -> "AdamState":
        return cls(w.zeros_like(), w.zeros_like(), 0)


def adam_step(w: ModelWeights, g: ModelWeights, state: AdamState, t: int,
              cfg: TrainConfig) -> tuple[ModelWeights, AdamState]:
    """One bias-corrected Adam update; returns new weights and state."""
    if t < 1:
        raise ValueError("step index t starts at 1")
    b1, b2 = cfg.beta1, cfg.beta2
    new_w, new_m, new_v = {}, {}, {}
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, val in w.items():
        grad = g[name]
        m = b1 * state.m[name] + (1.0 - b1) * grad
        v = b2 * state.v[name] + (1.0 - b2) * grad * grad
        new_m[name] = m
        new_v[name] = v
        new_w[name] = val - cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return ModelWeights(new_w), AdamState(ModelWeights(new_m), ModelWeights(new_v), t)


# --------------------------------------------------------------------------
# training loop

@dataclass
class Split:
    """Model-ready arrays for one data split.

    ``y`` is class indices or normalised targets ``(B, output_dim)``. For
    forecasting, ``decode`` maps normalised predictions back to original
    units and ``y_raw`` holds the original-unit targets, so the metric is MAE
    in the data's own scale.
    """

    x: np.ndarray
    y: np.ndarray
    y_raw: np.ndarray | None = None
    decode: Callable[[np.ndarray], np.ndarray] | None = None

    def __len__(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_metric: float
    elapsed_ms: float


def predict(cfg: ModelConfig, w: ModelWeights, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
    outs = []
    for s in range(0, x.shape[0], chunk):
        _, trace = encoder_forward(cfg, w, x[s:s + chunk])
        outs.append(pooled_output(cfg, trace, w))
    return np.concatenate(outs)


def evaluate(cfg: ModelConfig, w: ModelWeights, split: Split) -> float:
    """Accuracy for classification, original-unit MAE for forecasting."""
    return _score(cfg, predict(cfg, w, split.x), split)


def _score(cfg: ModelConfig, out: np.ndarray, split: Split) -> float:
    if cfg.task == "classification":
        return float(np.mean(np.argmax(out, axis=1) == split.y))
    pred = split.decode(out) if split.decode is not None else out
    truth = split.y_raw if split.y_raw is not None else split.y
    return float(np.mean(np.abs(pred - truth.reshape(pred.shape))))


def _better(task: str, new: tuple[float, float], best: tuple[float, float] | None) -> bool:
    """Compare ``(metric, loss)`` pairs; accuracy ties fall back to the loss."""
    if best is None:
        return True
    if task == "classification":
        return new[0] > best[0] or (new[0] == best[0] and new[1] < best[1])
    return new[0] < best[0]


@dataclass
class TrainResult:
    weights: ModelWeights
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0


def train(cfg: ModelConfig, tcfg: TrainConfig, train_set: Split, val_set: Split,
          initial: ModelWeights | None = None) -> tuple[ModelWeights, list[EpochRecord]]:
    """Adam training with early stopping on the validation metric.

    Training stops once ``patience`` consecutive epochs pass without a new
    best validation metric (so ``patience=0`` runs exactly one epoch). Equal
    accuracies count as an improvement when the validation loss drops, since
    accuracy alone stays flat for long stretches on small validation sets.
    The returned weights are those of the best epoch, not the last.

    Raises
    ------
    TrainingError
        If the training loss becomes non-finite; carries the epoch index.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation splits must be non-empty")
    w = initial.copy() if initial is not None else init_weights(cfg, tcfg.seed, tcfg.init_scale)
    state = AdamState.fresh(w)
    gen = RngStream(tcfg.seed, 1).generator()
    N = len(train_set)
    bs = tcfg.batch_size or N
    best: tuple[float, float] | None = None
    best_w = w.copy()
    stale = 0
    history: list[EpochRecord] = []
    t0 = time.perf_counter()
    step = 0
    for epoch in range(1, tcfg.epochs + 1):
        order = gen.permutation(N) if bs < N else np.arange(N)
        losses, sizes = [], []
        for s in range(0, N, bs):
            idx = order[s:s + bs]
            try:
                loss, g = loss_and_grad(cfg, w, (train_set.x[idx], train_set.y[idx]), tcfg.loss)
            except NumericError as exc:
                raise TrainingError(f"training diverged at epoch {epoch}: {exc}", epoch) from exc
            step += 1
            w, state = adam_step(w, g, state, step, tcfg)
            losses.append(loss)
            sizes.append(idx.size)
        train_loss = float(np.average(losses, weights=sizes))
        if not np.isfinite(train_loss):
            raise TrainingError(f"training loss is not finite at epoch {epoch}", epoch)
        try:
            out = predict(cfg, w, val_set.x)
            metric = _score(cfg, out, val_set)
            val_loss = float(_loss_head(tcfg.loss, out, val_set.y)[0].mean())
        except NumericError as exc:
            raise TrainingError(f"validation failed at epoch {epoch}: {exc}", epoch) from exc
        history.append(EpochRecord(epoch, train_loss, metric, (time.perf_counter() - t0) * 1e3))
        if _better(cfg.task, (metric, val_loss), best):
            best = (metric, val_loss)
            best_w = w.copy()
            stale = 0
        else:
            stale += 1
        if stale >= tcfg.patience:
            break
    return best_w, history


def history_to_csv(history: list[EpochRecord]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["epoch", "train_loss", "val_metric", "elapsed_ms"])
    for rec in history:
        wr.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_metric), f"{rec.elapsed_ms:.3f}"])
    return buf.getvalue()
