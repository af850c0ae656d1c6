"""Dense float64 primitives: products, norms, row-wise transforms, sampling.

Matrices are plain ``numpy.ndarray`` objects. Row-wise helpers accept any
leading batch dimensions and operate on the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, NumericError, ShapeError

SPECTRAL_TOL = 1e-8
SPECTRAL_MAX_ITERS = 1000
LAYER_NORM_EPS = 1e-5


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Return ``values`` as a finite 2-D float64 array or raise."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} contains non-finite entries", stage=name)
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("matrix product overflowed", stage="matmul")
    return out


def _orthonormalise(q: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt on a few columns; a collapsed column is replaced
    by the unit vector least represented in the span so far."""
    q = q.copy()
    for j in range(q.shape[1]):
        for i in range(j):
            q[:, j] -= (q[:, i] @ q[:, j]) * q[:, i]
        nrm = np.linalg.norm(q[:, j])
        if nrm <= 1e-12:
            e = np.zeros(q.shape[0])
            e[int(np.argmin(np.sum(q[:, :j] ** 2, axis=1)))] = 1.0
            for i in range(j):
                e -= (q[:, i] @ e) * q[:, i]
            q[:, j], nrm = e, np.linalg.norm(e)
        q[:, j] /= nrm
    return q


def spectral_norm(w: np.ndarray, tol: float = SPECTRAL_TOL,
                  max_iters: int = SPECTRAL_MAX_ITERS) -> float:
    """Largest singular value of ``w`` by block power iteration on ``w.T @ w``.

    A block of up to three vectors is iterated and the top Ritz pair of the
    block is checked, so nearly equal leading singular values do not stall
    convergence the way single-vector iteration does. The start block holds
    the largest-norm row of ``w`` followed by unit vectors, so the result is
    deterministic. The iterated operator is squared after every step, so
    step ``k`` applies ``(w.T @ w) ** (2 ** k)``. Iteration stops once the eigen-residual of ``w.T @ w``
    drops below ``tol`` relative to the Ritz value; the singular value error
    is then far below ``tol``.

    Raises
    ------
    ConvergenceError
        If ``max_iters`` iterations pass without meeting ``tol``.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.size == 0:
        raise ShapeError(f"spectral_norm needs a non-empty matrix, got shape {w.shape}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    row_norms = np.linalg.norm(w, axis=1)
    if row_norms.max() == 0.0:
        return 0.0
    # iterate on the smaller Gram matrix; both share the nonzero spectrum
    if w.shape[0] < w.shape[1]:
        gram, v0 = w @ w.T, w[:, int(np.argmax(np.linalg.norm(w, axis=0)))]
    else:
        gram, v0 = w.T @ w, w[int(np.argmax(row_norms))]
    n = gram.shape[0]
    block = min(3, n)
    q = np.zeros((n, block))
    q[:, 0] = v0
    q[np.arange(1, block), np.arange(1, block)] = 1.0
    q = _orthonormalise(q)
    power = gram / np.linalg.norm(gram)
    gap = np.inf
    for _ in range(max_iters):
        aq = gram @ q
        # Rayleigh-Ritz on the block
        evals, evecs = np.linalg.eigh(q.T @ aq)
        lam = float(evals[-1])
        if lam <= 0.0:
            return 0.0
        top = evecs[:, -1]
        gap = float(np.linalg.norm(aq @ top - lam * (q @ top))) / lam
        if gap <= tol:
            return float(np.sqrt(lam))
        q = _orthonormalise(power @ q)
        # repeated squaring: step k applies gram**(2**k)
        power = power @ power
        power /= np.linalg.norm(power)
    raise ConvergenceError(
        f"power iteration did not converge in {max_iters} iterations (residual {gap:.3e})", gap
    )


def softmax_rows(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        raise ShapeError("softmax_rows needs a non-empty array")
    z = m - m.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm_rows(m: np.ndarray, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    """Map each row to ``(row - mean) / sqrt(var + eps)`` (population variance)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    m = np.asarray(m, dtype=np.float64)
    centered = m - m.mean(axis=-1, keepdims=True)
    centered -= centered.mean(axis=-1, keepdims=True)  # second pass removes round-off in the mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    return centered / np.sqrt(var + eps)


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by Philox, so draws depend only on the key and are identical
    across platforms and worker layouts.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream_id & 0xFFFFFFFFFFFFFFFF],
                       dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, stream_id: int) -> "RngStream":
        """Derive an independent stream for sub-task ``stream_id``."""
        # mix so that child(i) of one stream never equals child(j) of another
        mixed = (self.stream_id * 0x9E3779B97F4A7C15 + stream_id + 1) & 0xFFFFFFFFFFFFFFFF
        return RngStream(self.seed, mixed)


def sample_in_frobenius_ball(center: np.ndarray, epsilon: float,
                             rng: RngStream | np.random.Generator) -> np.ndarray:
    """Draw uniformly from ``{Y : ||Y - center||_F <= epsilon}``."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    center = np.asarray(center, dtype=np.float64)
    if epsilon == 0:
        return center.copy()
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    direction = gen.standard_normal(center.shape)
    norm = np.linalg.norm(direction)
    u = gen.random()
    radius = epsilon * u ** (1.0 / center.size)
    return center + direction * (radius / norm)


def ball_offsets(shape: tuple[int, ...], epsilon: float, count: int,
                 gen: np.random.Generator) -> np.ndarray:
    """``count`` independent uniform draws from the centred ``epsilon``-ball."""
    size = int(np.prod(shape))
    direction = gen.standard_normal((count, size))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = epsilon * gen.random(count) ** (1.0 / size)
    return (direction * radius[:, None]).reshape((count, *shape))
