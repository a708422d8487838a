"""Exact t-SNE over network embeddings.

Plain O(n^2) implementation: Gaussian input affinities calibrated to a
target perplexity by per-point bisection on the log-precision, symmetrised,
then gradient descent with momentum on KL(P || Q) where Q uses a Student-t
kernel with one degree of freedom. No gains heuristic, no Barnes-Hut.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericError, ValidationError
from .nnet.train import predict

log = logging.getLogger(__name__)

ENTROPY_TOL = 1e-5
SEARCH_STEPS = 50
_TINY = 1e-300


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 5000
    learning_rate: float = 200.0
    momentum: tuple[float, float] = (0.5, 0.8)
    momentum_switch: int = 250
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    init_std: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if not self.perplexity > 1:
            raise ValidationError("perplexity must exceed 1")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")


@dataclass
class Embedding2D:
    points: np.ndarray
    objective_trace: np.ndarray
    row_perplexity: np.ndarray = field(repr=False)
    unconverged_rows: int = 0


def pairwise_sq_distances(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    x = x - x.mean(axis=0)
    sq = np.einsum("ij,ij->i", x, x)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _row_entropy(dist: np.ndarray, beta: np.ndarray):
    """Entropy (nats) and normalised kernel rows for precisions ``beta``."""
    k = np.exp(-dist * beta[:, None])
    total = np.maximum(k.sum(axis=1), _TINY)
    h = np.log(total) + beta * (dist * k).sum(axis=1) / total
    return h, k / total[:, None]


def perplexity_search(sq_dist: np.ndarray, perplexity: float, tol: float = ENTROPY_TOL, max_steps: int = SEARCH_STEPS):
    """Per-row bisection on log-precision.

    Returns ``(P_conditional, achieved_perplexity, converged_mask)``.
    """
    n = len(sq_dist)
    off = ~np.eye(n, dtype=bool)
    dist = sq_dist[off].reshape(n, n - 1)
    # start from the raw scale: after the shift below, equal distances leave
    # only round-off, and its mean would give an absurd precision
    scale = dist.mean(axis=1)
    # subtracting the row minimum leaves the normalised kernel unchanged
    dist = dist - dist.min(axis=1, keepdims=True)
    log_beta = -np.log(np.where(scale > 0, scale, 1.0))
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    target = np.log(perplexity)
    h, p = _row_entropy(dist, np.exp(log_beta))
    done = np.abs(h - target) < tol
    for _ in range(max_steps):
        if done.all():
            break
        act = ~done
        too_flat = act & (h > target)  # entropy too high -> sharpen kernel
        too_sharp = act & ~too_flat
        lo[too_flat] = log_beta[too_flat]
        hi[too_sharp] = log_beta[too_sharp]
        log_beta = np.where(
            too_flat,
            np.where(np.isinf(hi), log_beta + 1.0, 0.5 * (log_beta + hi)),
            np.where(too_sharp, np.where(np.isinf(lo), log_beta - 1.0, 0.5 * (log_beta + lo)), log_beta),
        )
        idx = np.flatnonzero(act)
        h_new, p_new = _row_entropy(dist[idx], np.exp(log_beta[idx]))
        h[idx] = h_new
        p[idx] = p_new
        done = np.abs(h - target) < tol
    full = np.zeros((n, n))
    full[off] = p.ravel()
    return full, np.exp(h), done


def conditional_affinities(features: np.ndarray, perplexity: float) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise NumericError("non-finite features")
    n = len(features)
    # n - 1 neighbours allow a perplexity of at most n - 1 (uniform rows)
    if n < perplexity + 1:
        raise ValidationError(f"need at least perplexity + 1 = {perplexity + 1} points, got {n}")
    p, _, _ = perplexity_search(pairwise_sq_distances(features), perplexity)
    return p


def symmetrize(p_conditional: np.ndarray) -> np.ndarray:
    p = np.asarray(p_conditional, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValidationError("conditional affinities must form a square matrix")
    return (p + p.T) / (2.0 * len(p))


def student_t_affinities(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Q, kernel)`` for low-dimensional points ``y``."""
    kernel = 1.0 / (1.0 + pairwise_sq_distances(y))
    np.fill_diagonal(kernel, 0.0)
    return kernel / kernel.sum(), kernel


def tsne(
    features: np.ndarray,
    config: TsneConfig = TsneConfig(),
    callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
) -> Embedding2D:
    """Embed ``features`` in 2-D.

    ``objective_trace[t]`` is KL(P || Q) at the start of iteration ``t``,
    measured against the un-exaggerated P. ``callback(t, y, q)`` sees the state
    used to compute the gradient at iteration ``t``.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValidationError("features must be an (n, d) matrix")
    if not np.all(np.isfinite(features)):
        raise NumericError("non-finite features")
    n = len(features)
    if n < config.perplexity + 1:
        raise ValidationError(f"need at least perplexity + 1 = {config.perplexity + 1} points, got {n}")

    p_cond, row_perp, converged = perplexity_search(pairwise_sq_distances(features), config.perplexity)
    if not converged.all():
        log.warning("perplexity search hit the step cap for %d rows", int((~converged).sum()))
    p = np.maximum(symmetrize(p_cond), 1e-12)
    np.fill_diagonal(p, 0.0)
    p /= p.sum()
    eye = np.eye(n)
    p_log_p = float(np.sum(p * np.log(p + eye)))

    rng = np.random.default_rng(config.seed)
    y = rng.normal(0.0, config.init_std, size=(n, 2))
    step = np.zeros_like(y)
    trace = np.empty(config.iterations)
    for it in range(config.iterations):
        q, kernel = student_t_affinities(y)
        if callback is not None:
            callback(it, y, q)
        exag = config.exaggeration if it < config.exaggeration_iters else 1.0
        w = (exag * p - q) * kernel
        grad = 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)
        mom = config.momentum[0] if it < config.momentum_switch else config.momentum[1]
        step = mom * step - config.learning_rate * grad
        y = y + step
        y -= y.mean(axis=0)
        trace[it] = p_log_p - float(np.sum(p * np.log(q + eye)))
    if not np.all(np.isfinite(y)):
        raise NumericError("t-SNE diverged")
    return Embedding2D(y, trace, row_perp, int((~converged).sum()))


def extract_embeddings(net, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Global-average-pooling activations for each image, in input order."""
    _, feats = predict(net, images, batch_size)
    return feats


def subsample(n: int, size: int, seed: int) -> np.ndarray:
    """Sorted random subset of ``range(n)``; clamps ``size`` to ``n``."""
    if size >= n:
        if size > n:
            log.warning("requested %d points but only %d available; clamping to all", size, n)
        return np.arange(n)
    return np.sort(np.random.default_rng([seed, 0xE3B]).choice(n, size=size, replace=False))


EMBED_HEADER = ("item_index", "x", "y") + tuple(f"q{i}" for i in range(6))


def write_embedding_table(path, item_index, points, labels) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EMBED_HEADER[:3] + tuple(f"q{i}" for i in range(labels.shape[1])))
        for idx, (x, y), q in zip(item_index, points, labels):
            writer.writerow([int(idx), f"{x:.6f}", f"{y:.6f}"] + [f"{v:.6f}" for v in q])
