"""Orthogonality penalty on relation embeddings and the cosine-similarity
diagnostics used to see whether embeddings are entangled.

Embeddings are the *columns* of ``r`` (shape ``d_r x k``), so ``r.T @ r`` is
the ``k x k`` Gram matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SimilarityReport",
    "DecouplingOutcome",
    "dc_loss",
    "dc_grad",
    "similarity_matrix",
    "decoupling_experiment",
]


def _check(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.ndim != 2 or r.shape[1] < 1:
        raise ValueError(f"expected a d_r x k matrix with k >= 1, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("relation embeddings contain non-finite values")
    return r


def _masked_gram(r: np.ndarray) -> np.ndarray:
    gram = r.T @ r
    np.fill_diagonal(gram, 0.0)
    return gram


def dc_loss(r) -> float:
    """Squared Frobenius norm of the Gram matrix with its diagonal zeroed."""
    g = _masked_gram(_check(r))
    return float((g * g).sum())


def dc_grad(r) -> np.ndarray:
    """Gradient of :func:`dc_loss`: ``4 r G`` with ``G`` the masked Gram matrix."""
    r = _check(r)
    return 4.0 * r @ _masked_gram(r)


@dataclass(frozen=True)
class SimilarityReport:
    matrix: np.ndarray
    max_offdiag_abs: float
    mean_offdiag_abs: float

    def __eq__(self, other):
        if not isinstance(other, SimilarityReport):
            return NotImplemented
        return (np.array_equal(self.matrix, other.matrix)
                and self.max_offdiag_abs == other.max_offdiag_abs
                and self.mean_offdiag_abs == other.mean_offdiag_abs)


def similarity_matrix(r) -> SimilarityReport:
    """Pairwise cosine similarity of the columns of ``r``."""
    r = _check(r)
    norms = np.linalg.norm(r, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"column {int(zero[0])} has zero norm; cosine is undefined")
    unit = r / norms
    sim = unit.T @ unit
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, 1.0)
    k = sim.shape[0]
    off = np.abs(sim[~np.eye(k, dtype=bool)])
    if off.size == 0:
        return SimilarityReport(sim, 0.0, 0.0)
    return SimilarityReport(sim, float(off.max()), float(off.mean()))


@dataclass(frozen=True)
class DecouplingOutcome:
    with_dc: SimilarityReport
    without_dc: SimilarityReport
    loss_trajectory: np.ndarray  # dc_loss before each step and after the last one
    initial: np.ndarray
    final: np.ndarray


def decoupling_experiment(k: int = 32, d_r: int = 64, steps: int = 2000,
                          learning_rate: float = 0.1, lambda_dc: float = 1.0,
                          seed: int = 0) -> DecouplingOutcome:
    """Gradient descent on ``lambda_dc * dc_loss`` from a uniform[-0.1, 0.1]
    start, against a control arm that is never updated."""
    if k < 1 or d_r < 1:
        raise ValueError("k and d_r must be positive")
    if k > d_r:
        raise ValueError(f"k={k} columns cannot be mutually orthogonal in {d_r} dimensions")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    rng = np.random.default_rng(seed)
    initial = rng.uniform(-0.1, 0.1, size=(d_r, k))
    r = initial.copy()
    trajectory = np.empty(steps + 1)
    for step in range(steps):
        trajectory[step] = dc_loss(r)
        r -= learning_rate * lambda_dc * dc_grad(r)
    trajectory[steps] = dc_loss(r)
    return DecouplingOutcome(
        with_dc=similarity_matrix(r),
        without_dc=similarity_matrix(initial),
        loss_trajectory=trajectory,
        initial=initial,
        final=r,
    )
