"""Shifted cosine similarity and its gradient, vectorized over rows."""
from __future__ import annotations

import numpy as np

# Norms below this are treated as zero vectors; their similarity is the neutral 1.0.
NORM_EPS = 1e-12


def shifted_cosine(a, b) -> float:
    """``1 + cos(a, b)``, in [0, 2]. Returns 1.0 if either vector is (near) zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < NORM_EPS or nb < NORM_EPS:
        return 1.0
    cos = float(a @ b) / (na * nb)
    return 1.0 + min(1.0, max(-1.0, cos))


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=-1)
    safe = norms >= NORM_EPS
    inv = np.where(safe, 1.0 / np.where(safe, norms, 1.0), 0.0)
    return x * inv[..., None], inv


class SimCache:
    __slots__ = ("a_hat", "b_hat", "a_inv", "b_inv", "cos")

    def __init__(self, a_hat, b_hat, a_inv, b_inv, cos):
        self.a_hat = a_hat
        self.b_hat = b_hat
        self.a_inv = a_inv
        self.b_inv = b_inv
        self.cos = cos


def similarity_matrix(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, SimCache]:
    """Pairwise shifted cosine between rows of ``a`` (n, d) and ``b`` (L, d).

    Returns the (n, L) similarity matrix and a cache for :func:`similarity_backward`.
    """
    a_hat, a_inv = _unit_rows(a)
    b_hat, b_inv = _unit_rows(b)
    cos = np.clip(a_hat @ b_hat.T, -1.0, 1.0)
    return 1.0 + cos, SimCache(a_hat, b_hat, a_inv, b_inv, cos)


def similarity_backward(cache: SimCache, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients w.r.t. ``a`` and ``b`` given ``grad`` = dL/dsim of shape (n, L).

    Uses d cos(a,b)/da = (b_hat - cos * a_hat) / |a|. Zero-norm rows get zero gradient.
    """
    gc = grad * cache.cos
    ga = (grad @ cache.b_hat - gc.sum(axis=1)[:, None] * cache.a_hat) * cache.a_inv[:, None]
    gb = (grad.T @ cache.a_hat - gc.sum(axis=0)[:, None] * cache.b_hat) * cache.b_inv[:, None]
    return ga, gb


def similarity_vector(x, prototypes) -> np.ndarray:
    """Shifted cosine of one vector ``x`` against every row of ``prototypes``."""
    x = np.asarray(x, dtype=np.float64)
    prototypes = np.asarray(prototypes, dtype=np.float64)
    if prototypes.ndim != 2 or x.ndim != 1 or prototypes.shape[1] != x.shape[0]:
        raise ValueError(
            f"dimension mismatch: vector of shape {x.shape} vs prototypes {prototypes.shape}"
        )
    sim, _ = similarity_matrix(x[None, :], prototypes)
    return sim[0]
