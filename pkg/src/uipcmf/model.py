"""UIPC-MF: prototype-based matrix factorization with user/item prototype connections.

The logit for a (user, item) pair is ``sum_ij w_ij sim(u, pu_i) sim(t, pt_j)`` with
``sim`` the shifted cosine. Equivalently ``sum_j r_j * t*_j`` where ``r = u* @ W`` is
the user's preference over item prototypes.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .similarity import similarity_backward, similarity_matrix, similarity_vector

INIT_STD = 0.1


class Recommender:
    """Common plumbing for every scorer.

    Subclasses implement ``forward(users, items)`` returning ``(scores, cache)`` for
    ``users`` of shape (B,) and ``items`` of shape (B, C), and ``backward(cache, grad)``
    returning a dict of dense gradients keyed like :meth:`tensors`.
    """

    kind: ClassVar[str]
    tensor_names: ClassVar[tuple[str, ...]]
    has_prototypes: ClassVar[bool] = False
    has_preferences: ClassVar[bool] = False

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.tensor_names}

    @property
    def n_users(self) -> int:
        return self.user_embeddings.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.user_embeddings.shape[1]

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors().values())

    def copy(self):
        return copy.deepcopy(self)

    def shape(self) -> dict:
        return {"n_users": self.n_users, "n_items": self.n_items, "dim": self.dim}

    def _check_indices(self, users, items) -> None:
        users = np.asarray(users)
        items = np.asarray(items)
        if users.size and (users.min() < 0 or users.max() >= self.n_users):
            raise IndexError(f"user index out of range [0, {self.n_users})")
        if items.size and (items.min() < 0 or items.max() >= self.n_items):
            raise IndexError(f"item index out of range [0, {self.n_items})")

    def score_matrix(self, users, items) -> np.ndarray:
        """Scores for ``users`` (B,) against candidate ``items`` (B, C)."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        self._check_indices(users, items)
        return self.forward(users, items)[0]

    def score(self, u_idx: int, t_idx: int) -> float:
        return float(self.score_matrix(np.array([u_idx]), np.array([[t_idx]]))[0, 0])

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(t) for name, t in self.tensors().items()}

    def forward(self, users, items):  # pragma: no cover - abstract
        raise NotImplementedError

    def backward(self, cache, grad) -> dict[str, np.ndarray]:  # pragma: no cover
        raise NotImplementedError


def _scatter_rows(target: np.ndarray, index: np.ndarray, rows: np.ndarray) -> None:
    np.add.at(target, index, rows)


@dataclass(eq=False)
class UIPCMF(Recommender):
    user_embeddings: np.ndarray
    item_embeddings: np.ndarray
    user_prototypes: np.ndarray
    item_prototypes: np.ndarray
    connections: np.ndarray

    kind: ClassVar[str] = "uipc-mf"
    tensor_names: ClassVar[tuple[str, ...]] = (
        "user_embeddings",
        "item_embeddings",
        "user_prototypes",
        "item_prototypes",
        "connections",
    )
    has_prototypes: ClassVar[bool] = True
    has_preferences: ClassVar[bool] = True

    def __post_init__(self):
        for name in self.tensor_names:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n_up, d = self.user_prototypes.shape
        n_ip = self.item_prototypes.shape[0]
        if d < 1:
            raise ValueError("embedding size must be >= 1")
        if self.item_embeddings.shape[1] != d or self.user_embeddings.shape[1] != d:
            raise ValueError("embeddings and prototypes must share dimension d")
        if self.item_prototypes.shape[1] != d:
            raise ValueError("embeddings and prototypes must share dimension d")
        if self.connections.shape != (n_up, n_ip):
            raise ValueError(f"connections must be {n_up}x{n_ip}, got {self.connections.shape}")
        if n_up > self.n_users or n_ip > self.n_items:
            raise ValueError("prototype counts may not exceed user/item counts")

    @classmethod
    def init(cls, n_users, n_items, dim, rng, n_user_prototypes, n_item_prototypes, **_):
        # connections ~ N(0, 1/sqrt(Lu*Lt)) keeps initial logits O(1)
        w_std = 1.0 / np.sqrt(n_user_prototypes * n_item_prototypes)
        return cls(
            user_embeddings=rng.normal(0.0, INIT_STD, (n_users, dim)),
            item_embeddings=rng.normal(0.0, INIT_STD, (n_items, dim)),
            user_prototypes=rng.normal(0.0, INIT_STD, (n_user_prototypes, dim)),
            item_prototypes=rng.normal(0.0, INIT_STD, (n_item_prototypes, dim)),
            connections=rng.normal(0.0, w_std, (n_user_prototypes, n_item_prototypes)),
        )

    @property
    def n_user_prototypes(self) -> int:
        return self.user_prototypes.shape[0]

    @property
    def n_item_prototypes(self) -> int:
        return self.item_prototypes.shape[0]

    def shape(self) -> dict:
        return {
            **super().shape(),
            "n_user_prototypes": self.n_user_prototypes,
            "n_item_prototypes": self.n_item_prototypes,
        }

    def user_similarities(self, users) -> np.ndarray:
        return similarity_matrix(self.user_embeddings[users], self.user_prototypes)[0]

    def item_similarities(self, items) -> np.ndarray:
        return similarity_matrix(self.item_embeddings[items], self.item_prototypes)[0]

    def preferences(self, users) -> np.ndarray:
        """Preference values r (len(users), Lt) of each user toward each item prototype."""
        return self.user_similarities(users) @ self.connections

    def forward(self, users, items):
        b, c = items.shape
        flat = items.reshape(-1)
        u_sim, u_cache = similarity_matrix(self.user_embeddings[users], self.user_prototypes)
        t_sim, t_cache = similarity_matrix(self.item_embeddings[flat], self.item_prototypes)
        pref = u_sim @ self.connections
        t_sim3 = t_sim.reshape(b, c, -1)
        scores = np.einsum("bl,bcl->bc", pref, t_sim3)
        return scores, (users, flat, u_sim, u_cache, t_sim3, t_cache, pref)

    def backward(self, cache, grad):
        users, flat, u_sim, u_cache, t_sim3, t_cache, pref = cache
        grads = self.zero_grads()
        g_pref = np.einsum("bc,bcl->bl", grad, t_sim3)
        g_tsim = (grad[:, :, None] * pref[:, None, :]).reshape(flat.size, -1)
        grads["connections"] += u_sim.T @ g_pref
        g_usim = g_pref @ self.connections.T
        g_u, g_pu = similarity_backward(u_cache, g_usim)
        g_t, g_pt = similarity_backward(t_cache, g_tsim)
        _scatter_rows(grads["user_embeddings"], users, g_u)
        _scatter_rows(grads["item_embeddings"], flat, g_t)
        grads["user_prototypes"] += g_pu
        grads["item_prototypes"] += g_pt
        return grads


@dataclass
class ScoreBreakdown:
    u_star: np.ndarray
    t_star: np.ndarray
    preferences: np.ndarray
    prototype_scores: np.ndarray
    total: float

    def to_dict(self) -> dict:
        return {
            "u_star": self.u_star.tolist(),
            "t_star": self.t_star.tolist(),
            "preferences": self.preferences.tolist(),
            "prototype_scores": self.prototype_scores.tolist(),
            "total": self.total,
        }


def _check_user(params: UIPCMF, u_idx: int) -> None:
    if not 0 <= u_idx < params.n_users:
        raise IndexError(f"user index {u_idx} out of range [0, {params.n_users})")


def _check_item(params: UIPCMF, t_idx: int) -> None:
    if not 0 <= t_idx < params.n_items:
        raise IndexError(f"item index {t_idx} out of range [0, {params.n_items})")


def uipc_score(params: UIPCMF, u_idx: int, t_idx: int) -> float:
    _check_user(params, u_idx)
    _check_item(params, t_idx)
    u_star = similarity_vector(params.user_embeddings[u_idx], params.user_prototypes)
    t_star = similarity_vector(params.item_embeddings[t_idx], params.item_prototypes)
    return float(u_star @ params.connections @ t_star)


def preference_vector(params: UIPCMF, u_idx: int) -> np.ndarray:
    _check_user(params, u_idx)
    u_star = similarity_vector(params.user_embeddings[u_idx], params.user_prototypes)
    return u_star @ params.connections


def score_breakdown(params: UIPCMF, u_idx: int, t_idx: int) -> ScoreBreakdown:
    """Split the logit into one additive contribution per item prototype."""
    _check_user(params, u_idx)
    _check_item(params, t_idx)
    u_star = similarity_vector(params.user_embeddings[u_idx], params.user_prototypes)
    t_star = similarity_vector(params.item_embeddings[t_idx], params.item_prototypes)
    pref = u_star @ params.connections
    s = pref * t_star
    return ScoreBreakdown(u_star, t_star, pref, s, float(s.sum()))


def parameter_count(n_users: int, n_items: int, n_user_prototypes: int, n_item_prototypes: int,
                    dim: int, model_kind: str) -> int:
    """Closed-form parameter totals; ACF uses ``n_user_prototypes`` as its anchor count."""
    if min(n_users, n_items, n_user_prototypes, n_item_prototypes, dim) < 1:
        raise ValueError("all shape values must be positive")
    base = (n_users + n_items) * dim
    kind = model_kind.lower()
    if kind == "mf":
        return base
    if kind == "acf":
        return base + n_user_prototypes * dim
    protos = (n_user_prototypes + n_item_prototypes) * dim
    if kind == "protomf":
        # two linear maps: item embedding -> Lu and user embedding -> Lt
        return base + protos + (n_user_prototypes + n_item_prototypes) * dim
    if kind in ("uipc-mf", "uipc-mf-l1"):
        return base + protos + n_user_prototypes * n_item_prototypes
    raise ValueError(f"unknown model kind {model_kind!r}")
