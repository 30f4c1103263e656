"""MF, ACF and ProtoMF scorers sharing the :class:`Recommender` interface."""
from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .model import INIT_STD, Recommender, UIPCMF, _scatter_rows
from .similarity import similarity_backward, similarity_matrix


def _as_f64(obj):
    for name in obj.tensor_names:
        setattr(obj, name, np.asarray(getattr(obj, name), dtype=np.float64))


@dataclass(eq=False)
class MF(Recommender):
    user_embeddings: np.ndarray
    item_embeddings: np.ndarray

    kind: ClassVar[str] = "mf"
    tensor_names: ClassVar[tuple[str, ...]] = ("user_embeddings", "item_embeddings")

    def __post_init__(self):
        _as_f64(self)
        if self.user_embeddings.shape[1] != self.item_embeddings.shape[1]:
            raise ValueError("user and item embeddings must share dimension d")

    @classmethod
    def init(cls, n_users, n_items, dim, rng, **_):
        return cls(
            user_embeddings=rng.normal(0.0, INIT_STD, (n_users, dim)),
            item_embeddings=rng.normal(0.0, INIT_STD, (n_items, dim)),
        )

    def forward(self, users, items):
        u = self.user_embeddings[users]
        t = self.item_embeddings[items]
        return np.einsum("bd,bcd->bc", u, t), (users, items, u, t)

    def backward(self, cache, grad):
        users, items, u, t = cache
        grads = self.zero_grads()
        _scatter_rows(grads["user_embeddings"], users, np.einsum("bc,bcd->bd", grad, t))
        _scatter_rows(
            grads["item_embeddings"], items.reshape(-1),
            (grad[:, :, None] * u[:, None, :]).reshape(-1, u.shape[1]),
        )
        return grads


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


@dataclass(eq=False)
class ACF(Recommender):
    """Users and items represented as convex combinations of shared anchors.

    Coefficient logits are the dot products of an entity's embedding with each
    anchor; coefficients are their softmax.
    """

    user_embeddings: np.ndarray
    item_embeddings: np.ndarray
    anchors: np.ndarray

    kind: ClassVar[str] = "acf"
    tensor_names: ClassVar[tuple[str, ...]] = ("user_embeddings", "item_embeddings", "anchors")

    def __post_init__(self):
        _as_f64(self)
        d = self.anchors.shape[1]
        if self.user_embeddings.shape[1] != d or self.item_embeddings.shape[1] != d:
            raise ValueError("embeddings and anchors must share dimension d")

    @classmethod
    def init(cls, n_users, n_items, dim, rng, n_user_prototypes, **_):
        return cls(
            user_embeddings=rng.normal(0.0, INIT_STD, (n_users, dim)),
            item_embeddings=rng.normal(0.0, INIT_STD, (n_items, dim)),
            anchors=rng.normal(0.0, INIT_STD, (n_user_prototypes, dim)),
        )

    @property
    def n_anchors(self) -> int:
        return self.anchors.shape[0]

    def shape(self) -> dict:
        return {**super().shape(), "n_anchors": self.n_anchors}

    def coefficients(self, embeddings: np.ndarray) -> np.ndarray:
        return _softmax_rows(embeddings @ self.anchors.T)

    def user_representation(self, users) -> np.ndarray:
        return self.coefficients(self.user_embeddings[users]) @ self.anchors

    def item_representation(self, items) -> np.ndarray:
        return self.coefficients(self.item_embeddings[items]) @ self.anchors

    def forward(self, users, items):
        b, c = items.shape
        flat = items.reshape(-1)
        u_emb = self.user_embeddings[users]
        t_emb = self.item_embeddings[flat]
        u_coef = self.coefficients(u_emb)
        t_coef = self.coefficients(t_emb)
        u_rep = u_coef @ self.anchors
        t_rep = (t_coef @ self.anchors).reshape(b, c, -1)
        scores = np.einsum("bd,bcd->bc", u_rep, t_rep)
        return scores, (users, flat, u_emb, t_emb, u_coef, t_coef, u_rep, t_rep)

    def _coef_backward(self, emb, coef, g_rep):
        # rep = softmax(emb @ A^T) @ A
        g_coef = g_rep @ self.anchors.T
        g_logit = coef * (g_coef - (g_coef * coef).sum(axis=1, keepdims=True))
        g_emb = g_logit @ self.anchors
        g_anchors = coef.T @ g_rep + g_logit.T @ emb
        return g_emb, g_anchors

    def backward(self, cache, grad):
        users, flat, u_emb, t_emb, u_coef, t_coef, u_rep, t_rep = cache
        grads = self.zero_grads()
        g_urep = np.einsum("bc,bcd->bd", grad, t_rep)
        g_trep = (grad[:, :, None] * u_rep[:, None, :]).reshape(flat.size, -1)
        g_u, g_a1 = self._coef_backward(u_emb, u_coef, g_urep)
        g_t, g_a2 = self._coef_backward(t_emb, t_coef, g_trep)
        _scatter_rows(grads["user_embeddings"], users, g_u)
        _scatter_rows(grads["item_embeddings"], flat, g_t)
        grads["anchors"] += g_a1 + g_a2
        return grads


@dataclass(eq=False)
class ProtoMF(Recommender):
    """``score = <u*, item_side_weights @ t> + <t*, user_side_weights @ u>``.

    ``item_side_weights`` (Lu, d) maps an item embedding into user-prototype space;
    ``user_side_weights`` (Lt, d) maps a user embedding into item-prototype space.
    """

    user_embeddings: np.ndarray
    item_embeddings: np.ndarray
    user_prototypes: np.ndarray
    item_prototypes: np.ndarray
    item_side_weights: np.ndarray
    user_side_weights: np.ndarray

    kind: ClassVar[str] = "protomf"
    tensor_names: ClassVar[tuple[str, ...]] = (
        "user_embeddings",
        "item_embeddings",
        "user_prototypes",
        "item_prototypes",
        "item_side_weights",
        "user_side_weights",
    )
    has_prototypes: ClassVar[bool] = True

    def __post_init__(self):
        _as_f64(self)
        n_up, d = self.user_prototypes.shape
        n_ip = self.item_prototypes.shape[0]
        if self.item_side_weights.shape != (n_up, d):
            raise ValueError(f"item_side_weights must be {n_up}x{d}")
        if self.user_side_weights.shape != (n_ip, d):
            raise ValueError(f"user_side_weights must be {n_ip}x{d}")

    @classmethod
    def init(cls, n_users, n_items, dim, rng, n_user_prototypes, n_item_prototypes, **_):
        return cls(
            user_embeddings=rng.normal(0.0, INIT_STD, (n_users, dim)),
            item_embeddings=rng.normal(0.0, INIT_STD, (n_items, dim)),
            user_prototypes=rng.normal(0.0, INIT_STD, (n_user_prototypes, dim)),
            item_prototypes=rng.normal(0.0, INIT_STD, (n_item_prototypes, dim)),
            item_side_weights=rng.normal(0.0, INIT_STD, (n_user_prototypes, dim)),
            user_side_weights=rng.normal(0.0, INIT_STD, (n_item_prototypes, dim)),
        )

    def shape(self) -> dict:
        return {
            **super().shape(),
            "n_user_prototypes": self.user_prototypes.shape[0],
            "n_item_prototypes": self.item_prototypes.shape[0],
        }

    def forward(self, users, items):
        b, c = items.shape
        flat = items.reshape(-1)
        u = self.user_embeddings[users]
        t = self.item_embeddings[flat]
        u_sim, u_cache = similarity_matrix(u, self.user_prototypes)
        t_sim, t_cache = similarity_matrix(t, self.item_prototypes)
        t_proj = (t @ self.item_side_weights.T).reshape(b, c, -1)
        u_proj = u @ self.user_side_weights.T
        t_sim3 = t_sim.reshape(b, c, -1)
        scores = np.einsum("bl,bcl->bc", u_sim, t_proj) + np.einsum("bl,bcl->bc", u_proj, t_sim3)
        return scores, (users, flat, u, t, u_sim, u_cache, t_sim3, t_cache, t_proj, u_proj)

    def backward(self, cache, grad):
        users, flat, u, t, u_sim, u_cache, t_sim3, t_cache, t_proj, u_proj = cache
        grads = self.zero_grads()
        n = flat.size
        # user-prototype branch
        g_usim = np.einsum("bc,bcl->bl", grad, t_proj)
        g_tproj = (grad[:, :, None] * u_sim[:, None, :]).reshape(n, -1)
        grads["item_side_weights"] += g_tproj.T @ t
        g_t = g_tproj @ self.item_side_weights
        # item-prototype branch
        g_uproj = np.einsum("bc,bcl->bl", grad, t_sim3)
        g_tsim = (grad[:, :, None] * u_proj[:, None, :]).reshape(n, -1)
        grads["user_side_weights"] += g_uproj.T @ u
        g_u = g_uproj @ self.user_side_weights

        g_u_sim, g_pu = similarity_backward(u_cache, g_usim)
        g_t_sim, g_pt = similarity_backward(t_cache, g_tsim)
        _scatter_rows(grads["user_embeddings"], users, g_u + g_u_sim)
        _scatter_rows(grads["item_embeddings"], flat, g_t + g_t_sim)
        grads["user_prototypes"] += g_pu
        grads["item_prototypes"] += g_pt
        return grads


MODEL_CLASSES: dict[str, type[Recommender]] = {
    "mf": MF,
    "acf": ACF,
    "protomf": ProtoMF,
    "uipc-mf": UIPCMF,
    "uipc-mf-l1": UIPCMF,
}


def model_class(kind: str) -> type[Recommender]:
    try:
        return MODEL_CLASSES[kind]
    except KeyError:
        raise ValueError(
            f"unknown model kind {kind!r}; valid kinds: {', '.join(MODEL_CLASSES)}"
        ) from None


def build_model(kind, n_users, n_items, dim, rng, n_user_prototypes=1, n_item_prototypes=1):
    return model_class(kind).init(
        n_users, n_items, dim, rng,
        n_user_prototypes=n_user_prototypes, n_item_prototypes=n_item_prototypes,
    )


def mf_score(params: MF, u_idx: int, t_idx: int) -> float:
    return params.score(u_idx, t_idx)


def acf_score(params: ACF, u_idx: int, t_idx: int) -> float:
    return params.score(u_idx, t_idx)


def protomf_score(params: ProtoMF, u_idx: int, t_idx: int) -> float:
    return params.score(u_idx, t_idx)
