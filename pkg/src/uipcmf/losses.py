"""Training objective and analytic gradients.

total = base + l2*||theta|| + l1*R(Pu->U) + l2_*R(U->Pu) + l3*R(Pt->T) + l4*R(T->Pt)
        + l1_pref * mean_user ||r||_1

Regularizers other than L2 are evaluated only on the users/items present in the batch.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .model import Recommender
from .similarity import similarity_backward, similarity_matrix

BASE_KINDS = ("bce", "bpr", "ssm")


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


@dataclass
class RegWeights:
    lambda_l2: float = 0.0
    lambda_1: float = 0.0
    lambda_2: float = 0.0
    lambda_3: float = 0.0
    lambda_4: float = 0.0
    lambda_l1: float = 0.0
    l2_squared: bool = True

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name != "l2_squared" and not value >= 0:
                raise ValueError(f"{name} must be non-negative, got {value}")


@dataclass
class Batch:
    """Positive pairs with their sampled negatives, ``negatives`` shaped (B, n_neg)."""

    users: np.ndarray
    items: np.ndarray
    negatives: np.ndarray
    batch_users: np.ndarray = field(init=False)
    batch_items: np.ndarray = field(init=False)

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        self.negatives = np.asarray(self.negatives, dtype=np.int64).reshape(len(self.users), -1)
        self.batch_users = np.unique(self.users)
        self.batch_items = np.unique(np.concatenate([self.items, self.negatives.reshape(-1)]))

    def __len__(self) -> int:
        return len(self.users)

    def candidates(self) -> np.ndarray:
        """(B, 1 + n_neg) item matrix, positive item in column 0."""
        return np.concatenate([self.items[:, None], self.negatives], axis=1)


@dataclass
class LossReport:
    base: float = 0.0
    l2: float = 0.0
    reg_pu_to_u: float = 0.0
    reg_u_to_pu: float = 0.0
    reg_pt_to_t: float = 0.0
    reg_t_to_pt: float = 0.0
    l1_pref: float = 0.0
    total: float = 0.0

    def as_row(self) -> list[float]:
        return [self.base, self.l2, self.reg_pu_to_u, self.reg_u_to_pu,
                self.reg_pt_to_t, self.reg_t_to_pt, self.l1_pref, self.total]

    def nonfinite_terms(self) -> list[str]:
        return [k for k, v in asdict(self).items() if not np.isfinite(v)]


# --- base losses on raw scores -------------------------------------------------
# Each takes pos (B,) and neg (B, n) logits and returns (loss, d_pos, d_neg).

def bce_loss(pos, neg):
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    loss = softplus(-pos).sum() + softplus(neg).sum()
    return float(loss), -sigmoid(-pos), sigmoid(neg)


def bpr_loss(pos, neg):
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64).reshape(len(pos), -1)
    n_pairs = neg.size
    margin = pos[:, None] - neg
    loss = softplus(-margin).sum() / n_pairs
    g = -sigmoid(-margin) / n_pairs
    return float(loss), g.sum(axis=1), -g


def ssm_loss(pos, neg):
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64).reshape(len(pos), -1)
    logits = np.concatenate([pos[:, None], neg], axis=1)
    top = logits.max(axis=1, keepdims=True)
    z = np.exp(logits - top)
    log_norm = np.log(z.sum(axis=1)) + top[:, 0]
    b = len(pos)
    loss = (log_norm - pos).sum() / b
    prob = z / z.sum(axis=1, keepdims=True)
    prob[:, 0] -= 1.0
    prob /= b
    return float(loss), prob[:, 0], prob[:, 1:]


_BASE = {"bce": bce_loss, "bpr": bpr_loss, "ssm": ssm_loss}


def base_loss(model: Recommender, batch: Batch, kind: str):
    """Base loss value and dense gradients for ``model`` on ``batch``."""
    try:
        fn = _BASE[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown base loss {kind!r}; expected one of {BASE_KINDS}") from None
    scores, cache = model.forward(batch.users, batch.candidates())
    loss, g_pos, g_neg = fn(scores[:, 0], scores[:, 1:])
    g = np.concatenate([np.reshape(g_pos, (-1, 1)), g_neg], axis=1)
    return loss, model.backward(cache, g)


# --- regularizers -------------------------------------------------------------

def _max_terms(emb: np.ndarray, protos: np.ndarray):
    """(R_proto_to_entity, R_entity_to_proto) and their grads w.r.t. emb and protos."""
    sim, cache = similarity_matrix(emb, protos)
    n, n_protos = sim.shape
    # hard max; argmax picks the lowest index on ties
    best_entity = np.argmax(sim, axis=0)
    best_proto = np.argmax(sim, axis=1)
    r_p2e = -sim[best_entity, np.arange(n_protos)].mean()
    r_e2p = -sim[np.arange(n), best_proto].mean()
    g1 = np.zeros_like(sim)
    g1[best_entity, np.arange(n_protos)] = -1.0 / n_protos
    g2 = np.zeros_like(sim)
    g2[np.arange(n), best_proto] = -1.0 / n
    ge1, gp1 = similarity_backward(cache, g1)
    ge2, gp2 = similarity_backward(cache, g2)
    return (float(r_p2e), ge1, gp1), (float(r_e2p), ge2, gp2)


def interpretability_terms(model, batch_users, batch_items):
    """The four prototype/entity max-similarity terms over the batch entities.

    Returns ``(values, grads)`` with ``values`` a dict keyed like :class:`LossReport`
    fields and ``grads`` a dict of per-term gradient dicts.
    """
    batch_users = np.asarray(batch_users, dtype=np.int64)
    batch_items = np.asarray(batch_items, dtype=np.int64)
    values, grads = {}, {}
    sides = (
        ("user_embeddings", "user_prototypes", batch_users, "reg_pu_to_u", "reg_u_to_pu"),
        ("item_embeddings", "item_prototypes", batch_items, "reg_pt_to_t", "reg_t_to_pt"),
    )
    for emb_name, proto_name, idx, name_p2e, name_e2p in sides:
        emb = getattr(model, emb_name)
        terms = _max_terms(emb[idx], getattr(model, proto_name))
        for name, (value, g_emb, g_proto) in zip((name_p2e, name_e2p), terms):
            g = {emb_name: np.zeros_like(emb), proto_name: g_proto}
            np.add.at(g[emb_name], idx, g_emb)
            values[name] = value
            grads[name] = g
    return values, grads


def l1_preference_norm(model, batch_users):
    """Mean over batch users of sum_j |r_uj|, with its (sub)gradient (0 at r = 0)."""
    users = np.asarray(batch_users, dtype=np.int64)
    sim, cache = similarity_matrix(model.user_embeddings[users], model.user_prototypes)
    pref = sim @ model.connections
    n = len(users)
    value = float(np.abs(pref).sum() / n)
    g_pref = np.sign(pref) / n
    g_sim = g_pref @ model.connections.T
    g_u, g_pu = similarity_backward(cache, g_sim)
    g_emb = np.zeros_like(model.user_embeddings)
    np.add.at(g_emb, users, g_u)
    grads = {
        "connections": sim.T @ g_pref,
        "user_embeddings": g_emb,
        "user_prototypes": g_pu,
    }
    return value, grads


def l2_norm(model: Recommender, squared: bool = True):
    """Squared (default) or plain Euclidean norm over every parameter."""
    tensors = model.tensors()
    sq = float(sum(np.sum(t * t) for t in tensors.values()))
    if squared:
        return sq, {k: 2.0 * t for k, t in tensors.items()}
    norm = np.sqrt(sq)
    if norm == 0.0:
        return 0.0, {k: np.zeros_like(t) for k, t in tensors.items()}
    return float(norm), {k: t / norm for k, t in tensors.items()}


def _accumulate(total: dict, part: dict, weight: float) -> None:
    for name, g in part.items():
        total[name] += weight * g


def total_loss(model: Recommender, batch: Batch, reg: RegWeights, base_kind: str):
    """Full objective on one batch: ``(LossReport, grads)``.

    Interpretability terms apply only to prototype models and the L1 preference norm
    only to models exposing preference values; their report fields stay 0 otherwise.
    """
    report = LossReport()
    report.base, grads = base_loss(model, batch, base_kind)
    total = report.base

    if reg.lambda_l2 > 0:
        report.l2, g = l2_norm(model, reg.l2_squared)
        _accumulate(grads, g, reg.lambda_l2)
        total += reg.lambda_l2 * report.l2

    if model.has_prototypes:
        weights = {
            "reg_pu_to_u": reg.lambda_1,
            "reg_u_to_pu": reg.lambda_2,
            "reg_pt_to_t": reg.lambda_3,
            "reg_t_to_pt": reg.lambda_4,
        }
        if any(w > 0 for w in weights.values()):
            values, term_grads = interpretability_terms(model, batch.batch_users, batch.batch_items)
            for name, w in weights.items():
                setattr(report, name, values[name])
                if w > 0:
                    _accumulate(grads, term_grads[name], w)
                    total += w * values[name]

    if model.has_preferences and reg.lambda_l1 > 0:
        report.l1_pref, g = l1_preference_norm(model, batch.batch_users)
        _accumulate(grads, g, reg.lambda_l1)
        total += reg.lambda_l1 * report.l1_pref

    report.total = float(total)
    return report, grads
