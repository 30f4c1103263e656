"""Explanations for UIPC-MF recommendations.

Everything here is an exact read of the model: the per-prototype scores of an
explanation sum to the logit the model actually produced.
"""
from __future__ import annotations

import csv
import json
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ScoreBreakdown, UIPCMF, score_breakdown
from .similarity import similarity_matrix


@dataclass
class SupportingItem:
    item: int
    similarity: float


@dataclass
class ExplanationRecord:
    user: int
    item: int
    breakdown: ScoreBreakdown
    top_prototypes: list[tuple[int, float]]
    supporting_items: dict[int, list[SupportingItem]] = field(default_factory=dict)

    def faithful(self, tol: float = 1e-9) -> bool:
        total = self.breakdown.total
        return abs(self.breakdown.prototype_scores.sum() - total) <= tol * (1 + abs(total))

    def to_dict(self, user_keys=None, item_keys=None) -> dict:
        def ikey(i):
            return item_keys[i] if item_keys is not None else str(i)

        return {
            "user": self.user,
            "user_key": user_keys[self.user] if user_keys is not None else str(self.user),
            "item": self.item,
            "item_key": ikey(self.item),
            "breakdown": self.breakdown.to_dict(),
            "top_prototypes": [
                {
                    "prototype": j,
                    "score": s,
                    "preference": float(self.breakdown.preferences[j]),
                    "item_similarity": float(self.breakdown.t_star[j]),
                    "supporting_items": [
                        {"item": si.item, "item_key": ikey(si.item), "similarity": si.similarity}
                        for si in self.supporting_items.get(j, [])
                    ],
                }
                for j, s in self.top_prototypes
            ],
        }


def _rank_desc(values: np.ndarray) -> np.ndarray:
    """Indices by descending value, ties by ascending index."""
    return np.lexsort((np.arange(len(values)), -values))


def explain_pair(params: UIPCMF, u_idx: int, t_idx: int, top_n: int,
                 user_train_items=(), n_support: int = 10) -> ExplanationRecord:
    """Decompose the logit and rank item prototypes by |contribution|.

    For each selected prototype, the user's train items closest to it are attached
    as supporting evidence.
    """
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    br = score_breakdown(params, u_idx, t_idx)
    order = _rank_desc(np.abs(br.prototype_scores))[:top_n]
    top = [(int(j), float(br.prototype_scores[j])) for j in order]

    history = np.unique(np.asarray(user_train_items, dtype=np.int64))
    support: dict[int, list[SupportingItem]] = {}
    if len(history):
        sims, _ = similarity_matrix(params.item_embeddings[history],
                                    params.item_prototypes[order])
        for col, j in enumerate(order):
            ranked = _rank_desc(sims[:, col])[:n_support]
            support[int(j)] = [SupportingItem(int(history[r]), float(sims[r, col]))
                               for r in ranked]
    return ExplanationRecord(u_idx, t_idx, br, top, support)


@dataclass
class PrototypeProfile:
    prototype: int
    items: np.ndarray
    similarities: np.ndarray
    occurrences: np.ndarray


def nearest_items(params: UIPCMF, prototype: int, top_n: int,
                  occurrence_counts=None) -> PrototypeProfile:
    """Items closest to an item prototype by shifted cosine (ties by item index)."""
    if not 0 <= prototype < params.n_item_prototypes:
        raise IndexError(
            f"prototype {prototype} out of range [0, {params.n_item_prototypes})"
        )
    sims, _ = similarity_matrix(params.item_embeddings, params.item_prototypes[[prototype]])
    sims = sims[:, 0]
    top = _rank_desc(sims)[:top_n]
    counts = (np.zeros(params.n_items, dtype=np.int64) if occurrence_counts is None
              else np.asarray(occurrence_counts))
    return PrototypeProfile(prototype, top, sims[top], counts[top])


@dataclass
class PreferenceDistribution:
    prototype: int
    min: float
    q1: float
    median: float
    q3: float
    max: float

    @property
    def all_same_sign(self) -> bool:
        return self.min * self.max > 0


def preference_distribution(params: UIPCMF, users=None) -> list[PreferenceDistribution]:
    """Quantiles of every user's preference value, per item prototype."""
    users = np.arange(params.n_users) if users is None else np.asarray(users)
    pref = params.preferences(users)
    q = np.quantile(pref, [0.0, 0.25, 0.5, 0.75, 1.0], axis=0, method="linear")
    return [PreferenceDistribution(j, *map(float, q[:, j])) for j in range(pref.shape[1])]


def same_sign_count(dists) -> int:
    return sum(d.all_same_sign for d in dists)


# --- rationale text ---------------------------------------------------------------

DEFAULT_TEMPLATE = ("Other listeners who have listened to {items} also enjoyed "
                    "the item we are recommending.")
FALLBACK_TEMPLATE = "Recommended because of your strong preference for item prototype {prototype}."
PLACEHOLDERS = {"items", "prototype", "user", "item", "score"}


def render_rationale(record: ExplanationRecord, template: str = DEFAULT_TEMPLATE,
                     item_names=None, user_name=None, max_items: int = 3) -> str:
    """Fill ``template`` from the dominant prototype of ``record``.

    Supported placeholders: {items} {prototype} {user} {item} {score}. With no
    supporting items the prototype-only fallback phrasing is used.
    """
    if not record.top_prototypes:
        raise ValueError("explanation has no prototypes")
    fields = {name for _, name, _, _ in string.Formatter().parse(template) if name}
    unknown = sorted(fields - PLACEHOLDERS)
    if unknown:
        raise KeyError(f"unresolved template placeholder(s): {', '.join(unknown)}")

    proto, score = record.top_prototypes[0]
    support = record.supporting_items.get(proto, [])[:max_items]

    def name(i):
        return item_names[i] if item_names is not None else str(i)

    if not support and "items" in fields:
        template = FALLBACK_TEMPLATE
    names = [name(s.item) for s in support]
    if len(names) > 1:
        items_text = ", ".join(names[:-1]) + " and " + names[-1]
    else:
        items_text = "".join(names)
    return template.format(
        items=items_text,
        prototype=proto,
        user=user_name if user_name is not None else record.user,
        item=name(record.item),
        score=f"{score:.3f}",
    )


# --- files --------------------------------------------------------------------------

def load_metadata(path, delimiter: str = "\t") -> dict[str, str]:
    """Sidecar file: item key followed by free display columns; no header assumed."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split(delimiter)
            if parts and parts[0]:
                out[parts[0]] = " | ".join(p for p in parts[1:] if p) or parts[0]
    return out


def display_names(item_keys, metadata: dict | None = None) -> list[str]:
    metadata = metadata or {}
    return [metadata.get(k, k) for k in item_keys]


def write_explanation(record: ExplanationRecord, path, user_keys=None, item_keys=None):
    Path(path).write_text(
        json.dumps(record.to_dict(user_keys, item_keys), indent=2) + "\n", encoding="utf-8"
    )


def write_prototypes_csv(profiles, path, item_keys=None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["prototype", "rank", "item_key", "similarity", "occurrences"])
        for prof in profiles:
            for rank, (i, s, c) in enumerate(zip(prof.items.tolist(), prof.similarities.tolist(),
                                                 prof.occurrences.tolist()), start=1):
                key = item_keys[i] if item_keys is not None else str(i)
                w.writerow([prof.prototype, rank, key, repr(s), c])


def write_pref_dist_csv(dists, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["prototype", "min", "q1", "median", "q3", "max", "all_same_sign"])
        for d in dists:
            w.writerow([d.prototype, repr(d.min), repr(d.q1), repr(d.median), repr(d.q3),
                        repr(d.max), int(d.all_same_sign)])
