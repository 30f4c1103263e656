"""Planted block-structure datasets and a prototype/connection block-alignment score."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, RawInteraction, k_core_filter
from .seeding import stream
from .similarity import similarity_matrix

log = logging.getLogger(__name__)


@dataclass
class SynthConfig:
    n_groups: int = 5
    users_per_group: int = 100
    items_per_group: int = 40
    p_in: float = 0.3
    p_out: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if min(self.n_groups, self.users_per_group, self.items_per_group) < 1:
            raise ValueError("group and entity counts must be >= 1")
        if not (0 < self.p_in <= 1 and 0 <= self.p_out < 1 and self.p_in > self.p_out):
            raise ValueError("need 0 <= p_out < p_in <= 1")


def generate(config: SynthConfig) -> Dataset:
    """Sample interactions: same-group pairs with ``p_in``, others with ``p_out``.

    Each user's interactions get timestamps in a random order. Group labels are kept
    in ``dataset.labels`` as ``{"user": {key: group}, "item": {key: group}}``; users
    still empty after one resample are listed under ``"dropped_users"``.
    """
    g, upg, ipg = config.n_groups, config.users_per_group, config.items_per_group
    item_groups = np.repeat(np.arange(g), ipg)
    rows: list[RawInteraction] = []
    dropped = []
    for u in range(g * upg):
        group = u // upg
        rng = stream(config.seed, "synth-user", u)
        p = np.where(item_groups == group, config.p_in, config.p_out)
        items = np.flatnonzero(rng.random(len(p)) < p)
        if len(items) == 0:
            items = np.flatnonzero(rng.random(len(p)) < p)
        if len(items) == 0:
            dropped.append(f"u{u}")
            continue
        order = rng.permutation(len(items))
        for ts, item in zip(order + 1, items):
            rows.append(RawInteraction(f"u{u}", f"i{item}", None, int(ts)))
    if dropped:
        log.info("dropped %d users with no interactions", len(dropped))
    dataset = k_core_filter(rows, 1, 1)
    dataset.labels = {
        "user": {f"u{u}": u // upg for u in range(g * upg)},
        "item": {f"i{i}": int(item_groups[i]) for i in range(g * ipg)},
        "dropped_users": dropped,
    }
    return dataset


def group_arrays(user_keys, item_keys, labels) -> tuple[np.ndarray, np.ndarray]:
    """Group label per dense user / item index."""
    return (np.array([labels["user"][k] for k in user_keys], dtype=np.int64),
            np.array([labels["item"][k] for k in item_keys], dtype=np.int64))


def assign_prototypes(prototypes, embeddings, groups, n_groups: int) -> np.ndarray:
    """Group with the highest mean shifted cosine to each prototype; -1 if none dominates.

    Ties go to the lowest group index; a prototype equally similar to every group
    (or with no populated group) is unassignable.
    """
    sim, _ = similarity_matrix(np.asarray(prototypes, float), np.asarray(embeddings, float))
    means = np.full((sim.shape[0], n_groups), np.nan)
    for grp in range(n_groups):
        members = groups == grp
        if members.any():
            means[:, grp] = sim[:, members].mean(axis=1)
    out = np.full(sim.shape[0], -1, dtype=np.int64)
    for p, row in enumerate(means):
        valid = ~np.isnan(row)
        if not valid.any():
            continue
        vals = row[valid]
        if len(vals) > 1 and np.all(vals == vals[0]):
            continue
        out[p] = int(np.flatnonzero(valid)[np.argmax(vals)])
    return out


def block_structure_score(connections, user_proto_groups, item_proto_groups):
    """Fraction of assigned user prototypes whose largest-|w| link hits a same-group
    item prototype. Returns ``(score, n_excluded)``."""
    w = np.abs(np.asarray(connections, dtype=np.float64))
    user_proto_groups = np.asarray(user_proto_groups)
    item_proto_groups = np.asarray(item_proto_groups)
    assigned = np.flatnonzero(user_proto_groups >= 0)
    excluded = len(user_proto_groups) - len(assigned)
    if len(assigned) == 0:
        return float("nan"), excluded
    target = np.argmax(w[assigned], axis=1)
    hits = item_proto_groups[target] == user_proto_groups[assigned]
    return float(hits.mean()), excluded


def model_block_score(model, user_groups, item_groups, n_groups: int):
    upg = assign_prototypes(model.user_prototypes, model.user_embeddings, user_groups, n_groups)
    ipg = assign_prototypes(model.item_prototypes, model.item_embeddings, item_groups, n_groups)
    return block_structure_score(model.connections, upg, ipg)


def write_labels(dataset: Dataset, path) -> Path:
    path = Path(path)
    ug, ig = group_arrays(dataset.user_keys, dataset.item_keys, dataset.labels)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, grp in enumerate(ug.tolist()):
            fh.write(f"user\t{i}\t{grp}\n")
        for i, grp in enumerate(ig.tolist()):
            fh.write(f"item\t{i}\t{grp}\n")
    return path


def write_raw_log(dataset: Dataset, path) -> Path:
    """Dump as a tab-separated ``user item timestamp`` log that ``ingest`` can read."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, i, t in zip(dataset.users.tolist(), dataset.items.tolist(),
                           dataset.timestamps.tolist()):
            fh.write(f"{dataset.user_keys[u]}\t{dataset.item_keys[i]}\t{t}\n")
    return path
