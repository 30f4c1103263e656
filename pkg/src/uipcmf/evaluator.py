"""Leave-one-out ranking evaluation: HR@K and NDCG@K over 1 true + 99 sampled items."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import N_EVAL_NEGATIVES, SplitBundle

DEFAULT_CUTOFFS = (5, 10)
EVAL_CHUNK = 1024


class FingerprintMismatch(ValueError):
    pass


def rank_from_scores(true_scores, neg_scores) -> np.ndarray:
    """1-based rank of each true item; ties with negatives count against it."""
    true_scores = np.asarray(true_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    return 1 + (neg_scores >= true_scores[..., None]).sum(axis=-1)


def rank_true_item(scorer, user: int, true_item: int, negatives) -> int:
    negatives = np.asarray(negatives, dtype=np.int64)
    if negatives.shape != (N_EVAL_NEGATIVES,):
        raise ValueError(f"expected {N_EVAL_NEGATIVES} negatives, got {negatives.size}")
    cand = np.concatenate([[true_item], negatives])[None, :]
    scores = scorer.score_matrix(np.array([user]), cand)[0]
    return int(rank_from_scores(scores[0], scores[1:]))


def hit_ratio(ranks, k: int) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("no ranks to aggregate")
    return float(np.mean(ranks <= k))


def ndcg(ranks, k: int) -> float:
    """Single relevant item per list, so the ideal DCG is 1."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("no ranks to aggregate")
    gains = np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(gains.mean())


@dataclass
class MetricsReport:
    stage: str
    hr: dict[int, float]
    ndcg: dict[int, float]
    users: np.ndarray = field(repr=False)
    ranks: np.ndarray = field(repr=False)

    def rows(self, model: str = "", seed: int | str = "") -> list[list]:
        return [[model, seed, self.stage, k, self.hr[k], self.ndcg[k]] for k in sorted(self.hr)]

    def write_csv(self, path, model: str = "", seed: int | str = "") -> None:
        write_metrics([self], path, model, seed)

    def write_ranks(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user", "rank"])
            w.writerows(zip(self.users.tolist(), self.ranks.tolist()))

    def summary(self) -> str:
        parts = [f"HR@{k}={self.hr[k]:.4f} NDCG@{k}={self.ndcg[k]:.4f}" for k in sorted(self.hr)]
        return f"[{self.stage}] " + " ".join(parts)


def score_ranks(scorer, users, true_items, negatives) -> np.ndarray:
    users = np.asarray(users, dtype=np.int64)
    ranks = np.empty(len(users), dtype=np.int64)
    for s in range(0, len(users), EVAL_CHUNK):
        e = s + EVAL_CHUNK
        cand = np.concatenate([np.asarray(true_items)[s:e, None], negatives[s:e]], axis=1)
        scores = scorer.score_matrix(users[s:e], cand)
        ranks[s:e] = rank_from_scores(scores[:, 0], scores[:, 1:])
    return ranks


def evaluate(scorer, bundle: SplitBundle, stage: str = "test", cutoffs=DEFAULT_CUTOFFS,
             fingerprint: str | None = None) -> MetricsReport:
    """Rank every eval user's held-out item; aggregate all cutoffs."""
    for k in cutoffs:
        if not 1 <= k <= N_EVAL_NEGATIVES + 1:
            raise ValueError(f"cutoff {k} outside [1, {N_EVAL_NEGATIVES + 1}]")
    if fingerprint is not None and fingerprint != bundle.fingerprint():
        raise FingerprintMismatch("model was trained on a different ID map than these splits")
    if scorer.n_users != bundle.n_users or scorer.n_items != bundle.n_items:
        raise FingerprintMismatch(
            f"model shape {scorer.n_users}x{scorer.n_items} does not match splits "
            f"{bundle.n_users}x{bundle.n_items}"
        )
    pairs = bundle.stage(stage)
    ranks = score_ranks(scorer, pairs.users, pairs.items, bundle.stage_negatives(stage))
    ks = sorted(set(int(k) for k in cutoffs))
    stage_name = "test" if stage == "test" else "valid"
    return MetricsReport(
        stage=stage_name,
        hr={k: hit_ratio(ranks, k) for k in ks},
        ndcg={k: ndcg(ranks, k) for k in ks},
        users=pairs.users.copy(),
        ranks=ranks,
    )


def write_metrics(reports, path, model: str = "", seed="") -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "seed", "stage", "k", "hr", "ndcg"])
        for rep in reports:
            for row in rep.rows(model, seed):
                w.writerow(row[:4] + [repr(row[4]), repr(row[5])])
