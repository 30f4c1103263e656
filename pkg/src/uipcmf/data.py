"""Interaction-log ingest, k-core filtering, leave-one-out splits and negative sampling."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeding import stream

log = logging.getLogger(__name__)

N_EVAL_NEGATIVES = 99
STAGES = ("valid", "test")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class RawInteraction:
    user_key: str
    item_key: str
    rating: float | None
    timestamp: int


@dataclass
class Schema:
    """Column layout of a delimited interaction log (0-based column positions)."""

    delimiter: str = "\t"
    user_col: int = 0
    item_col: int = 1
    rating_col: int | None = 2
    timestamp_col: int = 3
    header: bool = False

    @classmethod
    def movielens(cls) -> "Schema":
        return cls(delimiter="::", user_col=0, item_col=1, rating_col=2, timestamp_col=3)


def ingest(path, schema: Schema | None = None, positive_threshold: float | None = None):
    """Read a delimited log into :class:`RawInteraction` rows, keeping file order.

    With ``positive_threshold`` set, only rows rated strictly above it are kept.
    """
    schema = schema or Schema()
    path = Path(path)
    if positive_threshold is not None and schema.rating_col is None:
        raise DataError("positive threshold set but the schema has no rating column")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    needed = max(c for c in (schema.user_col, schema.item_col, schema.rating_col,
                             schema.timestamp_col) if c is not None)
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if schema.header and lineno == 1:
            continue
        if not line.strip():
            continue
        parts = line.split(schema.delimiter)
        if len(parts) <= needed:
            raise DataError(f"{path}:{lineno}: expected at least {needed + 1} columns, "
                            f"got {len(parts)}")
        try:
            rating = None
            if schema.rating_col is not None and parts[schema.rating_col].strip():
                rating = float(parts[schema.rating_col])
            timestamp = int(parts[schema.timestamp_col])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: malformed row: {exc}") from None
        user, item = parts[schema.user_col].strip(), parts[schema.item_col].strip()
        if not user or not item:
            raise DataError(f"{path}:{lineno}: empty user or item key")
        if positive_threshold is not None:
            if rating is None:
                raise DataError(f"{path}:{lineno}: missing rating with threshold set")
            if not rating > positive_threshold:
                continue
        rows.append(RawInteraction(user, item, rating, timestamp))
    return rows


@dataclass
class Dataset:
    """Deduplicated interactions over dense user/item indices.

    Interaction arrays keep input order, which breaks timestamp ties.
    """

    user_keys: list[str]
    item_keys: list[str]
    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray
    labels: dict = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return len(self.user_keys)

    @property
    def n_items(self) -> int:
        return len(self.item_keys)

    def __len__(self) -> int:
        return len(self.users)


def _dedup(interactions) -> list[RawInteraction]:
    kept: dict[tuple[str, str], int] = {}
    for pos, row in enumerate(interactions):
        key = (row.user_key, row.item_key)
        prev = kept.get(key)
        if prev is None or row.timestamp < interactions[prev].timestamp:
            kept[key] = pos
    return [interactions[p] for p in sorted(kept.values())]


def k_core_filter(interactions, user_core: int = 5, item_core: int = 5) -> Dataset:
    """Drop users/items with fewer than the given counts until nothing changes.

    Duplicate (user, item) rows keep their earliest timestamp. Surviving keys are
    numbered densely in order of first appearance.
    """
    if user_core < 1 or item_core < 1:
        raise ValueError("core thresholds must be >= 1")
    rows = _dedup(list(interactions))
    if not rows:
        raise DataError("no interactions to filter")
    u_keys, u_idx = np.unique([r.user_key for r in rows], return_inverse=True)
    i_keys, i_idx = np.unique([r.item_key for r in rows], return_inverse=True)
    alive = np.ones(len(rows), dtype=bool)
    while True:
        u_cnt = np.bincount(u_idx[alive], minlength=len(u_keys))
        i_cnt = np.bincount(i_idx[alive], minlength=len(i_keys))
        drop = alive & ((u_cnt[u_idx] < user_core) | (i_cnt[i_idx] < item_core))
        if not drop.any():
            break
        alive &= ~drop
    if not alive.any():
        raise DataError(
            f"k-core filtering (users>={user_core}, items>={item_core}) left no interactions"
        )
    survivors = [r for r, a in zip(rows, alive) if a]
    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    users = np.empty(len(survivors), dtype=np.int64)
    items = np.empty(len(survivors), dtype=np.int64)
    for n, r in enumerate(survivors):
        users[n] = user_map.setdefault(r.user_key, len(user_map))
        items[n] = item_map.setdefault(r.item_key, len(item_map))
    ts = np.array([r.timestamp for r in survivors], dtype=np.int64)
    return Dataset(list(user_map), list(item_map), users, items, ts)


@dataclass
class Interactions:
    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray

    def __len__(self) -> int:
        return len(self.users)


@dataclass
class SplitBundle:
    user_keys: list[str]
    item_keys: list[str]
    train: Interactions
    valid: Interactions
    test: Interactions
    # stage -> (n_eval, 99) negatives aligned row-for-row with that stage's pairs
    negatives: dict[str, np.ndarray]

    @property
    def n_users(self) -> int:
        return len(self.user_keys)

    @property
    def n_items(self) -> int:
        return len(self.item_keys)

    def stage(self, name: str) -> Interactions:
        if name in ("valid", "validation"):
            return self.valid
        if name == "test":
            return self.test
        raise ValueError(f"unknown stage {name!r}; expected valid or test")

    def stage_negatives(self, name: str) -> np.ndarray:
        return self.negatives["valid" if name == "validation" else name]

    def fingerprint(self) -> str:
        return hashlib.sha256(_idmap_text(self).encode("utf-8")).hexdigest()


def leave_one_out_split(dataset: Dataset, rng_seed: int) -> SplitBundle:
    """Latest interaction per user -> test, second latest -> valid, rest -> train.

    Users with fewer than three interactions keep everything in train. Each eval
    pair gets 99 negatives drawn without replacement from items the user never
    interacted with; streams depend on (seed, stage, user) only.
    """
    n = len(dataset)
    order = np.lexsort((np.arange(n), dataset.timestamps, dataset.users))
    users = dataset.users[order]
    bounds = np.flatnonzero(np.diff(users)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [n]])

    role = np.zeros(n, dtype=np.int8)  # 0 train, 1 valid, 2 test (in sorted order)
    for s, e in zip(starts, ends):
        if e - s >= 3:
            role[e - 1] = 2
            role[e - 2] = 1

    def take(mask):
        idx = np.sort(order[mask])  # back to input order
        return Interactions(dataset.users[idx], dataset.items[idx], dataset.timestamps[idx])

    train, valid, test = take(role == 0), take(role == 1), take(role == 2)
    if len(valid):
        sort_v = np.argsort(valid.users, kind="stable")
        valid = Interactions(valid.users[sort_v], valid.items[sort_v], valid.timestamps[sort_v])
        sort_t = np.argsort(test.users, kind="stable")
        test = Interactions(test.users[sort_t], test.items[sort_t], test.timestamps[sort_t])

    history = _user_histories(dataset.users, dataset.items, dataset.n_users)
    all_items = np.arange(dataset.n_items)
    negatives = {}
    for stage_name, pairs in (("valid", valid), ("test", test)):
        out = np.empty((len(pairs), N_EVAL_NEGATIVES), dtype=np.int64)
        for row, u in enumerate(pairs.users):
            pool = np.setdiff1d(all_items, history[u], assume_unique=True)
            if len(pool) < N_EVAL_NEGATIVES:
                raise DataError(
                    f"user {dataset.user_keys[u]!r}: only {len(pool)} never-seen items, "
                    f"cannot sample {N_EVAL_NEGATIVES} negatives"
                )
            rng = stream(rng_seed, f"eval-negatives/{stage_name}", u)
            out[row] = rng.choice(pool, N_EVAL_NEGATIVES, replace=False)
        negatives[stage_name] = out
    return SplitBundle(dataset.user_keys, dataset.item_keys, train, valid, test, negatives)


def _user_histories(users, items, n_users) -> list[np.ndarray]:
    order = np.argsort(users, kind="stable")
    grouped = np.split(items[order], np.cumsum(np.bincount(users, minlength=n_users))[:-1])
    return [np.unique(g) for g in grouped]


class PositiveIndex:
    """Vectorized membership test for (user, item) pairs."""

    def __init__(self, users, items, n_items: int):
        self.n_items = n_items
        self.keys = np.unique(np.asarray(users, np.int64) * n_items + np.asarray(items, np.int64))

    def contains(self, users, items) -> np.ndarray:
        q = np.asarray(users, np.int64) * self.n_items + np.asarray(items, np.int64)
        pos = np.searchsorted(self.keys, q)
        pos = np.minimum(pos, len(self.keys) - 1)
        return self.keys[pos] == q if len(self.keys) else np.zeros(q.shape, dtype=bool)


@dataclass
class PopularityTable:
    counts: np.ndarray
    probabilities: np.ndarray
    cumulative: np.ndarray

    @classmethod
    def from_train(cls, train_items, n_items: int) -> "PopularityTable":
        counts = np.bincount(np.asarray(train_items, np.int64), minlength=n_items)
        total = counts.sum()
        if total == 0:
            raise DataError("popularity table needs at least one train interaction")
        probs = counts / total
        cum = np.cumsum(probs)
        cum[-1] = 1.0
        return cls(counts, probs, cum)

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        idx = np.searchsorted(self.cumulative, rng.random(size), side="right")
        return np.minimum(idx, len(self.counts) - 1)


MAX_RESAMPLE_ROUNDS = 1000


def sample_train_negatives(users, n_neg: int, n_items: int, positives: PositiveIndex,
                           rng: np.random.Generator, mode: str = "uniform",
                           popularity: PopularityTable | None = None) -> np.ndarray:
    """(len(users), n_neg) negatives excluding each user's train positives.

    Colliding draws are resampled from the same distribution.
    """
    if n_neg < 1:
        raise ValueError("n_neg must be >= 1")
    users = np.asarray(users, np.int64)
    if mode == "uniform":
        def draw(size):
            return rng.integers(0, n_items, size=size)
    elif mode == "popular":
        if popularity is None:
            raise ValueError("popular sampling needs a PopularityTable")

        def draw(size):
            return popularity.draw(rng, size)
    else:
        raise ValueError(f"unknown sampling mode {mode!r}; expected uniform or popular")

    out = draw((len(users), n_neg))
    u_rep = np.repeat(users[:, None], n_neg, axis=1)
    bad = positives.contains(u_rep, out)
    rounds = 0
    while bad.any():
        rounds += 1
        if rounds > MAX_RESAMPLE_ROUNDS:
            raise RuntimeError("negative sampling did not converge; catalog too small")
        out[bad] = draw(int(bad.sum()))
        bad[bad] = positives.contains(u_rep[bad], out[bad])
    return out


# --- file formats ---------------------------------------------------------------

def _idmap_text(bundle) -> str:
    lines = [f"{k}\t{i}\tuser" for i, k in enumerate(bundle.user_keys)]
    lines += [f"{k}\t{i}\titem" for i, k in enumerate(bundle.item_keys)]
    return "".join(line + "\n" for line in lines)


def _write_pairs(path: Path, pairs: Interactions) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, i, t in zip(pairs.users.tolist(), pairs.items.tolist(), pairs.timestamps.tolist()):
            fh.write(f"{u}\t{i}\t{t}\n")


def _read_pairs(path: Path) -> Interactions:
    arr = np.loadtxt(path, dtype=np.int64, delimiter="\t", ndmin=2)
    if arr.size == 0:
        empty = np.empty(0, dtype=np.int64)
        return Interactions(empty, empty.copy(), empty.copy())
    return Interactions(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy())


SPLIT_FILES = ("train.tsv", "valid.tsv", "test.tsv", "negatives.tsv", "idmap.tsv")


def save_split(bundle: SplitBundle, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_pairs(out / "train.tsv", bundle.train)
    _write_pairs(out / "valid.tsv", bundle.valid)
    _write_pairs(out / "test.tsv", bundle.test)
    with open(out / "negatives.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for stage_name in STAGES:
            pairs = bundle.stage(stage_name)
            for u, negs in zip(pairs.users.tolist(), bundle.negatives[stage_name].tolist()):
                fh.write(f"{u}\t{stage_name}\t{' '.join(map(str, negs))}\n")
    (out / "idmap.tsv").write_text(_idmap_text(bundle), encoding="utf-8", newline="\n")
    return [out / name for name in SPLIT_FILES]


def load_split(split_dir) -> SplitBundle:
    d = Path(split_dir)
    missing = [n for n in SPLIT_FILES if not (d / n).exists()]
    if missing:
        raise DataError(f"{d}: missing split files {missing}")
    user_keys: list[str] = []
    item_keys: list[str] = []
    for lineno, line in enumerate((d / "idmap.tsv").read_text(encoding="utf-8").splitlines(), 1):
        key, idx, kind = line.split("\t")
        target = user_keys if kind == "user" else item_keys
        if int(idx) != len(target):
            raise DataError(f"{d / 'idmap.tsv'}:{lineno}: indices must be dense and ordered")
        target.append(key)
    valid = _read_pairs(d / "valid.tsv")
    test = _read_pairs(d / "test.tsv")
    negs: dict[str, list] = {s: [] for s in STAGES}
    neg_users: dict[str, list] = {s: [] for s in STAGES}
    for line in (d / "negatives.tsv").read_text(encoding="utf-8").splitlines():
        u, stage_name, items = line.split("\t")
        neg_users[stage_name].append(int(u))
        negs[stage_name].append([int(x) for x in items.split()])
    negatives = {}
    for stage_name, pairs in (("valid", valid), ("test", test)):
        if neg_users[stage_name] != pairs.users.tolist():
            raise DataError(f"{d}: negatives.tsv rows do not match {stage_name}.tsv")
        negatives[stage_name] = np.array(negs[stage_name], dtype=np.int64).reshape(
            -1, N_EVAL_NEGATIVES)
    return SplitBundle(user_keys, item_keys, _read_pairs(d / "train.tsv"), valid, test, negatives)
