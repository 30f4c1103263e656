import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uipcmf.data import (
    N_EVAL_NEGATIVES,
    DataError,
    PopularityTable,
    PositiveIndex,
    RawInteraction,
    Schema,
    ingest,
    k_core_filter,
    leave_one_out_split,
    load_split,
    sample_train_negatives,
    save_split,
)

RATED = Schema(rating_col=2, timestamp_col=3)


def raw(pairs):
    return [RawInteraction(u, i, None, t) for t, (u, i) in enumerate(pairs)]


def test_ingest_threshold(tmp_path):
    path = tmp_path / "log.tsv"
    path.write_text("u1\ti1\t4.0\t10\nu1\ti2\t3.0\t11\n")
    rows = ingest(path, RATED, positive_threshold=3.5)
    assert [(r.user_key, r.item_key) for r in rows] == [("u1", "i1")]


def test_ingest_without_threshold_keeps_rows(tmp_path):
    path = tmp_path / "log.tsv"
    path.write_text("a\tx\t1\nb\ty\t2\nc\tz\t3\n")
    rows = ingest(path, Schema(rating_col=None, timestamp_col=2))
    assert [r.user_key for r in rows] == ["a", "b", "c"]
    assert all(r.rating is None for r in rows)


def test_ingest_malformed_line_named(tmp_path):
    lines = [f"u{i}\ti{i}\t{i}" for i in range(10)]
    lines[6] = "u6 broken"
    path = tmp_path / "log.tsv"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match=":7"):
        ingest(path, Schema(rating_col=None, timestamp_col=2))


def test_ingest_threshold_needs_rating_column(tmp_path):
    path = tmp_path / "log.tsv"
    path.write_text("a\tx\t1\n")
    with pytest.raises(DataError, match="rating column"):
        ingest(path, Schema(rating_col=None, timestamp_col=2), positive_threshold=3.5)


def test_ingest_missing_file(tmp_path):
    with pytest.raises(DataError, match="nope.tsv"):
        ingest(tmp_path / "nope.tsv")


def test_ingest_movielens_format(tmp_path):
    path = tmp_path / "ratings.dat"
    path.write_text("1::10::5::978300760\n1::20::3::978302109\n2::10::4::978301968\n")
    rows = ingest(path, Schema.movielens(), positive_threshold=3.5)
    assert [(r.user_key, r.item_key, r.timestamp) for r in rows] == [
        ("1", "10", 978300760), ("2", "10", 978301968)]


def test_k_core_chain_cascades_to_error():
    with pytest.raises(DataError):
        k_core_filter(raw([("u1", "i1"), ("u2", "i1"), ("u2", "i2")]), 2, 2)


def test_k_core_complete_graph_unchanged():
    pairs = [(f"u{u}", f"i{i}") for u in range(3) for i in range(3)]
    ds = k_core_filter(raw(pairs), 3, 3)
    assert len(ds) == 9
    assert ds.user_keys == ["u0", "u1", "u2"] and ds.item_keys == ["i0", "i1", "i2"]


def test_k_core_dedup_keeps_earliest():
    rows = [RawInteraction("u", "i", None, 5), RawInteraction("u", "i", None, 2)]
    ds = k_core_filter(rows, 1, 1)
    assert len(ds) == 1 and ds.timestamps[0] == 2


def to_raw(ds):
    return [RawInteraction(ds.user_keys[u], ds.item_keys[i], None, int(t))
            for u, i, t in zip(ds.users, ds.items, ds.timestamps)]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 12), st.integers(0, 12)), min_size=20, max_size=120),
       st.integers(1, 3), st.integers(1, 3))
def test_k_core_properties(pairs, ku, kt):
    rows = raw([(f"u{u}", f"i{i}") for u, i in pairs])
    try:
        ds = k_core_filter(rows, ku, kt)
    except DataError:
        return
    assert np.bincount(ds.users).min() >= ku
    assert np.bincount(ds.items).min() >= kt
    again = k_core_filter(to_raw(ds), ku, kt)
    assert again.user_keys == ds.user_keys and again.item_keys == ds.item_keys
    assert np.array_equal(again.users, ds.users) and np.array_equal(again.items, ds.items)


def big_dataset(n_users=20, n_items=150, per_user=8, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for u in range(n_users):
        for t, i in enumerate(rng.choice(n_items, per_user, replace=False)):
            rows.append(RawInteraction(f"u{u}", f"i{i}", None, int(rng.integers(100))))
    # make sure every item exists so the universe is large enough
    rows += [RawInteraction(f"f{i}", f"i{i}", None, 0) for i in range(n_items)]
    return k_core_filter(rows, 1, 1)


def test_split_by_timestamp():
    rows = [RawInteraction("u", f"i{k}", None, t) for k, t in ((2, 3), (0, 1), (3, 4), (1, 2))]
    rows += [RawInteraction(f"o{k}", f"j{k}", None, 0) for k in range(120)]
    bundle = leave_one_out_split(k_core_filter(rows, 1, 1), 0)
    key = bundle.item_keys
    u = bundle.user_keys.index("u")
    train = sorted(key[i] for i in bundle.train.items[bundle.train.users == u])
    assert train == ["i0", "i1"]
    assert key[bundle.valid.items[bundle.valid.users == u][0]] == "i2"
    assert key[bundle.test.items[bundle.test.users == u][0]] == "i3"


def test_split_short_history_train_only():
    rows = [RawInteraction("short", "a", None, 1), RawInteraction("short", "b", None, 2)]
    rows += [RawInteraction("long", f"j{k}", None, k) for k in range(3)]
    rows += [RawInteraction(f"o{k}", f"j{k}", None, 0) for k in range(3, 120)]
    bundle = leave_one_out_split(k_core_filter(rows, 1, 1), 0)
    short = bundle.user_keys.index("short")
    assert (bundle.train.users == short).sum() == 2
    assert short not in bundle.valid.users and short not in bundle.test.users


def test_split_partition_and_negatives():
    ds = big_dataset()
    bundle = leave_one_out_split(ds, 3)
    parts = [bundle.train, bundle.valid, bundle.test]
    pairs = [set(zip(p.users.tolist(), p.items.tolist())) for p in parts]
    assert sum(len(p) for p in pairs) == len(ds)
    assert set.union(*pairs) == set(zip(ds.users.tolist(), ds.items.tolist()))
    for stage in ("valid", "test"):
        negs = bundle.negatives[stage]
        assert negs.shape == (len(bundle.stage(stage)), N_EVAL_NEGATIVES)
        for u, row in zip(bundle.stage(stage).users, negs):
            assert len(set(row.tolist())) == N_EVAL_NEGATIVES
            assert not set(row.tolist()) & set(ds.items[ds.users == u].tolist())


def test_split_deterministic_and_roundtrip(tmp_path):
    ds = big_dataset()
    save_split(leave_one_out_split(ds, 9), tmp_path / "a")
    save_split(leave_one_out_split(ds, 9), tmp_path / "b")
    for name in ("train.tsv", "valid.tsv", "test.tsv", "negatives.tsv", "idmap.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    loaded = load_split(tmp_path / "a")
    original = leave_one_out_split(ds, 9)
    assert loaded.fingerprint() == original.fingerprint()
    assert np.array_equal(loaded.negatives["test"], original.negatives["test"])
    assert np.array_equal(loaded.train.items, original.train.items)


def test_split_seed_changes_negatives():
    ds = big_dataset()
    a = leave_one_out_split(ds, 1).negatives["test"]
    b = leave_one_out_split(ds, 2).negatives["test"]
    assert not np.array_equal(a, b)


def test_split_small_catalog_error():
    rows = [RawInteraction("u", f"i{k}", None, k) for k in range(5)]
    with pytest.raises(DataError, match="99"):
        leave_one_out_split(k_core_filter(rows, 1, 1), 0)


def test_load_split_missing_files(tmp_path):
    with pytest.raises(DataError, match="missing"):
        load_split(tmp_path)


def test_train_negatives_forced_outcome(rng):
    positives = PositiveIndex([0], [0], 2)
    negs = sample_train_negatives(np.zeros(5, dtype=np.int64), 4, 2, positives, rng)
    assert (negs == 1).all()


def test_train_negatives_shape_and_exclusion(rng):
    users = np.array([0, 1, 2])
    items = np.array([3, 4, 5])
    positives = PositiveIndex(users, items, 50)
    negs = sample_train_negatives(users, 48, 50, positives, rng)
    assert negs.shape == (3, 48)
    assert not positives.contains(np.repeat(users[:, None], 48, axis=1), negs).any()


def test_popular_sampling_frequency(rng):
    table = PopularityTable.from_train(np.array([0] * 99 + [1]), 2)
    assert table.probabilities.sum() == pytest.approx(1.0, abs=1e-12)
    draws = table.draw(rng, 100_000)
    assert abs(np.mean(draws == 0) - 0.99) <= 0.01


def test_popular_sampling_excludes_positives(rng):
    table = PopularityTable.from_train(np.array([0, 0, 0, 1, 2]), 3)
    positives = PositiveIndex([0], [0], 3)
    negs = sample_train_negatives(np.zeros(10, dtype=np.int64), 5, 3, positives, rng,
                                  "popular", table)
    assert not (negs == 0).any()


def test_train_negatives_errors(rng):
    positives = PositiveIndex([0], [0], 3)
    with pytest.raises(ValueError):
        sample_train_negatives(np.zeros(1, dtype=np.int64), 0, 3, positives, rng)
    with pytest.raises(ValueError, match="popular"):
        sample_train_negatives(np.zeros(1, dtype=np.int64), 1, 3, positives, rng, "popular")
    with pytest.raises(ValueError, match="unknown sampling"):
        sample_train_negatives(np.zeros(1, dtype=np.int64), 1, 3, positives, rng, "zipf")
