import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uipcmf.model import (
    UIPCMF,
    parameter_count,
    preference_vector,
    score_breakdown,
    uipc_score,
)
from uipcmf.similarity import (
    shifted_cosine,
    similarity_backward,
    similarity_matrix,
    similarity_vector,
)

from conftest import random_uipc


def brute_force_score(params, u, t):
    """Naive double loop recomputing every cosine."""
    total = 0.0
    for i, pu in enumerate(params.user_prototypes):
        for j, pt in enumerate(params.item_prototypes):
            total += (params.connections[i, j]
                      * shifted_cosine(params.user_embeddings[u], pu)
                      * shifted_cosine(params.item_embeddings[t], pt))
    return total


@pytest.mark.parametrize("a, b, expected", [
    ((1, 0), (1, 0), 2.0),
    ((1, 0), (-1, 0), 0.0),
    ((1, 0), (0, 1), 1.0),
])
def test_shifted_cosine_base_cases(a, b, expected):
    assert shifted_cosine(a, b) == pytest.approx(expected, abs=1e-15)


def test_shifted_cosine_zero_vector_is_neutral():
    assert shifted_cosine((0, 0), (1, 2)) == 1.0
    sim, cache = similarity_matrix(np.zeros((1, 3)), np.ones((2, 3)))
    assert np.all(sim == 1.0)
    ga, gb = similarity_backward(cache, np.ones((1, 2)))
    assert np.all(np.isfinite(ga)) and np.all(np.isfinite(gb))
    assert np.all(ga == 0)


def test_similarity_vector_examples():
    protos = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(similarity_vector([1.0, 0.0], protos), [2.0, 1.0])
    np.testing.assert_allclose(similarity_vector([3.0, 4.0], [[3.0, 4.0]]), [2.0])


def test_similarity_vector_matches_per_entry_oracle(rng):
    x = rng.normal(size=6)
    protos = rng.normal(size=(4, 6))
    oracle = [1 + x @ p / (np.linalg.norm(x) * np.linalg.norm(p)) for p in protos]
    np.testing.assert_allclose(similarity_vector(x, protos), oracle, rtol=1e-14)


def test_similarity_vector_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        similarity_vector(np.ones(3), np.ones((2, 4)))


def test_similarity_backward_matches_finite_differences(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(5, 4))
    w = rng.normal(size=(3, 5))
    _, cache = similarity_matrix(a, b)
    ga, gb = similarity_backward(cache, w)
    h = 1e-6
    for arr, g in ((a, ga), (b, gb)):
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = (similarity_matrix(a, b)[0] * w).sum()
            arr[idx] = old - h
            down = (similarity_matrix(a, b)[0] * w).sum()
            arr[idx] = old
            num[idx] = (up - down) / (2 * h)
        np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-8)


def test_score_zero_connections(rng):
    params = random_uipc(rng)
    params.connections[:] = 0
    for u in range(params.n_users):
        for t in range(params.n_items):
            assert uipc_score(params, u, t) == 0.0


def test_score_single_prototype_hand_value():
    params = UIPCMF(
        user_embeddings=[[1.0, 0.0]], item_embeddings=[[0.0, 2.0]],
        user_prototypes=[[1.0, 0.0]], item_prototypes=[[0.0, 1.0]],
        connections=[[0.5]],
    )
    assert uipc_score(params, 0, 0) == pytest.approx(2.0, abs=1e-15)
    br = score_breakdown(params, 0, 0)
    np.testing.assert_allclose(br.prototype_scores, [2.0])
    assert br.total == pytest.approx(2.0)


def test_score_matches_double_loop_oracle(rng):
    params = random_uipc(rng, n_users=4, n_items=5, dim=6, n_up=3, n_ip=4)
    for u in range(4):
        for t in range(5):
            assert uipc_score(params, u, t) == pytest.approx(brute_force_score(params, u, t),
                                                             abs=1e-12)


def test_vectorized_score_matrix_matches_scalar_path(rng):
    params = random_uipc(rng, n_users=5, n_items=7)
    users = np.array([0, 3, 4])
    items = rng.integers(0, 7, size=(3, 6))
    mat = params.score_matrix(users, items)
    for r, u in enumerate(users):
        for c, t in enumerate(items[r]):
            assert mat[r, c] == pytest.approx(uipc_score(params, u, t), rel=1e-12, abs=1e-12)


def test_preference_vector_examples():
    params = UIPCMF(
        user_embeddings=[[1.0, 0.0]], item_embeddings=[[1.0, 0.0], [0.0, 1.0]],
        user_prototypes=[[2.0, 0.0]], item_prototypes=[[1.0, 0.0], [0.0, 1.0]],
        connections=[[1.0, -2.0]],
    )
    np.testing.assert_allclose(preference_vector(params, 0), [2.0, -4.0])
    params.connections[:] = 0
    np.testing.assert_array_equal(preference_vector(params, 0), [0.0, 0.0])


def test_score_is_preference_dot_item_similarity(rng):
    params = random_uipc(rng)
    for u in range(params.n_users):
        r = preference_vector(params, u)
        for t in range(params.n_items):
            t_star = similarity_vector(params.item_embeddings[t], params.item_prototypes)
            assert uipc_score(params, u, t) == pytest.approx(r @ t_star, rel=1e-9, abs=1e-12)


def test_breakdown_identity_on_random_pairs(rng):
    params = random_uipc(rng, n_users=20, n_items=30, dim=8, n_up=5, n_ip=6)
    for _ in range(1000):
        u, t = int(rng.integers(20)), int(rng.integers(30))
        br = score_breakdown(params, u, t)
        score = uipc_score(params, u, t)
        assert abs(br.total - score) <= 1e-9 * (1 + abs(br.total))
        np.testing.assert_array_equal(br.prototype_scores, br.preferences * br.t_star)


def test_zero_connection_breakdown(rng):
    params = random_uipc(rng)
    params.connections[:] = 0
    br = score_breakdown(params, 1, 2)
    assert not br.prototype_scores.any() and br.total == 0.0


@pytest.mark.parametrize("fn", [uipc_score, score_breakdown])
def test_index_errors(rng, fn):
    params = random_uipc(rng)
    with pytest.raises(IndexError):
        fn(params, 99, 0)
    with pytest.raises(IndexError):
        fn(params, 0, -1)


def test_shape_invariants_enforced(rng):
    with pytest.raises(ValueError):
        UIPCMF(rng.normal(size=(2, 3)), rng.normal(size=(5, 3)), rng.normal(size=(3, 3)),
               rng.normal(size=(2, 3)), rng.normal(size=(3, 2)))  # Lu > N
    with pytest.raises(ValueError):
        UIPCMF(rng.normal(size=(4, 3)), rng.normal(size=(5, 3)), rng.normal(size=(2, 3)),
               rng.normal(size=(2, 3)), rng.normal(size=(3, 2)))  # connections shape


@pytest.mark.parametrize("kind, expected", [
    ("mf", 1_000_000),
    ("acf", 1_010_000),
    ("protomf", 1_040_000),
    ("uipc-mf", 1_030_000),
])
def test_parameter_count_table(kind, expected):
    assert parameter_count(5000, 5000, 100, 100, 100, kind) == expected


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.sampled_from(range(5)))
def test_scale_invariance(seed, scale, which):
    rng = np.random.default_rng(seed)
    params = random_uipc(rng)
    base = uipc_score(params, 2, 3)
    name = ["user_embeddings", "item_embeddings", "user_prototypes", "item_prototypes"][which % 4]
    arr = getattr(params, name)
    arr[rng.integers(arr.shape[0])] *= scale
    assert uipc_score(params, 2, 3) == pytest.approx(base, rel=1e-9, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 3), elements=finite), arrays(np.float64, (5, 3), elements=finite))
def test_similarities_stay_in_range(a, b):
    sim, _ = similarity_matrix(a, b)
    assert np.all(sim >= 0.0) and np.all(sim <= 2.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_linearity_in_connections(seed):
    rng = np.random.default_rng(seed)
    p1 = random_uipc(rng)
    w2 = rng.normal(size=p1.connections.shape)
    p2 = UIPCMF(p1.user_embeddings, p1.item_embeddings, p1.user_prototypes,
                p1.item_prototypes, w2)
    p12 = UIPCMF(p1.user_embeddings, p1.item_embeddings, p1.user_prototypes,
                 p1.item_prototypes, p1.connections + w2)
    lhs = uipc_score(p12, 1, 4)
    rhs = uipc_score(p1, 1, 4) + uipc_score(p2, 1, 4)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)
