from collections import Counter

import numpy as np
import pytest

from eland.core.graph import (
    augment_adjacency,
    build_graph,
    isolated_users,
    keep_count,
    node_features,
    normalize_adjacency,
    sequence_lengths,
    sequences_from_actions,
    truncate_by_time,
    truncate_earliest,
    user_degrees,
)
from eland.errors import DataValidationError, DimensionError, ParameterError
from tests.conftest import make_actions, random_actions


def features(count, k=2, seed=0):
    return np.random.default_rng(seed).normal(size=(count, k))


def dense_oracle(counts):
    m, n = counts.shape
    a_tilde = np.eye(m + n)
    a_tilde[:m, m:] += counts
    a_tilde[m:, :m] += counts.T
    degrees = a_tilde.sum(axis=1)
    out = np.empty_like(a_tilde)
    for i in range(m + n):
        for j in range(m + n):
            out[i, j] = a_tilde[i, j] / np.sqrt(degrees[i] * degrees[j])
    return out


# ---------- build_graph ----------

def test_build_graph_counts_repeated_actions():
    actions = make_actions([(0, 1, 0), (0, 1, 1), (2, 0, 2)])
    g = build_graph(actions, features(3), features(2))
    assert g.edges() == {(0, 1): 2, (2, 0): 1}


def test_build_graph_empty():
    g = build_graph([], features(3), features(4))
    assert (g.m, g.n) == (3, 4)
    assert g.adjacency.nnz == 0


def test_build_graph_matches_counting_oracle():
    rng = np.random.default_rng(5)
    triples = [(int(rng.integers(20)), int(rng.integers(15)), int(t)) for t in range(1000)]
    g = build_graph(make_actions(triples), features(20), features(15))
    oracle = Counter((u, v) for u, v, _ in triples)
    assert g.edges() == dict(oracle)
    assert g.total_weight() == 1000


def test_build_graph_rejects_out_of_range_ids():
    actions = make_actions([(0, 0, 0), (1, 5, 1)])
    with pytest.raises(DataValidationError, match="record 1"):
        build_graph(actions, features(2), features(3))


# ---------- truncation ----------

def user_records(user, length):
    return [(user, i % 3, 100 + i) for i in range(length)]


def test_truncate_keeps_earliest_records():
    actions = make_actions(user_records(0, 10))
    kept = truncate_earliest(actions, 0.2)
    assert [a.timestamp for a in kept] == [100, 101]


def test_truncate_keeps_at_least_one():
    kept = truncate_earliest(make_actions(user_records(0, 3)), 0.1)
    assert len(kept) == 1


def test_truncate_full_fraction_is_identity():
    actions = make_actions(user_records(0, 4) + user_records(1, 7))
    assert truncate_earliest(actions, 1.0) == actions


def test_truncate_orders_by_timestamp_not_input():
    actions = make_actions([(0, 2, 50), (0, 1, 10), (0, 0, 30)])
    kept = truncate_earliest(actions, 0.5)
    assert [(a.item_id, a.timestamp) for a in kept] == [(1, 10), (0, 30)]


@pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
def test_truncate_rejects_bad_fraction(fraction):
    with pytest.raises(ParameterError):
        truncate_earliest(make_actions(user_records(0, 3)), fraction)


@pytest.mark.parametrize("length, fraction, expected", [(10, 0.2, 2), (3, 0.1, 1), (30, 0.1, 3), (7, 1.0, 7)])
def test_keep_count(length, fraction, expected):
    assert keep_count(length, fraction) == expected


def test_truncate_with_reference_lengths_is_idempotent():
    actions = make_actions(user_records(0, 10))
    reference = sequence_lengths(actions)
    once = truncate_earliest(actions, 0.5, reference)
    twice = truncate_earliest(once, 0.5, reference)
    assert once == twice


def test_truncate_without_reference_lengths_shrinks_again():
    once = truncate_earliest(make_actions(user_records(0, 10)), 0.2)
    assert len(once) == 2
    assert len(truncate_earliest(once, 0.2)) == 1


def test_truncation_grows_by_per_user_prefixes():
    rng = np.random.default_rng(6)
    actions = random_actions(rng, 12, 5, max_per_user=15)

    def by_user(kept):
        grouped = {}
        for a in sorted(kept, key=lambda a: a.timestamp):
            grouped.setdefault(a.user_id, []).append((a.item_id, a.timestamp))
        return grouped

    fractions = np.sort(rng.uniform(0.01, 1.0, size=30))
    previous = by_user(truncate_earliest(actions, fractions[0]))
    for fraction in fractions[1:]:
        current = by_user(truncate_earliest(actions, fraction))
        assert previous.keys() == current.keys()
        for user, records in previous.items():
            assert current[user][: len(records)] == records
        previous = current


def test_truncate_by_time_window():
    actions = make_actions([(0, 0, 0), (0, 1, 40), (0, 2, 60), (0, 0, 100), (1, 1, 7)])
    kept = truncate_by_time(actions, 0.5)
    assert [(a.user_id, a.timestamp) for a in kept] == [(0, 0), (0, 40), (1, 7)]


# ---------- normalize_adjacency ----------

def test_normalize_single_edge():
    g = build_graph(make_actions([(0, 0, 0)]), features(1), features(1))
    np.testing.assert_allclose(normalize_adjacency(g).toarray(), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_normalize_edgeless_graph_is_identity():
    g = build_graph([], features(2), features(3))
    np.testing.assert_array_equal(normalize_adjacency(g).toarray(), np.eye(5))


@pytest.mark.parametrize("seed", range(100))
def test_normalize_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(1, 40)), int(rng.integers(1, 40))
    count = int(rng.integers(0, 3 * (m + n)))
    triples = [(int(rng.integers(m)), int(rng.integers(n)), t) for t in range(count)]
    g = build_graph(make_actions(triples), features(m), features(n))
    expected = dense_oracle(g.adjacency.toarray())
    assert np.max(np.abs(normalize_adjacency(g).toarray() - expected)) < 1e-12


# ---------- augment_adjacency ----------

def test_augment_adds_counts():
    g = build_graph(make_actions([(0, 1, 0), (0, 1, 1)]), features(1), features(2))
    augmented = augment_adjacency(g, {0: [1, 1]})
    assert augmented.edges() == {(0, 1): 4}
    assert g.edges() == {(0, 1): 2}


def test_augment_with_empty_predictions_is_identity(toy_graph):
    augmented = augment_adjacency(toy_graph, {})
    assert (augmented.adjacency != toy_graph.adjacency).nnz == 0


def test_augment_total_weight(toy_graph):
    rng = np.random.default_rng(0)
    predictions = {u: [int(v) for v in rng.integers(0, toy_graph.n, size=rng.integers(0, 6))] for u in range(4)}
    augmented = augment_adjacency(toy_graph, predictions)
    total = sum(len(items) for items in predictions.values())
    assert augmented.total_weight() == toy_graph.total_weight() + total


@pytest.mark.parametrize("predictions", [{9: [0]}, {0: [7]}])
def test_augment_rejects_bad_ids(toy_graph, predictions):
    with pytest.raises(DataValidationError):
        augment_adjacency(toy_graph, predictions)


# ---------- sequences ----------

def test_sequences_sorted_by_time():
    actions = make_actions([(0, 1, 5), (0, 0, 2)])
    g = build_graph(actions, features(1), features(2))
    (seq,) = sequences_from_actions(actions, g)
    assert seq.items == [0, 1]
    np.testing.assert_array_equal(seq.features, g.item_features[[0, 1]])


def test_sequences_append_embeddings(toy_actions, toy_graph):
    embeddings = np.arange(8, dtype=float).reshape(4, 2)
    for seq in sequences_from_actions(toy_actions, toy_graph, embeddings):
        assert seq.features.shape[1] == toy_graph.feature_dim + 2
        np.testing.assert_array_equal(seq.features[:, -2:], np.tile(embeddings[seq.user_id], (seq.length, 1)))


def test_sequences_stable_on_equal_timestamps():
    actions = make_actions([(0, 2, 5), (0, 0, 5), (0, 1, 5)])
    g = build_graph(actions, features(1), features(3))
    (seq,) = sequences_from_actions(actions, g)
    assert seq.items == [2, 0, 1]


def test_sequences_reject_wrong_embedding_rows(toy_actions, toy_graph):
    with pytest.raises(DimensionError):
        sequences_from_actions(toy_actions, toy_graph, np.zeros((3, 2)))


# ---------- helpers ----------

def test_user_degrees(toy_graph):
    np.testing.assert_array_equal(user_degrees(toy_graph), [3, 2, 4, 2])


def test_node_features_stacks_users_then_items(toy_graph):
    x = node_features(toy_graph, extra=np.ones((7, 2)))
    assert x.shape == (7, toy_graph.feature_dim + 2)
    np.testing.assert_array_equal(x[:4, :3], toy_graph.user_features)
    np.testing.assert_array_equal(x[4:, :3], toy_graph.item_features)


def test_isolated_users_counted():
    g = build_graph(make_actions([(0, 0, 0)]), features(3), features(1))
    assert isolated_users(g) == 2
