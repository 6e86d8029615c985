import numpy as np
import pytest

from eland.errors import DimensionError, MetricUndefinedError
from eland.services.metrics import auc, average_precision, masked_metrics


def pairwise_auc(scores, labels):
    positives = [s for s, y in zip(scores, labels) if y == 1]
    negatives = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in positives:
        for q in negatives:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(positives) * len(negatives))


def sweep_ap(scores, labels):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    n_pos = sum(labels)
    hits, total, previous_recall = 0, 0.0, 0.0
    for rank, i in enumerate(order, start=1):
        hits += labels[i]
        recall = hits / n_pos
        total += (recall - previous_recall) * hits / rank
        previous_recall = recall
    return total


def random_instance(rng):
    size = int(rng.integers(2, 201))
    labels = rng.integers(0, 2, size=size)
    labels[0], labels[1] = 0, 1
    # 粗糙的分數產生大量同分
    scores = np.round(rng.random(size), int(rng.integers(1, 4)))
    return scores, labels


def test_auc_examples():
    assert auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0
    assert auc([0.1, 0.3, 0.8, 0.9], [1, 1, 0, 0]) == 0.0
    assert auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5


def test_ap_examples():
    assert average_precision([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0
    assert average_precision([0.9, 0.8, 0.3], [0, 1, 0]) == pytest.approx(0.5, abs=1e-15)
    assert average_precision([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == pytest.approx((1 + 2 / 3) / 2, abs=1e-15)


def test_ap_ties_follow_index_order():
    assert average_precision([0.5, 0.5], [0, 1]) == pytest.approx(0.5, abs=1e-15)
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(500):
        scores, labels = random_instance(rng)
        assert abs(auc(scores, labels) - pairwise_auc(scores.tolist(), labels.tolist())) < 1e-12


def test_ap_matches_sweep_oracle():
    rng = np.random.default_rng(1)
    for _ in range(500):
        scores, labels = random_instance(rng)
        assert abs(average_precision(scores, labels) - sweep_ap(scores.tolist(), labels.tolist())) < 1e-12


def test_auc_invariant_to_monotone_transform():
    rng = np.random.default_rng(2)
    scores, labels = random_instance(rng)
    assert auc(np.exp(3 * scores), labels) == auc(scores, labels)


@pytest.mark.parametrize("labels", [[1, 1, 1], [0, 0, 0]])
def test_auc_single_class(labels):
    with pytest.raises(MetricUndefinedError):
        auc([0.1, 0.2, 0.3], labels)


def test_ap_needs_positives():
    with pytest.raises(MetricUndefinedError):
        average_precision([0.1, 0.2], [0, 0])


def test_length_mismatch():
    with pytest.raises(DimensionError):
        auc([0.1, 0.2], [0, 1, 1])


def test_non_binary_labels():
    with pytest.raises(MetricUndefinedError):
        auc([0.1, 0.2], [0, 2])


def test_masked_metrics_skip_single_class():
    scores = np.array([0.1, 0.9, 0.4])
    labels = np.array([0, 1, 0])
    assert masked_metrics(scores, labels, np.array([True, False, True])) == (None, None)
    value_auc, value_ap = masked_metrics(scores, labels, np.ones(3, dtype=bool))
    assert value_auc == 1.0 and value_ap == 1.0
