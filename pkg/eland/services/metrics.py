import logging

import numpy as np
from scipy.stats import rankdata

from eland.errors import DimensionError, MetricUndefinedError

logger = logging.getLogger(__name__)


def _prepare(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DimensionError(f"scores {scores.shape} and labels {labels.shape} must have the same length")
    if not np.all(np.isin(labels, (0, 1))):
        raise MetricUndefinedError("labels must be 0/1")
    return scores, labels.astype(np.int64)


def auc(scores, labels) -> float:
    """
    ROC AUC：隨機正例分數高於隨機負例的機率，同分計 1/2 (rank-sum 公式)。
    """
    scores, labels = _prepare(scores, labels)
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUC is undefined when labels contain a single class")
    ranks = rankdata(scores, method="average")
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """
    AP = Σ_k (recall_k − recall_{k−1})·precision_k，依分數遞減排序，同分以索引遞增排列。
    """
    scores, labels = _prepare(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricUndefinedError("average precision is undefined without positive labels")
    order = np.lexsort((np.arange(scores.size), -scores))
    hits = labels[order]
    precision = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision[hits == 1].sum() / n_pos)


def masked_metrics(scores, labels, mask):
    """在遮罩內計算 (AUC, AP)；單一類別時回傳 None"""
    if labels is None:
        return None, None
    mask = np.asarray(mask, dtype=bool)
    try:
        return auc(scores[mask], labels[mask]), average_precision(scores[mask], labels[mask])
    except MetricUndefinedError as e:
        logger.warning(f"metric skipped: {e}")
        return None, None
