"""
二分圖與行為序列：由行為日誌建圖、最早比例截斷、對稱正規化、以預測行為擴增鄰接矩陣。
"""

import logging
import math
from collections import defaultdict
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from eland.errors import DataValidationError, DimensionError, ParameterError
from eland.models.graph_models import ActionRecord, BipartiteGraph, FeatureSequence

logger = logging.getLogger(__name__)


def build_graph(
    actions: Sequence[ActionRecord],
    user_features: np.ndarray,
    item_features: np.ndarray,
    labels: Optional[np.ndarray] = None,
) -> BipartiteGraph:
    """
    由行為紀錄建立加權二分圖，權重為同一 (user, item) 的行為次數。

    Args:
        actions: 行為紀錄
        user_features: m×k
        item_features: n×k
        labels: 可選的 {0,1}^m

    Returns:
        BipartiteGraph
    """
    user_features = np.asarray(user_features, dtype=np.float64)
    item_features = np.asarray(item_features, dtype=np.float64)
    m, n = user_features.shape[0], item_features.shape[0]

    users = np.fromiter((a.user_id for a in actions), dtype=np.int64, count=len(actions))
    items = np.fromiter((a.item_id for a in actions), dtype=np.int64, count=len(actions))
    bad = np.flatnonzero((users >= m) | (items >= n))
    if bad.size:
        i = int(bad[0])
        raise DataValidationError(
            f"action record {i} (user={users[i]}, item={items[i]}) out of bounds for m={m}, n={n}"
        )

    adjacency = sp.coo_matrix(
        (np.ones(len(actions), dtype=np.float64), (users, items)), shape=(m, n)
    ).tocsr()
    adjacency.sum_duplicates()
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
    return BipartiteGraph(
        m=m,
        n=n,
        adjacency=adjacency,
        user_features=user_features,
        item_features=item_features,
        labels=labels,
    )


def _group_by_user(actions: Sequence[ActionRecord]) -> Dict[int, List[int]]:
    """每位使用者的紀錄索引，依時間排序 (同時間保留輸入順序)"""
    grouped: Dict[int, List[int]] = defaultdict(list)
    for index, action in enumerate(actions):
        grouped[action.user_id].append(index)
    for indices in grouped.values():
        indices.sort(key=lambda i: actions[i].timestamp)
    return grouped


def _check_fraction(fraction: float) -> None:
    if not (0 < fraction <= 1):
        raise ParameterError(f"fraction must lie in (0, 1], got {fraction}")


def keep_count(length: int, fraction: float) -> int:
    """ceil(p·l)，至少 1 筆 (1e-9 容忍浮點誤差，例如 0.1·30)"""
    return max(1, min(length, math.ceil(fraction * length - 1e-9)))


def truncate_earliest(
    actions: Sequence[ActionRecord],
    fraction: float,
    reference_lengths: Optional[Mapping[int, int]] = None,
) -> List[ActionRecord]:
    """
    每位使用者保留時間最早的 ceil(p·l_u) 筆行為，輸出維持原輸入順序。

    l_u 預設為輸入中的筆數，因此對已截斷的結果再截斷一次會再縮短
    (10 筆在 p=0.2 保留 2 筆，再截斷只剩 1 筆)。
    需要冪等時傳入原始長度 reference_lengths：對同一參考長度重複截斷結果不變。
    """
    _check_fraction(fraction)
    keep = np.zeros(len(actions), dtype=bool)
    for user_id, indices in _group_by_user(actions).items():
        length = len(indices)
        if reference_lengths is not None:
            length = int(reference_lengths.get(user_id, length))
        count = min(len(indices), keep_count(length, fraction))
        keep[indices[:count]] = True
    return [a for a, kept in zip(actions, keep) if kept]


def truncate_by_time(actions: Sequence[ActionRecord], fraction: float) -> List[ActionRecord]:
    """每位使用者保留 ts ≤ first_ts + p·(last_ts − first_ts) 的行為，至少 1 筆"""
    _check_fraction(fraction)
    keep = np.zeros(len(actions), dtype=bool)
    for indices in _group_by_user(actions).values():
        first = actions[indices[0]].timestamp
        last = actions[indices[-1]].timestamp
        cutoff = first + fraction * (last - first)
        keep[indices[0]] = True
        for i in indices[1:]:
            if actions[i].timestamp <= cutoff:
                keep[i] = True
    return [a for a, kept in zip(actions, keep) if kept]


def sequence_lengths(actions: Iterable[ActionRecord]) -> Dict[int, int]:
    lengths: Dict[int, int] = defaultdict(int)
    for action in actions:
        lengths[action.user_id] += 1
    return dict(lengths)


def normalize_adjacency(g: BipartiteGraph) -> sp.csr_matrix:
    """
    D̃^{-1/2} Ã D̃^{-1/2}，Ã 為 (m+n)×(m+n) 對稱區塊矩陣加上自環。
    自環保證 degree 為正。
    """
    block = sp.bmat([[None, g.adjacency], [g.adjacency.T, None]], format="csr", dtype=np.float64)
    a_tilde = block + sp.identity(g.m + g.n, format="csr", dtype=np.float64)
    rowsum = np.asarray(a_tilde.sum(axis=1)).flatten()
    d_inv_sqrt = np.power(rowsum, -0.5)
    d_mat_inv_sqrt = sp.diags(d_inv_sqrt)
    return (d_mat_inv_sqrt @ a_tilde @ d_mat_inv_sqrt).tocsr()


def augment_adjacency(g: BipartiteGraph, predictions: Mapping[int, Sequence[int]]) -> BipartiteGraph:
    """A' = A + Σ O(u, v)：每個預測的 (u, v) 權重加 1，回傳新圖，原圖不變"""
    users: List[int] = []
    items: List[int] = []
    for user_id, predicted in predictions.items():
        if not 0 <= user_id < g.m:
            raise DataValidationError(f"predicted user id {user_id} outside [0, {g.m})")
        for item_id in predicted:
            if not 0 <= item_id < g.n:
                raise DataValidationError(f"predicted item id {item_id} for user {user_id} outside [0, {g.n})")
            users.append(int(user_id))
            items.append(int(item_id))
    if not users:
        return g
    extra = sp.coo_matrix((np.ones(len(users)), (users, items)), shape=(g.m, g.n)).tocsr()
    adjacency = (g.adjacency + extra).tocsr()
    adjacency.sum_duplicates()
    return g.model_copy(update={"adjacency": adjacency})


def sequences_from_actions(
    actions: Sequence[ActionRecord],
    g: BipartiteGraph,
    embeddings: Optional[np.ndarray] = None,
) -> List[FeatureSequence]:
    """
    每位有行為的使用者一條依時間排序的特徵序列；給定 embeddings 時每步特徵為 x ⊕ z_u。
    """
    if embeddings is not None:
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if embeddings.shape[0] != g.m:
            raise DimensionError(f"embeddings must have m={g.m} rows, got {embeddings.shape}")
    sequences = []
    for user_id, indices in sorted(_group_by_user(actions).items()):
        items = [actions[i].item_id for i in indices]
        features = g.item_features[items]
        z_u = None
        if embeddings is not None:
            z_u = embeddings[user_id]
            features = np.hstack([features, np.tile(z_u, (len(items), 1))])
        sequences.append(FeatureSequence(user_id=user_id, items=items, features=features, embedding=z_u))
    return sequences


def user_degrees(g: BipartiteGraph) -> np.ndarray:
    """每位使用者的加權 degree (行為次數)"""
    return np.asarray(g.adjacency.sum(axis=1)).ravel()


def node_features(g: BipartiteGraph, extra: Optional[np.ndarray] = None) -> np.ndarray:
    """X = [X^u; X^v]，可再接上 (m+n)×d 的 embedding 區塊"""
    x = np.vstack([g.user_features, g.item_features])
    if extra is not None:
        if extra.shape[0] != g.m + g.n:
            raise DimensionError(f"extra node block must have m+n={g.m + g.n} rows, got {extra.shape}")
        x = np.hstack([x, extra])
    return x


def isolated_users(g: BipartiteGraph) -> int:
    count = int(np.sum(user_degrees(g) == 0))
    if count:
        logger.warning(f"{count} users have no actions and remain as self-loop-only nodes")
    return count
