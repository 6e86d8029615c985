"""
合成行為資料產生器。

三種使用者：
- benign：依 Zipf 熱門度挑選 item，間隔為指數分布
- bot：固定間隔 (interval ± jitter) 發文，越到序列後段越集中在少數冷門 item
- advertiser：同樣集中到廣告 item 池 (特徵偏離正常群集)，間隔較短的指數分布
"""

import logging
import math
from collections import defaultdict
from typing import Dict, List, Sequence, Tuple

import numpy as np

from eland.core import numerics as nx
from eland.core.optim import Adam
from eland.errors import DataValidationError
from eland.models.config_models import GeneratorConfig
from eland.models.graph_models import ActionRecord, Dataset, Split
from eland.services.detector import bce_loss
from eland.services.metrics import auc

logger = logging.getLogger(__name__)

BENIGN = "benign"
BOT = "bot"
ADVERTISER = "advertiser"

ITEM_NOISE_SCALE = 0.3
START_WINDOW_SECONDS = 7 * 24 * 3600


def stratified_split(
    labels: np.ndarray, seed: int, ratios: Tuple[float, float, float] = (0.2, 0.2, 0.6)
) -> Split:
    """
    依標籤分層切成 train/val/test；每個類別取 floor(ratio·count)，餘數歸入 test。
    """
    if abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise DataValidationError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    labels = np.asarray(labels)
    parts: Dict[str, List[np.ndarray]] = {"train": [], "val": [], "test": []}
    for value in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == value))
        n_train = int(math.floor(ratios[0] * members.size))
        n_val = int(math.floor(ratios[1] * members.size))
        parts["train"].append(members[:n_train])
        parts["val"].append(members[n_train:n_train + n_val])
        parts["test"].append(members[n_train + n_val:])
    return Split(**{name: np.sort(np.concatenate(chunks)).astype(np.int64) for name, chunks in parts.items()})


def _check_feasible(config: GeneratorConfig) -> None:
    pools = 2 if config.advertiser_share > 0 else 1
    if config.bot_item_pool_size * pools > config.n:
        raise DataValidationError(
            f"item pools ({pools} × {config.bot_item_pool_size}) do not fit into n={config.n} items"
        )
    if math.floor(config.anomaly_fraction * config.m) < 1:
        raise DataValidationError(f"anomaly_fraction {config.anomaly_fraction} yields no anomalous user for m={config.m}")


def _item_catalog(config: GeneratorConfig, rng: np.random.Generator):
    """item 特徵 (群集中心 + 雜訊)、Zipf 熱門度、bot 池與廣告池"""
    k = config.feature_dim
    centroids = rng.normal(0.0, 1.0, size=(config.n_clusters, k))
    clusters = rng.integers(config.n_clusters, size=config.n)
    item_features = centroids[clusters] + rng.normal(0.0, ITEM_NOISE_SCALE, size=(config.n, k))

    ranking = rng.permutation(config.n)  # ranking[r] = 熱門度第 r 名的 item
    weights = 1.0 / np.arange(1, config.n + 1) ** config.zipf_exponent
    popularity = np.empty(config.n)
    popularity[ranking] = weights / weights.sum()

    pool = config.bot_item_pool_size
    bot_pool = np.sort(ranking[-pool:])
    ad_pool = np.sort(ranking[-2 * pool:-pool]) if config.advertiser_share > 0 else np.zeros(0, dtype=np.int64)
    if ad_pool.size:
        direction = rng.normal(size=k)
        direction /= np.linalg.norm(direction)
        item_features[ad_pool] += config.ad_feature_shift * direction
    return item_features, popularity, bot_pool, ad_pool


def _ramped_items(
    length: int, pool: np.ndarray, popularity: np.ndarray, config: GeneratorConfig, rng: np.random.Generator
) -> np.ndarray:
    """序列位置越後面，越可能落在專用 item 池"""
    position = np.arange(length) / max(length - 1, 1)
    share = config.pool_share_start + (config.pool_share_end - config.pool_share_start) * position
    from_pool = rng.random(length) < share
    items = rng.choice(popularity.size, size=length, p=popularity)
    items[from_pool] = rng.choice(pool, size=int(from_pool.sum()))
    return items


def _bot_gaps(length: int, config: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    """至少 bot_regular_share 比例的間隔落在 interval ± jitter (整數秒)"""
    n_gaps = length - 1
    if n_gaps <= 0:
        return np.zeros(0, dtype=np.int64)
    jitter = int(round(config.bot_jitter))
    interval = int(round(config.bot_interval_seconds))
    n_regular = int(math.ceil(config.bot_regular_share * n_gaps))
    regular = interval + rng.integers(-jitter, jitter + 1, size=n_gaps)
    irregular = np.maximum(1, np.round(rng.exponential(config.benign_mean_interval_seconds, size=n_gaps))).astype(np.int64)
    is_regular = np.zeros(n_gaps, dtype=bool)
    is_regular[rng.permutation(n_gaps)[:n_regular]] = True
    return np.where(is_regular, regular, irregular).astype(np.int64)


def _exponential_gaps(length: int, mean: float, rng: np.random.Generator) -> np.ndarray:
    if length <= 1:
        return np.zeros(0, dtype=np.int64)
    return np.maximum(1, np.round(rng.exponential(mean, size=length - 1))).astype(np.int64)


def generate(config: GeneratorConfig) -> Dataset:
    """
    產生一份帶標籤的合成資料集 (同一 config 結果完全相同)。

    Returns:
        Dataset：行為日誌、使用者/物品特徵、標籤、20/20/60 分層切分與每位使用者的類型
    """
    _check_feasible(config)
    rng = np.random.default_rng(config.seed)
    item_features, popularity, bot_pool, ad_pool = _item_catalog(config, rng)

    n_anomalous = int(math.floor(config.anomaly_fraction * config.m))
    anomalous = rng.permutation(config.m)[:n_anomalous]
    n_advertisers = int(math.floor(config.advertiser_share * n_anomalous)) if ad_pool.size else 0
    archetypes = [BENIGN] * config.m
    for position, user_id in enumerate(anomalous):
        archetypes[user_id] = ADVERTISER if position < n_advertisers else BOT
    labels = np.zeros(config.m, dtype=np.int64)
    labels[anomalous] = 1

    user_features = rng.normal(0.0, 1.0, size=(config.m, config.feature_dim))
    user_features[anomalous] += config.user_feature_shift

    rows: List[Tuple[int, int, int, int]] = []
    for user_id in range(config.m):
        kind = archetypes[user_id]
        mean_actions = config.benign_mean_actions if kind == BENIGN else config.anomalous_mean_actions
        length = 1 + int(rng.poisson(mean_actions - 1))
        start = config.start_time + int(rng.integers(0, START_WINDOW_SECONDS))
        if kind == BOT:
            items = _ramped_items(length, bot_pool, popularity, config, rng)
            gaps = _bot_gaps(length, config, rng)
        elif kind == ADVERTISER:
            items = _ramped_items(length, ad_pool, popularity, config, rng)
            gaps = _exponential_gaps(length, config.advertiser_mean_interval_seconds, rng)
        else:
            items = rng.choice(config.n, size=length, p=popularity)
            gaps = _exponential_gaps(length, config.benign_mean_interval_seconds, rng)
        timestamps = start + np.concatenate([[0], np.cumsum(gaps)])
        for position, (item_id, ts) in enumerate(zip(items, timestamps)):
            rows.append((int(ts), user_id, position, int(item_id)))

    rows.sort()
    actions = [ActionRecord(user_id=user_id, item_id=item_id, timestamp=ts) for ts, user_id, _, item_id in rows]
    split = stratified_split(labels, config.seed)
    logger.info(
        f"generated {len(actions)} actions for {config.m} users ({n_anomalous} anomalous, "
        f"{n_advertisers} advertisers) over {config.n} items"
    )
    return Dataset(
        actions=actions,
        user_features=user_features,
        item_features=item_features,
        labels=labels,
        split=split,
        archetypes=archetypes,
    )


def _timestamps_by_user(actions: Sequence[ActionRecord]) -> Dict[int, np.ndarray]:
    grouped: Dict[int, List[int]] = defaultdict(list)
    for action in actions:
        grouped[action.user_id].append(action.timestamp)
    return {user_id: np.sort(np.array(ts, dtype=np.int64), kind="stable") for user_id, ts in grouped.items()}


def interval_regularity(
    actions: Sequence[ActionRecord], interval: float = 30.0, jitter: float = 2.0
) -> Dict[int, float]:
    """每位使用者 (≥ 2 筆行為) 的相鄰間隔落在 interval ± jitter 的比例"""
    shares = {}
    for user_id, timestamps in _timestamps_by_user(actions).items():
        if timestamps.size < 2:
            continue
        gaps = np.diff(timestamps)
        shares[user_id] = float(np.mean(np.abs(gaps - interval) <= jitter))
    return shares


def behavior_features(actions: Sequence[ActionRecord], m: int, interval: float = 30.0, jitter: float = 2.0) -> np.ndarray:
    """每位使用者的 [log(1+行為數), 規律間隔比例, log(1+中位間隔)]"""
    features = np.zeros((m, 3))
    regularity = interval_regularity(actions, interval, jitter)
    for user_id, timestamps in _timestamps_by_user(actions).items():
        features[user_id, 0] = np.log1p(timestamps.size)
        features[user_id, 1] = regularity.get(user_id, 0.0)
        if timestamps.size > 1:
            features[user_id, 2] = np.log1p(np.median(np.diff(timestamps)))
    return features


def calibration_auc(dataset: Dataset, epochs: int = 300, learning_rate: float = 0.05, seed: int = 0) -> float:
    """
    以 degree + 間隔特徵的 logistic regression 在 train 上訓練、在 test 上計算 AUC，
    檢查產生器的異常是否可分。
    """
    features = behavior_features(dataset.actions, dataset.m)
    train = dataset.split.mask("train", dataset.m)
    mean = features[train].mean(axis=0)
    std = features[train].std(axis=0)
    std[std == 0] = 1.0
    x = (features - mean) / std

    params = nx.ParamStore(seed, namespace="calibration")
    weight = params.add_weight("logistic.w", x.shape[1], 1)
    bias = params.add_bias("logistic.b", 1)
    optimizer = Adam(params.tensors(), lr=learning_rate)
    for _ in range(epochs):
        optimizer.zero_grad()
        yhat = nx.reshape(nx.sigmoid(nx.add(nx.matmul(x, weight), bias)), (dataset.m,))
        bce_loss(yhat, dataset.labels, train).backward()
        optimizer.step()

    scores = (x @ weight.values + bias.values).ravel()
    test = dataset.split.mask("test", dataset.m)
    value = auc(scores[test], dataset.labels[test])
    logger.info(f"calibration baseline test AUC = {value:.4f}")
    return value
