import os

import numpy as np
import pytest

from eland.core.graph import build_graph
from eland.models.config_models import (
    AugmenterConfig,
    DetectorConfig,
    E2eConfig,
    GeneratorConfig,
    ItrConfig,
    RunConfig,
    SweepConfig,
)
from eland.models.graph_models import ActionRecord
from eland.services.datagen import generate


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long empirical runs, enabled with ELAND_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.getenv("ELAND_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set ELAND_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_actions(triples):
    """[(user, item, ts), ...] → ActionRecord list"""
    return [ActionRecord(user_id=u, item_id=v, timestamp=t) for u, v, t in triples]


@pytest.fixture
def toy_actions():
    return make_actions(
        [
            (0, 0, 10), (0, 1, 20), (0, 1, 30),
            (1, 1, 15), (1, 2, 25),
            (2, 0, 5), (2, 2, 12), (2, 2, 40), (2, 1, 41),
            (3, 2, 8), (3, 0, 9),
        ]
    )


@pytest.fixture
def toy_graph(toy_actions):
    rng = np.random.default_rng(11)
    user_features = rng.normal(size=(4, 3))
    item_features = rng.normal(size=(3, 3))
    return build_graph(toy_actions, user_features, item_features, labels=np.array([1, 0, 1, 0]))


@pytest.fixture
def small_generator_config():
    return GeneratorConfig(
        m=60,
        n=30,
        anomaly_fraction=0.2,
        bot_item_pool_size=3,
        feature_dim=4,
        n_clusters=3,
        benign_mean_actions=5,
        anomalous_mean_actions=8,
        seed=3,
    )


@pytest.fixture
def small_dataset(small_generator_config):
    return generate(small_generator_config)


@pytest.fixture
def fast_config():
    """小維度、少 epoch 的設定，讓端到端流程在測試中幾秒內完成"""
    detector = DetectorConfig(hidden_dim=8, epochs=15, learning_rate=0.05)
    augmenter = AugmenterConfig(hidden_dim=6, epochs=3, learning_rate=0.05)
    return RunConfig(
        detector=detector,
        itr=ItrConfig(iterations=1, kappa=20, detector=detector, augmenter=augmenter),
        e2e=E2eConfig(n_epochs=4, gamma=40, detector=detector, augmenter=augmenter),
        sweep=SweepConfig(fractions=[0.5, 1.0], methods=["baseline-gcn", "eland-itr"], seeds=[0, 1]),
    )


def random_actions(rng, m, n, max_per_user=4):
    """每位使用者至少一筆、時間戳互不相同的隨機行為"""
    triples = []
    for user in range(m):
        for _ in range(int(rng.integers(1, max_per_user + 1))):
            triples.append((user, int(rng.integers(n)), 0))
    order = rng.permutation(len(triples))
    return make_actions([(u, v, int(t)) for (u, v, _), t in zip(triples, order)])


def random_graph(seed, k=3):
    """小型隨機二分圖：使用者 3-7 位、item 2-5 個、常態特徵、隨機標籤 (兩類皆有)"""
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(3, 8)), int(rng.integers(2, 6))
    actions = random_actions(rng, m, n)
    labels = rng.integers(0, 2, size=m)
    labels[0], labels[1] = 1, 0
    graph = build_graph(actions, rng.normal(size=(m, k)), rng.normal(size=(n, k)), labels=labels)
    return graph, actions, rng
