from collections import Counter

import numpy as np
import pytest

from eland.errors import DataValidationError
from eland.models.config_models import GeneratorConfig
from eland.services import datagen


def test_default_anomaly_count():
    dataset = datagen.generate(GeneratorConfig(seed=0))
    assert int(dataset.labels.sum()) == 200
    counts = Counter(dataset.archetypes)
    assert counts[datagen.ADVERTISER] == 60 and counts[datagen.BOT] == 140


def test_generation_is_deterministic(small_generator_config):
    first = datagen.generate(small_generator_config)
    second = datagen.generate(small_generator_config)
    assert first.actions == second.actions
    np.testing.assert_array_equal(first.user_features, second.user_features)
    np.testing.assert_array_equal(first.item_features, second.item_features)
    np.testing.assert_array_equal(first.split.test, second.split.test)


def test_different_seeds_differ(small_generator_config):
    other = small_generator_config.model_copy(update={"seed": 4})
    assert datagen.generate(small_generator_config).actions != datagen.generate(other).actions


def test_records_are_in_range(small_dataset, small_generator_config):
    for action in small_dataset.actions:
        assert 0 <= action.user_id < small_dataset.m
        assert 0 <= action.item_id < small_dataset.n
        assert action.timestamp >= small_generator_config.start_time
    assert small_dataset.user_features.shape == (60, 4)
    assert small_dataset.item_features.shape == (30, 4)


def test_every_user_acts(small_dataset):
    assert {a.user_id for a in small_dataset.actions} == set(range(small_dataset.m))


def test_bot_intervals_are_regular(small_dataset, small_generator_config):
    shares = datagen.interval_regularity(
        small_dataset.actions, small_generator_config.bot_interval_seconds, small_generator_config.bot_jitter
    )
    bots = [u for u, kind in enumerate(small_dataset.archetypes) if kind == datagen.BOT]
    assert bots
    for user_id in bots:
        if user_id in shares:
            assert shares[user_id] >= 2 / 3


def test_bots_drift_into_their_pool():
    config = GeneratorConfig(m=400, n=200, anomaly_fraction=0.2, advertiser_share=0.0, anomalous_mean_actions=30, seed=1)
    dataset = datagen.generate(config)
    bots = {u for u, kind in enumerate(dataset.archetypes) if kind == datagen.BOT}
    by_user = {}
    for action in dataset.actions:
        if action.user_id in bots:
            by_user.setdefault(action.user_id, []).append(action.item_id)
    pool = {item for item, _ in Counter(i for items in by_user.values() for i in items).most_common(config.bot_item_pool_size)}

    early, late = [], []
    for items in by_user.values():
        half = len(items) // 2
        early.extend(items[:half])
        late.extend(items[half:])
    share = lambda items: np.mean([i in pool for i in items])
    assert share(late) > share(early) + 0.1


def test_stratified_split_proportions(small_dataset):
    split = small_dataset.split
    labels = small_dataset.labels
    assert sorted(np.concatenate([split.train, split.val, split.test]).tolist()) == list(range(60))
    for part, expected in ((split.train, (9, 2)), (split.val, (9, 2))):
        assert (int(np.sum(labels[part] == 0)), int(np.sum(labels[part] == 1))) == expected
    assert int(np.sum(labels[split.test] == 1)) == 8


def test_split_rejects_bad_ratios():
    with pytest.raises(DataValidationError):
        datagen.stratified_split(np.array([0, 1, 0, 1]), seed=0, ratios=(0.5, 0.5, 0.5))


@pytest.mark.parametrize(
    "update",
    [
        {"n": 30, "bot_item_pool_size": 20},
        {"m": 60, "anomaly_fraction": 0.01},
    ],
)
def test_infeasible_configs(small_generator_config, update):
    with pytest.raises(DataValidationError):
        datagen.generate(small_generator_config.model_copy(update=update))


def test_behavior_features_shape(small_dataset):
    features = datagen.behavior_features(small_dataset.actions, small_dataset.m)
    assert features.shape == (60, 3)
    assert np.all(features[:, 1] >= 0) and np.all(features[:, 1] <= 1)


def test_calibration_auc_in_range(small_dataset):
    value = datagen.calibration_auc(small_dataset, epochs=20)
    assert 0.0 <= value <= 1.0


@pytest.mark.slow
def test_default_dataset_is_separable_by_behavior():
    assert datagen.calibration_auc(datagen.generate(GeneratorConfig(seed=0))) >= 0.75
