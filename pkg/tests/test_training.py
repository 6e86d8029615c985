from pathlib import Path

import numpy as np
import pytest

from eland.config import load_run_config
from eland.core import numerics as nx
from eland.core.graph import build_graph
from eland.errors import ConfigurationError, ParameterError
from eland.models.config_models import AugmenterConfig, DetectorConfig, DetectorVariant, E2eConfig
from eland.models.graph_models import Split
from eland.models.result_models import IterationRecord
from eland.services import detector as det
from eland.services import training
from eland.services.datagen import generate
from eland.services.evaluation import early_sweep
from eland.utils.helpers import derive_seed
from tests.conftest import random_graph

PRESET = Path(__file__).resolve().parent.parent / "configs" / "synthetic_default.json"


def dataset_graph(dataset, labels=None):
    labels = dataset.labels if labels is None else labels
    return build_graph(dataset.actions, dataset.user_features, dataset.item_features, labels)


def toy_split():
    return Split(train=np.array([0, 1, 3]), val=np.array([2]), test=np.array([], dtype=np.int64))


# ---------- tau schedule ----------

@pytest.mark.parametrize("epoch, expected", [(0, 5.0), (200, 0.5), (100, 2.75)])
def test_anneal_tau_linear(epoch, expected):
    assert training.anneal_tau(epoch, 201, 5.0, 0.5) == pytest.approx(expected, abs=1e-12)


def test_anneal_tau_single_epoch():
    assert training.anneal_tau(0, 1, 5.0, 0.5) == 5.0


@pytest.mark.parametrize("epoch", [-1, 201])
def test_anneal_tau_out_of_range(epoch):
    with pytest.raises(ParameterError):
        training.anneal_tau(epoch, 201, 5.0, 0.5)


def test_e2e_config_rejects_rising_temperature():
    with pytest.raises(ValueError):
        E2eConfig(tau_start=0.5, tau_end=1.0)


# ---------- itr ----------

def test_itr_single_iteration(small_dataset, fast_config):
    result = training.run_eland_itr(
        dataset_graph(small_dataset), small_dataset.actions, small_dataset.split, fast_config.itr
    )
    assert [record.iteration for record in result.trace] == [0, 1]
    assert result.selected_iteration == 1
    assert result.suspiciousness.shape == (small_dataset.m,)
    assert result.plan is not None and result.plan.total_predictions() == result.trace[1].predicted_actions


def test_itr_features_widen_once(small_dataset, fast_config):
    config = fast_config.itr.model_copy(update={"iterations": 2})
    result = training.run_eland_itr(dataset_graph(small_dataset), small_dataset.actions, small_dataset.split, config)
    k, d = small_dataset.user_features.shape[1], config.detector.hidden_dim
    assert result.params["detector"]["gcn.W1"].shape == (k + d, d)


def test_itr_zero_kappa_matches_retrained_detector(small_dataset, fast_config):
    config = fast_config.itr.model_copy(update={"kappa": 0, "concat_embeddings": False, "seed": 4})
    graph = dataset_graph(small_dataset)
    result = training.run_eland_itr(graph, small_dataset.actions, small_dataset.split, config)
    direct, _ = det.train_detector(
        graph, config.detector, derive_seed(4, 1), small_dataset.split.mask("train", graph.m)
    )
    np.testing.assert_array_equal(result.suspiciousness, direct.suspiciousness)
    assert result.plan is None
    assert "augmenter" not in result.params


def test_itr_is_deterministic(small_dataset, fast_config):
    graph = dataset_graph(small_dataset)
    first = training.run_eland_itr(graph, small_dataset.actions, small_dataset.split, fast_config.itr)
    second = training.run_eland_itr(graph, small_dataset.actions, small_dataset.split, fast_config.itr)
    np.testing.assert_array_equal(first.suspiciousness, second.suspiciousness)
    assert first.plan.predicted_items() == second.plan.predicted_items()


def test_itr_requires_labels(small_dataset, fast_config):
    graph = dataset_graph(small_dataset).model_copy(update={"labels": None})
    with pytest.raises(ConfigurationError):
        training.run_eland_itr(graph, small_dataset.actions, small_dataset.split, fast_config.itr)


def test_select_best_iteration_prefers_earliest_maximum():
    trace = [IterationRecord(iteration=i, val_auc=v) for i, v in enumerate([0.6, 0.8, 0.8, 0.7])]
    assert training.select_best_iteration(trace) == 1


# ---------- e2e ----------

def toy_e2e(toy_actions, toy_graph, gamma=8):
    detector = DetectorConfig(hidden_dim=3, epochs=1)
    config = E2eConfig(
        n_epochs=2, gamma=gamma, detector=detector, augmenter=AugmenterConfig(hidden_dim=3)
    )
    context = training.build_e2e_context(toy_graph, toy_actions, toy_split(), config)
    det_params, aug_params = training.init_e2e_params(context, config)
    return context, det_params, aug_params


def test_e2e_budgets_follow_degrees(toy_actions, toy_graph):
    context, _, _ = toy_e2e(toy_actions, toy_graph)
    assert context.budgets == {0: 2, 1: 1, 2: 2, 3: 1}


@pytest.mark.parametrize("which", ["detector", "augmenter"])
@pytest.mark.parametrize("seed", range(20))
def test_e2e_objective_gradients_with_soft_selections(seed, which):
    graph, actions, rng = random_graph(seed)
    train = np.flatnonzero(rng.random(graph.m) < 0.7)
    split = Split(train=np.union1d(train, [0]), val=np.array([], dtype=np.int64), test=np.array([], dtype=np.int64))
    config = E2eConfig(
        n_epochs=2,
        gamma=int(rng.integers(len(actions), 2 * len(actions))),
        detector=DetectorConfig(hidden_dim=3, epochs=1),
        augmenter=AugmenterConfig(hidden_dim=3),
        seed=seed,
    )
    context = training.build_e2e_context(graph, actions, split, config)
    det_params, aug_params = training.init_e2e_params(context, config)

    def objective(p):
        d, a = (p, aug_params) if which == "detector" else (det_params, p)
        return training.e2e_step(context, d, a, 1.0, (seed, 0), hard_selections=False).loss

    target = det_params if which == "detector" else aug_params
    assert nx.grad_check(objective, target) < 1e-4


def test_e2e_cut_soft_path_gives_zero_augmenter_gradient(toy_actions, toy_graph):
    context, det_params, aug_params = toy_e2e(toy_actions, toy_graph)
    aug_params.zero_grad()
    step = training.e2e_step(context, det_params, aug_params, 1.0, (0, 0), pass_gradient=False, include_aug_loss=False)
    step.loss.backward()
    for tensor in aug_params.tensors():
        assert tensor.grad is None or not np.any(tensor.grad)


def test_e2e_straight_through_reaches_augmenter(toy_actions, toy_graph):
    context, det_params, aug_params = toy_e2e(toy_actions, toy_graph)
    aug_params.zero_grad()
    step = training.e2e_step(context, det_params, aug_params, 1.0, (0, 0), include_aug_loss=False)
    step.loss.backward()
    assert any(t.grad is not None and np.any(t.grad) for t in aug_params.tensors())


def test_e2e_is_deterministic(small_dataset, fast_config):
    graph = dataset_graph(small_dataset)
    first = training.run_eland_e2e(graph, small_dataset.actions, small_dataset.split, fast_config.e2e)
    second = training.run_eland_e2e(graph, small_dataset.actions, small_dataset.split, fast_config.e2e)
    assert first.loss_trace == second.loss_trace
    np.testing.assert_array_equal(first.suspiciousness, second.suspiciousness)
    assert len(first.trace) == fast_config.e2e.n_epochs


def test_e2e_zero_gamma_adds_no_edges(small_dataset, fast_config):
    config = fast_config.e2e.model_copy(update={"gamma": 0})
    result = training.run_eland_e2e(dataset_graph(small_dataset), small_dataset.actions, small_dataset.split, config)
    assert all(record.augmented_edges == 0 for record in result.trace)
    assert result.plan.total_predictions() == 0
    assert all(record.loss_aug != 0.0 for record in result.trace)


def test_e2e_ignores_test_labels(small_dataset, fast_config):
    labels = small_dataset.labels.copy()
    test = small_dataset.split.test
    labels[test] = np.random.default_rng(0).permutation(labels[test])
    split = small_dataset.split
    first = training.run_eland_e2e(dataset_graph(small_dataset), small_dataset.actions, split, fast_config.e2e)
    second = training.run_eland_e2e(dataset_graph(small_dataset, labels), small_dataset.actions, split, fast_config.e2e)
    assert first.loss_trace == second.loss_trace


def test_e2e_with_autoencoder_detector(small_dataset, fast_config):
    detector = fast_config.e2e.detector.model_copy(update={"variant": DetectorVariant.AUTOENCODER_UNSUPERVISED})
    config = fast_config.e2e.model_copy(update={"detector": detector})
    result = training.run_eland_e2e(dataset_graph(small_dataset), small_dataset.actions, small_dataset.split, config)
    assert result.suspiciousness.min() >= 0 and result.suspiciousness.max() <= 1


# ---------- long empirical runs ----------

@pytest.mark.slow
def test_itr_validation_auc_does_not_drop():
    config = load_run_config(PRESET)
    dataset = generate(config.generator)
    graph = dataset_graph(dataset)
    first, last = [], []
    for seed in range(10):
        result = training.run_eland_itr(graph, dataset.actions, dataset.split, config.itr.model_copy(update={"seed": seed}))
        first.append(result.trace[0].val_auc)
        last.append(result.trace[3].val_auc)
    assert np.mean(last) >= np.mean(first)


@pytest.mark.slow
def test_e2e_loss_decreases_for_every_seed():
    config = load_run_config(PRESET)
    dataset = generate(config.generator)
    graph = dataset_graph(dataset)
    for seed in range(10):
        result = training.run_eland_e2e(graph, dataset.actions, dataset.split, config.e2e.model_copy(update={"seed": seed}))
        assert result.loss_trace[-1] < result.loss_trace[0]


@pytest.mark.slow
def test_e2e_beats_truncated_baseline():
    config = load_run_config(PRESET)
    dataset = generate(config.generator)
    seeds = list(range(10))
    result = early_sweep(dataset, [0.2, 0.4], ["baseline-gcn", "eland-e2e"], seeds, config)

    def mean_auc(fraction, method):
        return np.mean([row.auc for row in result.rows if row.fraction == fraction and row.method == method])

    assert mean_auc(0.2, "eland-e2e") >= mean_auc(0.2, "baseline-gcn") + 0.02
    assert mean_auc(0.2, "eland-e2e") >= mean_auc(0.4, "baseline-gcn") - 0.01


@pytest.mark.slow
def test_early_detection_predicate_pass_rate():
    config = load_run_config(PRESET)
    dataset = generate(config.generator)
    result = early_sweep(
        dataset, [0.1, 0.2, 0.4], ["baseline-gcn", "eland-itr", "eland-e2e"], list(range(10)), config
    )
    assert result.pass_rate_for("eland-itr") >= 0.8
    assert result.pass_rate_for("eland-e2e") >= 0.8
