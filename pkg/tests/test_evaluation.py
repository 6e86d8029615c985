import asyncio
import json

import numpy as np
import pytest

from eland.core.graph import build_graph
from eland.errors import ParameterError
from eland.models.config_models import DetectorVariant
from eland.models.result_models import SweepResult, SweepRow
from eland.services import evaluation
from eland.services.detector import train_detector
from eland.utils.cache import get_cache


def row(fraction, method, seed, auc, ap=0.5):
    return SweepRow(fraction=fraction, method=method, seed=seed, auc=auc, ap=ap)


def test_sweep_produces_one_row_per_cell(small_dataset, fast_config):
    result = evaluation.early_sweep(small_dataset, [0.5, 1.0], ["baseline-gcn", "eland-itr"], [0, 1], fast_config)
    assert len(result.rows) == 8
    assert [r.sort_key() for r in result.rows] == sorted(r.sort_key() for r in result.rows)
    assert len(result.predicates) == 4
    assert all(0 <= r.auc <= 1 and 0 <= r.ap <= 1 for r in result.rows)


def test_full_fraction_baseline_matches_direct_training(small_dataset, fast_config):
    outcome = evaluation.run_cell(small_dataset, 1.0, "baseline-gcn", 3, fast_config)
    graph = build_graph(small_dataset.actions, small_dataset.user_features, small_dataset.item_features, small_dataset.labels)
    output, _ = train_detector(graph, fast_config.detector, 3, small_dataset.split.mask("train", graph.m))
    np.testing.assert_array_equal(outcome.run.scores, output.suspiciousness)
    assert outcome.row.auc == evaluation.score_test_split(output.suspiciousness, small_dataset)[0]


def test_eland_cell_carries_plan_and_params(small_dataset, fast_config):
    outcome = evaluation.run_cell(small_dataset, 0.5, "eland-itr", 0, fast_config)
    assert set(outcome.run.params) == {"detector", "augmenter"}
    assert outcome.run.plan is not None
    assert outcome.run.trace[0]["iteration"] == 0


def test_unknown_method_rejected(small_dataset, fast_config):
    with pytest.raises(ParameterError):
        evaluation.early_sweep(small_dataset, [1.0], ["lstm"], [0], fast_config)


def test_bad_fraction_rejected(small_dataset, fast_config):
    with pytest.raises(ParameterError):
        evaluation.early_sweep(small_dataset, [0.0], ["baseline-gcn"], [0], fast_config)


def test_predicates_compare_against_same_detector(fast_config):
    rows = [
        row(0.2, "baseline-gcn", 0, 0.70),
        row(0.2, "eland-itr", 0, 0.75),
        row(0.2, "baseline-gcn", 1, 0.80),
        row(0.2, "eland-itr", 1, 0.78),
        row(0.4, "eland-itr", 0, 0.90),
    ]
    predicates = evaluation.early_detection_predicates(rows, fast_config)
    assert [(p.seed, p.holds) for p in predicates] == [(0, True), (1, False)]
    assert SweepResult(rows=rows, predicates=predicates).pass_rate == 0.5


def test_baseline_follows_detector_variant(fast_config):
    detector = fast_config.itr.detector.model_copy(update={"variant": DetectorVariant.AUTOENCODER_UNSUPERVISED})
    itr = fast_config.itr.model_copy(update={"detector": detector})
    config = fast_config.model_copy(update={"itr": itr})
    assert evaluation.baseline_for("eland-itr", config) == "baseline-ae"
    assert evaluation.baseline_for("eland-e2e", config) == "baseline-gcn"
    assert evaluation.baseline_for("baseline-gcn", config) is None


def test_summarize_and_curves():
    rows = [row(0.2, "eland-e2e", s, a) for s, a in enumerate([0.6, 0.8])] + [row(0.1, "eland-e2e", 0, 0.5)]
    summary = evaluation.summarize(SweepResult(rows=rows))
    assert summary[1]["auc_mean"] == pytest.approx(0.7, abs=1e-12)
    assert summary[1]["auc_std"] == pytest.approx(0.1, abs=1e-12)
    assert summary[0]["n"] == 1 and summary[0]["auc_std"] == 0.0
    curve = evaluation.curves(summary)["eland-e2e"]
    assert [point["fraction"] for point in curve] == [0.1, 0.2]


def test_sensitivity_grid_labels_rows(small_dataset, fast_config):
    result = evaluation.sensitivity_sweep(small_dataset, 0.5, "kappa", [0, 10], [0], fast_config)
    assert [r.method for r in result.rows] == ["eland-itr:kappa=0", "eland-itr:kappa=10"]


def test_with_parameter_rejects_unknown(fast_config):
    with pytest.raises(ParameterError):
        evaluation.with_parameter(fast_config, "tau", 3)
    assert evaluation.with_parameter(fast_config, "gamma", 55).e2e.gamma == 55


def test_cache_reuses_finished_cells(small_dataset, fast_config, tmp_path):
    first = evaluation.early_sweep(small_dataset, [1.0], ["baseline-gcn"], [0], fast_config, cache_dir=str(tmp_path))
    key = evaluation.cell_key(fast_config, 1.0, "baseline-gcn", 0)
    cached = asyncio.run(get_cache(str(tmp_path), key))
    assert cached["auc"] == first.rows[0].auc

    cached["auc"] = 0.123
    next(tmp_path.iterdir()).write_text(json.dumps(cached), encoding="utf-8")
    second = evaluation.early_sweep(small_dataset, [1.0], ["baseline-gcn"], [0], fast_config, cache_dir=str(tmp_path))
    assert second.rows[0].auc == 0.123


def test_cell_key_depends_on_config(fast_config):
    other = fast_config.model_copy(update={"detector": fast_config.detector.model_copy(update={"epochs": 16})})
    assert evaluation.cell_key(fast_config, 0.2, "eland-e2e", 0) != evaluation.cell_key(other, 0.2, "eland-e2e", 0)


def test_time_truncation_mode(small_dataset):
    kept = evaluation.truncate(small_dataset.actions, 0.5, "time")
    assert 0 < len(kept) < len(small_dataset.actions)
