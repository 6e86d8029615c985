"""
早期偵測實驗：對每個 (比例 p, 方法, seed) 截斷資料、建圖、訓練並在 test 使用者上計算 AUC/AP，
並檢查 ELAND 在同一 p 是否不差於同一偵測器的 baseline。
"""

import asyncio
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from eland.core.graph import build_graph, truncate_by_time, truncate_earliest
from eland.core.numerics import ParamStore
from eland.errors import ParameterError
from eland.models.config_models import DetectorVariant, RunConfig
from eland.models.graph_models import ActionRecord, Dataset
from eland.models.result_models import AugmentationPlan, PredicateRecord, SweepResult, SweepRow
from eland.services.detector import train_detector
from eland.services.metrics import auc, average_precision
from eland.services.training import run_eland_e2e, run_eland_itr
from eland.utils.cache import config_digest, create_cache_key, get_cache, set_cache
from eland.utils.helpers import handle_numpy_data

logger = logging.getLogger(__name__)

METHODS = ("baseline-gcn", "baseline-ae", "eland-itr", "eland-e2e")
BASELINE_FOR_VARIANT = {
    DetectorVariant.GCN_SUPERVISED: "baseline-gcn",
    DetectorVariant.AUTOENCODER_UNSUPERVISED: "baseline-ae",
}


class MethodRun(NamedTuple):
    scores: np.ndarray
    trace: List[Dict[str, Any]]
    params: Dict[str, ParamStore]
    plan: Optional[AugmentationPlan]


class CellOutcome(NamedTuple):
    row: SweepRow
    run: MethodRun


def truncate(actions: Sequence[ActionRecord], fraction: float, mode: str = "count") -> List[ActionRecord]:
    if mode == "time":
        return truncate_by_time(actions, fraction)
    return truncate_earliest(actions, fraction)


def cell_key(config: RunConfig, fraction: float, method: str, seed: int) -> str:
    digest = config_digest(config.model_dump_json())
    return create_cache_key("sweep_cell", config=digest, fraction=fraction, method=method, seed=seed)


def baseline_for(method: str, config: RunConfig) -> Optional[str]:
    """ELAND 方法對應的 baseline (同一種偵測器)"""
    if method == "eland-itr":
        return BASELINE_FOR_VARIANT[config.itr.detector.variant]
    if method == "eland-e2e":
        return BASELINE_FOR_VARIANT[config.e2e.detector.variant]
    return None


def run_method(
    dataset: Dataset, actions: Sequence[ActionRecord], method: str, seed: int, config: RunConfig
) -> MethodRun:
    """
    在 (已截斷的) 行為上訓練一個方法。

    Returns:
        MethodRun：每位使用者的 ŷ、訓練紀錄、訓練後參數與 (ELAND 方法的) 擴增預測
    """
    graph = build_graph(actions, dataset.user_features, dataset.item_features, dataset.labels)
    train_mask = dataset.split.mask("train", dataset.m)
    if method in ("baseline-gcn", "baseline-ae"):
        variant = DetectorVariant.GCN_SUPERVISED if method == "baseline-gcn" else DetectorVariant.AUTOENCODER_UNSUPERVISED
        detector_config = config.detector.model_copy(update={"variant": variant})
        output, params = train_detector(graph, detector_config, seed, train_mask)
        trace = [{"epoch": i, "loss": loss} for i, loss in enumerate(output.loss_trace)]
        return MethodRun(output.suspiciousness, trace, {"detector": params}, None)
    if method == "eland-itr":
        result = run_eland_itr(graph, actions, dataset.split, config.itr.model_copy(update={"seed": seed}))
        return MethodRun(result.suspiciousness, [record.model_dump() for record in result.trace], result.params, result.plan)
    if method == "eland-e2e":
        result = run_eland_e2e(graph, actions, dataset.split, config.e2e.model_copy(update={"seed": seed}))
        return MethodRun(result.suspiciousness, [record.model_dump() for record in result.trace], result.params, result.plan)
    raise ParameterError(f"unknown method {method!r}, expected one of {', '.join(METHODS)}")


def score_test_split(scores: np.ndarray, dataset: Dataset) -> Tuple[float, float]:
    test = dataset.split.test
    return auc(scores[test], dataset.labels[test]), average_precision(scores[test], dataset.labels[test])


def run_cell(dataset: Dataset, fraction: float, method: str, seed: int, config: RunConfig) -> CellOutcome:
    """單一 sweep cell：截斷 → 建圖 → 訓練 → test 上的 AUC/AP"""
    started = time.perf_counter()
    actions = truncate(dataset.actions, fraction, config.sweep.truncation)
    run = run_method(dataset, actions, method, seed, config)
    test_auc, test_ap = score_test_split(run.scores, dataset)
    row = SweepRow(
        fraction=fraction,
        method=method,
        seed=seed,
        auc=test_auc,
        ap=test_ap,
        wall_time=time.perf_counter() - started,
        cell_key=cell_key(config, fraction, method, seed),
    )
    logger.info(f"cell p={fraction} method={method} seed={seed}: auc={test_auc:.4f} ap={test_ap:.4f}")
    return CellOutcome(row=row, run=run)


def _run_cell_row(dataset: Dataset, fraction: float, method: str, seed: int, config: RunConfig) -> Dict[str, Any]:
    """process pool 的工作函式 (回傳可序列化的 dict)"""
    return run_cell(dataset, fraction, method, seed, config).row.model_dump()


def early_detection_predicates(rows: Sequence[SweepRow], config: RunConfig) -> List[PredicateRecord]:
    """每個 (p, seed)：ELAND 的 AUC ≥ 同一偵測器 baseline 的 AUC"""
    by_cell = {(row.fraction, row.method, row.seed): row for row in rows}
    predicates = []
    for row in rows:
        baseline = baseline_for(row.method, config)
        if baseline is None:
            continue
        reference = by_cell.get((row.fraction, baseline, row.seed))
        if reference is None:
            logger.warning(f"no {baseline} cell for p={row.fraction} seed={row.seed}, predicate skipped")
            continue
        predicates.append(
            PredicateRecord(
                fraction=row.fraction,
                seed=row.seed,
                method=row.method,
                baseline=baseline,
                eland_auc=row.auc,
                baseline_auc=reference.auc,
                holds=row.auc >= reference.auc,
            )
        )
    return predicates


async def _cell_row(
    dataset: Dataset,
    cell: Tuple[float, str, int],
    config: RunConfig,
    cache_dir: Optional[str],
    pool: Optional[ProcessPoolExecutor],
) -> SweepRow:
    fraction, method, seed = cell
    key = cell_key(config, fraction, method, seed)
    cached = await get_cache(cache_dir, key)
    if cached is not None:
        return SweepRow(**cached)
    if pool is None:
        data = _run_cell_row(dataset, fraction, method, seed, config)
    else:
        loop = asyncio.get_running_loop()
        data = await loop.run_in_executor(pool, _run_cell_row, dataset, fraction, method, seed, config)
    await set_cache(cache_dir, key, handle_numpy_data(data))
    return SweepRow(**data)


async def early_sweep_async(
    dataset: Dataset,
    fractions: Sequence[float],
    methods: Sequence[str],
    seeds: Sequence[int],
    config: RunConfig,
    max_workers: int = 1,
    cache_dir: Optional[str] = None,
) -> SweepResult:
    """
    所有 (p, method, seed) cell 交給最多 max_workers 個 process；max_workers = 1 時依序在本 process 執行。
    結果列排序後輸出，與執行順序無關。
    """
    for fraction in fractions:
        if not 0 < fraction <= 1:
            raise ParameterError(f"fraction {fraction} outside (0, 1]")
    for method in methods:
        if method not in METHODS:
            raise ParameterError(f"unknown method {method!r}, expected one of {', '.join(METHODS)}")
    cells = [(float(p), method, int(seed)) for p in fractions for method in methods for seed in seeds]
    logger.info(f"sweep: {len(cells)} cells, {max_workers} worker(s)")

    if max_workers <= 1:
        rows = [await _cell_row(dataset, cell, config, cache_dir, None) for cell in cells]
    else:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            rows = await asyncio.gather(*(_cell_row(dataset, cell, config, cache_dir, pool) for cell in cells))

    rows = sorted(rows, key=lambda row: row.sort_key())
    result = SweepResult(rows=rows, predicates=early_detection_predicates(rows, config))
    if result.predicates:
        logger.info(f"sweep predicate pass rate: {result.pass_rate:.3f}")
    return result


def early_sweep(
    dataset: Dataset,
    fractions: Sequence[float],
    methods: Sequence[str],
    seeds: Sequence[int],
    config: Optional[RunConfig] = None,
    max_workers: int = 1,
    cache_dir: Optional[str] = None,
) -> SweepResult:
    return asyncio.run(
        early_sweep_async(dataset, fractions, methods, seeds, config or RunConfig(), max_workers, cache_dir)
    )


SENSITIVITY_PARAMETERS = {"kappa": ("eland-itr", "itr"), "gamma": ("eland-e2e", "e2e")}


def with_parameter(config: RunConfig, parameter: str, value: int) -> RunConfig:
    """回傳把 itr.kappa 或 e2e.gamma 換成 value 的設定"""
    if parameter not in SENSITIVITY_PARAMETERS:
        raise ParameterError(f"sensitivity grid supports {sorted(SENSITIVITY_PARAMETERS)}, got {parameter!r}")
    _, section = SENSITIVITY_PARAMETERS[parameter]
    updated = getattr(config, section).model_copy(update={parameter: int(value)})
    return config.model_copy(update={section: updated})


async def sensitivity_sweep_async(
    dataset: Dataset,
    fraction: float,
    parameter: str,
    values: Sequence[int],
    seeds: Sequence[int],
    config: Optional[RunConfig] = None,
    max_workers: int = 1,
    cache_dir: Optional[str] = None,
) -> SweepResult:
    """κ (ELAND-itr) 或 γ (ELAND-e2e) 的網格；列的 method 標記為 "eland-itr:kappa=30" 形式"""
    config = config or RunConfig()
    if parameter not in SENSITIVITY_PARAMETERS:
        raise ParameterError(f"sensitivity grid supports {sorted(SENSITIVITY_PARAMETERS)}, got {parameter!r}")
    method, _ = SENSITIVITY_PARAMETERS[parameter]
    rows: List[SweepRow] = []
    for value in values:
        result = await early_sweep_async(
            dataset, [fraction], [method], seeds, with_parameter(config, parameter, value), max_workers, cache_dir
        )
        rows.extend(row.model_copy(update={"method": f"{method}:{parameter}={value}"}) for row in result.rows)
    return SweepResult(rows=sorted(rows, key=lambda row: row.sort_key()))


def sensitivity_sweep(
    dataset: Dataset,
    fraction: float,
    parameter: str,
    values: Sequence[int],
    seeds: Sequence[int],
    config: Optional[RunConfig] = None,
    max_workers: int = 1,
    cache_dir: Optional[str] = None,
) -> SweepResult:
    return asyncio.run(
        sensitivity_sweep_async(dataset, fraction, parameter, values, seeds, config, max_workers, cache_dir)
    )


def summarize(result: SweepResult) -> List[Dict[str, Any]]:
    """每個 (fraction, method) 的 mean ± std (母體標準差)"""
    groups: Dict[Tuple[float, str], List[SweepRow]] = {}
    for row in result.rows:
        groups.setdefault((row.fraction, row.method), []).append(row)
    summary = []
    for (fraction, method), rows in sorted(groups.items()):
        aucs = np.array([row.auc for row in rows])
        aps = np.array([row.ap for row in rows])
        summary.append(
            {
                "fraction": fraction,
                "method": method,
                "n": len(rows),
                "auc_mean": float(aucs.mean()),
                "auc_std": float(aucs.std()),
                "ap_mean": float(aps.mean()),
                "ap_std": float(aps.std()),
            }
        )
    return summary


def curves(summary: Sequence[Dict[str, Any]]) -> Dict[str, List[Dict[str, Any]]]:
    """每個方法一條 AUC/AP 對 fraction 的曲線"""
    by_method: Dict[str, List[Dict[str, Any]]] = {}
    for entry in summary:
        by_method.setdefault(entry["method"], []).append(entry)
    return {method: sorted(points, key=lambda e: e["fraction"]) for method, points in sorted(by_method.items())}
