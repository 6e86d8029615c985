"""
兩種訓練流程：

- ELAND-itr：偵測器與擴增模組交替訓練，每次迭代重新初始化參數。
- ELAND-e2e：Gumbel-Softmax + straight-through 讓偵測器損失回傳到擴增模組，多任務聯合訓練。
"""

import logging
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from eland.core import numerics as nx
from eland.core.graph import (
    augment_adjacency,
    node_features,
    normalize_adjacency,
    sequences_from_actions,
    user_degrees,
)
from eland.core.numerics import ParamStore, Tensor
from eland.core.optim import Adam
from eland.errors import ParameterError
from eland.models.config_models import DetectorConfig, DetectorVariant, E2eConfig, ItrConfig
from eland.models.graph_models import ActionRecord, BipartiteGraph, FeatureSequence, Split
from eland.models.result_models import E2eResult, EpochRecord, ItrResult, IterationRecord
from eland.services import augmenter as aug
from eland.services import detector as det
from eland.services.metrics import masked_metrics
from eland.utils.helpers import derive_seed

logger = logging.getLogger(__name__)


def anneal_tau(epoch: int, n_epochs: int, tau_start: float, tau_end: float) -> float:
    """線性退火：τ = τ_start + (τ_end − τ_start)·epoch/(n_epochs − 1)"""
    if n_epochs < 1 or not 0 <= epoch < n_epochs:
        raise ParameterError(f"epoch {epoch} outside [0, {n_epochs})")
    if n_epochs == 1:
        return float(tau_start)
    return tau_start + (tau_end - tau_start) * epoch / (n_epochs - 1)


def concat_embeddings(x_orig: np.ndarray, node_embeddings: np.ndarray) -> np.ndarray:
    """X = concat(X_orig, Z)，寬度固定為 k + d"""
    return np.hstack([x_orig, node_embeddings])


def select_best_iteration(trace: Sequence[IterationRecord]) -> int:
    """驗證集 AUC 最高的迭代 (同分取較早者)；沒有驗證指標時回傳最後一次"""
    best, best_auc = trace[-1].iteration, None
    for record in trace:
        if record.val_auc is not None and (best_auc is None or record.val_auc > best_auc):
            best, best_auc = record.iteration, record.val_auc
    return best


# ==================== ELAND-itr ====================

def run_eland_itr(
    graph: BipartiteGraph,
    actions: Sequence[ActionRecord],
    split: Split,
    config: ItrConfig,
) -> ItrResult:
    """
    交替訓練：
      1. 在原圖上訓練偵測器得到 ŷ、Z，X ← concat(X_orig, Z)
      2. 每次迭代：重新初始化並訓練擴增模組、以 floor(κ·ŷ) 為預算解碼、
         由原始 A 建立 A'、在 A' 上重新訓練偵測器、以新的 Z 更新 X

    Returns:
        ItrResult：最終 ŷ、每次迭代的驗證指標
    """
    det_config = config.detector
    det.require_labels(graph, det_config, split.train)
    train_mask = split.mask("train", graph.m)
    val_mask = split.mask("val", graph.m)
    x_orig = node_features(graph)

    output, det_params = det.train_detector(graph, det_config, derive_seed(config.seed, 0), train_mask, x_orig)
    val_auc, val_ap = masked_metrics(output.suspiciousness, graph.labels, val_mask)
    trace = [
        IterationRecord(
            iteration=0, val_auc=val_auc, val_ap=val_ap, detector_loss=output.loss_trace[-1], predicted_actions=0
        )
    ]
    outputs = [output]
    detector_params = [det_params]
    augmenter_params = None
    plan = None
    logger.info(f"itr iteration 0: val_auc={val_auc}")

    x = concat_embeddings(x_orig, output.node_embeddings) if config.concat_embeddings else x_orig
    for iteration in range(1, config.iterations + 1):
        seed = derive_seed(config.seed, iteration)
        sequences = sequences_from_actions(
            actions, graph, embeddings=output.embeddings if config.concat_embeddings else None
        )
        budgets = aug.budget_itr(output.suspiciousness, config.kappa)
        budget_map = {seq.user_id: int(budgets[seq.user_id]) for seq in sequences}
        augmenter_loss = None
        if sum(budget_map.values()) > 0:
            augmenter_params, aug_trace = aug.train_augmenter(sequences, graph.item_features, config.augmenter, seed)
            augmenter_loss = aug_trace[-1] if aug_trace else None
            plan = aug.plan_discrete(sequences, budget_map, augmenter_params, graph.item_features)
            augmented = augment_adjacency(graph, plan.discrete)
        else:
            logger.info(f"itr iteration {iteration}: all budgets are zero, A' = A")
            plan = None
            augmented = graph

        output, det_params = det.train_detector(augmented, det_config, seed, train_mask, x)
        outputs.append(output)
        detector_params.append(det_params)
        if config.concat_embeddings:
            x = concat_embeddings(x_orig, output.node_embeddings)
        val_auc, val_ap = masked_metrics(output.suspiciousness, graph.labels, val_mask)
        predicted = plan.total_predictions() if plan is not None else 0
        trace.append(
            IterationRecord(
                iteration=iteration,
                val_auc=val_auc,
                val_ap=val_ap,
                detector_loss=output.loss_trace[-1],
                augmenter_loss=augmenter_loss,
                predicted_actions=predicted,
            )
        )
        logger.info(f"itr iteration {iteration}: val_auc={val_auc} predicted_actions={predicted}")

    selected = select_best_iteration(trace) if config.select_best_iteration else config.iterations
    final = outputs[selected]
    params = {"detector": detector_params[selected]}
    if augmenter_params is not None:
        params["augmenter"] = augmenter_params
    return ItrResult(
        suspiciousness=final.suspiciousness,
        trace=trace,
        selected_iteration=selected,
        output=final,
        plan=plan,
        params=params,
    )


# ==================== ELAND-e2e ====================

class E2eContext(NamedTuple):
    """e2e 每個 epoch 共用、不隨參數變動的輸入"""

    graph: BipartiteGraph
    x: np.ndarray
    actions: Sequence[ActionRecord]
    sequences: List[FeatureSequence]
    budgets: dict
    train_mask: np.ndarray
    detector: DetectorConfig
    concat_embeddings: bool


class E2eStep(NamedTuple):
    loss: Tensor
    loss_ad: Tensor
    loss_aug: Optional[Tensor]
    result: det.DetectorPass
    selections: aug.RelaxedSelections


def build_e2e_context(
    graph: BipartiteGraph,
    actions: Sequence[ActionRecord],
    split: Split,
    config: E2eConfig,
) -> E2eContext:
    det.require_labels(graph, config.detector, split.train)
    degrees = user_degrees(graph)
    if config.gamma > 0:
        budgets = aug.budget_e2e(degrees, config.gamma)
    else:
        budgets = np.zeros(graph.m, dtype=np.int64)
    sequences = sequences_from_actions(actions, graph)
    budget_map = {seq.user_id: int(budgets[seq.user_id]) for seq in sequences}
    return E2eContext(
        graph=graph,
        x=node_features(graph),
        actions=actions,
        sequences=sequences,
        budgets=budget_map,
        train_mask=split.mask("train", graph.m),
        detector=config.detector,
        concat_embeddings=config.concat_embeddings,
    )


def init_e2e_params(context: E2eContext, config: E2eConfig) -> Tuple[ParamStore, ParamStore]:
    det_params = det.init_detector_params(context.x.shape[1], config.detector, config.seed)
    input_dim = context.graph.feature_dim
    if config.concat_embeddings:
        input_dim += config.detector.hidden_dim
    aug_params = aug.init_augmenter_params(input_dim, context.graph.feature_dim, config.augmenter, config.seed)
    return det_params, aug_params


def _structure_target(context: E2eContext, selections: aug.RelaxedSelections) -> Optional[np.ndarray]:
    if context.detector.variant != DetectorVariant.AUTOENCODER_UNSUPERVISED:
        return None
    augmented = augment_adjacency(context.graph, selections.plan.predicted_items())
    return det.structure_target(augmented.adjacency)


def e2e_step(
    context: E2eContext,
    det_params: ParamStore,
    aug_params: ParamStore,
    tau: float,
    noise_seed: Union[int, Sequence[int]],
    embeddings: Optional[np.ndarray] = None,
    pass_gradient: bool = True,
    hard_selections: bool = True,
    include_aug_loss: bool = True,
) -> E2eStep:
    """
    一次 L_e2e = L_ad + L_aug 的前向計算。

    Args:
        tau: Gumbel-Softmax 溫度
        noise_seed: Gumbel 抽樣的種子 (相同種子得到相同抽樣)
        embeddings: concat_embeddings 時序列接上的 z_u (上一次前向的值，視為常數)
        pass_gradient: False 時切斷 straight-through 的 soft 路徑
        hard_selections: False 時直接以 relaxed 向量擴增 (梯度檢查用的可微版本)
    """
    graph = context.graph
    sequences = context.sequences
    if context.concat_embeddings and embeddings is not None:
        sequences = sequences_from_actions(context.actions, graph, embeddings=embeddings)

    loss_aug = None
    if include_aug_loss and any(seq.length >= 2 for seq in sequences):
        loss_aug = aug.sequence_aug_loss(sequences, aug_params, graph.feature_dim)

    selections = aug.plan_relaxed(
        sequences,
        context.budgets,
        aug_params,
        graph.item_features,
        tau,
        noise_seed,
        pass_gradient=pass_gradient,
        hard_selections=hard_selections,
    )

    def propagate(h: Tensor) -> Tensor:
        return nx.augmented_propagate(graph.adjacency, selections.selections, selections.owners, h)

    result = det.detector_pass(
        propagate, context.x, det_params, context.detector, graph.m, _structure_target(context, selections)
    )
    loss_ad = det.detector_objective(result, context.detector, graph.labels, context.train_mask)
    loss = loss_ad if loss_aug is None else nx.add(loss_ad, loss_aug)
    return E2eStep(loss=loss, loss_ad=loss_ad, loss_aug=loss_aug, result=result, selections=selections)


def run_eland_e2e(
    graph: BipartiteGraph,
    actions: Sequence[ActionRecord],
    split: Split,
    config: E2eConfig,
) -> E2eResult:
    """
    聯合訓練：每個 epoch 退火 τ、鬆弛解碼 (預算以原始 degree 的優先連結計算一次)、
    以 hard selections 組成 A'、在 A' 上前向偵測器、L_e2e = L_ad + L_aug 同時更新兩個模組。
    最後以 τ_end 重新擴增並評分。
    """
    context = build_e2e_context(graph, actions, split, config)
    det_params, aug_params = init_e2e_params(context, config)
    det_optimizer = Adam(
        det_params.tensors(),
        lr=config.detector.learning_rate,
        betas=config.detector.betas,
        weight_decay=config.detector.weight_decay,
    )
    aug_optimizer = Adam(
        aug_params.tensors(), lr=config.augmenter.learning_rate, weight_decay=config.augmenter.weight_decay
    )
    val_mask = split.mask("val", graph.m)
    logger.info(
        f"e2e: {sum(context.budgets.values())} augmented actions per epoch over {len(context.sequences)} users"
    )

    embeddings = None
    if config.concat_embeddings:
        embeddings = _current_embeddings(context, det_params)

    trace: List[EpochRecord] = []
    for epoch in range(config.n_epochs):
        tau = anneal_tau(epoch, config.n_epochs, config.tau_start, config.tau_end)
        det_optimizer.zero_grad()
        aug_optimizer.zero_grad()
        step = e2e_step(context, det_params, aug_params, tau, (config.seed, epoch), embeddings)
        step.loss.backward()
        det_optimizer.step()
        aug_optimizer.step()

        suspiciousness = _suspiciousness(step.result, context.detector)
        val_auc, _ = masked_metrics(suspiciousness, graph.labels, val_mask)
        record = EpochRecord(
            epoch=epoch,
            tau=tau,
            loss_ad=step.loss_ad.item(),
            loss_aug=step.loss_aug.item() if step.loss_aug is not None else 0.0,
            loss_e2e=step.loss.item(),
            val_auc=val_auc,
            augmented_edges=int(step.selections.selections.shape[0]),
        )
        trace.append(record)
        logger.debug(
            f"e2e epoch {epoch}: tau={tau:.3f} L_ad={record.loss_ad:.6f} L_aug={record.loss_aug:.6f} val_auc={val_auc}"
        )
        if config.concat_embeddings:
            embeddings = step.result.hidden.values[: graph.m].copy()

    # 推論：以 τ_end 重新擴增並評分
    with nx.no_grad():
        step = e2e_step(
            context, det_params, aug_params, config.tau_end, (config.seed, config.n_epochs), embeddings
        )
    output = det.to_output(step.result, context.detector, graph.m, [record.loss_e2e for record in trace])
    logger.info(
        f"e2e trained for {config.n_epochs} epochs, L_e2e {trace[0].loss_e2e:.4f} -> {trace[-1].loss_e2e:.4f}"
    )
    return E2eResult(
        suspiciousness=output.suspiciousness,
        trace=trace,
        output=output,
        plan=step.selections.plan,
        params={"detector": det_params, "augmenter": aug_params},
    )


def _suspiciousness(result: det.DetectorPass, config: DetectorConfig) -> np.ndarray:
    if config.variant == DetectorVariant.GCN_SUPERVISED:
        return result.scores.values
    return det.suspiciousness_from_scores(result.scores.values)


def _current_embeddings(context: E2eContext, det_params: ParamStore) -> np.ndarray:
    """尚未擴增的圖上做一次推論前向，取得初始的 z_u"""
    graph = context.graph
    norm_adj = normalize_adjacency(graph)
    target = None
    if context.detector.variant == DetectorVariant.AUTOENCODER_UNSUPERVISED:
        target = det.structure_target(graph.adjacency)
    with nx.no_grad():
        result = det.detector_pass(det.as_propagator(norm_adj), context.x, det_params, context.detector, graph.m, target)
    return result.hidden.values[: graph.m].copy()
