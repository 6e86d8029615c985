"""
圖異常偵測模組 g_ad：監督式兩層 GCN 與非監督式圖自編碼器。
兩者皆輸出每位使用者的可疑度 ŷ 與潛在表示 Z。
"""

import logging
from typing import Callable, NamedTuple, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from eland.core import numerics as nx
from eland.core.graph import node_features, normalize_adjacency
from eland.core.numerics import ParamStore, Tensor
from eland.core.optim import Adam
from eland.errors import ConfigurationError, DimensionError, ParameterError
from eland.models.config_models import DetectorConfig, DetectorVariant
from eland.models.graph_models import BipartiteGraph
from eland.models.result_models import DetectorOutput

logger = logging.getLogger(__name__)

BCE_EPS = 1e-12

Propagator = Callable[[Tensor], Tensor]


class DetectorPass(NamedTuple):
    """一次前向傳遞的結果 (仍保留反向傳播圖)"""

    scores: Tensor  # GCN: ŷ；autoencoder: 原始重建分數
    hidden: Tensor  # (m+n)×d，作為 Z 的節點表示


def as_propagator(norm_adj: Union[sp.spmatrix, Propagator]) -> Propagator:
    if callable(norm_adj) and not sp.issparse(norm_adj):
        return norm_adj
    return lambda h: nx.spmm(norm_adj, h)


def init_detector_params(input_dim: int, config: DetectorConfig, seed: int) -> ParamStore:
    params = ParamStore(seed, namespace="detector")
    d = config.hidden_dim
    if config.variant == DetectorVariant.GCN_SUPERVISED:
        params.add_weight("gcn.W1", input_dim, d)
        params.add_weight("gcn.W2", d, 1)
    else:
        params.add_weight("ae.W1", input_dim, d)
        params.add_weight("ae.W2", d, d)
        params.add_weight("ae.W_dec", d, input_dim)
    return params


def _check_layer(layer: str, x: np.ndarray, weight: Tensor) -> None:
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"{layer}: input width {x.shape[-1]} does not match weight {weight.name} {weight.shape}")


def _check_inputs(x: np.ndarray, norm_adj) -> None:
    if sp.issparse(norm_adj):
        if norm_adj.shape[0] != norm_adj.shape[1]:
            raise DimensionError(f"normalized adjacency must be square, got {norm_adj.shape}")
        if norm_adj.shape[0] != x.shape[0]:
            raise DimensionError(f"layer 1: adjacency side {norm_adj.shape[0]} != feature rows {x.shape[0]}")


# ==================== GCN ====================

def gcn_pass(propagate: Propagator, x: np.ndarray, params: ParamStore, m: int) -> DetectorPass:
    """
    H1 = ReLU(Â X W1)；logits = Â H1 W2；ŷ = sigmoid(logits) 的 user 列
    """
    w1, w2 = params["gcn.W1"], params["gcn.W2"]
    _check_layer("gcn layer 1", x, w1)
    h1 = nx.relu(propagate(nx.matmul(x, w1)))
    _check_layer("gcn layer 2", h1.values, w2)
    logits = propagate(nx.matmul(h1, w2))
    user_logits = nx.reshape(nx.take_rows(logits, np.arange(m)), (m,))
    return DetectorPass(scores=nx.sigmoid(user_logits), hidden=h1)


def gcn_forward(norm_adj, x: np.ndarray, params: ParamStore, m: int) -> DetectorOutput:
    """推論模式的 GCN 前向：回傳 ŷ 與 user 列的 H1"""
    _check_inputs(x, norm_adj)
    with nx.no_grad():
        result = gcn_pass(as_propagator(norm_adj), x, params, m)
    hidden = result.hidden.values
    return DetectorOutput(
        suspiciousness=result.scores.values.copy(),
        embeddings=hidden[:m].copy(),
        node_embeddings=hidden.copy(),
    )


def bce_loss(yhat: Tensor, y: np.ndarray, train_mask: np.ndarray) -> Tensor:
    """
    L = −Σ_{u∈mask} (y_u log ŷ_u + (1−y_u) log(1−ŷ_u))，ŷ 先夾到 [ε, 1−ε]
    """
    index = np.flatnonzero(np.asarray(train_mask, dtype=bool))
    if index.size == 0:
        raise ParameterError("training mask is empty")
    target = np.asarray(y, dtype=np.float64)[index]
    clamped = nx.clip(nx.take_rows(yhat, index), BCE_EPS, 1.0 - BCE_EPS)
    positive = nx.mul(target, nx.log(clamped))
    negative = nx.mul(1.0 - target, nx.log(nx.sub(1.0, clamped)))
    return nx.mul(nx.sum_(nx.add(positive, negative)), -1.0)


# ==================== Autoencoder ====================

def structure_target(counts: sp.spmatrix) -> np.ndarray:
    """自編碼器的結構重建目標：Ã = A + I 的 user 列二值化，m×(m+n)"""
    m, n = counts.shape
    target = np.zeros((m, m + n))
    target[np.arange(m), np.arange(m)] = 1.0
    target[:, m:] = (sp.csr_matrix(counts).toarray() > 0).astype(np.float64)
    return target


def autoencoder_pass(
    propagate: Propagator,
    x: np.ndarray,
    params: ParamStore,
    m: int,
    target: np.ndarray,
    alpha: float,
) -> DetectorPass:
    """
    Z = Â ReLU(Â X W1) W2；每位使用者的分數
    s_u = α‖T_u − σ(Z_u Zᵀ)‖² + (1−α)‖X_u − Z_u W_dec‖²
    """
    w1, w2, w_dec = params["ae.W1"], params["ae.W2"], params["ae.W_dec"]
    _check_layer("encoder layer 1", x, w1)
    h1 = nx.relu(propagate(nx.matmul(x, w1)))
    _check_layer("encoder layer 2", h1.values, w2)
    z = propagate(nx.matmul(h1, w2))
    if target.shape != (m, z.shape[0]):
        raise DimensionError(f"structure decoder: target {target.shape} vs ({m}, {z.shape[0]})")
    if w_dec.shape[1] != x.shape[1]:
        raise DimensionError(f"attribute decoder: {w_dec.name} {w_dec.shape} vs feature width {x.shape[1]}")

    z_users = nx.take_rows(z, np.arange(m))
    structure = nx.sigmoid(nx.matmul(z_users, nx.transpose(z)))
    structure_error = nx.sum_(nx.square(nx.sub(target, structure)), axis=1)
    attributes = nx.matmul(z_users, w_dec)
    attribute_error = nx.sum_(nx.square(nx.sub(x[:m], attributes)), axis=1)
    scores = nx.add(nx.mul(structure_error, alpha), nx.mul(attribute_error, 1.0 - alpha))
    return DetectorPass(scores=scores, hidden=z)


def autoencoder_forward(
    norm_adj, x: np.ndarray, params: ParamStore, m: int, target: np.ndarray, alpha: float = 0.8
) -> Tuple[np.ndarray, np.ndarray]:
    """回傳 (每位使用者的重建分數, user 列的 Z)"""
    _check_inputs(x, norm_adj)
    with nx.no_grad():
        result = autoencoder_pass(as_propagator(norm_adj), x, params, m, target, alpha)
    return result.scores.values.copy(), result.hidden.values[:m].copy()


def suspiciousness_from_scores(scores: np.ndarray) -> np.ndarray:
    """min-max 正規化到 [0,1]；所有分數相同時回傳 0.5"""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return scores.copy()
    low, high = scores.min(), scores.max()
    if high == low:
        return np.full_like(scores, 0.5)
    return np.clip((scores - low) / (high - low), 0.0, 1.0)


# ==================== 共用 ====================

def detector_pass(
    propagate: Propagator,
    x: np.ndarray,
    params: ParamStore,
    config: DetectorConfig,
    m: int,
    target: Optional[np.ndarray] = None,
) -> DetectorPass:
    if config.variant == DetectorVariant.GCN_SUPERVISED:
        return gcn_pass(propagate, x, params, m)
    if target is None:
        raise ConfigurationError("autoencoder detector needs a structure target")
    return autoencoder_pass(propagate, x, params, m, target, config.alpha)


def detector_objective(
    result: DetectorPass,
    config: DetectorConfig,
    labels: Optional[np.ndarray] = None,
    train_mask: Optional[np.ndarray] = None,
) -> Tensor:
    """L_ad：GCN 為訓練集上的 BCE，autoencoder 為所有使用者分數的平均"""
    if config.variant == DetectorVariant.GCN_SUPERVISED:
        return bce_loss(result.scores, labels, train_mask)
    return nx.mean(result.scores)


def to_output(result: DetectorPass, config: DetectorConfig, m: int, loss_trace=None) -> DetectorOutput:
    hidden = result.hidden.values
    if config.variant == DetectorVariant.GCN_SUPERVISED:
        suspiciousness = result.scores.values.copy()
    else:
        suspiciousness = suspiciousness_from_scores(result.scores.values)
    return DetectorOutput(
        suspiciousness=suspiciousness,
        embeddings=hidden[:m].copy(),
        node_embeddings=hidden.copy(),
        loss_trace=list(loss_trace or []),
    )


def require_labels(graph: BipartiteGraph, config: DetectorConfig, train_mask: Optional[np.ndarray]) -> None:
    if config.variant != DetectorVariant.GCN_SUPERVISED:
        return
    if graph.labels is None:
        raise ConfigurationError("supervised GCN detector requires labels")
    if train_mask is None:
        raise ConfigurationError("supervised GCN detector requires a training mask")


def train_detector(
    graph: BipartiteGraph,
    config: DetectorConfig,
    seed: int,
    train_mask: Optional[np.ndarray] = None,
    features: Optional[np.ndarray] = None,
) -> Tuple[DetectorOutput, ParamStore]:
    """
    以 Adam 訓練偵測器 config.epochs 次，回傳推論模式下的最終輸出與參數。

    Args:
        graph: 二分圖 (GCN 需含 labels)
        config: DetectorConfig
        seed: 參數初始化種子
        train_mask: 監督式訓練使用的使用者遮罩
        features: (m+n)×k' 節點特徵；None 時使用圖上的 X

    Returns:
        (DetectorOutput, ParamStore)
    """
    require_labels(graph, config, train_mask)
    x = node_features(graph) if features is None else np.asarray(features, dtype=np.float64)
    norm_adj = normalize_adjacency(graph)
    _check_inputs(x, norm_adj)
    propagate = as_propagator(norm_adj)
    target = None
    if config.variant == DetectorVariant.AUTOENCODER_UNSUPERVISED:
        target = structure_target(graph.adjacency)

    params = init_detector_params(x.shape[1], config, seed)
    optimizer = Adam(params.tensors(), lr=config.learning_rate, betas=config.betas, weight_decay=config.weight_decay)
    loss_trace = []
    for epoch in range(config.epochs):
        optimizer.zero_grad()
        result = detector_pass(propagate, x, params, config, graph.m, target)
        loss = detector_objective(result, config, graph.labels, train_mask)
        loss.backward()
        optimizer.step()
        loss_trace.append(loss.item())
        logger.debug(f"detector epoch {epoch}: loss={loss_trace[-1]:.6f}")

    with nx.no_grad():
        result = detector_pass(propagate, x, params, config, graph.m, target)
    logger.info(
        f"detector ({config.variant.value}) trained for {config.epochs} epochs, "
        f"loss {loss_trace[0]:.4f} -> {loss_trace[-1]:.4f}"
    )
    return to_output(result, config, graph.m, loss_trace), params
