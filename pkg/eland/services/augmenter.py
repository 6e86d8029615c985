"""
行為序列擴增模組 f_aug：

GRU 編碼每位使用者的特徵序列，線性 readout 預測下一個行為的特徵，
itr 以 cosine 對齊到最接近的 item (離散解碼)，e2e 以 Gumbel-Softmax 取樣 (鬆弛解碼)。
批次版本把序列依長度遞減排序，第 i 步只更新長度 > i 的前綴列。
"""

import logging
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from eland.core import numerics as nx
from eland.core.numerics import ParamStore, Tensor
from eland.core.optim import Adam
from eland.errors import DegenerateVectorError, DimensionError, ParameterError
from eland.models.config_models import AugmenterConfig
from eland.models.graph_models import FeatureSequence
from eland.models.result_models import AugmentationPlan, RelaxedStep

logger = logging.getLogger(__name__)

LOGIT_FLOOR = 1e-6


# ==================== 參數 ====================

def init_augmenter_params(
    input_dim: int, feature_dim: int, config: AugmenterConfig, seed: int
) -> ParamStore:
    """遞迴單元 (gru.* 或 rnn.*) 加上 readout.W_p / readout.b_p"""
    params = ParamStore(seed, namespace="augmenter")
    if config.cell == "gru":
        nx.add_gru_params(params, input_dim, config.hidden_dim, prefix="gru")
    else:
        nx.add_rnn_params(params, input_dim, config.hidden_dim, prefix="rnn")
    params.add_weight("readout.W_p", config.hidden_dim, feature_dim)
    params.add_bias("readout.b_p", feature_dim)
    return params


def hidden_dim(params: ParamStore) -> int:
    return params["readout.W_p"].shape[0]


def recurrent_step(x, h_prev, params: ParamStore) -> Tensor:
    if "gru.W_z" in params:
        return nx.gru_cell(x, h_prev, params, prefix="gru")
    return nx.rnn_cell(x, h_prev, params, prefix="rnn")


def _input_dim(params: ParamStore) -> int:
    weight = params["gru.W_z"] if "gru.W_z" in params else params["rnn.W"]
    return weight.shape[0] - hidden_dim(params)


def _check_sequence(seq: FeatureSequence, params: ParamStore) -> None:
    expected = _input_dim(params)
    if seq.features.shape[1] != expected:
        raise DimensionError(
            f"sequence of user {seq.user_id}: feature width {seq.features.shape[1]} != recurrent input {expected}"
        )


# ==================== 單一序列 ====================

def encode_sequence(seq: FeatureSequence, params: ParamStore) -> List[Tensor]:
    """h_0 = 0，h_i = GRU(x_i, h_{i−1})，i = 1..l_u"""
    _check_sequence(seq, params)
    h = Tensor(np.zeros(hidden_dim(params)))
    states = []
    for x in seq.features:
        h = recurrent_step(x, h, params)
        states.append(h)
    return states


def predict_next_feature(h: Tensor, params: ParamStore) -> Tensor:
    """x̂ = W_p·h + b_p"""
    return nx.add(nx.matmul(h, params["readout.W_p"]), params["readout.b_p"])


def _unit_rows(item_features: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(item_features, axis=1)
    if np.any(norms == 0):
        raise DegenerateVectorError("item feature rows must have non-zero norm")
    return item_features / norms[:, None]


def snap_rows(x_hat: np.ndarray, item_features: np.ndarray) -> np.ndarray:
    """每列 x̂ 對齊到 cosine 最大的 item；同分取最小 id，零向量退回 item 0"""
    x_hat = np.atleast_2d(x_hat)
    norms = np.linalg.norm(x_hat, axis=1)
    degenerate = norms == 0
    if np.any(degenerate):
        logger.warning(f"{int(degenerate.sum())} predicted feature vectors have zero norm, snapping to item 0")
    safe = np.where(degenerate, 1.0, norms)
    similarity = (x_hat @ _unit_rows(item_features).T) / safe[:, None]
    chosen = np.argmax(similarity, axis=1)
    chosen[degenerate] = 0
    return chosen


def snap_to_item(x_hat: np.ndarray, item_features: np.ndarray) -> int:
    if isinstance(x_hat, Tensor):
        x_hat = x_hat.values
    return int(snap_rows(np.asarray(x_hat, dtype=np.float64), item_features)[0])


def _next_input(item_features: np.ndarray, items, embedding: Optional[np.ndarray]) -> np.ndarray:
    x = item_features[items]
    if embedding is None:
        return x
    if x.ndim == 1:
        return np.concatenate([x, embedding])
    return np.hstack([x, embedding])


def decode_discrete(
    seq: FeatureSequence, delta: int, params: ParamStore, item_features: np.ndarray
) -> List[int]:
    """
    自迴歸解碼 Δl 個 item：預測 x̂、對齊到 item v、以 v 的特徵 (⊕ z_u) 作為下一步輸入。
    """
    if delta < 0:
        raise ParameterError(f"budget must be non-negative, got {delta}")
    if delta == 0:
        return []
    with nx.no_grad():
        return plan_discrete([seq], {seq.user_id: delta}, params, item_features).discrete[seq.user_id]


def _relaxed_logits(x_hat: Tensor, item_features: np.ndarray) -> Tensor:
    """log(clamp((1 + cos)/2, 1e-6, 1))"""
    try:
        similarity = nx.cosine_matrix(x_hat, item_features)
    except DegenerateVectorError:
        logger.warning("zero-norm predicted feature in relaxed decoding, using uniform logits")
        return Tensor(np.full((x_hat.shape[0], item_features.shape[0]), np.log(0.5)))
    shifted = nx.mul(nx.add(similarity, 1.0), 0.5)
    return nx.log(nx.clip(shifted, LOGIT_FLOOR, 1.0))


def user_rng(seed: Union[int, Sequence[int]], user_id: int) -> np.random.Generator:
    """每位使用者獨立的亂數流 (由全域 seed 與 user_id 組成)，批次與逐一解碼得到相同的抽樣"""
    entropy = [int(seed)] if np.isscalar(seed) else [int(s) for s in seed]
    return np.random.default_rng(np.random.SeedSequence(entropy + [int(user_id)]))


def decode_relaxed(
    seq: FeatureSequence,
    delta: int,
    params: ParamStore,
    item_features: np.ndarray,
    tau: float,
    rng: np.random.Generator,
) -> List[Tuple[Tensor, int]]:
    """
    每步：π = cos(x̂, item_j)，logits = log((1+π)/2)，Gumbel-Softmax 取樣；
    hard index 的特徵作為下一步輸入。
    """
    if not tau > 0:
        raise ParameterError(f"Gumbel-Softmax temperature must be positive, got {tau}")
    if delta < 0:
        raise ParameterError(f"budget must be non-negative, got {delta}")
    if delta == 0:
        return []
    _check_sequence(seq, params)
    n = item_features.shape[0]
    rollout = _relaxed_rollout([seq], np.array([delta]), [rng], params, item_features, tau, pass_gradient=True)
    return [(nx.reshape(relaxed, (n,)), int(hard[0])) for relaxed, hard, _, _ in rollout]


# ==================== 預算 ====================

def budget_itr(yhat: np.ndarray, kappa: int) -> np.ndarray:
    """Δl_u = floor(κ·ŷ_u)"""
    if kappa < 0:
        raise ParameterError(f"kappa must be non-negative, got {kappa}")
    return np.floor(kappa * np.asarray(yhat, dtype=np.float64)).astype(np.int64)


def budget_e2e(degrees: np.ndarray, gamma: int) -> np.ndarray:
    """優先連結：Δl_u = floor(γ·d_u / Σd)"""
    if gamma < 0:
        raise ParameterError(f"gamma must be non-negative, got {gamma}")
    degrees = np.asarray(degrees)
    if np.any(degrees < 0):
        raise ParameterError("degrees must be non-negative")
    total = degrees.sum()
    if total <= 0:
        raise ParameterError("preferential-attachment budget needs a positive total degree")
    if np.all(np.equal(np.mod(degrees, 1), 0)):
        # 整數運算避免 γ·d/Σd 的捨入誤差
        integral = degrees.astype(np.int64)
        return (int(gamma) * integral) // int(integral.sum())
    return np.floor(gamma * degrees / total).astype(np.int64)


# ==================== 損失 ====================

def aug_loss(
    predicted: Tensor,
    actual: np.ndarray,
    seq_lengths: Sequence[int],
    owners: Optional[np.ndarray] = None,
) -> Tensor:
    """
    L_aug = −(1/|U'|) Σ_u 1/(l_u − 1) Σ_{i=2..l_u} cos(x̂_i, x_i)，U' 為 l_u ≥ 2 的使用者。

    Args:
        predicted: T×k 的預測特徵 (teacher forcing)
        actual: T×k 的實際特徵
        seq_lengths: 每位使用者的序列長度
        owners: 每一列所屬的使用者位置 (對應 seq_lengths)；None 表示依序每人 l_u − 1 列
    """
    lengths = np.asarray(seq_lengths, dtype=np.int64)
    eligible = lengths >= 2
    if not np.any(eligible):
        raise ParameterError("aug_loss needs at least one sequence with two or more actions")
    if owners is None:
        owners = np.repeat(np.arange(lengths.size), np.maximum(lengths - 1, 0))
    owners = np.asarray(owners, dtype=np.int64)
    expected_rows = int(np.sum(lengths[eligible] - 1))
    if predicted.shape[0] != expected_rows or owners.shape[0] != expected_rows:
        raise DimensionError(
            f"aug_loss expects {expected_rows} prediction rows, got predicted {predicted.shape[0]}, owners {owners.shape[0]}"
        )
    weights = 1.0 / (eligible.sum() * (lengths[owners] - 1))
    similarity = nx.rowwise_cosine(predicted, np.asarray(actual, dtype=np.float64))
    return nx.mul(nx.sum_(nx.mul(similarity, weights)), -1.0)


# ==================== 批次編碼 ====================

class PackedEncoding(NamedTuple):
    order: np.ndarray  # 依長度遞減的序列位置
    lengths: np.ndarray  # 排序後的長度
    states: List[Tensor]  # 第 i 步的隱藏狀態，列數 = 長度 > i 的序列數
    final: Tensor  # 每條序列最後一步的隱藏狀態 (原輸入順序)


def encode_batch(sequences: Sequence[FeatureSequence], params: ParamStore) -> PackedEncoding:
    """所有序列一起編碼；結果與逐條 encode_sequence 相同"""
    if not sequences:
        raise ParameterError("encode_batch needs at least one sequence")
    for seq in sequences:
        _check_sequence(seq, params)
    lengths = np.array([seq.length for seq in sequences], dtype=np.int64)
    order = np.argsort(-lengths, kind="stable")
    sorted_lengths = lengths[order]
    max_length = int(sorted_lengths[0])
    active = [int(np.sum(sorted_lengths > i)) for i in range(max_length + 1)]

    h = Tensor(np.zeros((len(sequences), hidden_dim(params))))
    states: List[Tensor] = []
    for i in range(max_length):
        rows = active[i]
        x = np.stack([sequences[j].features[i] for j in order[:rows]])
        h_prev = h if h.shape[0] == rows else nx.take_rows(h, np.arange(rows))
        h = recurrent_step(x, h_prev, params)
        states.append(h)

    # 長度為 i+1 的序列在排序後位於 [active[i+1], active[i])
    finished = [
        nx.take_rows(states[i], np.arange(active[i + 1], active[i]))
        for i in reversed(range(max_length))
        if active[i + 1] < active[i]
    ]
    final_sorted = finished[0] if len(finished) == 1 else nx.concat(finished, axis=0)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    final = nx.take_rows(final_sorted, inverse)
    return PackedEncoding(order=order, lengths=sorted_lengths, states=states, final=final)


def teacher_forced_predictions(
    sequences: Sequence[FeatureSequence], params: ParamStore, feature_dim: int
) -> Tuple[Tensor, np.ndarray, np.ndarray]:
    """
    以 h_i 預測 x_{i+1}，只取長度 ≥ 2 的序列。

    Returns:
        (predicted T×k, actual T×k, owners 對應 sequences 的位置)
    """
    encoding = encode_batch(sequences, params)
    predicted_parts, actual_parts, owner_parts = [], [], []
    for i, state in enumerate(encoding.states[:-1]):
        rows = int(np.sum(encoding.lengths > i + 1))
        if rows == 0:
            continue
        h = state if state.shape[0] == rows else nx.take_rows(state, np.arange(rows))
        positions = encoding.order[:rows]
        predicted_parts.append(predict_next_feature(h, params))
        actual_parts.append(np.stack([sequences[j].features[i + 1][:feature_dim] for j in positions]))
        owner_parts.append(positions)
    if not predicted_parts:
        raise ParameterError("no sequence has two or more actions")
    predicted = predicted_parts[0] if len(predicted_parts) == 1 else nx.concat(predicted_parts, axis=0)
    return predicted, np.vstack(actual_parts), np.concatenate(owner_parts)


def sequence_aug_loss(sequences: Sequence[FeatureSequence], params: ParamStore, feature_dim: int) -> Tensor:
    predicted, actual, owners = teacher_forced_predictions(sequences, params, feature_dim)
    lengths = [seq.length for seq in sequences]
    return aug_loss(predicted, actual, lengths, owners)


def train_augmenter(
    sequences: Sequence[FeatureSequence],
    item_features: np.ndarray,
    config: AugmenterConfig,
    seed: int,
) -> Tuple[ParamStore, List[float]]:
    """
    以 teacher forcing 的 L_aug 全批次訓練一個新的擴增模組。

    Returns:
        (params, 每個 epoch 的 loss)
    """
    if not sequences:
        raise ParameterError("train_augmenter needs at least one sequence")
    feature_dim = item_features.shape[1]
    params = init_augmenter_params(sequences[0].features.shape[1], feature_dim, config, seed)
    if all(seq.length < 2 for seq in sequences):
        logger.warning("no sequence has two or more actions, augmenter stays at its initialization")
        return params, []

    optimizer = Adam(params.tensors(), lr=config.learning_rate, weight_decay=config.weight_decay)
    loss_trace = []
    for epoch in range(config.epochs):
        optimizer.zero_grad()
        loss = sequence_aug_loss(sequences, params, feature_dim)
        loss.backward()
        optimizer.step()
        loss_trace.append(loss.item())
        logger.debug(f"augmenter epoch {epoch}: L_aug={loss_trace[-1]:.6f}")
    logger.info(f"augmenter ({config.cell}) trained for {config.epochs} epochs, L_aug {loss_trace[0]:.4f} -> {loss_trace[-1]:.4f}")
    return params, loss_trace


# ==================== 批次解碼 ====================

def _budgeted(sequences: Sequence[FeatureSequence], budgets: Mapping[int, int]) -> List[Tuple[FeatureSequence, int]]:
    chosen = []
    for seq in sequences:
        budget = int(budgets.get(seq.user_id, 0))
        if budget < 0:
            raise ParameterError(f"negative budget for user {seq.user_id}")
        if budget > 0:
            chosen.append((seq, budget))
    return chosen


def _embedding_block(sequences: Sequence[FeatureSequence]) -> Optional[np.ndarray]:
    if sequences[0].embedding is None:
        return None
    return np.stack([seq.embedding for seq in sequences])


def plan_discrete(
    sequences: Sequence[FeatureSequence],
    budgets: Mapping[int, int],
    params: ParamStore,
    item_features: np.ndarray,
) -> AugmentationPlan:
    """對所有預算 > 0 的使用者批次執行 decode_discrete"""
    chosen = _budgeted(sequences, budgets)
    plan_budgets = {seq.user_id: int(budgets.get(seq.user_id, 0)) for seq in sequences}
    predictions: Dict[int, List[int]] = {seq.user_id: [] for seq, _ in chosen}
    if not chosen:
        return AugmentationPlan(budgets=plan_budgets, discrete=predictions)

    with nx.no_grad():
        active_seqs = [seq for seq, _ in chosen]
        encoding = encode_batch(active_seqs, params)
        steps = np.array([budget for _, budget in chosen], dtype=np.int64)
        order = np.argsort(-steps, kind="stable")
        h = nx.take_rows(encoding.final, order)
        embeddings = _embedding_block(active_seqs)
        if embeddings is not None:
            embeddings = embeddings[order]
        sorted_steps = steps[order]
        for t in range(int(sorted_steps[0])):
            rows = int(np.sum(sorted_steps > t))
            if h.shape[0] != rows:
                h = nx.take_rows(h, np.arange(rows))
            chosen_items = snap_rows(predict_next_feature(h, params).values, item_features)
            for position, item in zip(order[:rows], chosen_items):
                predictions[active_seqs[position].user_id].append(int(item))
            continuing = int(np.sum(sorted_steps > t + 1))
            if continuing == 0:
                break
            x_next = _next_input(
                item_features, chosen_items[:continuing], None if embeddings is None else embeddings[:continuing]
            )
            h = recurrent_step(x_next, nx.take_rows(h, np.arange(continuing)), params)

    plan = AugmentationPlan(budgets=plan_budgets, discrete=predictions)
    logger.info(f"discrete plan: {plan.total_predictions()} predicted actions for {len(chosen)} users")
    return plan


class RelaxedSelections(NamedTuple):
    selections: Tensor  # R×n，前向為 one-hot，反向走 relaxed
    owners: np.ndarray  # 每列所屬的 user_id
    plan: AugmentationPlan


def _relaxed_rollout(
    active_seqs: Sequence[FeatureSequence],
    steps: np.ndarray,
    rngs: Sequence[np.random.Generator],
    params: ParamStore,
    item_features: np.ndarray,
    tau: float,
    pass_gradient: bool,
    hard_selections: bool = True,
) -> List[Tuple[Tensor, np.ndarray, Tensor, np.ndarray]]:
    """
    批次自迴歸的鬆弛解碼。回傳每一步的 (relaxed, hard, straight-through one-hot, 序列位置)；
    第 t 步只包含預算 > t 的序列，依預算遞減排列。
    """
    n = item_features.shape[0]
    encoding = encode_batch(active_seqs, params)
    order = np.argsort(-steps, kind="stable")
    h = nx.take_rows(encoding.final, order)
    embeddings = _embedding_block(active_seqs)
    if embeddings is not None:
        embeddings = embeddings[order]
    sorted_steps = steps[order]

    rollout = []
    for t in range(int(sorted_steps[0])):
        rows = int(np.sum(sorted_steps > t))
        if h.shape[0] != rows:
            h = nx.take_rows(h, np.arange(rows))
        logits = _relaxed_logits(predict_next_feature(h, params), item_features)
        noise = np.vstack([nx.sample_gumbel(rngs[position], (1, n)) for position in order[:rows]])
        relaxed, hard = nx.gumbel_softmax(logits, tau, noise=noise)
        if hard_selections:
            onehot = nx.straight_through_onehot(relaxed, hard, pass_gradient=pass_gradient)
        else:
            onehot = relaxed
        rollout.append((relaxed, hard, onehot, order[:rows]))
        continuing = int(np.sum(sorted_steps > t + 1))
        if continuing == 0:
            break
        x_next = _next_input(item_features, hard[:continuing], None if embeddings is None else embeddings[:continuing])
        h = recurrent_step(x_next, nx.take_rows(h, np.arange(continuing)), params)
    return rollout


def plan_relaxed(
    sequences: Sequence[FeatureSequence],
    budgets: Mapping[int, int],
    params: ParamStore,
    item_features: np.ndarray,
    tau: float,
    seed: Union[int, Sequence[int]],
    pass_gradient: bool = True,
    hard_selections: bool = True,
) -> RelaxedSelections:
    """
    批次執行 decode_relaxed；每位使用者的 Gumbel 抽樣來自 user_rng(seed, user_id)，
    與逐一呼叫 decode_relaxed(..., rng=user_rng(seed, user_id)) 相同。

    Returns:
        RelaxedSelections：selections 為 R×n 張量 (前向 one-hot，反向 relaxed)，
        owners 為每列的 user_id，plan 記錄每一步的機率向量與 hard index
    """
    if not tau > 0:
        raise ParameterError(f"Gumbel-Softmax temperature must be positive, got {tau}")
    n = item_features.shape[0]
    chosen = _budgeted(sequences, budgets)
    plan_budgets = {seq.user_id: int(budgets.get(seq.user_id, 0)) for seq in sequences}
    relaxed_steps: Dict[int, List[RelaxedStep]] = {seq.user_id: [] for seq, _ in chosen}
    if not chosen:
        empty = Tensor(np.zeros((0, n)))
        plan = AugmentationPlan(budgets=plan_budgets, relaxed=relaxed_steps)
        return RelaxedSelections(empty, np.zeros(0, dtype=np.int64), plan)

    active_seqs = [seq for seq, _ in chosen]
    rngs = [user_rng(seed, seq.user_id) for seq in active_seqs]
    steps = np.array([budget for _, budget in chosen], dtype=np.int64)
    rollout = _relaxed_rollout(active_seqs, steps, rngs, params, item_features, tau, pass_gradient, hard_selections)

    selection_parts: List[Tensor] = []
    owner_parts: List[np.ndarray] = []
    for relaxed, hard, onehot, positions in rollout:
        users = np.array([active_seqs[p].user_id for p in positions], dtype=np.int64)
        selection_parts.append(onehot)
        owner_parts.append(users)
        for row, user_id in enumerate(users):
            relaxed_steps[int(user_id)].append(
                RelaxedStep(probabilities=relaxed.values[row].copy(), hard_index=int(hard[row]))
            )

    selections = selection_parts[0] if len(selection_parts) == 1 else nx.concat(selection_parts, axis=0)
    plan = AugmentationPlan(budgets=plan_budgets, relaxed=relaxed_steps)
    return RelaxedSelections(selections, np.concatenate(owner_parts), plan)
