"""
最小的稠密張量運算與反向自動微分。

只涵蓋框架需要的固定運算集合 (matmul、加減乘、ReLU、sigmoid、tanh、softmax、
concat、cosine similarity、GRU/RNN cell、Gumbel-Softmax + straight-through、
稀疏傳播)。所有數值皆為 float64。
"""

import logging
import threading
import zlib
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from eland.errors import DegenerateVectorError, DimensionError, EvaluationError, ParameterError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]

GUMBEL_EPS = 1e-12

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """區塊內的運算不建立反向傳播圖 (推論、解碼使用)"""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """float64 稠密陣列，附帶可選的梯度緩衝區"""

    __slots__ = ("values", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, values: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    def item(self) -> float:
        if self.values.size != 1:
            raise DimensionError(f"item() needs a single value, tensor {self._label()} has shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _label(self) -> str:
        return self.name or f"<tensor {self.shape}>"

    def __repr__(self) -> str:
        return f"Tensor(name={self.name!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """從此節點做反向傳播；純量輸出時 grad 預設為 1"""
        if grad is None:
            if self.values.size != 1:
                raise DimensionError(f"backward() without grad needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.values)
        if not self.requires_grad:
            return
        order = _topological_order(self)
        for node in order:
            if node._backward is not None:
                node.grad = None
        _accumulate(self, np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # 運算子
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __rmatmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(other, self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    grad = _unbroadcast(grad, tensor.shape)
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=np.float64, copy=True)
    else:
        tensor.grad = tensor.grad + grad


def _result(values: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    # 運算結果直接持有新陣列，不再複製
    out = Tensor.__new__(Tensor)
    out.values = np.asarray(values, dtype=np.float64)
    out.requires_grad = False
    out.grad = None
    out.name = None
    out._parents = ()
    out._backward = None
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ==================== 基本運算 ====================

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.values + b.values, (a, b), backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _result(a.values - b.values, (a, b), backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accumulate(a, g * b.values)
        _accumulate(b, g * a.values)

    return _result(a.values * b.values, (a, b), backward)


def square(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, 2.0 * g * a.values)

    return _result(a.values ** 2, (a,), backward)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim not in (1, 2) or b.values.ndim != 2:
        raise DimensionError(f"matmul supports (k)@(k,d) and (n,k)@(k,d); got {a._label()} {a.shape} @ {b._label()} {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimension mismatch: {a._label()} {a.shape} @ {b._label()} {b.shape}")

    def backward(g):
        a2 = np.atleast_2d(a.values)
        g2 = np.atleast_2d(g)
        _accumulate(a, (g2 @ b.values.T).reshape(a.shape))
        _accumulate(b, a2.T @ g2)

    return _result(a.values @ b.values, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, g.T)

    return _result(a.values.T, (a,), backward)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _result(a.values.reshape(shape), (a,), backward)


def take_rows(a: Tensor, index: Union[np.ndarray, Sequence[int]]) -> Tensor:
    """依列索引取出子矩陣 (gather)，反向為 scatter-add"""
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(a.values)
        np.add.at(full, index, g)
        _accumulate(a, full)

    return _result(a.values[index], (a,), backward)


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise DimensionError("concat needs at least one tensor")
    ndim = parts[0].values.ndim
    for p in parts:
        if p.values.ndim != ndim:
            raise DimensionError(f"concat rank mismatch at {p._label()} {p.shape}")
    axis = axis % ndim
    sizes = [p.shape[axis] for p in parts]
    try:
        values = np.concatenate([p.values for p in parts], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat shape mismatch: {[p.shape for p in parts]} ({e})")

    def backward(g):
        offsets = np.cumsum([0] + sizes)
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            slicer = [slice(None)] * g.ndim
            slicer[axis] = slice(int(start), int(stop))
            _accumulate(p, g[tuple(slicer)])

    return _result(values, parts, backward)


def sum_(a: Tensor, axis: Optional[int] = None) -> Tensor:
    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _result(np.asarray(a.values.sum(axis=axis)), (a,), backward)


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    count = a.values.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis), 1.0 / count)


# ==================== 非線性 ====================

def relu(a: Tensor) -> Tensor:
    mask = a.values > 0

    def backward(g):
        _accumulate(a, g * mask)

    return _result(a.values * mask, (a,), backward)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _stable_sigmoid(a.values)

    def backward(g):
        _accumulate(a, g * s * (1.0 - s))

    return _result(s, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.values)

    def backward(g):
        _accumulate(a, g * (1.0 - t ** 2))

    return _result(t, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.values <= 0):
        raise ParameterError(f"log of non-positive value in {a._label()}")

    def backward(g):
        _accumulate(a, g / a.values)

    return _result(np.log(a.values), (a,), backward)


def clip(a: Tensor, low: float, high: float) -> Tensor:
    inside = (a.values >= low) & (a.values <= high)

    def backward(g):
        _accumulate(a, g * inside)

    return _result(np.clip(a.values, low, high), (a,), backward)


def softmax(a: Tensor) -> Tensor:
    """沿最後一軸的 softmax"""
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    s = ex / ex.sum(axis=-1, keepdims=True)

    def backward(g):
        _accumulate(a, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _result(s, (a,), backward)


# ==================== 相似度 ====================

def _row_norms(values: np.ndarray, label: str) -> np.ndarray:
    norms = np.linalg.norm(values, axis=-1)
    if np.any(norms == 0):
        raise DegenerateVectorError(f"zero-norm vector in {label}")
    return norms


def rowwise_cosine(a: ArrayLike, b: ArrayLike) -> Tensor:
    """逐列 cosine similarity：(B,k),(B,k) -> (B,)"""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.values.ndim != 2:
        raise DimensionError(f"rowwise_cosine needs equal (B,k) shapes, got {a._label()} {a.shape} and {b._label()} {b.shape}")
    na = _row_norms(a.values, a._label())
    nb = _row_norms(b.values, b._label())
    dots = (a.values * b.values).sum(axis=1)
    c = dots / (na * nb)

    def backward(g):
        g = g[:, None]
        _accumulate(a, g * (b.values / (na * nb)[:, None] - c[:, None] * a.values / (na ** 2)[:, None]))
        _accumulate(b, g * (a.values / (na * nb)[:, None] - c[:, None] * b.values / (nb ** 2)[:, None]))

    return _result(c, (a, b), backward)


def cosine_similarity(a: ArrayLike, b: ArrayLike) -> Tensor:
    """a·b / (‖a‖·‖b‖)，兩個一維向量，輸出純量"""
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"cosine_similarity needs two (k,) vectors, got {a.shape} and {b.shape}")
    k = a.shape[0]
    out = rowwise_cosine(reshape(a, (1, k)), reshape(b, (1, k)))
    return reshape(out, ())


def cosine_matrix(a: Tensor, items: np.ndarray) -> Tensor:
    """每個預測列與每個 item 特徵列的 cosine：(B,k),(n,k) -> (B,n)；items 視為常數"""
    if a.values.ndim != 2 or a.shape[1] != items.shape[1]:
        raise DimensionError(f"cosine_matrix needs (B,k) vs (n,k), got {a._label()} {a.shape} and items {items.shape}")
    na = _row_norms(a.values, a._label())
    unit_items = items / _row_norms(items, "item_features")[:, None]
    c = (a.values @ unit_items.T) / na[:, None]

    def backward(g):
        da = (g @ unit_items) / na[:, None] - ((g * c).sum(axis=1) / na ** 2)[:, None] * a.values
        _accumulate(a, da)

    return _result(c, (a,), backward)


# ==================== 圖傳播 ====================

def spmm(adj: sp.spmatrix, h: Tensor) -> Tensor:
    """常數稀疏矩陣乘上張量"""
    if adj.shape[1] != h.shape[0]:
        raise DimensionError(f"spmm: adjacency {adj.shape} vs {h._label()} {h.shape}")

    def backward(g):
        _accumulate(h, np.asarray(adj.T @ g))

    return _result(np.asarray(adj @ h.values), (h,), backward)


def _block_adjacency(counts: sp.spmatrix) -> sp.csr_matrix:
    """m×n 的二分圖權重嵌入 (m+n)×(m+n) 對稱矩陣並加上自環"""
    m, n = counts.shape
    block = sp.bmat([[None, counts], [counts.T, None]], format="csr", dtype=np.float64)
    return (block + sp.identity(m + n, format="csr", dtype=np.float64)).tocsr()


def augmented_propagate(base_counts: sp.spmatrix, selections: Optional[Tensor], owners: np.ndarray, h: Tensor) -> Tensor:
    """
    計算 norm(A + P)·H，P 把 selections 的每一列 (長度 n) 加到其擁有者 (owners) 的 user 列。
    正規化 D̃^{-1/2}ÃD̃^{-1/2} 作用在 A + P 上；對 H 與 selections 的反向皆為精確梯度 (含 degree 項)。
    """
    m, n = base_counts.shape
    owners = np.asarray(owners, dtype=np.int64)
    counts = sp.csr_matrix(base_counts, dtype=np.float64)
    if selections is not None and selections.shape[0] > 0:
        if selections.shape[1] != n or selections.shape[0] != owners.shape[0]:
            raise DimensionError(f"selections {selections.shape} do not match owners {owners.shape} / n={n}")
        rows, cols = np.nonzero(selections.values)
        extra = sp.csr_matrix(
            (selections.values[rows, cols], (owners[rows], cols)), shape=(m, n), dtype=np.float64
        )
        counts = counts + extra
    a_tilde = _block_adjacency(counts)
    degrees = np.asarray(a_tilde.sum(axis=1)).ravel()
    s = 1.0 / np.sqrt(degrees)
    a_hat = sp.diags(s) @ a_tilde @ sp.diags(s)
    if a_hat.shape[1] != h.shape[0]:
        raise DimensionError(f"augmented_propagate: adjacency {a_hat.shape} vs {h._label()} {h.shape}")
    parents = (h,) if selections is None else (h, selections)

    def backward(g):
        _accumulate(h, np.asarray(a_hat.T @ g))
        if selections is None or not selections.requires_grad or selections.shape[0] == 0:
            return
        hv = h.values if h.values.ndim == 2 else h.values[:, None]
        gv = g if g.ndim == 2 else g[:, None]
        q = s[:, None] * hv
        r = s[:, None] * gv
        ds = (gv * np.asarray(a_tilde @ q)).sum(axis=1) + (hv * np.asarray(a_tilde @ r)).sum(axis=1)
        dd = ds * (-0.5) * degrees ** (-1.5)
        d_sel = (
            r[owners] @ q[m:].T
            + q[owners] @ r[m:].T
            + dd[owners][:, None]
            + dd[m:][None, :]
        )
        _accumulate(selections, d_sel)

    return _result(np.asarray(a_hat @ h.values), parents, backward)


# ==================== Gumbel-Softmax ====================

def sample_gumbel(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    """g = −log(−log(u))，u ~ Uniform(ε, 1−ε)"""
    u = rng.uniform(GUMBEL_EPS, 1.0 - GUMBEL_EPS, size=shape)
    return -np.log(-np.log(u))


def gumbel_softmax(
    logits: ArrayLike,
    tau: float,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
) -> Tuple[Tensor, Union[int, np.ndarray]]:
    """
    回傳 (relaxed, hard_index)。relaxed = softmax((logits + g)/τ)，hard_index = argmax(relaxed)。
    可傳入固定的 noise 以重現同一組 Gumbel 抽樣 (梯度檢查使用)。
    """
    if not tau > 0:
        raise ParameterError(f"Gumbel-Softmax temperature must be positive, got {tau}")
    logits = as_tensor(logits)
    if not np.all(np.isfinite(logits.values)):
        raise ParameterError("Gumbel-Softmax logits must be finite")
    if noise is None:
        if rng is None:
            raise ParameterError("gumbel_softmax needs either rng or noise")
        noise = sample_gumbel(rng, logits.shape)
    relaxed = softmax(mul(add(logits, noise), 1.0 / tau))
    hard = np.argmax(relaxed.values, axis=-1)
    if relaxed.values.ndim == 1:
        return relaxed, int(hard)
    return relaxed, hard


def straight_through_onehot(relaxed: Tensor, hard_index: Union[int, np.ndarray], pass_gradient: bool = True) -> Tensor:
    """前向輸出 one-hot；反向把梯度原封不動交給 relaxed (Straight-Through)"""
    onehot = np.zeros_like(relaxed.values)
    if relaxed.values.ndim == 1:
        onehot[int(hard_index)] = 1.0
    else:
        onehot[np.arange(onehot.shape[0]), np.asarray(hard_index, dtype=np.int64)] = 1.0

    def backward(g):
        if pass_gradient:
            _accumulate(relaxed, g)

    return _result(onehot, (relaxed,), backward)


# ==================== 參數 ====================

class ParamStore:
    """
    具名可訓練參數集合。以 (seed, namespace) 建立亂數產生器，
    相同 seed 重新初始化可逐位元重現。
    """

    def __init__(self, seed: int, namespace: str = "params"):
        if seed < 0:
            raise ParameterError("seed must be a non-negative integer")
        self.seed = int(seed)
        self.namespace = namespace
        self.entries: Dict[str, Tensor] = {}
        self._specs: List[Tuple[str, str, Tuple[int, ...]]] = []
        self._rng = self._make_rng()

    def _make_rng(self) -> np.random.Generator:
        salt = zlib.crc32(self.namespace.encode("utf-8"))
        return np.random.default_rng(np.random.SeedSequence([self.seed, salt]))

    def _register(self, name: str, values: np.ndarray, kind: str) -> Tensor:
        if name in self.entries:
            raise ParameterError(f"duplicate parameter name: {name}")
        tensor = Tensor(values, requires_grad=True, name=name)
        self.entries[name] = tensor
        self._specs.append((name, kind, tuple(values.shape)))
        return tensor

    def add_weight(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        """Glorot uniform：U(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out)))"""
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self._register(name, self._rng.uniform(-limit, limit, size=(fan_in, fan_out)), "weight")

    def add_bias(self, name: str, size: int) -> Tensor:
        return self._register(name, np.zeros(size), "bias")

    def add_tensor(self, name: str, values: ArrayLike) -> Tensor:
        return self._register(name, np.array(values, dtype=np.float64), "fixed")

    def reinitialize(self, seed: Optional[int] = None) -> None:
        """依原本的宣告順序重新抽樣 (seed 不變時結果逐位元相同)"""
        if seed is not None:
            self.seed = int(seed)
        self._rng = self._make_rng()
        for name, kind, shape in self._specs:
            tensor = self.entries[name]
            if kind == "weight":
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                tensor.values = self._rng.uniform(-limit, limit, size=shape)
            elif kind == "bias":
                tensor.values = np.zeros(shape)
            tensor.grad = None

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.entries[name]
        except KeyError:
            raise DimensionError(f"missing parameter: {name}")

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> List[str]:
        return list(self.entries)

    def tensors(self) -> List[Tensor]:
        return list(self.entries.values())

    def set(self, name: str, values: ArrayLike) -> None:
        tensor = self[name]
        values = np.array(values, dtype=np.float64)
        if values.shape != tensor.shape:
            raise DimensionError(f"parameter {name}: expected shape {tensor.shape}, got {values.shape}")
        tensor.values = values

    def zero_grad(self) -> None:
        for tensor in self.entries.values():
            tensor.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.entries.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, values in state.items():
            if name in self.entries:
                self.set(name, values)
            else:
                self.add_tensor(name, values)


# ==================== 遞迴單元 ====================

def _check_gate(params: ParamStore, name: str, shape: Tuple[int, ...]) -> Tensor:
    tensor = params[name]
    if tensor.shape != shape:
        raise DimensionError(f"{name}: expected shape {shape}, got {tensor.shape}")
    return tensor


def gru_cell(x: ArrayLike, h_prev: ArrayLike, params: ParamStore, prefix: str = "gru") -> Tensor:
    """
    h = (1−z)⊙h_prev + z⊙h̃
    z = σ([x,h]W_z + b_z), r = σ([x,h]W_r + b_r), h̃ = tanh([x, r⊙h]W_h + b_h)
    x 可為 (k_in,) 或批次 (B, k_in)。
    """
    x, h_prev = as_tensor(x), as_tensor(h_prev)
    if x.values.ndim != h_prev.values.ndim:
        raise DimensionError(f"gru_cell: x {x.shape} and h_prev {h_prev.shape} rank mismatch")
    k_in, d = x.shape[-1], h_prev.shape[-1]
    w_z = _check_gate(params, f"{prefix}.W_z", (k_in + d, d))
    w_r = _check_gate(params, f"{prefix}.W_r", (k_in + d, d))
    w_h = _check_gate(params, f"{prefix}.W_h", (k_in + d, d))
    b_z = _check_gate(params, f"{prefix}.b_z", (d,))
    b_r = _check_gate(params, f"{prefix}.b_r", (d,))
    b_h = _check_gate(params, f"{prefix}.b_h", (d,))

    xh = concat([x, h_prev], axis=-1)
    z = sigmoid(add(matmul(xh, w_z), b_z))
    r = sigmoid(add(matmul(xh, w_r), b_r))
    h_tilde = tanh(add(matmul(concat([x, mul(r, h_prev)], axis=-1), w_h), b_h))
    return add(h_prev, mul(z, sub(h_tilde, h_prev)))


def rnn_cell(x: ArrayLike, h_prev: ArrayLike, params: ParamStore, prefix: str = "rnn") -> Tensor:
    """h = tanh([x, h_prev]W + b)"""
    x, h_prev = as_tensor(x), as_tensor(h_prev)
    k_in, d = x.shape[-1], h_prev.shape[-1]
    w = _check_gate(params, f"{prefix}.W", (k_in + d, d))
    b = _check_gate(params, f"{prefix}.b", (d,))
    return tanh(add(matmul(concat([x, h_prev], axis=-1), w), b))


def add_gru_params(params: ParamStore, input_dim: int, hidden_dim: int, prefix: str = "gru") -> None:
    for gate in ("z", "r", "h"):
        params.add_weight(f"{prefix}.W_{gate}", input_dim + hidden_dim, hidden_dim)
        params.add_bias(f"{prefix}.b_{gate}", hidden_dim)


def add_rnn_params(params: ParamStore, input_dim: int, hidden_dim: int, prefix: str = "rnn") -> None:
    params.add_weight(f"{prefix}.W", input_dim + hidden_dim, hidden_dim)
    params.add_bias(f"{prefix}.b", hidden_dim)


# ==================== 梯度檢查 ====================

def grad_check(f: Callable[[ParamStore], Tensor], params: ParamStore, eps: float = 1e-5) -> float:
    """
    比較解析梯度與中央差分：回傳 max |analytic − numeric| / max(1, |numeric|)。
    f 在固定 params 下必須是確定性的。
    """
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")

    def evaluate() -> float:
        with no_grad():
            value = f(params).item()
        if not np.isfinite(value):
            raise EvaluationError(f"objective is not finite: {value}")
        return value

    params.zero_grad()
    loss = f(params)
    if not np.isfinite(loss.item()):
        raise EvaluationError(f"objective is not finite: {loss.item()}")
    loss.backward()

    max_error = 0.0
    for name in params.names():
        tensor = params[name]
        analytic = np.zeros_like(tensor.values) if tensor.grad is None else tensor.grad.copy()
        flat = tensor.values.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            plus = evaluate()
            flat[i] = original - eps
            minus = evaluate()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * eps)
            error = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            max_error = max(max_error, error)
    logger.debug(f"grad_check: max relative error {max_error:.3e} over {len(params)} parameters")
    return max_error
