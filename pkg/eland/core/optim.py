import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np

from eland.core.numerics import Tensor
from eland.errors import ParameterError

logger = logging.getLogger(__name__)


class Adam:
    """
    Adam 最佳化器，weight decay 以 L2 形式加在梯度上 (g ← g + λθ)。

    Args:
        tensors: 要更新的參數
        lr: 學習率
        betas: (β1, β2)
        weight_decay: λ
    """

    def __init__(
        self,
        tensors: Sequence[Tensor],
        lr: float = 0.01,
        betas: Tuple[float, float] = (0.9, 0.999),
        weight_decay: float = 0.0,
        eps: float = 1e-8,
    ):
        if not lr > 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        if not (0 <= betas[0] < 1 and 0 <= betas[1] < 1):
            raise ParameterError(f"betas must lie in [0, 1), got {betas}")
        if weight_decay < 0:
            raise ParameterError(f"weight_decay must be non-negative, got {weight_decay}")
        self.tensors: List[Tensor] = list(tensors)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.step_count = 0
        self._m: Dict[int, np.ndarray] = {}
        self._v: Dict[int, np.ndarray] = {}

    def zero_grad(self) -> None:
        for tensor in self.tensors:
            tensor.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        for i, tensor in enumerate(self.tensors):
            if tensor.grad is None:
                continue
            grad = tensor.grad
            if self.weight_decay:
                grad = grad + self.weight_decay * tensor.values
            m = self._m.get(i)
            v = self._v.get(i)
            if m is None:
                m = np.zeros_like(tensor.values)
                v = np.zeros_like(tensor.values)
            m = self.beta1 * m + (1.0 - self.beta1) * grad
            v = self.beta2 * v + (1.0 - self.beta2) * grad ** 2
            self._m[i], self._v[i] = m, v
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            tensor.values = tensor.values - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
