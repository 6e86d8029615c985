from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator

# 含 numpy / scipy 欄位的模型共用設定
ARRAY_CONFIG = ConfigDict(
    arbitrary_types_allowed=True,
    frozen=True,
)


# --- ActionRecord ---
class ActionRecord(BaseModel):
    """一筆使用者行為 (user 在 ts 時刻採用了 item)"""

    user_id: int = Field(alias="user", ge=0)
    item_id: int = Field(alias="item", ge=0)
    timestamp: int = Field(alias="ts", ge=0, description="epoch seconds")

    model_config = ConfigDict(frozen=True, populate_by_name=True)


# --- BipartiteGraph ---
class BipartiteGraph(BaseModel):
    """
    加權 user-item 二分圖。
    adjacency 為 m×n 的 CSR 矩陣，值為該 (user, item) 的行為次數；不存在的項目代表權重 0。
    """

    m: int = Field(ge=0)
    n: int = Field(ge=0)
    adjacency: sp.csr_matrix
    user_features: np.ndarray
    item_features: np.ndarray
    labels: Optional[np.ndarray] = None

    model_config = ARRAY_CONFIG

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.adjacency.shape != (self.m, self.n):
            raise ValueError(f"adjacency shape {self.adjacency.shape} != ({self.m}, {self.n})")
        if self.user_features.ndim != 2 or self.user_features.shape[0] != self.m:
            raise ValueError("user_features must have m rows")
        if self.item_features.ndim != 2 or self.item_features.shape[0] != self.n:
            raise ValueError("item_features must have n rows")
        if self.user_features.shape[1] != self.item_features.shape[1]:
            raise ValueError("user and item feature rows must share dimension k")
        if self.adjacency.nnz and self.adjacency.data.min() < 1:
            raise ValueError("stored adjacency weights must be >= 1")
        if self.labels is not None and self.labels.shape != (self.m,):
            raise ValueError("labels must be a length-m vector")
        return self

    @property
    def feature_dim(self) -> int:
        return int(self.user_features.shape[1])

    def weight(self, user_id: int, item_id: int) -> int:
        return int(self.adjacency[user_id, item_id])

    def edges(self) -> Dict[Tuple[int, int], int]:
        """稀疏 map 形式 {(u, v): weight}"""
        coo = self.adjacency.tocoo()
        return {(int(u), int(v)): int(w) for u, v, w in zip(coo.row, coo.col, coo.data)}

    def total_weight(self) -> int:
        return int(self.adjacency.sum())


# --- FeatureSequence ---
class FeatureSequence(BaseModel):
    """
    單一使用者依時間排序的行為序列。
    features 每列為 item 特徵 (k 維)，若有 embedding 則為 x ⊕ z_u (k+d 維)。
    """

    user_id: int
    items: List[int]
    features: np.ndarray
    embedding: Optional[np.ndarray] = None

    model_config = ARRAY_CONFIG

    @model_validator(mode="after")
    def _check_lengths(self):
        if len(self.items) < 1:
            raise ValueError("a sequence holds at least one action")
        if self.features.shape[0] != len(self.items):
            raise ValueError("features length must equal items length")
        return self

    @property
    def length(self) -> int:
        return len(self.items)


# --- 資料切分 ---
class Split(BaseModel):
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    model_config = ARRAY_CONFIG

    def mask(self, name: str, m: int) -> np.ndarray:
        out = np.zeros(m, dtype=bool)
        out[getattr(self, name)] = True
        return out


# --- Dataset ---
class Dataset(BaseModel):
    """一個完整的資料集：行為日誌、節點特徵、標籤與切分"""

    actions: List[ActionRecord]
    user_features: np.ndarray
    item_features: np.ndarray
    labels: np.ndarray
    split: Split
    archetypes: Optional[List[str]] = None

    model_config = ARRAY_CONFIG

    @property
    def m(self) -> int:
        return int(self.user_features.shape[0])

    @property
    def n(self) -> int:
        return int(self.item_features.shape[0])

    def iter_actions(self) -> Iterator[ActionRecord]:
        return iter(self.actions)
