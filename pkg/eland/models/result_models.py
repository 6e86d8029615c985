from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from eland.core.numerics import ParamStore
from eland.models.graph_models import ARRAY_CONFIG


# --- Detector ---
class DetectorOutput(BaseModel):
    """偵測模組輸出：每位使用者的可疑度 ŷ 與潛在表示 Z"""

    suspiciousness: np.ndarray
    embeddings: np.ndarray
    node_embeddings: Optional[np.ndarray] = None
    loss_trace: List[float] = Field(default_factory=list)

    model_config = ARRAY_CONFIG

    @model_validator(mode="after")
    def _check_range(self):
        y = self.suspiciousness
        if y.ndim != 1:
            raise ValueError("suspiciousness must be a vector")
        if y.size and (np.nanmin(y) < 0 or np.nanmax(y) > 1 or not np.all(np.isfinite(y))):
            raise ValueError("suspiciousness values must lie in [0, 1]")
        if self.embeddings.shape[0] != y.shape[0]:
            raise ValueError("embeddings must have one row per user")
        return self

    @property
    def m(self) -> int:
        return int(self.suspiciousness.shape[0])


# --- Augmentation ---
class RelaxedStep(BaseModel):
    probabilities: np.ndarray
    hard_index: int

    model_config = ARRAY_CONFIG


class AugmentationPlan(BaseModel):
    """
    每位使用者的預測預算 Δl_u，以及離散 (itr) 或鬆弛 (e2e) 的預測結果。
    """

    budgets: Dict[int, int]
    discrete: Optional[Dict[int, List[int]]] = None
    relaxed: Optional[Dict[int, List[RelaxedStep]]] = None

    model_config = ARRAY_CONFIG

    @model_validator(mode="after")
    def _check_counts(self):
        if (self.discrete is None) == (self.relaxed is None):
            raise ValueError("exactly one of discrete / relaxed predictions is required")
        predictions = self.discrete if self.discrete is not None else self.relaxed
        for user_id, budget in self.budgets.items():
            if budget < 0:
                raise ValueError(f"negative budget for user {user_id}")
            if len(predictions.get(user_id, [])) != budget:
                raise ValueError(f"user {user_id}: prediction count != budget {budget}")
        if self.relaxed is not None:
            for steps in self.relaxed.values():
                for step in steps:
                    if abs(float(step.probabilities.sum()) - 1.0) > 1e-12:
                        raise ValueError("relaxed vectors must sum to 1")
        return self

    def predicted_items(self) -> Dict[int, List[int]]:
        if self.discrete is not None:
            return {u: list(items) for u, items in self.discrete.items()}
        return {u: [step.hard_index for step in steps] for u, steps in self.relaxed.items()}

    def total_predictions(self) -> int:
        return int(sum(self.budgets.values()))


# --- Training traces ---
class IterationRecord(BaseModel):
    iteration: int
    val_auc: Optional[float] = None
    val_ap: Optional[float] = None
    detector_loss: Optional[float] = None
    augmenter_loss: Optional[float] = None
    predicted_actions: int = 0


class EpochRecord(BaseModel):
    epoch: int
    tau: float
    loss_ad: float
    loss_aug: float
    loss_e2e: float
    val_auc: Optional[float] = None
    augmented_edges: int = 0


class ItrResult(BaseModel):
    suspiciousness: np.ndarray
    trace: List[IterationRecord]
    selected_iteration: int
    output: DetectorOutput
    plan: Optional[AugmentationPlan] = None
    params: Dict[str, ParamStore] = Field(default_factory=dict)

    model_config = ARRAY_CONFIG


class E2eResult(BaseModel):
    suspiciousness: np.ndarray
    trace: List[EpochRecord]
    output: DetectorOutput
    plan: Optional[AugmentationPlan] = None
    params: Dict[str, ParamStore] = Field(default_factory=dict)

    model_config = ARRAY_CONFIG

    @property
    def loss_trace(self) -> List[float]:
        return [record.loss_e2e for record in self.trace]


# --- Sweep ---
class SweepRow(BaseModel):
    fraction: float
    method: str
    seed: int
    auc: float = Field(ge=0, le=1)
    ap: float = Field(ge=0, le=1)
    wall_time: float = 0.0
    cell_key: str = ""

    def sort_key(self) -> Tuple[float, str, int]:
        return (self.fraction, self.method, self.seed)


class PredicateRecord(BaseModel):
    """早期偵測判準：擴增後的 AUC 不低於同一偵測器在未擴增圖上的 AUC"""

    fraction: float
    seed: int
    method: str
    baseline: str
    eland_auc: float
    baseline_auc: float
    holds: bool


class SweepResult(BaseModel):
    rows: List[SweepRow]
    predicates: List[PredicateRecord] = Field(default_factory=list)

    @property
    def pass_rate(self) -> Optional[float]:
        if not self.predicates:
            return None
        return sum(p.holds for p in self.predicates) / len(self.predicates)

    def pass_rate_for(self, method: str) -> Optional[float]:
        records = [p for p in self.predicates if p.method == method]
        if not records:
            return None
        return sum(p.holds for p in records) / len(records)


class RunManifest(BaseModel):
    """每次執行輸出的 manifest.json"""

    command: str
    config: Dict[str, Any]
    seeds: List[int]
    metrics: Dict[str, Any] = Field(default_factory=dict)
    traces: Dict[str, Any] = Field(default_factory=dict)
    wall_time: float = 0.0
    version: str = ""
