from enum import Enum
from typing import List, Literal, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# 所有設定模型共用的 Pydantic V2 設定
COMMON_CONFIG = ConfigDict(
    populate_by_name=True,
    extra="forbid",
)


class DetectorVariant(str, Enum):
    GCN_SUPERVISED = "gcn_supervised"
    AUTOENCODER_UNSUPERVISED = "autoencoder_unsupervised"


# --- Detector ---
class DetectorConfig(BaseModel):
    hidden_dim: int = Field(default=128, ge=1, description="隱藏層維度")
    n_layers: int = Field(default=2, description="GCN 層數，固定為 2")
    learning_rate: float = Field(default=0.01, gt=0)
    weight_decay: float = Field(default=5e-4, ge=0)
    epochs: int = Field(default=200, ge=1)
    betas: Tuple[float, float] = (0.9, 0.999)
    variant: DetectorVariant = DetectorVariant.GCN_SUPERVISED
    alpha: float = Field(default=0.8, ge=0, le=1, description="autoencoder 結構誤差權重")

    model_config = COMMON_CONFIG

    @field_validator("n_layers")
    @classmethod
    def _two_layers_only(cls, v):
        if v != 2:
            raise ValueError("n_layers must be 2")
        return v


# --- Augmenter ---
class AugmenterConfig(BaseModel):
    hidden_dim: int = Field(default=128, ge=1)
    cell: Literal["gru", "rnn"] = "gru"
    epochs: int = Field(default=30, ge=1)
    learning_rate: float = Field(default=0.01, gt=0)
    weight_decay: float = Field(default=5e-4, ge=0)

    model_config = COMMON_CONFIG


# --- ELAND-itr ---
class ItrConfig(BaseModel):
    iterations: int = Field(default=8, ge=1, description="偵測/擴增交替的迭代次數 I")
    kappa: int = Field(default=150, ge=0, description="每位使用者的最大預測數")
    detector: DetectorConfig = Field(default_factory=DetectorConfig)
    augmenter: AugmenterConfig = Field(default_factory=AugmenterConfig)
    concat_embeddings: bool = True
    select_best_iteration: bool = False
    seed: int = Field(default=0, ge=0)

    model_config = COMMON_CONFIG


# --- ELAND-e2e ---
class E2eConfig(BaseModel):
    n_epochs: int = Field(default=200, ge=1)
    gamma: int = Field(default=100, ge=0, description="擴增動作總數")
    tau_start: float = 5.0
    tau_end: float = 0.5
    detector: DetectorConfig = Field(default_factory=DetectorConfig)
    augmenter: AugmenterConfig = Field(default_factory=AugmenterConfig)
    concat_embeddings: bool = False
    seed: int = Field(default=0, ge=0)

    model_config = COMMON_CONFIG

    @model_validator(mode="after")
    def _check_tau(self):
        if not (self.tau_start >= self.tau_end > 0):
            raise ValueError("tau_start >= tau_end > 0 is required")
        return self


# --- 合成資料產生器 ---
class GeneratorConfig(BaseModel):
    m: int = Field(default=2000, ge=1, description="使用者數")
    n: int = Field(default=500, ge=1, description="物品數")
    anomaly_fraction: float = Field(default=0.10, gt=0, lt=1)
    advertiser_share: float = Field(default=0.3, ge=0, le=1, description="異常使用者中廣告帳號的比例")
    benign_mean_actions: float = Field(default=20.0, ge=1)
    anomalous_mean_actions: float = Field(default=40.0, ge=1)
    benign_mean_interval_seconds: float = Field(default=3600.0, gt=0)
    advertiser_mean_interval_seconds: float = Field(default=600.0, gt=0)
    bot_interval_seconds: float = Field(default=30.0, gt=0)
    bot_jitter: float = Field(default=2.0, ge=0)
    bot_regular_share: float = Field(default=0.85, gt=0, le=1, description="落在 interval±jitter 的間隔比例")
    bot_item_pool_size: int = Field(default=5, ge=1)
    pool_share_start: float = Field(default=0.1, ge=0, le=1, description="序列開頭落在專用 item 池的機率")
    pool_share_end: float = Field(default=0.9, ge=0, le=1, description="序列結尾落在專用 item 池的機率")
    feature_dim: int = Field(default=16, ge=1)
    n_clusters: int = Field(default=10, ge=1)
    zipf_exponent: float = Field(default=1.1, gt=0)
    user_feature_shift: float = Field(default=0.3, description="異常使用者特徵的高斯平移量")
    ad_feature_shift: float = Field(default=2.0)
    start_time: int = Field(default=1_600_000_000, ge=0)
    seed: int = Field(default=0, ge=0)

    model_config = COMMON_CONFIG


SweepMethod = Literal["baseline-gcn", "baseline-ae", "eland-itr", "eland-e2e"]


# --- Sweep ---
class SweepConfig(BaseModel):
    fractions: List[float] = Field(default_factory=lambda: [0.1, 0.2, 0.4, 1.0])
    methods: List[SweepMethod] = Field(default_factory=lambda: ["baseline-gcn", "eland-itr", "eland-e2e"])
    seeds: List[int] = Field(default_factory=lambda: list(range(10)))
    truncation: Literal["count", "time"] = "count"
    max_workers: int = Field(default=1, ge=1)

    model_config = COMMON_CONFIG

    @field_validator("fractions")
    @classmethod
    def _fractions_in_range(cls, v):
        for p in v:
            if not (0 < p <= 1):
                raise ValueError(f"fraction {p} outside (0, 1]")
        return v


# --- 單一設定檔的總結構 (--config) ---
class RunConfig(BaseModel):
    detector: DetectorConfig = Field(default_factory=DetectorConfig)
    itr: ItrConfig = Field(default_factory=ItrConfig)
    e2e: E2eConfig = Field(default_factory=E2eConfig)
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)

    model_config = COMMON_CONFIG
