"""Pydantic schemas for configurations, dataset records and experiment reports."""
from __future__ import annotations

import math
from enum import IntEnum
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, FiniteFloat, computed_field, field_validator, model_validator

MODALITIES: tuple[str, ...] = ("a", "t", "v")
RECORD_KEYS: dict[str, str] = {"a": "audio", "t": "text", "v": "video"}


class ModalityLabel(IntEnum):
    a = 0
    t = 1
    v = 2


class ModalityInts(BaseModel):
    model_config = ConfigDict(frozen=True)

    a: int = Field(ge=1)
    t: int = Field(ge=1)
    v: int = Field(ge=1)

    def of(self, modality: str) -> int:
        return getattr(self, modality)


class ModalityFloats(BaseModel):
    model_config = ConfigDict(frozen=True)

    a: float = Field(ge=0.0)
    t: float = Field(ge=0.0)
    v: float = Field(ge=0.0)

    def of(self, modality: str) -> float:
        return getattr(self, modality)


# --- model configuration ------------------------------------------------------

class EncoderConfig(BaseModel):
    d_model: int = Field(default=64, ge=1)
    n_heads: int = Field(default=4, ge=1)
    n_layers: int = Field(default=2, ge=1)
    d_ff: int = Field(default=128, ge=1)
    max_len: ModalityInts = ModalityInts(a=32, t=32, v=32)
    input_dims: Optional[ModalityInts] = None

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "EncoderConfig":
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        return self


class CmdConfig(BaseModel):
    K: int = Field(default=5, ge=1)
    a: float = -1.0
    b: float = 1.0
    squash: bool = True

    @model_validator(mode="after")
    def _ordered_support(self) -> "CmdConfig":
        if not self.b > self.a:
            raise ValueError(f"support bounds need b > a, got a={self.a} b={self.b}")
        return self


class AdversaryConfig(BaseModel):
    alpha: float = Field(default=30.0, gt=0.0)
    tau: float = Field(default=0.35, ge=0.0, lt=math.pi / 2)
    lam: float = Field(default=0.05, ge=0.0)
    d_h: int = Field(default=32, ge=1)
    grl_on_specific: bool = False
    grl_enabled: bool = True


class TemporalConfig(BaseModel):
    mode: Literal["softmax", "gaussian-proxy"] = "softmax"
    target: Literal["frames", "H_v", "S_v"] = "frames"
    n_groups: int = Field(default=4, ge=1)
    grid_size: int = Field(default=16, ge=2)
    grid_bound: float = Field(default=3.0, gt=0.0)


class FusionConfig(BaseModel):
    d_fbp: int = Field(default=16, ge=1)
    k: int = Field(default=4, ge=1)
    gating: bool = True
    gate_sigmoid: bool = True
    fbp_on_specific: bool = False


class TrainConfig(BaseModel):
    """Full training configuration; ablation flags are resolved into effective weights."""

    epochs: int = Field(default=50, ge=1)
    batch_size: int = Field(default=32, ge=1)
    lr: float = Field(default=1e-3, gt=0.0)
    alpha_w: float = Field(default=0.3, ge=0.0)
    beta: float = Field(default=0.1, ge=0.0)
    gamma: float = Field(default=0.1, ge=0.0)
    no_til: bool = False
    no_gm: bool = False
    no_al: bool = False
    seed: int = Field(default=0, ge=0)
    task: Literal["regression", "classification"] = "regression"
    patience: int = Field(default=10, ge=1)
    head_hidden: int = Field(default=32, ge=1)
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    encoder: EncoderConfig = EncoderConfig()
    cmd: CmdConfig = CmdConfig()
    adversary: AdversaryConfig = AdversaryConfig()
    temporal: TemporalConfig = TemporalConfig()
    fusion: FusionConfig = FusionConfig()

    @model_validator(mode="after")
    def _apply_ablation_flags(self) -> "TrainConfig":
        if self.no_til:
            self.beta = 0.0
        if self.no_al:
            self.gamma = 0.0
        if self.no_gm and self.fusion.gating:
            self.fusion = self.fusion.model_copy(update={"gating": False})
        return self


class SynthConfig(BaseModel):
    n_samples: int = Field(default=2000, ge=1)
    dims: ModalityInts = ModalityInts(a=8, t=16, v=12)
    lengths: ModalityInts = ModalityInts(a=10, t=8, v=12)
    length_jitter: int = Field(default=2, ge=0)
    strengths: ModalityFloats = ModalityFloats(a=0.4, t=1.0, v=0.3)
    rho: float = Field(default=0.9, ge=0.0, lt=1.0)
    noise: ModalityFloats = ModalityFloats(a=0.3, t=0.3, v=0.3)
    specific_scale: float = Field(default=1.0, ge=0.0)
    latent_dim: int = Field(default=4, ge=1)
    specific_dim: int = Field(default=4, ge=1)
    seed: int = Field(default=7, ge=0)


# --- dataset records ------------------------------------------------------------

class Sample(BaseModel):
    id: str
    label: FiniteFloat = Field(ge=-3.0, le=3.0)
    text: list[list[FiniteFloat]]
    audio: list[list[FiniteFloat]]
    video: list[list[FiniteFloat]]

    @field_validator("text", "audio", "video")
    @classmethod
    def _rectangular(cls, frames: list[list[float]]) -> list[list[float]]:
        if not frames:
            raise ValueError("sequence must contain at least one frame")
        width = len(frames[0])
        if width == 0:
            raise ValueError("frames must have at least one feature")
        for index, frame in enumerate(frames):
            if len(frame) != width:
                raise ValueError(f"frame {index} has width {len(frame)}, expected {width}")
        return frames


# --- reports ----------------------------------------------------------------------

class GradCheckReport(BaseModel):
    name: str = ""
    eps: float
    tolerance: float
    max_rel_error: dict[str, float]
    worst_coordinate: dict[str, list[int]]

    @computed_field     # type: ignore[prop-decorator]
    @property
    def max_error(self) -> float:
        return max((math.inf if math.isnan(error) else error for error in self.max_rel_error.values()), default=0.0)

    @computed_field     # type: ignore[prop-decorator]
    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


class GradCheckSuiteReport(BaseModel):
    scope: Literal["ops", "losses", "full"]
    reports: list[GradCheckReport]
    wall_clock_s: float = 0.0

    @computed_field     # type: ignore[prop-decorator]
    @property
    def passed(self) -> bool:
        return all(report.passed for report in self.reports)


class TotalLossBreakdown(BaseModel):
    task: float
    con: float
    ti: float
    dom: float
    alpha_w: float
    beta: float
    gamma: float

    @computed_field     # type: ignore[prop-decorator]
    @property
    def total(self) -> float:
        return self.task + self.alpha_w * self.con + self.beta * self.ti + self.gamma * self.dom

    def components(self) -> dict[str, float]:
        return {"L_task": self.task, "L_con": self.con, "L_ti": self.ti, "L_dom": self.dom}


class MetricsReport(BaseModel):
    acc2_nonneg: float = Field(ge=0.0, le=1.0)
    acc2_pos: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    f1_nonneg: float = Field(ge=0.0, le=1.0)
    f1_pos: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    acc7: float = Field(ge=0.0, le=1.0)
    mae: float = Field(ge=0.0)
    corr: float = Field(ge=-1.0, le=1.0)
    n_samples: int = Field(ge=1)
    loss: Optional[TotalLossBreakdown] = None
    config: Optional[dict[str, Any]] = None
    wall_clock_s: float = 0.0

    def metric_values(self) -> dict[str, Optional[float]]:
        return {
            "acc2_nonneg": self.acc2_nonneg,
            "acc2_pos": self.acc2_pos,
            "f1_nonneg": self.f1_nonneg,
            "f1_pos": self.f1_pos,
            "acc7": self.acc7,
            "mae": self.mae,
            "corr": self.corr,
        }


class EpochRecord(BaseModel):
    epoch: int
    train_loss: TotalLossBreakdown
    val: Optional[MetricsReport] = None


class TrainResult(BaseModel):
    checkpoint: str
    best_epoch: int
    stopped_early: bool
    history: list[EpochRecord]
    test: Optional[MetricsReport] = None
    config: dict[str, Any]
    wall_clock_s: float = 0.0


AblationStrategy = Literal["full", "no_til", "no_gm", "no_al"]


class AblationRow(BaseModel):
    strategy: AblationStrategy
    label: str
    beta: float
    gamma: float
    gating: bool
    metrics: MetricsReport


class AblationReport(BaseModel):
    rows: list[AblationRow]
    table: list[dict[str, Any]]
    wall_clock_s: float = 0.0


class NoiseReport(BaseModel):
    variance: float = Field(ge=0.0)
    reading: Literal["variance", "std"] = "variance"
    modalities: list[str]
    empirical_variance: Optional[float] = None
    clean: MetricsReport
    noisy: MetricsReport
    delta: dict[str, Optional[float]]
    table: list[dict[str, Any]]
    wall_clock_s: float = 0.0


class ProbeReport(BaseModel):
    specific_accuracy: float = Field(ge=0.0, le=1.0)
    invariant_accuracy: float = Field(ge=0.0, le=1.0)
    video_adjacent_jsd: float = Field(ge=0.0)
    n_samples: int


class AcceptanceRun(BaseModel):
    beta: float
    acc2_nonneg: float
    mae: float
    corr: float
    specific_probe: float
    invariant_probe: float
    video_adjacent_jsd: float
    best_epoch: int


class AcceptanceReport(BaseModel):
    with_til: AcceptanceRun
    without_til: AcceptanceRun
    jsd_reduction: float
    targets: dict[str, bool]
    wall_clock_s: float = 0.0

    @computed_field     # type: ignore[prop-decorator]
    @property
    def passed(self) -> bool:
        return all(self.targets.values())
