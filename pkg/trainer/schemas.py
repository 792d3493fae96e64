from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config import settings
from seqnet.schemas import LossSpec


class Task(str, Enum):
    CLASSIFY = "classify"
    GENERATE = "generate"


class StopDecision(str, Enum):
    STOP = "stop"
    CONTINUE = "continue"


class AdamHyper(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lr: float = Field(default=settings.ADAM_LR, ge=0.0)
    beta1: float = Field(default=settings.ADAM_BETA1, ge=0.0, lt=1.0)
    beta2: float = Field(default=settings.ADAM_BETA2, ge=0.0, lt=1.0)
    eps: float = Field(default=settings.ADAM_EPS, gt=0.0)


class AdamState(BaseModel):
    """First/second moment estimates, one array per parameter tensor, in declaration order."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = Field(default=0, ge=0)
    hyper: AdamHyper = AdamHyper()

    @model_validator(mode="after")
    def check_moments(self):
        if len(self.m) != len(self.v):
            raise ValueError("m and v must cover the same tensors")
        for m, v in zip(self.m, self.v):
            if m.shape != v.shape:
                raise ValueError("moment shapes disagree")
            if np.any(v < 0):
                raise ValueError("second moments must be non-negative")
        return self


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task: Task = Task.CLASSIFY
    epochs: int = Field(default=settings.DEFAULT_EPOCHS, ge=1)
    batch_size: int = Field(default=settings.DEFAULT_BATCH_SIZE, ge=1)
    lr: float = Field(default=settings.ADAM_LR, ge=0.0)
    beta1: float = Field(default=settings.ADAM_BETA1, ge=0.0, lt=1.0)
    beta2: float = Field(default=settings.ADAM_BETA2, ge=0.0, lt=1.0)
    eps: float = Field(default=settings.ADAM_EPS, gt=0.0)
    bce_weight: float = Field(default=1.0, ge=0.0)
    # λ: weight of the next-point NLL in the classify task
    nll_weight: float = Field(default=1.0, ge=0.0)
    # classify only: "mean" divides the summed NLL by the T−1 predicted steps
    nll_reduction: Literal["sum", "mean"] = "mean"
    # classify only: the validation series that picks the best epoch and feeds early stop
    monitor: Literal["bce", "loss"] = "bce"
    grad_clip: Optional[float] = Field(default=settings.GRAD_CLIP_NORM, gt=0.0)
    early_stop: bool = True
    early_stop_window: int = Field(default=settings.EARLY_STOP_WINDOW, ge=1)
    early_stop_factor: float = Field(default=settings.EARLY_STOP_FACTOR, gt=0.0, lt=1.0)
    early_stop_comparator: Literal["drop", "rise"] = "drop"
    seed: int = Field(default=settings.DEFAULT_SEED, ge=0)
    show_progress: bool = settings.SHOW_PROGRESS

    @property
    def adam(self) -> AdamHyper:
        return AdamHyper(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    @property
    def loss_spec(self) -> LossSpec:
        if self.task is Task.GENERATE:
            return LossSpec(bce_weight=0.0, nll_weight=1.0)
        nll_weight = self.nll_weight
        if self.nll_reduction == "mean":
            nll_weight /= settings.SEQUENCE_LENGTH - 1
        return LossSpec(bce_weight=self.bce_weight, nll_weight=nll_weight)

    @property
    def monitors_bce(self) -> bool:
        return self.task is Task.CLASSIFY and self.monitor == "bce"


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float
    val_auc: Optional[float] = None
    val_nll: Optional[float] = None
    val_bce: Optional[float] = None


class TrainReport(BaseModel):
    task: Task
    epochs: List[EpochRecord] = []
    stop_epoch: int = 0
    best_epoch: int = 0
    stopped_early: bool = False
    n_parameters: int = 0
    wall_seconds: float = 0.0

    @model_validator(mode="after")
    def check_epochs(self):
        if self.stop_epoch != len(self.epochs):
            raise ValueError("stop epoch must equal the number of recorded epochs")
        return self

    @property
    def best(self) -> Optional[EpochRecord]:
        return self.epochs[self.best_epoch - 1] if self.best_epoch else None

    def to_frame(self) -> pd.DataFrame:
        metric = "val_auc" if self.task is Task.CLASSIFY else "val_nll"
        columns = ["epoch", "train_loss", "val_loss", metric]
        rows = [r.model_dump(include=set(columns)) for r in self.epochs]
        return pd.DataFrame(rows, columns=columns)

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format="%.10g", lineterminator="\n")

    def summary(self) -> str:
        best = self.best
        parts = [
            f"task={self.task.value}",
            f"epochs={self.stop_epoch}",
            f"best_epoch={self.best_epoch}",
            f"stopped_early={str(self.stopped_early).lower()}",
            f"parameters={self.n_parameters}",
            f"wall_seconds={self.wall_seconds:.2f}",
        ]
        if best is not None:
            parts.append(f"best_val_loss={best.val_loss:.6g}")
            if best.val_auc is not None:
                parts.append(f"best_val_auc={best.val_auc:.4f}")
            if best.val_bce is not None:
                parts.append(f"best_val_bce={best.val_bce:.6g}")
        return " ".join(parts)


class RangeSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    low: float
    high: float
    log: bool = False

    @model_validator(mode="after")
    def check_range(self):
        if not self.low <= self.high:
            raise ValueError("range low must not exceed high")
        if self.log and self.low <= 0:
            raise ValueError("log ranges need a positive lower bound")
        return self


class SearchStrategy(str, Enum):
    GRID = "grid"
    RANDOM = "random"


class SearchSpace(BaseModel):
    """
    Hyperparameters to vary. Keys name ModelConfig or TrainConfig fields; values
    are explicit lists (grid or random choice) or ranges (random only).
    """

    model_config = ConfigDict(extra="forbid")

    params: Dict[str, Union[List[Any], RangeSpec]]
    strategy: SearchStrategy = SearchStrategy.GRID
    budget: int = Field(default=settings.SEARCH_BUDGET, ge=1)

    def empty_keys(self) -> List[str]:
        return [k for k, v in self.params.items() if isinstance(v, list) and not v]


class TrialResult(BaseModel):
    trial: int
    params: Dict[str, Any]
    metric: float
    metric_name: str
    best_epoch: int
    stop_epoch: int
    n_parameters: int
    wall_seconds: float
