from enum import Enum
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class RocCurve(BaseModel):
    """Threshold sweep from (0, 0, +inf) to (1, 1); `auc` is the exact rank statistic."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float = Field(ge=0.0, le=1.0)

    @field_validator("fpr", "tpr", "thresholds", mode="before")
    @classmethod
    def coerce(cls, value):
        return np.asarray(value, dtype=np.float64)

    @model_validator(mode="after")
    def check_curve(self):
        if not (self.fpr.shape == self.tpr.shape == self.thresholds.shape) or self.fpr.size < 2:
            raise ValueError("curve arrays must share a length of at least 2")
        if np.any(np.diff(self.fpr) < 0) or np.any(np.diff(self.tpr) < 0):
            raise ValueError("ROC points must be monotone")
        if (self.fpr[0], self.tpr[0]) != (0.0, 0.0) or (self.fpr[-1], self.tpr[-1]) != (1.0, 1.0):
            raise ValueError("ROC curve must run from (0, 0) to (1, 1)")
        return self

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"fpr": self.fpr, "tpr": self.tpr, "threshold": self.thresholds})

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format="%.10g", lineterminator="\n")


class RowStatus(str, Enum):
    OK = "ok"
    INSUFFICIENT_DATA = "insufficient_data"
    SINGLE_CLASS = "single_class"


class DistanceRow(BaseModel):
    cutoff_ft: float
    model: str
    auc: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    best_epoch: Optional[int] = None
    n_parameters: Optional[int] = None
    wall_seconds: float = 0.0
    n_sequences: int = 0
    status: RowStatus = RowStatus.OK


REPORT_COLUMNS = [
    "cutoff_ft", "model", "auc", "best_epoch", "n_parameters",
    "wall_seconds_per_fit", "n_sequences", "status",
]


class DistanceReport(BaseModel):
    """AUC by distance cutoff. Wall time is seconds spent on one fit."""

    rows: List[DistanceRow]
    curves: Dict[str, RocCurve] = {}

    @model_validator(mode="after")
    def sorted_cutoffs(self):
        cutoffs = [r.cutoff_ft for r in self.rows]
        if cutoffs != sorted(cutoffs):
            raise ValueError("rows must be sorted by cutoff")
        return self

    def auc_at(self, cutoff_ft: float, model: Optional[str] = None) -> Optional[float]:
        for row in self.rows:
            if row.cutoff_ft == cutoff_ft and (model is None or row.model == model):
                return row.auc
        return None

    def to_frame(self) -> pd.DataFrame:
        records = []
        for r in self.rows:
            d = r.model_dump()
            d["wall_seconds_per_fit"] = d.pop("wall_seconds")
            d["status"] = r.status.value
            records.append(d)
        return pd.DataFrame(records, columns=REPORT_COLUMNS)

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format="%.6g", lineterminator="\n")


class BaselineResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    auc: float
    weights: np.ndarray
    bias: float
    feature_mean: np.ndarray
    feature_std: np.ndarray
    curve: RocCurve
