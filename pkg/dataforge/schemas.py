from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import settings

CSV_COLUMNS = ["shot_id", "frame_idx", "x_ft", "y_ft", "z_ft", "game_clock_s", "label"]

FEATURE_NAMES = ("x", "y", "z", "clock")


class ShotOutcome(str, Enum):
    HIT = "hit"
    MISS = "miss"

    @property
    def label(self) -> int:
        return 1 if self is ShotOutcome.HIT else 0

    @classmethod
    def from_label(cls, label: int) -> "ShotOutcome":
        return cls.HIT if int(label) == 1 else cls.MISS


class CourtSpec(BaseModel):
    """Court geometry in feet; rims sit on the midline near each baseline."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    length_ft: float = Field(default=settings.COURT_LENGTH_FT, gt=0)
    width_ft: float = Field(default=settings.COURT_WIDTH_FT, gt=0)
    rim_from_baseline_ft: float = Field(default=settings.RIM_FROM_BASELINE_FT, gt=0)
    rim_height_ft: float = Field(default=settings.RIM_HEIGHT_FT, gt=0)
    rim_radius_ft: float = Field(default=settings.RIM_RADIUS_FT, gt=0)
    ball_radius_ft: float = Field(default=settings.BALL_RADIUS_FT, gt=0)
    margin_ft: float = Field(default=settings.COURT_MARGIN_FT, ge=0)

    @model_validator(mode="after")
    def check_geometry(self):
        if self.ball_radius_ft >= self.rim_radius_ft:
            raise ValueError("ball must fit through the rim")
        if 2 * self.rim_from_baseline_ft >= self.length_ft:
            raise ValueError("rims must lie inside the court")
        return self

    @property
    def rim_centers(self) -> np.ndarray:
        """(2, 3): near rim (small x) first, then far rim."""
        mid = self.width_ft / 2.0
        return np.array([
            [self.rim_from_baseline_ft, mid, self.rim_height_ft],
            [self.length_ft - self.rim_from_baseline_ft, mid, self.rim_height_ft],
        ])

    @property
    def hit_radius_ft(self) -> float:
        return self.rim_radius_ft - self.ball_radius_ft

    def nearest_rim(self, point) -> np.ndarray:
        point = np.asarray(point, dtype=np.float64)[:3]
        dists = np.linalg.norm(self.rim_centers - point, axis=1)
        return self.rim_centers[int(np.argmin(dists))]

    def contains(self, frames) -> bool:
        """True when every court-coordinate frame lies inside the court plus margin."""
        f = np.asarray(frames, dtype=np.float64)
        m = self.margin_ft
        in_x = (f[:, 0] >= -m) & (f[:, 0] <= self.length_ft + m)
        in_y = (f[:, 1] >= -m) & (f[:, 1] <= self.width_ft + m)
        return bool(np.all(in_x & in_y & (f[:, 2] >= -m)))


class RawShot(BaseModel):
    """
    One tracked shot: frames (n, 4) of x, y, z (feet) and game clock (seconds).

    Court bounds depend on the configured CourtSpec, so they are checked where
    the court is known (`load_csv`, `synth_generate`) rather than here.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    shot_id: str
    frames: np.ndarray
    outcome: ShotOutcome
    rim_relative: bool = False

    @field_validator("frames", mode="before")
    @classmethod
    def coerce(cls, value):
        return np.array(value, dtype=np.float64)

    @model_validator(mode="after")
    def check_frames(self):
        f = self.frames
        if f.ndim != 2 or f.shape[1] != 4 or f.shape[0] < 1:
            raise ValueError(f"frames must be (n, 4) with n >= 1, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("frames contain non-finite values")
        if np.any(np.diff(f[:, 3]) > 1e-9):
            raise ValueError("game clock must be non-increasing")
        return self

    @property
    def label(self) -> int:
        return self.outcome.label

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


class ShotSequence(BaseModel):
    """Fixed-length model input: features (T, 4), label in {0, 1}."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    shot_id: str
    features: np.ndarray
    label: int = Field(ge=0, le=1)
    cutoff_distance_ft: Optional[float] = None
    standardized: bool = False

    @field_validator("features", mode="before")
    @classmethod
    def coerce(cls, value):
        return np.array(value, dtype=np.float64)

    @model_validator(mode="after")
    def check_features(self):
        if self.features.shape != (settings.SEQUENCE_LENGTH, settings.INPUT_DIM):
            raise ValueError(
                f"sequence must be ({settings.SEQUENCE_LENGTH}, {settings.INPUT_DIM}), got {self.features.shape}"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValueError("sequence features must be finite")
        return self


class SynthConfig(BaseModel):
    """
    Synthetic shot generator settings.

    Each shot is released `release_distance_ft` from the attacked rim at a polar
    angle within ±`release_spread_deg` of the court axis, aimed at a point at
    rim height scattered around the rim center by `aim_std_ft`. Launch speed is
    solved from the aim point and the drawn launch angle.

    The default releases on the court axis, so the lateral aim error is carried
    by y alone and survives standardization at unit scale. Wide spreads mix it
    into x and y at a few hundredths of a standard deviation.
    """

    model_config = ConfigDict(extra="forbid")

    n_shots: int = Field(default=5000, ge=1)
    release_distance_ft: Tuple[float, float] = (22.0, 26.0)
    release_spread_deg: float = Field(default=0.0, ge=0.0, le=90.0)
    release_height_ft: Tuple[float, float] = (7.0, 9.0)
    launch_angle_mean_deg: float = Field(default=50.0, gt=0.0, lt=90.0)
    launch_angle_std_deg: float = Field(default=3.0, ge=0.0)
    aim_std_ft: float = Field(default=0.38, ge=0.0)
    noise_std_ft: float = Field(default=0.25, ge=0.0)
    clock_start_s: Tuple[float, float] = (24.0, 720.0)
    court: CourtSpec = CourtSpec()
    seed: int = Field(default=settings.DEFAULT_SEED, ge=0)
    noise_seed: Optional[int] = Field(default=None, ge=0)

    @field_validator("release_distance_ft", "release_height_ft", "clock_start_s")
    @classmethod
    def non_empty_range(cls, value):
        lo, hi = value
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
            raise ValueError(f"range {value} is empty")
        return value

    @model_validator(mode="after")
    def check_physical(self):
        if self.release_distance_ft[0] <= 0:
            raise ValueError("release distance must be positive")
        if self.release_height_ft[0] <= 0:
            raise ValueError("release height must be above the floor")
        return self


class SplitIndex(BaseModel):
    train_ids: List[str]
    test_ids: List[str]

    @model_validator(mode="after")
    def disjoint(self):
        if set(self.train_ids) & set(self.test_ids):
            raise ValueError("train and test ids overlap")
        return self

    def split_of(self) -> Dict[str, str]:
        out = {i: "train" for i in self.train_ids}
        out.update({i: "test" for i in self.test_ids})
        return out


class FeatureStats(BaseModel):
    """Per-feature z-score statistics computed on the training split."""

    mean: List[float]
    std: List[float]

    @model_validator(mode="after")
    def check_lengths(self):
        if len(self.mean) != settings.INPUT_DIM or len(self.std) != settings.INPUT_DIM:
            raise ValueError(f"stats need {settings.INPUT_DIM} entries")
        if any(s <= 0 for s in self.std):
            raise ValueError("std entries must be positive")
        return self

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - np.array(self.mean)) / np.array(self.std)

    def invert(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) * np.array(self.std) + np.array(self.mean)


class DropReport(BaseModel):
    total: int = 0
    kept: int = 0
    dropped_short: int = 0

    @property
    def dropped(self) -> int:
        return self.total - self.kept

    @property
    def drop_rate(self) -> float:
        return self.dropped / self.total if self.total else 0.0


class PreparedData(BaseModel):
    """Split, standardized sequences plus the rim-relative originals they came from."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    train: List[ShotSequence]
    test: List[ShotSequence]
    train_raw: List[ShotSequence]
    test_raw: List[ShotSequence]
    stats: FeatureStats
    split: SplitIndex
    drops: DropReport
    cutoff_ft: Optional[float] = None
