from enum import Enum
from typing import Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

RAW_WIDTH = 8  # ω̃, μ̃x, μ̃y, μ̃z, σ̃x, σ̃y, σ̃z, ρ̃ per component

# column offsets inside one component's raw block
W, MX, MY, MZ, SX, SY, SZ, RHO = range(RAW_WIDTH)


def _float_array(value) -> np.ndarray:
    return np.array(value, dtype=np.float64)


class RawMixture(BaseModel):
    """Unbounded head outputs, shape (..., C, 8)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def coerce(cls, value):
        return _float_array(value)

    @model_validator(mode="after")
    def check_shape(self):
        if self.values.ndim < 2 or self.values.shape[-1] != RAW_WIDTH:
            raise ValueError(f"raw mixture must have shape (..., C, {RAW_WIDTH}), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("raw mixture contains non-finite values")
        return self

    @classmethod
    def from_flat(cls, flat, n_components: int) -> "RawMixture":
        flat = _float_array(flat)
        return cls(values=flat.reshape(flat.shape[:-1] + (n_components, RAW_WIDTH)))

    @property
    def n_components(self) -> int:
        return self.values.shape[-2]


class Mixture(BaseModel):
    """
    Normalized Gaussian mixture over a 3-D offset.

    xy is a correlated bivariate normal, z is an independent univariate normal.
    Leading axes (time, batch) are allowed in front of the component axis.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    weights: np.ndarray  # (..., C)
    mu: np.ndarray  # (..., C, 3)
    sigma: np.ndarray  # (..., C, 3)
    rho: np.ndarray  # (..., C)

    @field_validator("weights", "mu", "sigma", "rho", mode="before")
    @classmethod
    def coerce(cls, value):
        return _float_array(value)

    @model_validator(mode="after")
    def check_invariants(self):
        lead = self.weights.shape
        if self.mu.shape != lead + (3,) or self.sigma.shape != lead + (3,) or self.rho.shape != lead:
            raise ValueError("inconsistent mixture parameter shapes")
        for name in ("weights", "mu", "sigma", "rho"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")
        if np.any(self.weights < 0) or np.any(np.abs(self.weights.sum(axis=-1) - 1.0) > 1e-12):
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if np.any(self.sigma <= 0):
            raise ValueError("sigma must be strictly positive")
        if np.any(np.abs(self.rho) >= 1):
            raise ValueError("|rho| must be < 1")
        return self

    @property
    def n_components(self) -> int:
        return self.weights.shape[-1]

    def at(self, index) -> "Mixture":
        return Mixture(
            weights=self.weights[index],
            mu=self.mu[index],
            sigma=self.sigma[index],
            rho=self.rho[index],
        )

    def mean(self) -> np.ndarray:
        return np.einsum("...c,...ck->...k", self.weights, self.mu)


class TargetPoint(BaseModel):
    """Offset from frame t to t+1, standardized rim-relative units."""

    dx: float
    dy: float
    dz: float

    @field_validator("dx", "dy", "dz")
    @classmethod
    def finite(cls, value: float) -> float:
        if not np.isfinite(value):
            raise ValueError("target offsets must be finite")
        return value

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "TargetPoint":
        return cls(dx=float(arr[0]), dy=float(arr[1]), dz=float(arr[2]))


class Plane(str, Enum):
    XY = "xy"
    XZ = "xz"
    YZ = "yz"

    @property
    def axes(self) -> Tuple[int, int]:
        return {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}[self.value]

    @property
    def fixed_axis(self) -> int:
        return ({0, 1, 2} - set(self.axes)).pop()


class GridMode(str, Enum):
    MARGINAL = "marginal"
    SLICE = "slice"


class DensityGrid(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    plane: Plane
    mode: GridMode = GridMode.MARGINAL
    u: np.ndarray
    v: np.ndarray
    values: np.ndarray  # (len(v), len(u))
    step: int = Field(default=0, ge=0)

    @property
    def cell_area(self) -> float:
        return float((self.u[1] - self.u[0]) * (self.v[1] - self.v[0]))

    def integral(self) -> float:
        return self.cell_area * float(self.values.sum())

    def mode_point(self) -> Tuple[float, float]:
        iv, iu = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return float(self.u[iu]), float(self.v[iv])

    def to_frame(self) -> pd.DataFrame:
        uu, vv = np.meshgrid(self.u, self.v)
        return pd.DataFrame({"u": uu.ravel(), "v": vv.ravel(), "density": self.values.ravel()})

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format="%.6g", lineterminator="\n")
