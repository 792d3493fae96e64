import logging
from typing import Callable, ClassVar, Iterator, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import expit

from config import settings

logger = logging.getLogger(__name__)

GATES = ("f", "i", "o", "c")

TensorFn = Callable[[np.ndarray], np.ndarray]


def _float_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_layers: int = Field(default=2, ge=1)
    units_per_layer: int = Field(default=64, ge=1)
    components: int = Field(default=settings.DEFAULT_COMPONENTS, ge=1)
    seq_len: int = Field(default=settings.SEQUENCE_LENGTH, ge=2)
    input_dim: int = Field(default=settings.INPUT_DIM, ge=1)
    bidirectional: bool = True

    @model_validator(mode="after")
    def check_units(self):
        if self.bidirectional and self.units_per_layer % 2:
            raise ValueError("bidirectional layers split units evenly; units_per_layer must be even")
        if self.components > settings.MAX_RECOMMENDED_COMPONENTS:
            logger.warning(
                "%d mixture components requested; too many PDFs tend to overfit", self.components
            )
        return self

    @property
    def hidden_dim(self) -> int:
        return self.units_per_layer // 2 if self.bidirectional else self.units_per_layer

    @property
    def mdn_width(self) -> int:
        return 8 * self.components

    @property
    def summary_dim(self) -> int:
        return 2 * self.hidden_dim if self.bidirectional else self.hidden_dim


class LossSpec(BaseModel):
    """Per-sample loss = bce_weight·BCE + nll_weight·NLL, averaged over the batch."""

    model_config = ConfigDict(extra="forbid")

    bce_weight: float = Field(default=1.0, ge=0.0)
    nll_weight: float = Field(default=1.0, ge=0.0)


class _TensorGroup(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    tensor_names: ClassVar[Tuple[str, ...]] = ()

    def named_tensors(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name in self.tensor_names:
            yield prefix + name, getattr(self, name)


class LstmParams(_TensorGroup):
    tensor_names: ClassVar[Tuple[str, ...]] = tuple(
        name for g in GATES for name in (f"W_x{g}", f"W_h{g}", f"b_{g}")
    )

    W_xf: np.ndarray
    W_hf: np.ndarray
    b_f: np.ndarray
    W_xi: np.ndarray
    W_hi: np.ndarray
    b_i: np.ndarray
    W_xo: np.ndarray
    W_ho: np.ndarray
    b_o: np.ndarray
    W_xc: np.ndarray
    W_hc: np.ndarray
    b_c: np.ndarray

    @field_validator("*", mode="before")
    @classmethod
    def coerce(cls, value):
        return _float_array(value)

    @model_validator(mode="after")
    def check_shapes(self):
        d, h = self.input_dim, self.hidden_dim
        for g in GATES:
            if getattr(self, f"W_x{g}").shape != (d, h):
                raise ValueError(f"W_x{g} must be ({d}, {h})")
            if getattr(self, f"W_h{g}").shape != (h, h):
                raise ValueError(f"W_h{g} must be ({h}, {h})")
            if getattr(self, f"b_{g}").shape != (h,):
                raise ValueError(f"b_{g} must be ({h},)")
        return self

    @property
    def input_dim(self) -> int:
        return self.W_xf.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.W_xf.shape[1]

    def stacked(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gate blocks side by side in f, i, o, c order."""
        wx = np.concatenate([getattr(self, f"W_x{g}") for g in GATES], axis=1)
        wh = np.concatenate([getattr(self, f"W_h{g}") for g in GATES], axis=1)
        b = np.concatenate([getattr(self, f"b_{g}") for g in GATES])
        return wx, wh, b

    @classmethod
    def from_stacked(cls, wx: np.ndarray, wh: np.ndarray, b: np.ndarray) -> "LstmParams":
        h = wh.shape[0]
        fields = {}
        for k, g in enumerate(GATES):
            block = slice(k * h, (k + 1) * h)
            fields[f"W_x{g}"] = wx[:, block]
            fields[f"W_h{g}"] = wh[:, block]
            fields[f"b_{g}"] = b[block]
        return cls(**fields)

    def map(self, fn: TensorFn) -> "LstmParams":
        return LstmParams(**{name: fn(getattr(self, name)) for name in self.tensor_names})


class LstmState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    h: np.ndarray
    c: np.ndarray

    @field_validator("h", "c", mode="before")
    @classmethod
    def coerce(cls, value):
        return _float_array(value)

    @classmethod
    def zeros(cls, hidden_dim: int, batch: Optional[int] = None) -> "LstmState":
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(h=np.zeros(shape), c=np.zeros(shape))


class BlstmLayerParams(BaseModel):
    """One bidirectional layer; `backward` is None for the unidirectional variant."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    forward: LstmParams
    backward: Optional[LstmParams] = None
    W_fy: np.ndarray
    W_by: Optional[np.ndarray] = None
    b_y: np.ndarray

    @field_validator("W_fy", "W_by", "b_y", mode="before")
    @classmethod
    def coerce(cls, value):
        return None if value is None else _float_array(value)

    @model_validator(mode="after")
    def check_shapes(self):
        h, units = self.forward.hidden_dim, self.b_y.shape[0]
        if (self.backward is None) != (self.W_by is None):
            raise ValueError("backward LSTM and W_by must be given together")
        if self.backward is not None:
            if self.backward.hidden_dim != h or self.backward.input_dim != self.forward.input_dim:
                raise ValueError("forward and backward LSTMs must have matching shapes")
            if self.W_by.shape != (h, units):
                raise ValueError(f"W_by must be ({h}, {units})")
        if self.W_fy.shape != (h, units):
            raise ValueError(f"W_fy must be ({h}, {units})")
        return self

    @property
    def input_dim(self) -> int:
        return self.forward.input_dim

    @property
    def output_dim(self) -> int:
        return self.b_y.shape[0]

    @property
    def bidirectional(self) -> bool:
        return self.backward is not None

    def named_tensors(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        yield from self.forward.named_tensors(prefix + "forward.")
        if self.backward is not None:
            yield from self.backward.named_tensors(prefix + "backward.")
        yield prefix + "W_fy", self.W_fy
        if self.W_by is not None:
            yield prefix + "W_by", self.W_by
        yield prefix + "b_y", self.b_y

    def map(self, fn: TensorFn) -> "BlstmLayerParams":
        return BlstmLayerParams(
            forward=self.forward.map(fn),
            backward=self.backward.map(fn) if self.backward is not None else None,
            W_fy=fn(self.W_fy),
            W_by=fn(self.W_by) if self.W_by is not None else None,
            b_y=fn(self.b_y),
        )


class DenseHead(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    W: np.ndarray
    b: np.ndarray

    @field_validator("W", "b", mode="before")
    @classmethod
    def coerce(cls, value):
        return _float_array(value)

    @model_validator(mode="after")
    def check_shapes(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ValueError(f"head shapes W={self.W.shape}, b={self.b.shape} are inconsistent")
        return self

    def named_tensors(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        yield prefix + "W", self.W
        yield prefix + "b", self.b

    def map(self, fn: TensorFn) -> "DenseHead":
        return DenseHead(W=fn(self.W), b=fn(self.b))


class ModelParams(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    config: ModelConfig
    layers: List[BlstmLayerParams]
    mdn_head: DenseHead
    cls_head: DenseHead

    @model_validator(mode="after")
    def check_stack(self):
        cfg = self.config
        if len(self.layers) != cfg.num_layers:
            raise ValueError(f"expected {cfg.num_layers} layers, got {len(self.layers)}")
        expected_in = cfg.input_dim
        for k, layer in enumerate(self.layers):
            if layer.input_dim != expected_in:
                raise ValueError(f"layer {k} input dim {layer.input_dim} != {expected_in}")
            if layer.output_dim != cfg.units_per_layer or layer.bidirectional != cfg.bidirectional:
                raise ValueError(f"layer {k} does not match the model config")
            expected_in = layer.output_dim
        if self.mdn_head.W.shape != (cfg.units_per_layer, cfg.mdn_width):
            raise ValueError("mdn head shape does not match the model config")
        if self.cls_head.W.shape != (cfg.summary_dim, 1):
            raise ValueError("classification head shape does not match the model config")
        return self

    def named_tensors(self) -> Iterator[Tuple[str, np.ndarray]]:
        for k, layer in enumerate(self.layers):
            yield from layer.named_tensors(f"layers.{k}.")
        yield from self.mdn_head.named_tensors("mdn_head.")
        yield from self.cls_head.named_tensors("cls_head.")

    def map(self, fn: TensorFn) -> "ModelParams":
        return ModelParams(
            config=self.config,
            layers=[layer.map(fn) for layer in self.layers],
            mdn_head=self.mdn_head.map(fn),
            cls_head=self.cls_head.map(fn),
        )

    def copy_params(self) -> "ModelParams":
        return self.map(np.copy)

    def zeros_like(self) -> "ModelParams":
        return self.map(np.zeros_like)


class SequenceBatch(BaseModel):
    """Standardized features (B, T, 4), labels (B,), next-point offsets (B, T-1, 3)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    features: np.ndarray
    labels: np.ndarray
    targets: np.ndarray
    batch_id: int = 0

    @field_validator("features", "labels", "targets", mode="before")
    @classmethod
    def coerce(cls, value):
        return _float_array(value)

    @model_validator(mode="after")
    def check_shapes(self):
        b, t = self.features.shape[:2]
        if self.labels.shape != (b,) or self.targets.shape != (b, t - 1, 3):
            raise ValueError("batch labels/targets do not match the feature tensor")
        return self

    @property
    def size(self) -> int:
        return self.features.shape[0]


class ForwardResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    features: np.ndarray  # top-layer outputs (..., T, units)
    logit: np.ndarray  # (...)
    raw_mixture: np.ndarray  # (..., T, 8C)

    def hit_probability(self) -> np.ndarray:
        return expit(self.logit)
