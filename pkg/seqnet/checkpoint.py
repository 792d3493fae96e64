"""
Model checkpoints as `.npz` archives.

Layout: `__magic__` ("HOOPNET-CKPT"), `__version__`, `__config__` (ModelConfig
JSON), `__order__` (tensor names in declaration order), optional `__stats__`
(FeatureStats JSON), then one float64 array per tensor under its dotted name.
"""

import json
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from core.errors import SchemaError
from core.files import atomic_open
from dataforge.schemas import FeatureStats
from .schemas import ModelConfig, ModelParams
from .service import zero_model

logger = logging.getLogger(__name__)

MAGIC = "HOOPNET-CKPT"
VERSION = 1

PathLike = Union[str, Path]


def save_checkpoint(model: ModelParams, path: PathLike, stats: Optional[FeatureStats] = None) -> Path:
    path = Path(path)
    names = [name for name, _ in model.named_tensors()]
    payload = {
        "__magic__": np.array(MAGIC),
        "__version__": np.array(VERSION),
        "__config__": np.array(model.config.model_dump_json()),
        "__order__": np.array(names),
    }
    if stats is not None:
        payload["__stats__"] = np.array(stats.model_dump_json())
    payload.update({name: tensor for name, tensor in model.named_tensors()})
    with atomic_open(path, "wb") as fh:
        np.savez(fh, **payload)
    logger.debug("saved checkpoint %s (%d tensors)", path, len(names))
    return path


def load_checkpoint(path: PathLike) -> Tuple[ModelParams, Optional[FeatureStats]]:
    try:
        archive = np.load(Path(path), allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise SchemaError(f"{path}: not a checkpoint archive ({exc})")

    with archive:
        if "__magic__" not in archive.files or str(archive["__magic__"]) != MAGIC:
            raise SchemaError(f"{path}: bad checkpoint magic")
        version = int(archive["__version__"])
        if version != VERSION:
            raise SchemaError(f"{path}: unsupported checkpoint version {version}")
        config = ModelConfig.model_validate(json.loads(str(archive["__config__"])))
        stats = None
        if "__stats__" in archive.files:
            stats = FeatureStats.model_validate_json(str(archive["__stats__"]))
        stored = {name: archive[name] for name in archive["__order__"].tolist()}

    template = zero_model(config)
    expected = [name for name, _ in template.named_tensors()]
    if list(stored) != expected:
        raise SchemaError(f"{path}: tensor layout does not match its config")
    names = iter(expected)

    def fill(t: np.ndarray) -> np.ndarray:
        name = next(names)
        value = stored[name]
        if value.shape != t.shape:
            raise SchemaError(f"{path}: tensor {name} has shape {value.shape}, expected {t.shape}")
        return np.array(value, dtype=np.float64)

    return template.map(fill), stats
