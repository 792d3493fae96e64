"""Hand-engineered logistic regression used as the reference point for the sequence models."""

import logging
from typing import Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from config import settings
from core.errors import DomainError, ShapeError
from dataforge.schemas import ShotSequence
from trainer.optim import adam_step, init_adam
from trainer.schemas import AdamHyper
from .metrics import roc_auc
from .schemas import BaselineResult

logger = logging.getLogger(__name__)

BASELINE_FEATURES = ("rim_distance_ft", "vertical_speed_fps", "entry_angle_deg")


def engineer_features(sequences: Union[Sequence[ShotSequence], np.ndarray]) -> np.ndarray:
    """
    Three scalars per rim-relative sequence, from its last two frames:
    distance to the rim, vertical speed and the descent angle below horizontal.
    """
    if isinstance(sequences, np.ndarray):
        xs = sequences
    else:
        xs = np.stack([s.features for s in sequences]) if sequences else np.zeros((0, 2, 4))
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 3 or xs.shape[1] < 2 or xs.shape[2] < 3:
        raise ShapeError("baseline features need (N, T>=2, 3+) sequences", xs.shape)
    last, prev = xs[:, -1, :3], xs[:, -2, :3]
    step = last - prev
    distance = np.linalg.norm(last, axis=1)
    vertical_speed = step[:, 2] * settings.FRAME_RATE_HZ
    entry_angle = np.degrees(np.arctan2(-step[:, 2], np.hypot(step[:, 0], step[:, 1])))
    return np.column_stack([distance, vertical_speed, entry_angle])


def fit_logistic(features: np.ndarray, labels: np.ndarray, epochs: int = 500,
                 lr: float = 0.05) -> Tuple[np.ndarray, float, np.ndarray, np.ndarray]:
    """Full-batch Adam on mean BCE over z-scored features. Returns (w, b, mean, std)."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ShapeError("features and labels disagree", features.shape, labels.shape)
    if features.shape[0] == 0:
        raise DomainError("baseline needs training samples")
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[std == 0.0] = 1.0
    z = (features - mean) / std

    params = {"w": np.zeros(z.shape[1]), "b": np.zeros(1)}
    state = init_adam(params, AdamHyper(lr=lr))
    n = z.shape[0]
    for _ in range(epochs):
        err = expit(z @ params["w"] + params["b"][0]) - labels
        grads = {"w": z.T @ err / n, "b": np.array([err.mean()])}
        adam_step(state, params, grads)
    return params["w"], float(params["b"][0]), mean, std


def predict_logistic(features: np.ndarray, w: np.ndarray, b: float,
                     mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return expit(((np.asarray(features, dtype=np.float64) - mean) / std) @ w + b)


def baseline_logistic(train: Sequence[ShotSequence], test: Sequence[ShotSequence],
                      epochs: int = 500, lr: float = 0.05) -> BaselineResult:
    """Fit on rim-relative training sequences, score the test split."""
    train_x = engineer_features(train)
    train_y = np.array([s.label for s in train], dtype=np.float64)
    w, b, mean, std = fit_logistic(train_x, train_y, epochs=epochs, lr=lr)
    test_y = np.array([s.label for s in test])
    curve = roc_auc(predict_logistic(engineer_features(test), w, b, mean, std), test_y)
    logger.info("logistic baseline auc=%.4f on %d test sequences", curve.auc, len(test))
    return BaselineResult(auc=curve.auc, weights=w, bias=b, feature_mean=mean, feature_std=std, curve=curve)
