import logging
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from core.errors import DomainError, EvaluationError, ShapeError, TrainingError
from core.telemetry import timed
from dataforge.schemas import PreparedData
from dataforge.service import to_arrays
from evalkit.metrics import roc_auc
from numcore.schemas import RngPurpose
from numcore.service import SeededRng
from seqnet.schemas import LossSpec, ModelParams
from seqnet.service import backward_per_sample, count_parameters, make_batch, sample_losses
from .optim import adam_step, clip_global_norm, early_stop_check, init_adam
from .schemas import EpochRecord, StopDecision, Task, TrainConfig, TrainReport

logger = logging.getLogger(__name__)


class SplitArrays(NamedTuple):
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray

    @classmethod
    def from_prepared(cls, data: PreparedData) -> "SplitArrays":
        x_train, y_train = to_arrays(data.train)
        x_val, y_val = to_arrays(data.test)
        return cls(x_train, y_train, x_val, y_val)


class Evaluation(NamedTuple):
    loss: float
    nll: float
    bce: float
    probabilities: np.ndarray


def evaluate(model: ModelParams, features: np.ndarray, labels: np.ndarray,
             loss: LossSpec, batch_size: int = 256) -> Evaluation:
    """Mean loss, mean per-sequence NLL, mean BCE and hit probabilities over a dataset."""
    parts = [
        sample_losses(model, make_batch(features[start:start + batch_size], labels[start:start + batch_size]), loss)
        for start in range(0, features.shape[0], batch_size)
    ]
    return Evaluation(
        loss=float(np.mean(np.concatenate([p["loss"] for p in parts]))),
        nll=float(np.mean(np.concatenate([p["nll"] for p in parts]))),
        bce=float(np.mean(np.concatenate([p["bce"] for p in parts]))),
        probabilities=np.concatenate([p["probability"] for p in parts]),
    )


def _auc_or_none(probabilities: np.ndarray, labels: np.ndarray) -> Optional[float]:
    try:
        return roc_auc(probabilities, labels).auc
    except EvaluationError:
        return None


def _check_data(model: ModelParams, data: SplitArrays) -> None:
    cfg = model.config
    if data.x_train.shape[0] == 0:
        raise DomainError("training set is empty")
    for x in (data.x_train, data.x_val):
        if x.shape[0] and x.shape[1:] != (cfg.seq_len, cfg.input_dim):
            raise ShapeError("data does not match the model", x.shape[1:], (cfg.seq_len, cfg.input_dim))


def fit(
    model: ModelParams,
    data: Union[PreparedData, SplitArrays],
    cfg: TrainConfig = TrainConfig(),
) -> Tuple[ModelParams, TrainReport]:
    """
    Mini-batch Adam over shuffled epochs, validating on the held-out split
    after each epoch. Returns the parameters with the lowest monitored
    validation loss (the input model is left untouched) and the per-epoch
    report. Classification monitors validation BCE by default; the joint loss
    is dominated by the mixture NLL and says little about the hit/miss head.
    """
    if isinstance(data, PreparedData):
        data = SplitArrays.from_prepared(data)
    _check_data(model, data)

    params = model.copy_params()
    state = init_adam(params, cfg.adam)
    loss = cfg.loss_spec
    shuffle = SeededRng(cfg.seed).substream(RngPurpose.SHUFFLE)
    n = data.x_train.shape[0]
    has_val = data.x_val.shape[0] > 0

    records, monitored_history = [], []
    best_monitored, best_params, best_epoch = np.inf, params.copy_params(), 0
    stopped_early = False
    with timed() as clock:
        epochs = tqdm(range(1, cfg.epochs + 1), desc="epochs", disable=not cfg.show_progress, leave=False)
        for epoch in epochs:
            order = shuffle.permutation(n)
            per_sample = np.empty(n)
            for batch_id, start in enumerate(range(0, n, cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                batch = make_batch(data.x_train[idx], data.y_train[idx], batch_id=batch_id)
                try:
                    losses, grads = backward_per_sample(params, batch, loss)
                    clip_global_norm(grads, cfg.grad_clip)
                    adam_step(state, params, grads)
                except TrainingError as exc:
                    raise TrainingError(f"training diverged: {exc}", batch_id=batch_id, epoch=epoch)
                per_sample[idx] = losses
            train_loss = float(np.mean(per_sample))

            if has_val:
                ev = evaluate(params, data.x_val, data.y_val, loss)
                val_loss, val_nll, val_bce = ev.loss, ev.nll, ev.bce
                val_auc = _auc_or_none(ev.probabilities, data.y_val) if cfg.task is Task.CLASSIFY else None
            else:
                val_loss, val_nll, val_bce, val_auc = train_loss, None, None, None
            if not np.isfinite(val_loss):
                raise TrainingError("validation loss is not finite", epoch=epoch)
            monitored = val_bce if cfg.monitors_bce and val_bce is not None else val_loss

            records.append(EpochRecord(
                epoch=epoch, train_loss=train_loss, val_loss=val_loss, val_auc=val_auc,
                val_nll=val_nll if cfg.task is Task.GENERATE else None,
                val_bce=val_bce if cfg.task is Task.CLASSIFY else None,
            ))
            logger.debug("epoch %d train=%.5f val=%.5f auc=%s", epoch, train_loss, val_loss, val_auc)
            epochs.set_postfix(train=f"{train_loss:.4f}", val=f"{val_loss:.4f}")

            if monitored < best_monitored:
                best_monitored, best_params, best_epoch = monitored, params.copy_params(), epoch
            if cfg.early_stop:
                decision = early_stop_check(
                    monitored_history, monitored, cfg.early_stop_factor, cfg.early_stop_window,
                    cfg.early_stop_comparator,
                )
                if decision is StopDecision.STOP:
                    stopped_early = True
                    break
            monitored_history.append(monitored)

    report = TrainReport(
        task=cfg.task,
        epochs=records,
        stop_epoch=len(records),
        best_epoch=best_epoch,
        stopped_early=stopped_early,
        n_parameters=count_parameters(params),
        wall_seconds=clock["wall_seconds"],
    )
    logger.info("fit finished: %s", report.summary())
    return best_params, report
