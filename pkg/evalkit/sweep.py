import logging
from typing import Dict, List, Optional, Sequence

from tqdm import tqdm

from config import settings
from core.errors import DomainError, EvaluationError
from core.telemetry import timed
from dataforge.schemas import CourtSpec, RawShot
from dataforge.service import build_dataset
from numcore.service import SeededRng
from seqnet.schemas import ModelConfig
from seqnet.service import init_model
from trainer.schemas import TrainConfig
from trainer.service import SplitArrays, evaluate, fit
from .baseline import baseline_logistic
from .metrics import roc_auc
from .schemas import DistanceReport, DistanceRow, RocCurve, RowStatus

logger = logging.getLogger(__name__)

BASELINE_NAME = "logistic"


def model_name(model_config: ModelConfig, train_config: TrainConfig) -> str:
    """Short label for report rows: BLSTM-MDN, LSTM-MDN, or BLSTM/LSTM when the NLL term is off."""
    name = "BLSTM" if model_config.bidirectional else "LSTM"
    return name if train_config.loss_spec.nll_weight == 0 else f"{name}-MDN"


def curve_key(model: str, cutoff_ft: float) -> str:
    return f"{model}@{cutoff_ft:g}"


def distance_sweep(
    shots: Sequence[RawShot],
    cutoffs: Optional[Sequence[float]] = None,
    model_config: ModelConfig = ModelConfig(),
    train_config: TrainConfig = TrainConfig(),
    court: CourtSpec = CourtSpec(),
    seed: int = settings.DEFAULT_SEED,
    include_baseline: bool = False,
    min_sequences: int = settings.MIN_SEQUENCES_PER_CUTOFF,
) -> DistanceReport:
    """
    Train and score a fresh model at each distance cutoff. Cutoffs whose
    prepared dataset holds fewer than `min_sequences` sequences get an
    insufficient-data row instead of a fit.
    """
    cutoffs = sorted(settings.DISTANCE_CUTOFFS_FT if cutoffs is None else cutoffs)
    name = model_name(model_config, train_config)
    rows: List[DistanceRow] = []
    curves: Dict[str, RocCurve] = {}

    for cutoff in tqdm(cutoffs, desc="cutoffs", disable=not train_config.show_progress, leave=False):
        sequences = 0
        try:
            data = build_dataset(shots, court, cutoff_ft=cutoff, seed=seed)
            sequences = len(data.train) + len(data.test)
        except DomainError:
            data = None
        if data is None or sequences < min_sequences:
            rows.append(DistanceRow(
                cutoff_ft=cutoff, model=name, n_sequences=sequences,
                status=RowStatus.INSUFFICIENT_DATA,
            ))
            logger.warning("cutoff %g ft: %d sequences, need %d", cutoff, sequences, min_sequences)
            continue

        arrays = SplitArrays.from_prepared(data)
        with timed() as clock:
            model = init_model(model_config, SeededRng(seed))
            best, report = fit(model, arrays, train_config)
        probabilities = evaluate(best, arrays.x_val, arrays.y_val, train_config.loss_spec).probabilities
        try:
            curve = roc_auc(probabilities, arrays.y_val)
        except EvaluationError as exc:
            logger.warning("cutoff %g ft: %s", cutoff, exc)
            curve = None
        if curve is not None:
            curves[curve_key(name, cutoff)] = curve
        rows.append(DistanceRow(
            cutoff_ft=cutoff, model=name,
            auc=curve.auc if curve is not None else None,
            best_epoch=report.best_epoch,
            n_parameters=report.n_parameters,
            wall_seconds=clock["wall_seconds"],
            n_sequences=sequences,
            status=RowStatus.OK if curve is not None else RowStatus.SINGLE_CLASS,
        ))
        logger.info("cutoff %g ft: %s auc=%s", cutoff, name, rows[-1].auc)

        if include_baseline:
            with timed() as clock:
                try:
                    result = baseline_logistic(data.train_raw, data.test_raw)
                except EvaluationError:
                    result = None
            if result is not None:
                curves[curve_key(BASELINE_NAME, cutoff)] = result.curve
            rows.append(DistanceRow(
                cutoff_ft=cutoff, model=BASELINE_NAME,
                auc=result.auc if result is not None else None,
                n_parameters=len(result.weights) + 1 if result is not None else None,
                wall_seconds=clock["wall_seconds"],
                n_sequences=sequences,
                status=RowStatus.OK if result is not None else RowStatus.SINGLE_CLASS,
            ))

    return DistanceReport(rows=rows, curves=curves)
