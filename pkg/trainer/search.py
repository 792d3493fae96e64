import itertools
import logging
import math
from typing import Any, Dict, List, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError
from tqdm import tqdm

from config import settings
from core.errors import DomainError
from core.telemetry import timed
from dataforge.schemas import PreparedData
from numcore.schemas import RngPurpose
from numcore.service import SeededRng
from seqnet.schemas import ModelConfig
from seqnet.service import init_model
from .schemas import RangeSpec, SearchSpace, SearchStrategy, Task, TrainConfig, TrialResult
from .service import SplitArrays, fit

logger = logging.getLogger(__name__)

MODEL_KEYS = frozenset(ModelConfig.model_fields)
TRAIN_KEYS = frozenset(TrainConfig.model_fields)


def _check_space(space: SearchSpace) -> None:
    if not space.params:
        raise DomainError("search space is empty")
    empty = space.empty_keys()
    if empty:
        raise DomainError(f"no values given for {', '.join(empty)}")
    unknown = set(space.params) - MODEL_KEYS - TRAIN_KEYS
    if unknown:
        raise DomainError(f"unknown hyperparameters: {', '.join(sorted(unknown))}")


def _is_integer_field(key: str) -> bool:
    fields = ModelConfig.model_fields if key in MODEL_KEYS else TrainConfig.model_fields
    return fields[key].annotation is int


def grid_points(space: SearchSpace) -> List[Dict[str, Any]]:
    """Cartesian product in key order, truncated to the budget."""
    ranges = [k for k, v in space.params.items() if isinstance(v, RangeSpec)]
    if ranges:
        raise DomainError(f"grid search needs explicit values, got ranges for {', '.join(ranges)}")
    keys = list(space.params)
    combos = itertools.product(*(space.params[k] for k in keys))
    return [dict(zip(keys, values)) for values in itertools.islice(combos, space.budget)]


def _draw(key: str, options: Union[List[Any], RangeSpec], rng: SeededRng) -> Any:
    if isinstance(options, list):
        return rng.choice(options)
    if options.log:
        value = math.exp(rng.uniform(math.log(options.low), math.log(options.high)))
    else:
        value = float(rng.uniform(options.low, options.high))
    return int(round(value)) if _is_integer_field(key) else value


def random_points(space: SearchSpace, seed: int) -> List[Dict[str, Any]]:
    rng = SeededRng(seed).substream(RngPurpose.SEARCH)
    return [
        {key: _draw(key, options, rng) for key, options in space.params.items()}
        for _ in range(space.budget)
    ]


def _configs(point: Dict[str, Any], model_config: ModelConfig,
             train_config: TrainConfig) -> Tuple[ModelConfig, TrainConfig]:
    model_update = {k: v for k, v in point.items() if k in MODEL_KEYS}
    train_update = {k: v for k, v in point.items() if k in TRAIN_KEYS}
    try:
        return (
            ModelConfig.model_validate({**model_config.model_dump(), **model_update}),
            TrainConfig.model_validate({**train_config.model_dump(), **train_update}),
        )
    except ValidationError as exc:
        raise DomainError(f"invalid hyperparameters {point}: {exc.errors()[0]['msg']}") from exc


def search(
    space: SearchSpace,
    data: Union[PreparedData, SplitArrays],
    model_config: ModelConfig = ModelConfig(),
    train_config: TrainConfig = TrainConfig(),
    seed: int = settings.DEFAULT_SEED,
) -> List[TrialResult]:
    """
    Fit one fresh model per hyperparameter setting and rank the trials, best
    first. The metric is the best-epoch validation AUC for classification and
    the negated best-epoch validation NLL for generation. Trials without a
    metric sort last; ties keep trial order.
    """
    _check_space(space)
    if isinstance(data, PreparedData):
        data = SplitArrays.from_prepared(data)
    points = grid_points(space) if space.strategy is SearchStrategy.GRID else random_points(space, seed)
    settings_per_trial = [_configs(p, model_config, train_config) for p in points]
    logger.info("searching %d %s trials", len(points), space.strategy.value)

    results = []
    for trial, (point, (mcfg, tcfg)) in enumerate(
        tqdm(list(zip(points, settings_per_trial)), desc="trials", disable=not train_config.show_progress)
    ):
        with timed() as clock:
            model = init_model(mcfg, SeededRng(seed).substream(RngPurpose.SEARCH, trial))
            _, report = fit(model, data, tcfg)
        best = report.best
        if tcfg.task is Task.CLASSIFY:
            metric_name = "val_auc"
            metric = best.val_auc if best is not None and best.val_auc is not None else math.nan
        else:
            metric_name = "neg_val_nll"
            metric = -best.val_nll if best is not None and best.val_nll is not None else math.nan
        results.append(TrialResult(
            trial=trial, params=point, metric=metric, metric_name=metric_name,
            best_epoch=report.best_epoch, stop_epoch=report.stop_epoch,
            n_parameters=report.n_parameters, wall_seconds=clock["wall_seconds"],
        ))
        logger.info("trial %d %s %s=%.5g", trial, point, metric_name, metric)

    return rank_trials(results)


def rank_trials(results: List[TrialResult]) -> List[TrialResult]:
    return sorted(results, key=lambda r: (np.isnan(r.metric), -r.metric if not np.isnan(r.metric) else 0.0, r.trial))


def trials_to_frame(results: List[TrialResult]) -> pd.DataFrame:
    rows = []
    for rank, r in enumerate(results, start=1):
        row = {"rank": rank, "trial": r.trial}
        row.update(r.params)
        row.update({
            r.metric_name: r.metric, "best_epoch": r.best_epoch, "stop_epoch": r.stop_epoch,
            "n_parameters": r.n_parameters, "wall_seconds": r.wall_seconds,
        })
        rows.append(row)
    return pd.DataFrame(rows)
