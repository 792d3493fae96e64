"""
Shot ingestion and preprocessing: CSV in/out, rim-relative transform, tail
truncation, distance cutoffs, the 80/20 split and train-only standardization.
"""

import logging
import re
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from config import settings
from core.errors import DomainError, ParseError, SchemaError
from core.files import atomic_open
from numcore.schemas import RngPurpose
from numcore.service import SeededRng
from .schemas import (
    CSV_COLUMNS,
    CourtSpec,
    DropReport,
    FeatureStats,
    PreparedData,
    RawShot,
    ShotOutcome,
    ShotSequence,
    SplitIndex,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

NUMERIC_COLUMNS = ["frame_idx", "x_ft", "y_ft", "z_ft", "game_clock_s"]
SEQUENCE_COLUMNS = ["shot_id", "frame_idx", "x", "y", "z", "clock", "label", "split", "cutoff_ft"]


# ---------- CSV ----------

def _trim_trailing_blank_rows(df: pd.DataFrame, empty: pd.DataFrame) -> pd.DataFrame:
    """Drop all-empty rows at the end of the file."""
    blank = empty.all(axis=1).to_numpy()
    keep = len(blank)
    while keep and blank[keep - 1]:
        keep -= 1
    return df.iloc[:keep]


def load_csv(path: PathLike, court: CourtSpec = CourtSpec()) -> List[RawShot]:
    """
    Read `shot_id,frame_idx,x_ft,y_ft,z_ft,game_clock_s,label` rows into shots,
    grouped by shot_id in order of first appearance and sorted by frame_idx.

    Reported line numbers are file lines with the header as line 1. Blank lines
    inside the data and rows with missing fields are malformed; blank lines at
    the end of the file are ignored. Frames must lie inside `court` plus margin.
    """
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: missing header")
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        raise ParseError(f"{path}: malformed row", int(match.group(1)) if match else None)

    if list(df.columns) != CSV_COLUMNS:
        raise SchemaError(f"{path}: header must be {','.join(CSV_COLUMNS)}, got {','.join(df.columns)}")
    if df.empty:
        return []
    empty = df.fillna("").astype(str).apply(lambda col: col.str.strip().eq(""))
    df = _trim_trailing_blank_rows(df, empty)
    empty = empty.iloc[:len(df)]
    if df.empty:
        return []

    if empty.to_numpy().any():
        row = int(np.flatnonzero(empty.any(axis=1).to_numpy())[0])
        if empty.iloc[row].all():
            raise ParseError(f"{path}: blank row", row + 2)
        missing = [c for c in CSV_COLUMNS if empty.iloc[row][c]]
        raise ParseError(f"{path}: missing {', '.join(missing)}", row + 2)

    numeric = df[NUMERIC_COLUMNS].apply(pd.to_numeric, errors="coerce")
    bad = ~np.isfinite(numeric.to_numpy(dtype=np.float64)).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ParseError(f"{path}: non-numeric or non-finite value", row + 2)
    frame_idx = numeric["frame_idx"].to_numpy()
    if np.any(frame_idx != np.round(frame_idx)):
        row = int(np.flatnonzero(frame_idx != np.round(frame_idx))[0])
        raise ParseError(f"{path}: frame_idx must be an integer", row + 2)

    labels = df["label"].str.strip()
    unknown = ~labels.isin([o.value for o in ShotOutcome])
    if unknown.any():
        row = int(np.flatnonzero(unknown.to_numpy())[0])
        raise SchemaError(f"{path}: line {row + 2}: unknown label {df['label'].iloc[row]!r}")

    frame = numeric.assign(shot_id=df["shot_id"], label=labels)
    shots = []
    for shot_id, group in frame.groupby("shot_id", sort=False):
        group = group.sort_values("frame_idx", kind="stable")
        if group["frame_idx"].duplicated().any():
            raise ParseError(f"{path}: shot {shot_id} repeats a frame_idx", int(group.index[0]) + 2)
        if group["label"].nunique() != 1:
            raise SchemaError(f"{path}: shot {shot_id} has conflicting labels")
        try:
            shot = RawShot(
                shot_id=str(shot_id),
                frames=group[["x_ft", "y_ft", "z_ft", "game_clock_s"]].to_numpy(dtype=np.float64),
                outcome=ShotOutcome(group["label"].iloc[0]),
            )
        except ValidationError as exc:
            raise SchemaError(f"{path}: shot {shot_id}: {exc.errors()[0]['msg']}")
        if not court.contains(shot.frames):
            raise SchemaError(f"{path}: shot {shot_id}: frames leave the court bounds")
        shots.append(shot)
    logger.debug("loaded %d shots from %s", len(shots), path)
    return shots


def shots_to_frame(shots: Iterable[RawShot]) -> pd.DataFrame:
    parts = []
    for shot in shots:
        n = shot.n_frames
        parts.append(pd.DataFrame({
            "shot_id": [shot.shot_id] * n,
            "frame_idx": np.arange(n),
            "x_ft": shot.frames[:, 0],
            "y_ft": shot.frames[:, 1],
            "z_ft": shot.frames[:, 2],
            "game_clock_s": shot.frames[:, 3],
            "label": [shot.outcome.value] * n,
        }))
    if not parts:
        return pd.DataFrame(columns=CSV_COLUMNS)
    return pd.concat(parts, ignore_index=True)[CSV_COLUMNS]


def write_csv(shots: Iterable[RawShot], path: PathLike) -> Path:
    with atomic_open(path, "w") as fh:
        shots_to_frame(shots).to_csv(fh, index=False, float_format="%.10g", lineterminator="\n")
    return Path(path)


def write_sequences_csv(sequences: Sequence[ShotSequence], path: PathLike,
                        split: Optional[SplitIndex] = None) -> Path:
    split_of = split.split_of() if split is not None else {}
    parts = []
    for seq in sequences:
        n = seq.features.shape[0]
        parts.append(pd.DataFrame({
            "shot_id": [seq.shot_id] * n,
            "frame_idx": np.arange(n),
            "x": seq.features[:, 0],
            "y": seq.features[:, 1],
            "z": seq.features[:, 2],
            "clock": seq.features[:, 3],
            "label": [seq.label] * n,
            "split": [split_of.get(seq.shot_id, "")] * n,
            "cutoff_ft": [seq.cutoff_distance_ft] * n,
        }))
    frame = pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(columns=SEQUENCE_COLUMNS)
    with atomic_open(path, "w") as fh:
        frame.to_csv(fh, index=False, float_format="%.10g", lineterminator="\n")
    return Path(path)


# ---------- Per-shot transforms ----------

def rim_relative(shot: RawShot, court: CourtSpec = CourtSpec()) -> RawShot:
    """Translate so the rim nearest the final frame is the origin."""
    if shot.rim_relative:
        return shot
    rim = court.nearest_rim(shot.frames[-1])
    frames = shot.frames.copy()
    frames[:, :3] -= rim
    return RawShot(shot_id=shot.shot_id, frames=frames, outcome=shot.outcome, rim_relative=True)


def truncate(shot: Union[RawShot, ShotSequence],
             length: int = settings.SEQUENCE_LENGTH) -> Optional[ShotSequence]:
    """Last `length` frames, or None for shots that are too short."""
    if isinstance(shot, ShotSequence):
        return shot
    if shot.n_frames < length:
        return None
    return ShotSequence(shot_id=shot.shot_id, features=shot.frames[-length:], label=shot.label)


def cutoff_at_distance(shot: RawShot, d_ft: float,
                       length: int = settings.SEQUENCE_LENGTH) -> Optional[ShotSequence]:
    """Drop trailing frames closer than `d_ft` (3-D) to the rim, then truncate."""
    if d_ft < 0:
        raise DomainError("cutoff distance must be non-negative")
    dist = np.linalg.norm(shot.frames[:, :3], axis=1)
    far = np.flatnonzero(dist >= d_ft)
    if far.size == 0:
        return None
    kept = shot.frames[: far[-1] + 1]
    if kept.shape[0] < length:
        return None
    return ShotSequence(
        shot_id=shot.shot_id,
        features=kept[-length:],
        label=shot.label,
        cutoff_distance_ft=float(d_ft),
    )


def next_point_targets(features: np.ndarray) -> np.ndarray:
    """Offsets x_{t+1} − x_t over the spatial features, shape (..., T−1, 3)."""
    features = np.asarray(features, dtype=np.float64)
    return features[..., 1:, :3] - features[..., :-1, :3]


# ---------- Dataset-level steps ----------

def pareto_split(ids: Sequence[str], seed: int = settings.DEFAULT_SEED,
                 train_fraction: float = settings.TRAIN_FRACTION) -> SplitIndex:
    ids = list(ids)
    if len(ids) < 2:
        raise DomainError("need at least 2 ids to split")
    if len(set(ids)) != len(ids):
        raise DomainError("ids must be unique")
    n = len(ids)
    n_train = int(np.floor(train_fraction * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    order = SeededRng(seed).substream(RngPurpose.SPLIT).permutation(n)
    return SplitIndex(
        train_ids=[ids[i] for i in order[:n_train]],
        test_ids=[ids[i] for i in order[n_train:]],
    )


def feature_stats(train: Sequence[ShotSequence]) -> FeatureStats:
    if not train:
        raise DomainError("standardization needs a non-empty training set")
    stacked = np.concatenate([s.features for s in train], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std == 0.0] = 1.0
    return FeatureStats(mean=mean.tolist(), std=std.tolist())


def standardize(train: Sequence[ShotSequence],
                apply_to: Optional[Sequence[ShotSequence]] = None) -> Tuple[List[ShotSequence], FeatureStats]:
    """z-score `apply_to` (default: `train`) with statistics from `train` only."""
    stats = feature_stats(train)
    targets = train if apply_to is None else apply_to
    out = [
        s.model_copy(update={"features": stats.apply(s.features), "standardized": True})
        for s in targets
    ]
    return out, stats


def prepare_sequences(shots: Iterable[RawShot], court: CourtSpec = CourtSpec(),
                      cutoff_ft: Optional[float] = None,
                      length: int = settings.SEQUENCE_LENGTH) -> Tuple[List[ShotSequence], DropReport]:
    report = DropReport()
    sequences = []
    for shot in shots:
        report.total += 1
        rel = rim_relative(shot, court)
        seq = truncate(rel, length) if cutoff_ft is None else cutoff_at_distance(rel, cutoff_ft, length)
        if seq is None:
            report.dropped_short += 1
            continue
        sequences.append(seq)
    report.kept = len(sequences)
    if report.total:
        logger.info(
            "kept %d of %d shots (%.2f%% dropped)%s",
            report.kept, report.total, 100 * report.drop_rate,
            f" at {cutoff_ft:g} ft cutoff" if cutoff_ft is not None else "",
        )
    return sequences, report


def build_dataset(shots: Sequence[RawShot], court: CourtSpec = CourtSpec(),
                  cutoff_ft: Optional[float] = None,
                  seed: int = settings.DEFAULT_SEED) -> PreparedData:
    """Preprocess, split 80/20 and standardize with train statistics."""
    sequences, drops = prepare_sequences(shots, court, cutoff_ft)
    split = pareto_split([s.shot_id for s in sequences], seed)
    train_ids = set(split.train_ids)
    train_raw = [s for s in sequences if s.shot_id in train_ids]
    test_raw = [s for s in sequences if s.shot_id not in train_ids]
    train, stats = standardize(train_raw)
    test, _ = standardize(train_raw, test_raw)
    return PreparedData(
        train=train, test=test, train_raw=train_raw, test_raw=test_raw,
        stats=stats, split=split, drops=drops, cutoff_ft=cutoff_ft,
    )


def to_arrays(sequences: Sequence[ShotSequence]) -> Tuple[np.ndarray, np.ndarray]:
    """Stacked features (N, T, 4) and labels (N,)."""
    if not sequences:
        return np.zeros((0, settings.SEQUENCE_LENGTH, settings.INPUT_DIM)), np.zeros(0)
    return (
        np.stack([s.features for s in sequences]),
        np.array([s.label for s in sequences], dtype=np.float64),
    )
