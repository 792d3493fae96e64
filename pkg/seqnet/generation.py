"""
Branching trajectory generation from a trained model.

At every step the model rescans the whole sequence so far (prefix plus the
points already sampled on that branch), the mixture at the last step is
sampled K times, and each sample becomes a new branch. After S steps there
are K^S trajectories.
"""

import logging
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.errors import DomainError, ShapeError
from dataforge.schemas import FeatureStats
from mixhead.schemas import SX, SZ, DensityGrid, GridMode, Mixture, Plane
from mixhead.service import default_bounds, density_grid, normalize, sample_points
from numcore.schemas import RngPurpose
from numcore.service import SeededRng
from .schemas import ModelParams
from .service import stack_forward

logger = logging.getLogger(__name__)

IDENTITY_STATS = FeatureStats(mean=[0.0] * 4, std=[1.0] * 4)


class GenerationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    branch_factor: int = Field(default=2, ge=1)
    steps: int = Field(default=3, ge=1)
    grid_resolution: int = Field(default=60, ge=2)
    grid_mode: GridMode = GridMode.MARGINAL
    # overrides every log-sigma output, bypassing the clamp
    forced_log_sigma: Optional[float] = None


class Trajectory(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    branch_id: str
    points: np.ndarray  # (prefix + steps, 4) rim-relative feet and clock seconds
    prefix_length: int


class RolloutResult(BaseModel):
    trajectories: List[Trajectory]
    grids: List[DensityGrid]


def position_mixture(offsets: Mixture, last_point: np.ndarray, stats: FeatureStats) -> Mixture:
    """Re-express a standardized next-offset mixture as a mixture over the next position in feet."""
    mean, std = np.array(stats.mean[:3]), np.array(stats.std[:3])
    return Mixture(
        weights=offsets.weights,
        mu=(last_point[:3] + offsets.mu) * std + mean,
        sigma=offsets.sigma * std,
        rho=offsets.rho,
    )


def _step_mixtures(model: ModelParams, sequences: np.ndarray, forced_log_sigma: Optional[float]) -> Mixture:
    raw = stack_forward(model, sequences, strict=False).raw_mixture[:, -1]
    if forced_log_sigma is not None:
        raw = raw.copy()
        raw[..., SX:SZ + 1] = forced_log_sigma
        return normalize(raw, clamp=False)
    return normalize(raw)


def _check_prefix(prefix) -> np.ndarray:
    prefix = np.asarray(prefix, dtype=np.float64)
    if prefix.ndim != 2 or prefix.shape[1] != 4:
        raise ShapeError("prefix must be (n, 4)", prefix.shape)
    if prefix.shape[0] < 2:
        raise DomainError("prefix needs at least 2 frames")
    return prefix


def rollout(
    model: ModelParams,
    prefix,
    config: GenerationConfig,
    rng: SeededRng,
    stats: Optional[FeatureStats] = None,
) -> RolloutResult:
    """
    Sample K^S continuations of a standardized prefix (n, 4).

    Branch ids join the per-step sample index with "-" ("0-1-1"). The clock of
    a new point extrapolates the last clock step. Grids cover the leading
    branch (all-zero id) at each step, one per plane, in rim-relative feet.
    """
    prefix = _check_prefix(prefix)
    stats = stats or IDENTITY_STATS
    rng = rng.substream(RngPurpose.SAMPLING)
    k = config.branch_factor

    sequences = prefix[None]
    ids = [""]
    grids: List[DensityGrid] = []
    for step in range(1, config.steps + 1):
        mixtures = _step_mixtures(model, sequences, config.forced_log_sigma)
        last, prev = sequences[:, -1], sequences[:, -2]

        lead = position_mixture(mixtures.at(0), last[0], stats)
        for plane in Plane:
            grid = density_grid(lead, plane, default_bounds(lead, plane),
                                config.grid_resolution, config.grid_mode)
            grids.append(grid.model_copy(update={"step": step}))

        grown, grown_ids = [], []
        for b in range(sequences.shape[0]):
            offsets = sample_points(mixtures.at(b), rng, k)
            for j in range(k):
                point = np.empty(4)
                point[:3] = last[b, :3] + offsets[j]
                point[3] = 2.0 * last[b, 3] - prev[b, 3]
                grown.append(np.vstack([sequences[b], point]))
                grown_ids.append(f"{ids[b]}-{j}" if ids[b] else str(j))
        sequences = np.stack(grown)
        ids = grown_ids

    trajectories = [
        Trajectory(branch_id=bid, points=stats.invert(seq), prefix_length=prefix.shape[0])
        for bid, seq in zip(ids, sequences)
    ]
    logger.debug("rolled out %d trajectories over %d steps", len(trajectories), config.steps)
    return RolloutResult(trajectories=trajectories, grids=grids)


def next_point_mode(model: ModelParams, prefix, stats: Optional[FeatureStats] = None,
                    resolution: int = 80) -> np.ndarray:
    """Highest-density cell for the point after `prefix`, in rim-relative feet."""
    prefix = _check_prefix(prefix)
    stats = stats or IDENTITY_STATS
    mix = position_mixture(_step_mixtures(model, prefix[None], None).at(0), prefix[-1], stats)
    x, y = density_grid(mix, Plane.XY, default_bounds(mix, Plane.XY), resolution).mode_point()
    _, z = density_grid(mix, Plane.XZ, default_bounds(mix, Plane.XZ), resolution).mode_point()
    return np.array([x, y, z])


def next_point_errors(model: ModelParams, sequences: np.ndarray, stats: Optional[FeatureStats] = None,
                      prefix_length: int = 9) -> np.ndarray:
    """
    Distance (feet) between the predicted density mode and the true point
    following a `prefix_length`-frame prefix, one entry per standardized sequence.
    """
    stats = stats or IDENTITY_STATS
    sequences = np.asarray(sequences, dtype=np.float64)
    if sequences.ndim != 3 or sequences.shape[1] <= prefix_length:
        raise ShapeError("sequences must be (N, T, 4) with T > prefix length", sequences.shape)
    errors = np.empty(sequences.shape[0])
    for i, seq in enumerate(sequences):
        mode = next_point_mode(model, seq[:prefix_length], stats)
        truth = stats.invert(seq[prefix_length])[:3]
        errors[i] = np.linalg.norm(mode - truth)
    return errors
