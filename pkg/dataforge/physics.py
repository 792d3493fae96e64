"""
Drag-free projectile shots and the closed-form hit/miss oracle.

Horizontal motion is constant-velocity; z(t) = z0 + vz·t − ½·g·t². A shot is a
hit when its descending crossing of the rim plane lands within
(rim radius − ball radius) of the rim center.
"""

import logging
from typing import List, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from config import settings
from core.errors import DomainError, GenerationError
from numcore.schemas import RngPurpose
from numcore.service import SeededRng
from .schemas import CourtSpec, RawShot, ShotOutcome, SynthConfig

logger = logging.getLogger(__name__)

BOUNDARY_TOL_FT = 1e-9


class LaunchParams(BaseModel):
    """Release position (court feet), velocity (ft/s) and the rim being attacked."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    position: np.ndarray
    velocity: np.ndarray
    rim: np.ndarray

    @field_validator("position", "velocity", "rim", mode="before")
    @classmethod
    def vec3(cls, value):
        arr = np.array(value, dtype=np.float64)
        if arr.shape != (3,) or not np.all(np.isfinite(arr)):
            raise ValueError("expected a finite 3-vector")
        return arr

    def position_at(self, t, gravity: float = settings.GRAVITY_FT_S2) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        out = self.position + np.multiply.outer(t, self.velocity)
        out[..., 2] -= 0.5 * gravity * t ** 2
        return out


class RimCrossing(NamedTuple):
    time_s: float
    point: np.ndarray
    offset_ft: float


def rim_crossing(launch: LaunchParams, court: CourtSpec,
                 gravity: float = settings.GRAVITY_FT_S2) -> Optional[RimCrossing]:
    """Descending crossing of z = rim height, or None when the ball never gets there."""
    z0, vz = launch.position[2], launch.velocity[2]
    disc = vz * vz - 2.0 * gravity * (court.rim_height_ft - z0)
    if disc <= 0.0:
        return None
    t = (vz + np.sqrt(disc)) / gravity
    if t <= 0.0:
        return None
    point = launch.position_at(t, gravity)
    offset = float(np.hypot(point[0] - launch.rim[0], point[1] - launch.rim[1]))
    return RimCrossing(time_s=float(t), point=point, offset_ft=offset)


def oracle_hit(launch: LaunchParams, court: CourtSpec = CourtSpec(),
               gravity: float = settings.GRAVITY_FT_S2) -> ShotOutcome:
    crossing = rim_crossing(launch, court, gravity)
    if crossing is None:
        return ShotOutcome.MISS
    if crossing.offset_ft <= court.hit_radius_ft + BOUNDARY_TOL_FT:
        return ShotOutcome.HIT
    return ShotOutcome.MISS


def aim_launch(position, aim_point, angle_deg: float,
               gravity: float = settings.GRAVITY_FT_S2) -> np.ndarray:
    """
    Velocity that carries a ball from `position` through `aim_point` at launch
    angle `angle_deg`: v² = g·D² / (2·cos²θ·(D·tanθ − Δz)).
    """
    position = np.asarray(position, dtype=np.float64)
    aim_point = np.asarray(aim_point, dtype=np.float64)
    horizontal = aim_point[:2] - position[:2]
    dist = float(np.hypot(*horizontal))
    dz = aim_point[2] - position[2]
    theta = np.radians(angle_deg)
    rise = dist * np.tan(theta) - dz
    if dist <= 0.0 or rise <= 0.0:
        raise DomainError(f"no ballistic solution at {angle_deg:.1f} degrees")
    speed = np.sqrt(gravity * dist ** 2 / (2.0 * np.cos(theta) ** 2 * rise))
    direction = horizontal / dist
    return np.array([
        speed * np.cos(theta) * direction[0],
        speed * np.cos(theta) * direction[1],
        speed * np.sin(theta),
    ])


def flight_end_time(launch: LaunchParams, court: CourtSpec,
                    gravity: float = settings.GRAVITY_FT_S2) -> float:
    crossing = rim_crossing(launch, court, gravity)
    if crossing is not None:
        return crossing.time_s
    z0, vz = launch.position[2], launch.velocity[2]
    return float((vz + np.sqrt(vz * vz + 2.0 * gravity * z0)) / gravity)


def sample_frames(launch: LaunchParams, court: CourtSpec, clock_start: float,
                  gravity: float = settings.GRAVITY_FT_S2) -> np.ndarray:
    """Noiseless (n, 4) frames at the tracking rate from release to rim plane or floor."""
    dt = 1.0 / settings.FRAME_RATE_HZ
    t_end = flight_end_time(launch, court, gravity)
    n = int(np.floor(t_end / dt + 1e-9)) + 1
    t = np.arange(n) * dt
    frames = np.empty((n, 4))
    frames[:, :3] = launch.position_at(t, gravity)
    frames[:, 3] = clock_start - t
    return frames


class SyntheticShot(NamedTuple):
    shot: RawShot
    launch: LaunchParams


def _draw_launch(cfg: SynthConfig, rng: SeededRng) -> LaunchParams:
    court = cfg.court
    rim_index = int(rng.integers(0, 2))
    rim = court.rim_centers[rim_index]
    toward_court = 1.0 if rim_index == 0 else -1.0

    distance = rng.uniform(*cfg.release_distance_ft)
    polar = np.radians(rng.uniform(-cfg.release_spread_deg, cfg.release_spread_deg))
    height = rng.uniform(*cfg.release_height_ft)
    position = np.array([
        rim[0] + toward_court * distance * np.cos(polar),
        rim[1] + distance * np.sin(polar),
        height,
    ])

    # aim error split into depth (along the shot line) and lateral parts
    line = (rim[:2] - position[:2]) / np.hypot(*(rim[:2] - position[:2]))
    lateral = np.array([-line[1], line[0]])
    depth_err, lateral_err = cfg.aim_std_ft * rng.normal(2)
    aim = np.array([*(rim[:2] + depth_err * line + lateral_err * lateral), rim[2]])

    angle = cfg.launch_angle_mean_deg + cfg.launch_angle_std_deg * float(rng.normal())
    return LaunchParams(position=position, velocity=aim_launch(position, aim, angle), rim=rim)


def synth_generate_with_truth(cfg: SynthConfig) -> List[SyntheticShot]:
    """
    Shots plus the launch parameters behind them. Shot i draws its launch from
    the `synth` sub-stream keyed by i and its measurement noise from the `noise`
    sub-stream keyed by i, so labels never depend on the noise seed.
    """
    root = SeededRng(cfg.seed)
    noise_root = SeededRng(cfg.noise_seed if cfg.noise_seed is not None else cfg.seed)
    out: List[SyntheticShot] = []
    skipped = outside = 0
    for i in range(cfg.n_shots):
        rng = root.substream(RngPurpose.SYNTH, i)
        try:
            launch = _draw_launch(cfg, rng)
        except DomainError:
            skipped += 1
            continue
        clock_start = rng.uniform(*cfg.clock_start_s)
        frames = sample_frames(launch, cfg.court, clock_start)
        if cfg.noise_std_ft > 0:
            noise = noise_root.substream(RngPurpose.NOISE, i).normal((frames.shape[0], 3))
            frames[:, :3] += cfg.noise_std_ft * noise
        if not cfg.court.contains(frames):
            outside += 1
            continue
        shot = RawShot(
            shot_id=f"synth-{i:05d}",
            frames=frames,
            outcome=oracle_hit(launch, cfg.court),
        )
        out.append(SyntheticShot(shot=shot, launch=launch))

    if not out:
        raise GenerationError("synthetic configuration produced no valid shots")
    if skipped:
        logger.warning("skipped %d shots with no ballistic solution", skipped)
    if outside:
        logger.warning("skipped %d shots that leave the court bounds", outside)
    hits = sum(s.shot.label for s in out)
    logger.info("generated %d synthetic shots, hit rate %.3f", len(out), hits / len(out))
    return out


def synth_generate(cfg: SynthConfig) -> List[RawShot]:
    return [s.shot for s in synth_generate_with_truth(cfg)]
