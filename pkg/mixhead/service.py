"""
Mixture density head: raw-output normalization, the factored Gaussian mixture
density (correlated xy times independent z), its negative log-likelihood with
analytic gradients, roulette sampling and density grids for contour plots.
"""

import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal, norm

from config import settings
from core.errors import DomainError
from numcore.service import SeededRng
from .schemas import (
    MX, MY, MZ, RAW_WIDTH, RHO, SX, SY, SZ, W,
    DensityGrid, GridMode, Mixture, Plane, RawMixture, TargetPoint,
)

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))

Bounds = Tuple[float, float, float, float]


# ---------- Normalization ----------

def clamp_raw(values: np.ndarray, clamp: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """Clip log-σ and ρ̃ columns; returns (clipped values, pass-through mask)."""
    values = np.asarray(values, dtype=np.float64)
    if not clamp:
        return values, np.ones_like(values, dtype=bool)
    lo = np.full(RAW_WIDTH, -np.inf)
    hi = np.full(RAW_WIDTH, np.inf)
    lo[[SX, SY, SZ]], hi[[SX, SY, SZ]] = settings.LOG_SIGMA_CLAMP
    lo[RHO], hi[RHO] = settings.RHO_CLAMP
    mask = (values >= lo) & (values <= hi)
    return np.clip(values, lo, hi), mask


def normalize(raw: Union[RawMixture, np.ndarray], clamp: bool = True) -> Mixture:
    values = raw.values if isinstance(raw, RawMixture) else RawMixture(values=raw).values
    clipped, _ = clamp_raw(values, clamp)
    log_w = clipped[..., W] - logsumexp(clipped[..., W], axis=-1, keepdims=True)
    return Mixture(
        weights=np.exp(log_w),
        mu=clipped[..., MX:MZ + 1].copy(),
        sigma=np.exp(clipped[..., SX:SZ + 1]),
        rho=np.tanh(clipped[..., RHO]),
    )


# ---------- Densities ----------

def _component_terms(mu, log_sigma, rho, one_m_r2, y):
    """Per-component standardized residuals and log densities."""
    sigma = np.exp(log_sigma)
    z = (y[..., None, :] - mu) / sigma
    zx, zy, zz = z[..., 0], z[..., 1], z[..., 2]
    quad = zx * zx + zy * zy - 2.0 * rho * zx * zy
    log_n2 = (
        -LOG_2PI - log_sigma[..., 0] - log_sigma[..., 1]
        - 0.5 * np.log(one_m_r2) - quad / (2.0 * one_m_r2)
    )
    log_n1 = -0.5 * LOG_2PI - log_sigma[..., 2] - 0.5 * zz * zz
    return zx, zy, zz, quad, sigma, log_n2 + log_n1


def _as_points(y) -> np.ndarray:
    if isinstance(y, TargetPoint):
        return y.as_array()
    if isinstance(y, (list, tuple)) and y and isinstance(y[0], TargetPoint):
        return np.stack([p.as_array() for p in y])
    return np.asarray(y, dtype=np.float64)


def log_density(mix: Mixture, y) -> np.ndarray:
    y = _as_points(y)
    _, _, _, _, _, log_comp = _component_terms(
        mix.mu, np.log(mix.sigma), mix.rho, 1.0 - mix.rho ** 2, y,
    )
    with np.errstate(divide="ignore"):
        log_w = np.log(mix.weights)
    return logsumexp(log_w + log_comp, axis=-1)


def density(mix: Mixture, y) -> Union[float, np.ndarray]:
    out = np.exp(log_density(mix, y))
    return float(out) if np.ndim(out) == 0 else out


def nll(mixtures: Union[Mixture, Sequence[Mixture]], targets, length: Optional[int] = None,
        stable: bool = True) -> float:
    """
    Σ_t −log p(y_t). `mixtures` carries a leading time axis (or is a list of
    per-step mixtures); the naive path (`stable=False`) sums −log Σ ω·N directly.
    """
    if not isinstance(mixtures, Mixture):
        mixtures = Mixture(
            weights=np.stack([m.weights for m in mixtures]),
            mu=np.stack([m.mu for m in mixtures]),
            sigma=np.stack([m.sigma for m in mixtures]),
            rho=np.stack([m.rho for m in mixtures]),
        )
    if mixtures.weights.ndim == 1:
        mixtures = Mixture(weights=mixtures.weights[None], mu=mixtures.mu[None],
                           sigma=mixtures.sigma[None], rho=mixtures.rho[None])
    y = np.atleast_2d(_as_points(targets))
    steps = mixtures.weights.shape[0]
    if y.shape[0] != steps or (length is not None and length != steps):
        raise DomainError(f"need one target per mixture step (mixtures={steps}, targets={y.shape[0]})")

    if stable:
        return float(-np.sum(log_density(mixtures, y)))
    per_step = np.sum(mixtures.weights * np.exp(_component_terms(
        mixtures.mu, np.log(mixtures.sigma), mixtures.rho, 1.0 - mixtures.rho ** 2, y,
    )[-1]), axis=-1)
    return float(-np.sum(np.log(per_step)))


def nll_and_grad(raw: np.ndarray, targets: np.ndarray, clamp: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-step NLL and its gradient with respect to the raw head outputs.

    raw: (..., C, 8); targets: (..., 3). Returns nll (...) and grad (..., C, 8).
    """
    clipped, mask = clamp_raw(raw, clamp)
    log_w = clipped[..., W] - logsumexp(clipped[..., W], axis=-1, keepdims=True)
    mu = clipped[..., MX:MZ + 1]
    log_sigma = clipped[..., SX:SZ + 1]
    rho = np.tanh(clipped[..., RHO])
    one_m_r2 = 1.0 / np.cosh(clipped[..., RHO]) ** 2

    zx, zy, zz, quad, sigma, log_comp = _component_terms(mu, log_sigma, rho, one_m_r2, targets)
    joint = log_w + log_comp
    log_p = logsumexp(joint, axis=-1)
    gamma = np.exp(joint - log_p[..., None])
    inv = 1.0 / one_m_r2

    grad = np.empty_like(clipped)
    grad[..., W] = np.exp(log_w) - gamma
    grad[..., MX] = -gamma * (zx - rho * zy) * inv / sigma[..., 0]
    grad[..., MY] = -gamma * (zy - rho * zx) * inv / sigma[..., 1]
    grad[..., MZ] = -gamma * zz / sigma[..., 2]
    grad[..., SX] = -gamma * (zx * (zx - rho * zy) * inv - 1.0)
    grad[..., SY] = -gamma * (zy * (zy - rho * zx) * inv - 1.0)
    grad[..., SZ] = -gamma * (zz * zz - 1.0)
    grad[..., RHO] = -gamma * (rho + zx * zy - rho * quad * inv)
    grad *= mask
    return -log_p, grad


# ---------- Sampling ----------

def roulette_pick(mix: Mixture, u: float) -> int:
    if not 0.0 <= u < 1.0:
        raise DomainError("roulette draw must lie in [0, 1)")
    cumulative = np.cumsum(mix.weights)
    index = int(np.searchsorted(cumulative, u, side="left"))
    return min(index, mix.n_components - 1)


def sample_points(mix: Mixture, rng: SeededRng, n: int) -> np.ndarray:
    """n draws from a single-step mixture, shape (n, 3)."""
    if mix.weights.ndim != 1:
        raise DomainError("sampling needs a single-step mixture")
    cumulative = np.cumsum(mix.weights)
    picks = np.minimum(np.searchsorted(cumulative, rng.uniform(size=n), side="left"), mix.n_components - 1)
    z = rng.normal((n, 3))
    mu, sigma, rho = mix.mu[picks], mix.sigma[picks], mix.rho[picks]
    out = np.empty((n, 3))
    out[:, 0] = mu[:, 0] + sigma[:, 0] * z[:, 0]
    out[:, 1] = mu[:, 1] + sigma[:, 1] * (rho * z[:, 0] + np.sqrt(1.0 - rho ** 2) * z[:, 1])
    out[:, 2] = mu[:, 2] + sigma[:, 2] * z[:, 2]
    return out


def sample_point(mix: Mixture, rng: SeededRng) -> TargetPoint:
    return TargetPoint.from_array(sample_points(mix, rng, 1)[0])


# ---------- Contour grids ----------

def density_grid(
    mix: Mixture,
    plane: Union[Plane, str],
    bounds: Bounds,
    resolution: Union[int, Tuple[int, int]] = 60,
    mode: Union[GridMode, str] = GridMode.MARGINAL,
) -> DensityGrid:
    plane, mode = Plane(plane), GridMode(mode)
    nu, nv = (resolution, resolution) if isinstance(resolution, int) else resolution
    u_min, u_max, v_min, v_max = bounds
    if nu < 2 or nv < 2:
        raise DomainError("density grid needs at least 2 points per axis")
    if not (u_max > u_min and v_max > v_min):
        raise DomainError(f"empty grid bounds {bounds}")
    if mix.weights.ndim != 1:
        raise DomainError("density grid needs a single-step mixture")

    u = np.linspace(u_min, u_max, nu)
    v = np.linspace(v_min, v_max, nv)
    uu, vv = np.meshgrid(u, v)
    a, b = plane.axes

    if mode is GridMode.SLICE:
        points = np.empty(uu.shape + (3,))
        points[..., plane.fixed_axis] = mix.mean()[plane.fixed_axis]
        points[..., a], points[..., b] = uu, vv
        values = density(mix, points)
    elif plane is Plane.XY:
        values = _bivariate_xy(mix, uu, vv)
    else:
        values = _axis_pair(mix, uu, vv, a, b)
    return DensityGrid(plane=plane, mode=mode, u=u, v=v, values=np.asarray(values))


def _axis_pair(mix: Mixture, uu, vv, a: int, b: int):
    values = np.zeros_like(uu)
    for c in range(mix.n_components):
        values += (
            mix.weights[c]
            * norm.pdf(uu, loc=mix.mu[c, a], scale=mix.sigma[c, a])
            * norm.pdf(vv, loc=mix.mu[c, b], scale=mix.sigma[c, b])
        )
    return values


def _bivariate_xy(mix: Mixture, xx, yy):
    points = np.stack([xx, yy], axis=-1)
    values = np.zeros_like(xx)
    for c in range(mix.n_components):
        sx, sy, r = mix.sigma[c, 0], mix.sigma[c, 1], mix.rho[c]
        cov = np.array([[sx * sx, r * sx * sy], [r * sx * sy, sy * sy]])
        values += mix.weights[c] * multivariate_normal.pdf(points, mean=mix.mu[c, :2], cov=cov, allow_singular=True)
    return values


def default_bounds(mix: Mixture, plane: Union[Plane, str], width: float = 4.0) -> Bounds:
    """Bounds spanning every component's mean ± width·σ on the plane's axes."""
    a, b = Plane(plane).axes
    lo = mix.mu - width * mix.sigma
    hi = mix.mu + width * mix.sigma
    return (float(lo[:, a].min()), float(hi[:, a].max()), float(lo[:, b].min()), float(hi[:, b].max()))
