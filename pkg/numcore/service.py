"""
Dense numeric primitives shared by every other package.

Matrices are plain float64 numpy arrays. The public helpers validate shapes and
finiteness; the hot loops in seqnet call `sigmoid`/numpy directly.
"""

import zlib
from typing import Callable, Iterable, Optional, Union

import numpy as np
from scipy.special import expit

from core.errors import DomainError, OracleError, ShapeError
from .schemas import Activation, Matrix, RngPurpose, Vector


def as_matrix(data) -> Matrix:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError("expected a 2-D matrix", arr.shape)
    _require_finite(arr, "matrix")
    return arr


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("cannot multiply", a.shape, b.shape)
    out = a @ b
    _require_finite(out, "matmul result")
    return out


def sigmoid(x):
    return expit(x)


def relu(x):
    return np.maximum(x, 0.0)


def activate(x, kind: Union[Activation, str]) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _require_finite(x, "activation input")
    kind = Activation(kind)
    if kind is Activation.SIGMOID:
        return sigmoid(x)
    if kind is Activation.TANH:
        return np.tanh(x)
    if kind is Activation.RELU:
        return relu(x)
    return x.copy()


def _require_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{what} contains non-finite values")


class SeededRng:
    """
    Seeded PCG64 stream with named, splittable sub-streams.

    `substream("init")` and `substream("synth", shot_id)` are derived from the
    root seed through numpy's SeedSequence spawn keys, so consumers never share
    or perturb each other's draws. A single SeededRng must not be shared across
    threads.
    """

    def __init__(self, seed: int, spawn_key: tuple = ()):
        if seed < 0:
            raise DomainError("seed must be a non-negative integer")
        self.seed = int(seed)
        self.spawn_key = tuple(spawn_key)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def substream(self, purpose: Union[RngPurpose, str], *keys: int) -> "SeededRng":
        tag = purpose.value if isinstance(purpose, RngPurpose) else str(purpose)
        code = zlib.crc32(tag.encode("utf-8"))
        return SeededRng(self.seed, self.spawn_key + (code,) + tuple(int(k) for k in keys))

    def normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None):
        return self.generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, options: list):
        return options[int(self.generator.integers(0, len(options)))]


def gaussian_draw(rng: SeededRng, n: int) -> Vector:
    if n < 1:
        raise DomainError("gaussian_draw needs n >= 1")
    return rng.normal(n)


def finite_diff_grad(
    f: Callable[[Vector], float],
    theta: Vector,
    h: float = 1e-5,
    indices: Optional[Iterable[int]] = None,
) -> Vector:
    """
    Central-difference gradient of scalar `f` at `theta`.

    When `indices` is given only those coordinates are evaluated; the rest of
    the returned vector is zero.
    """
    if h <= 0:
        raise DomainError("finite difference step must be positive")
    theta = np.array(theta, dtype=np.float64, copy=True)
    grad = np.zeros_like(theta)
    coords = range(theta.size) if indices is None else indices

    for i in coords:
        original = theta[i]
        theta[i] = original + h
        f_plus = float(f(theta))
        theta[i] = original - h
        f_minus = float(f(theta))
        theta[i] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise OracleError(f"non-finite function value at coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad
