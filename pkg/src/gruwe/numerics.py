"""Dense float64 helpers, nonlinearities, parameters and seeded randomness.

Vectors and matrices are plain ``numpy.ndarray`` objects of dtype float64.
Randomness goes through ``numpy.random.Generator`` backed by PCG64, seeded
via ``SeedSequence``; both are fully specified and platform independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError


def as_vector(values, name="vector") -> np.ndarray:
    """Checked constructor: 1-D, float64, all finite."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name}: expected 1-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries")
    return arr


def as_matrix(values, name="matrix") -> np.ndarray:
    """Checked constructor: 2-D, float64, all finite."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries")
    return arr


def matvec(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    if M.ndim != 2 or v.ndim != 1 or M.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: cannot multiply {M.shape} by {v.shape}")
    return M @ v


# -- nonlinearities ---------------------------------------------------------

def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # exp(-|x|) never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def sigmoid_grad(x):
    # sigma(x) sigma(-x) avoids the cancellation in s (1 - s) for large x
    return sigmoid(x) * sigmoid(-np.asarray(x, dtype=np.float64))


def tanh(x):
    return np.tanh(x)


def tanh_grad(x):
    # 1 - tanh^2 = 4 sigma(2x) sigma(-2x), accurate in the tails
    x2 = 2.0 * np.asarray(x, dtype=np.float64)
    return 4.0 * sigmoid(x2) * sigmoid(-x2)


def softplus(x):
    """ln(1 + e^x), evaluated as max(x, 0) + log1p(e^{-|x|})."""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out if out.ndim else float(out)


def softplus_grad(x):
    return sigmoid(x)


def softplus_inverse(y):
    """Inverse of softplus for y > 0."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("softplus_inverse requires y > 0")
    out = y + np.log(-np.expm1(-y))
    return out if out.ndim else float(out)


# -- parameters -------------------------------------------------------------

@dataclass
class Parameter:
    """A learnable array with a gradient accumulator of the same shape."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise ShapeError(
                f"{self.name}: grad shape {self.grad.shape} != value shape {self.value.shape}"
            )

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def copy(self) -> "Parameter":
        return Parameter(self.name, self.value.copy(), self.grad.copy())


# -- randomness -------------------------------------------------------------

def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent PCG64 stream for ``(seed, *keys)``.

    Streams for distinct key tuples are statistically independent, which lets
    per-sequence draws stay identical however the work is scheduled.
    """
    if seed < 0 or any(k < 0 for k in keys):
        raise ConfigError("rng seed and keys must be non-negative integers")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def uniform_init(rng: np.random.Generator, shape, scale=None, *, fan_in=None, name="param") -> Parameter:
    """Parameter with entries i.i.d. uniform on [-scale, scale].

    ``scale`` defaults to 1/sqrt(fan_in); ``fan_in`` defaults to the last
    dimension of ``shape``.
    """
    shape = tuple(np.atleast_1d(shape).astype(int)) if not isinstance(shape, tuple) else shape
    if scale is None:
        if fan_in is None:
            fan_in = shape[-1]
        if fan_in <= 0:
            raise ConfigError(f"{name}: fan_in must be positive")
        scale = 1.0 / np.sqrt(fan_in)
    if not np.isfinite(scale) or scale <= 0:
        raise ConfigError(f"{name}: init scale must be positive, got {scale}")
    return Parameter(name, rng.uniform(-scale, scale, size=shape))
