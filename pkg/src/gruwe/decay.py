"""Learnable exponential basis functions.

    gamma(dt) = exp(-max(0, w * dt + b))        (componentwise, w and b length H)

The same basis decays the state between observations and carries it forward
to a prediction horizon.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError


@dataclass
class DecayParams:
    w_gamma: np.ndarray
    b_gamma: np.ndarray

    def __post_init__(self):
        self.w_gamma = np.asarray(self.w_gamma, dtype=np.float64)
        self.b_gamma = np.asarray(self.b_gamma, dtype=np.float64)
        if self.w_gamma.ndim != 1 or self.w_gamma.shape != self.b_gamma.shape:
            raise ShapeError(
                f"decay params must be equal-length vectors, got {self.w_gamma.shape} and {self.b_gamma.shape}"
            )

    @property
    def size(self) -> int:
        return self.w_gamma.shape[0]


class DecayRegime(enum.Enum):
    STATE_RESET = "StateReset"
    CONSTANT_DECAY = "ConstantDecay"
    NO_DECAY = "NoDecay"


def _check_dt(dt) -> np.ndarray:
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(~np.isfinite(dt)) or np.any(dt < 0):
        raise DomainError("elapsed time must be finite and non-negative")
    return dt


def gamma(params: DecayParams, dt) -> np.ndarray:
    """Decay factors in (0, 1].

    ``dt`` may be a scalar (result shape ``(H,)``) or an array of horizons
    (result shape ``dt.shape + (H,)``).
    """
    dt = _check_dt(dt)
    pre = dt[..., None] * params.w_gamma + params.b_gamma
    return np.exp(-np.maximum(pre, 0.0))


def gamma_backward(params: DecayParams, dt, upstream):
    """Chain rule through ``gamma``.

    Returns ``(grad_w, grad_b, grad_dt)`` where the first two are length-H
    vectors summed over any leading horizon axes and ``grad_dt`` has the shape
    of ``dt``. Where ``w * dt + b <= 0`` the clamp is active and every
    derivative is zero (the kink itself included).
    """
    dt = _check_dt(dt)
    upstream = np.asarray(upstream, dtype=np.float64)
    pre = dt[..., None] * params.w_gamma + params.b_gamma
    if upstream.shape != pre.shape:
        raise ShapeError(f"upstream shape {upstream.shape} != gamma shape {pre.shape}")
    active = pre > 0
    g = np.exp(-np.maximum(pre, 0.0))
    # d gamma / d pre = -gamma on the active branch
    d_pre = np.where(active, -g * upstream, 0.0)
    lead = tuple(range(d_pre.ndim - 1))
    grad_w = (d_pre * dt[..., None]).sum(axis=lead) if lead else d_pre * dt
    grad_b = d_pre.sum(axis=lead) if lead else d_pre.copy()
    grad_dt = (d_pre * params.w_gamma).sum(axis=-1)
    return grad_w, grad_b, grad_dt


def apply_decay(gamma_vec, h) -> np.ndarray:
    gamma_vec = np.asarray(gamma_vec, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if gamma_vec.shape[-1] != h.shape[-1]:
        raise ShapeError(f"apply_decay: {gamma_vec.shape} vs {h.shape}")
    return gamma_vec * h


def classify_regimes(params: DecayParams, tol: float = 1e-6) -> list[DecayRegime]:
    if tol < 0:
        raise DomainError("tol must be non-negative")
    out = []
    for w in params.w_gamma:
        if w > tol:
            out.append(DecayRegime.STATE_RESET)
        elif w < -tol:
            out.append(DecayRegime.NO_DECAY)
        else:
            out.append(DecayRegime.CONSTANT_DECAY)
    return out


def lipschitz_constant(w: float, b: float) -> float:
    """L = w * exp(-b), with |gamma(s) - gamma(t)| <= L |s - t| on [0, inf).

    Only defined for w > 0. Tight when b >= 0 (slope at dt = 0); for b < 0
    the true steepest slope is w, reached where the clamp releases.
    """
    if not w > 0:
        raise DomainError(f"Lipschitz bound needs w > 0, got {w}")
    return float(w * np.exp(-b))
