"""State transition: time-triggered decay followed by a masked GRU update.

One step, given the previous state h, elapsed time dt, values x and mask m::

    g  = gamma(dt) * h
    x' = m * x
    z  = sigmoid(W_z x' + U_z g + V_z m + b_z)
    r  = sigmoid(W_r x' + U_r g + V_r m + b_r)
    h~ = tanh(W_h x' + U_h (r * g) + V_h m + b_h)
    h' = (1 - z) * g + z * h~

The mask enters through its own V matrices; feeding ``[x', m]`` to a plain
GRU with stacked input weights is algebraically the same thing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decay import gamma, gamma_backward
from .errors import DataError, DomainError, ShapeError
from .params import GruweParams


@dataclass
class MarkovState:
    h: np.ndarray
    last_time: float = 0.0

    @classmethod
    def initial(cls, hidden_dim: int, start_time: float = 0.0) -> "MarkovState":
        return cls(np.zeros(hidden_dim), float(start_time))

    @property
    def nbytes(self) -> int:
        return self.h.nbytes + np.float64(self.last_time).nbytes

    def copy(self) -> "MarkovState":
        return MarkovState(self.h.copy(), self.last_time)


@dataclass
class StepInput:
    x: np.ndarray
    m: np.ndarray
    dt: float


@dataclass
class StepTape:
    """Everything one step's backward pass needs."""

    h_prev: np.ndarray
    dt: float
    gamma: np.ndarray
    g: np.ndarray
    xp: np.ndarray
    m: np.ndarray
    z: np.ndarray
    r: np.ndarray
    h_tilde: np.ndarray
    h: np.ndarray


def _sigmoid(a):
    # clip keeps exp finite; sigmoid is saturated well before |a| = 500
    return 1.0 / (1.0 + np.exp(-np.clip(a, -500.0, 500.0)))


def step(state: MarkovState, inp: StepInput, params: GruweParams):
    """Advance ``state`` by one observation. Returns ``(new_state, tape)``."""
    dt = float(inp.dt)
    if not dt >= 0:
        raise DomainError(f"negative or NaN elapsed time {inp.dt}")
    x = np.asarray(inp.x, dtype=np.float64)
    m = np.asarray(inp.m, dtype=np.float64)
    D, H = params.input_dim, params.hidden_dim
    if x.shape != (D,) or m.shape != (D,) or state.h.shape != (H,):
        raise ShapeError(f"step: x {x.shape}, m {m.shape}, h {state.h.shape} for D={D}, H={H}")
    p = params.params

    gam = gamma(params.decay, dt)
    g = gam * state.h
    xp = m * x
    z = _sigmoid(p["W_z"].value @ xp + p["U_z"].value @ g + p["V_z"].value @ m + p["b_z"].value)
    r = _sigmoid(p["W_r"].value @ xp + p["U_r"].value @ g + p["V_r"].value @ m + p["b_r"].value)
    h_tilde = np.tanh(p["W_h"].value @ xp + p["U_h"].value @ (r * g) + p["V_h"].value @ m + p["b_h"].value)
    h = (1.0 - z) * g + z * h_tilde

    tape = StepTape(state.h, dt, gam, g, xp, m, z, r, h_tilde, h)
    return MarkovState(h, state.last_time + dt), tape


def step_all_masked(state: MarkovState, dt: float, params: GruweParams) -> MarkovState:
    """A step with nothing observed; decay and the V/b terms still act."""
    zeros = np.zeros(params.input_dim)
    return step(state, StepInput(zeros, zeros, dt), params)[0]


def run_steps(state: MarkovState, inputs, params: GruweParams):
    """Fold ``step`` over ``inputs``. Returns ``(states, tapes)`` with
    ``states[0] is state`` and ``len(states) == len(inputs) + 1``."""
    states, tapes = [state], []
    for inp in inputs:
        state, tape = step(state, inp, params)
        states.append(state)
        tapes.append(tape)
    return states, tapes


def forward_sequence(seq, params: GruweParams, state: MarkovState | None = None):
    """Process an :class:`~gruwe.data.IrregularSeries`.

    Starts from the zero state anchored at the first timestamp (so the first
    step sees dt = 0), or resumes from ``state`` with dt measured from
    ``state.last_time``. Returns ``(states, tapes)`` as :func:`run_steps`.
    States carry the observed timestamp itself, so resuming from a saved
    state reproduces the whole-sequence pass bit for bit.
    """
    times = np.asarray(seq.times, dtype=np.float64)
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise DataError("timestamps must be strictly increasing")
    if state is None:
        state = MarkovState.initial(params.hidden_dim, times[0] if times.size else 0.0)
    elif times.size and times[0] < state.last_time:
        raise DataError("sequence starts before the saved state's time")
    states, tapes = [state], []
    prev = state.last_time
    for i in range(times.size):
        t = float(times[i])
        state, tape = step(state, StepInput(seq.values[i], seq.mask[i], t - prev), params)
        state.last_time = t
        states.append(state)
        tapes.append(tape)
        prev = t
    return states, tapes


def backward_sequence(tapes, upstream, params: GruweParams, accumulate: bool = True):
    """Reverse-mode pass through a list of step tapes.

    ``upstream[t]`` is dLoss/dh after step t (``None`` or an (n, H) array with
    zero rows where the loss does not touch that state). Parameter gradients
    are added into ``params`` when ``accumulate`` is true; they are always
    returned as a dict. The second return value is dLoss/dh of the state the
    first tape started from.
    """
    n = len(tapes)
    H, D = params.hidden_dim, params.input_dim
    upstream = np.zeros((n, H)) if upstream is None else np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (n, H):
        raise ShapeError(f"upstream shape {upstream.shape} != {(n, H)}")
    p = params.params
    U_z, U_r, U_h = p["U_z"].value, p["U_r"].value, p["U_h"].value

    da_z = np.zeros((n, H))
    da_r = np.zeros((n, H))
    da_h = np.zeros((n, H))
    d_gamma = np.zeros((n, H))
    carry = np.zeros(H)
    for t in range(n - 1, -1, -1):
        tp = tapes[t]
        dh = upstream[t] + carry
        z, r, g, ht = tp.z, tp.r, tp.g, tp.h_tilde
        dg = dh * (1.0 - z)
        dah = dh * z * (1.0 - ht * ht)
        daz = dh * (ht - g) * z * (1.0 - z)
        drg = U_h.T @ dah
        dar = drg * g * r * (1.0 - r)
        dg += drg * r + U_z.T @ daz + U_r.T @ dar
        da_z[t], da_r[t], da_h[t] = daz, dar, dah
        d_gamma[t] = dg * tp.h_prev
        carry = dg * tp.gamma

    if n:
        XP = np.array([tp.xp for tp in tapes])
        M = np.array([tp.m for tp in tapes])
        G = np.array([tp.g for tp in tapes])
        RG = np.array([tp.r * tp.g for tp in tapes])
        dts = np.array([tp.dt for tp in tapes])
        gw, gb, _ = gamma_backward(params.decay, dts, d_gamma)
    else:
        XP = M = np.zeros((0, D))
        G = RG = np.zeros((0, H))
        gw = gb = np.zeros(H)

    grads = {
        "w_gamma": gw, "b_gamma": gb,
        "W_z": da_z.T @ XP, "W_r": da_r.T @ XP, "W_h": da_h.T @ XP,
        "U_z": da_z.T @ G, "U_r": da_r.T @ G, "U_h": da_h.T @ RG,
        "V_z": da_z.T @ M, "V_r": da_r.T @ M, "V_h": da_h.T @ M,
        "b_z": da_z.sum(axis=0), "b_r": da_r.sum(axis=0), "b_h": da_h.sum(axis=0),
    }
    if accumulate:
        params.add_grads(grads)
    return grads, carry
