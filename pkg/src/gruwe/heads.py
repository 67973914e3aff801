"""Continuous-time decoders and task losses.

A prediction at horizon ``dt`` from state ``h`` first carries the state
forward with the shared decay, ``g = gamma(dt) * h``, then decodes ``g``:

* forecasting: ``W_out g + b_out``
* event intensity of type k: ``softplus(w_lambda[k] . g + b_lambda[k])``

The functions below work on stacks of states and horizons so a whole
sequence is decoded in a handful of array operations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cell import MarkovState, StepInput, backward_sequence, forward_sequence, run_steps, step
from .decay import DecayParams, gamma, gamma_backward
from .errors import ConfigError, DataError, DomainError, InternalError, ShapeError
from .numerics import sigmoid, softplus
from .params import GruweParams


@dataclass
class ForecastHead:
    W_out: np.ndarray
    b_out: np.ndarray


@dataclass
class IntensityHead:
    w_lambda: np.ndarray
    b_lambda: np.ndarray


@dataclass
class CompensatorEstimate:
    value: float
    sample_count: int
    std_error: float
    sample_times: np.ndarray  # (intervals, M) horizons measured from each interval start


def forecast_head(params: GruweParams) -> ForecastHead:
    return ForecastHead(params.value("W_out"), params.value("b_out"))


def intensity_head(params: GruweParams) -> IntensityHead:
    return IntensityHead(params.value("w_lambda"), params.value("b_lambda"))


def _check_horizon(horizon):
    horizon = np.asarray(horizon, dtype=np.float64)
    if np.any(~np.isfinite(horizon)) or np.any(horizon < 0):
        raise DomainError("prediction horizon must be finite and non-negative")
    return horizon


def decayed_state(state: MarkovState, horizon, decay: DecayParams) -> np.ndarray:
    horizon = _check_horizon(horizon)
    return gamma(decay, horizon) * state.h


def predict_at(state: MarkovState, horizon, decay: DecayParams, head: ForecastHead) -> np.ndarray:
    """Forecast at ``horizon`` (scalar -> (P,), array of n horizons -> (n, P))."""
    return decayed_state(state, horizon, decay) @ head.W_out.T + head.b_out


def intensity_at(state: MarkovState, horizon, decay: DecayParams, head: IntensityHead) -> np.ndarray:
    """Per-type intensities at ``horizon`` (scalar -> (K,), array -> (n, K))."""
    return softplus(decayed_state(state, horizon, decay) @ head.w_lambda.T + head.b_lambda)


def total_intensity_at(state: MarkovState, horizon, decay: DecayParams, head: IntensityHead):
    total = intensity_at(state, horizon, decay, head).sum(axis=-1)
    return total if np.ndim(total) else float(total)


# -- batched decode with backward ------------------------------------------
#
# hs: (N, H) states, horizons: (N, S). Outputs (N, S, O).

def _decode(hs, horizons, decay, W, b):
    gam = gamma(decay, horizons)
    dec = gam * hs[:, None, :]
    return gam, dec, dec @ W.T + b


def _decode_backward(hs, horizons, decay, W, gam, dec, d_out):
    """Gradients of a decode. Returns (dW, db, dw_gamma, db_gamma, dhs)."""
    dW = np.einsum("nso,nsh->oh", d_out, dec)
    db = d_out.sum(axis=(0, 1))
    d_dec = d_out @ W
    dhs = (d_dec * gam).sum(axis=1)
    gw, gb, _ = gamma_backward(decay, horizons, d_dec * hs[:, None, :])
    return dW, db, gw, gb, dhs


# -- forecasting loss --------------------------------------------------------

def masked_mse_loss(predictions, targets, target_masks):
    """Masked squared error normalized by the number of observed targets.

    Returns ``(loss, grad)`` with ``grad`` the derivative w.r.t. predictions.
    With nothing observed the loss and gradient are zero.
    """
    pred = np.asarray(predictions, dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64)
    mask = np.asarray(target_masks, dtype=np.float64)
    if pred.shape != tgt.shape or pred.shape != mask.shape:
        raise ShapeError(f"masked_mse_loss: shapes {pred.shape}, {tgt.shape}, {mask.shape}")
    count = mask.sum()
    if count == 0:
        return 0.0, np.zeros_like(pred)
    resid = np.where(mask > 0, pred - tgt, 0.0)
    loss = float(np.sum(mask * resid * resid) / count)
    return loss, 2.0 * mask * resid / count


def split_index(times, observe_fraction: float) -> int:
    """Number of leading steps that form the observed prefix (at least one)."""
    times = np.asarray(times, dtype=np.float64)
    if not 0.0 < observe_fraction <= 1.0:
        raise ConfigError(f"observe_fraction must be in (0, 1], got {observe_fraction}")
    if times.size == 0:
        return 0
    cutoff = times[0] + observe_fraction * (times[-1] - times[0])
    return max(1, int(np.searchsorted(times, cutoff, side="right")))


@dataclass
class ForecastRows:
    """Which state predicts which observation, at what horizon."""

    state_index: np.ndarray  # index into the prefix state list
    horizons: np.ndarray
    targets: np.ndarray
    masks: np.ndarray


def forecast_rows(seq, n_obs: int, prefix_loss: bool = False) -> ForecastRows:
    times = np.asarray(seq.times, dtype=np.float64)
    n = times.size
    idx = list(range(n_obs, n))
    src = [n_obs] * len(idx)
    hor = [times[i] - times[n_obs - 1] for i in idx]
    if prefix_loss:
        # observation i (i >= 1) predicted from the state after observation i-1
        pre = list(range(1, n_obs))
        idx = pre + idx
        src = pre + src
        hor = [times[i] - times[i - 1] for i in pre] + hor
    idx = np.asarray(idx, dtype=int)
    return ForecastRows(
        np.asarray(src, dtype=int),
        np.asarray(hor, dtype=np.float64),
        np.asarray(seq.values, dtype=np.float64).reshape(n, -1)[idx],
        np.asarray(seq.mask, dtype=np.float64).reshape(n, -1)[idx],
    )


def forecast_loss(seq, params: GruweParams, observe_fraction=0.5, prefix_loss=False, compute_grad=True):
    """Masked MSE of predicting the held-out part of ``seq`` from its prefix.

    Returns ``(loss, grads, n_targets)``; ``grads`` is ``None`` when not
    requested. Sequences without observed targets give ``(0.0, zeros, 0)``.
    """
    if params.task != "forecast":
        raise ConfigError("forecast_loss needs forecast-task parameters")
    times = np.asarray(seq.times, dtype=np.float64)
    n_obs = split_index(times, observe_fraction)
    states, tapes = forward_sequence(prefix(seq, n_obs), params)
    rows = forecast_rows(seq, n_obs, prefix_loss)
    n_targets = int(rows.masks.sum())
    zero = {n: np.zeros_like(p.value) for n, p in params.params.items()} if compute_grad else None
    if n_targets == 0:
        return 0.0, zero, 0

    hs = np.array([states[i].h for i in rows.state_index])
    W, b = params.value("W_out"), params.value("b_out")
    gam, dec, out = _decode(hs, rows.horizons[:, None], params.decay, W, b)
    loss, d_pred = masked_mse_loss(out[:, 0, :], rows.targets, rows.masks)
    if not compute_grad:
        return loss, None, n_targets

    dW, db, gw, gb, dhs = _decode_backward(hs, rows.horizons[:, None], params.decay, W, gam, dec, d_pred[:, None, :])
    upstream = np.zeros((len(tapes), params.hidden_dim))
    # states[i] is the output of tape i-1; states[0] is the fixed zero state
    np.add.at(upstream, rows.state_index - 1, dhs)
    grads, _ = backward_sequence(tapes, upstream, params, accumulate=False)
    grads["W_out"] = dW
    grads["b_out"] = db
    grads["w_gamma"] = grads["w_gamma"] + gw
    grads["b_gamma"] = grads["b_gamma"] + gb
    return loss, grads, n_targets


@dataclass
class _Prefix:
    times: np.ndarray
    values: np.ndarray
    mask: np.ndarray


def prefix(seq, n: int) -> _Prefix:
    """The first ``n`` steps of a series (views, no validation)."""
    return _Prefix(np.asarray(seq.times)[:n], np.asarray(seq.values)[:n], np.asarray(seq.mask)[:n])


# -- temporal point process --------------------------------------------------

def event_inputs(times, types, num_types: int):
    """One-hot marks with an all-ones mask; dt measured from t = 0."""
    times = np.asarray(times, dtype=np.float64)
    eye = np.eye(num_types)
    ones = np.ones(num_types)
    dts = np.diff(times, prepend=0.0)
    return [StepInput(eye[k], ones, float(d)) for k, d in zip(types, dts)]


def _validate_events(seq, num_types):
    times = np.asarray(seq.times, dtype=np.float64)
    types = np.asarray(seq.types, dtype=int)
    if times.shape != types.shape:
        raise DataError("event times and types differ in length")
    if times.size:
        if times[0] < 0 or times[-1] > seq.t_max or np.any(np.diff(times) <= 0):
            raise DataError("event times must be strictly increasing within [0, t_max]")
        if types.min() < 0 or types.max() >= num_types:
            raise DataError(f"event type out of range for K={num_types}")
    return times, types


def event_states(seq, params: GruweParams):
    """Forward pass over an event sequence starting from the zero state at t=0."""
    times, types = _validate_events(seq, params.num_types)
    start = MarkovState.initial(params.hidden_dim, 0.0)
    return run_steps(start, event_inputs(times, types, params.num_types), params)


def tpp_nll(seq, params: GruweParams, mc_samples: int = 20, rng=None, sample_fractions=None,
            compute_grad=True):
    """Negative log-likelihood of an event sequence.

    The intensity of event j is read from the state before it, at horizon
    ``t_j - t_{j-1}``. The integral of the total intensity over ``[0, t_max]``
    is estimated per inter-event interval (tail interval included) from
    ``mc_samples`` uniform points. ``sample_fractions`` (shape
    ``(L + 1, M)``, values in [0, 1)) fixes those points; otherwise they are
    drawn from ``rng``. Sample points are constants for differentiation.

    Returns ``(nll, grads, compensator)``.
    """
    if params.task != "tpp":
        raise ConfigError("tpp_nll needs tpp-task parameters")
    if mc_samples < 1:
        raise ConfigError("mc_samples must be >= 1")
    times, types = _validate_events(seq, params.num_types)
    L = times.size
    if sample_fractions is None:
        if rng is None:
            raise ConfigError("tpp_nll needs an rng or fixed sample fractions")
        sample_fractions = rng.random((L + 1, mc_samples))
    sample_fractions = np.asarray(sample_fractions, dtype=np.float64)
    if sample_fractions.ndim != 2 or sample_fractions.shape[0] != L + 1:
        raise ShapeError(f"sample_fractions must have shape ({L + 1}, M), got {sample_fractions.shape}")
    M = sample_fractions.shape[1]

    states, tapes = run_steps(MarkovState.initial(params.hidden_dim, 0.0),
                              event_inputs(times, types, params.num_types), params)
    hs = np.array([s.h for s in states])  # (L+1, H); hs[j] precedes event j
    lengths = np.diff(np.concatenate([[0.0], times, [seq.t_max]]))
    w, b = params.value("w_lambda"), params.value("b_lambda")
    decay = params.decay

    mc_h = lengths[:, None] * sample_fractions
    gam_c, dec_c, a_c = _decode(hs, mc_h, decay, w, b)
    total = softplus(a_c).sum(axis=-1)  # (L+1, M)
    per_interval = lengths * total.mean(axis=1)
    comp_value = float(per_interval.sum())
    if M > 1:
        se = float(np.sqrt(np.sum(lengths**2 * total.var(axis=1, ddof=1) / M)))
    else:
        se = float("nan")
    comp = CompensatorEstimate(comp_value, M * (L + 1), se, mc_h)

    if L:
        ev_h = lengths[:L, None]
        gam_e, dec_e, a_e = _decode(hs[:L], ev_h, decay, w, b)
        a_k = a_e[np.arange(L), 0, types]
        log_lam = np.log(softplus(a_k))
        nll = comp_value - float(log_lam.sum())
    else:
        nll = comp_value
    if not compute_grad:
        return nll, None, comp

    d_ac = (lengths[:, None, None] / M) * sigmoid(a_c)
    dW, db, gw, gb, dhs = _decode_backward(hs, mc_h, decay, w, gam_c, dec_c, d_ac)
    if L:
        d_ae = np.zeros_like(a_e)
        d_ae[np.arange(L), 0, types] = -sigmoid(a_k) / softplus(a_k)
        dW2, db2, gw2, gb2, dhs2 = _decode_backward(hs[:L], ev_h, decay, w, gam_e, dec_e, d_ae)
        dW, db, gw, gb = dW + dW2, db + db2, gw + gw2, gb + gb2
        dhs[:L] += dhs2
    grads, _ = backward_sequence(tapes, dhs[1:], params, accumulate=False)
    grads["w_lambda"] = dW
    grads["b_lambda"] = db
    grads["w_gamma"] = grads["w_gamma"] + gw
    grads["b_gamma"] = grads["b_gamma"] + gb
    return nll, grads, comp


def intensity_path(seq, params: GruweParams, grid):
    """Total intensity of the fitted model along ``grid`` (absolute times in
    ``[0, t_max]``), conditioning on the events of ``seq`` before each point."""
    times, _ = _validate_events(seq, params.num_types)
    states, _ = event_states(seq, params)
    grid = np.asarray(grid, dtype=np.float64)
    # number of events strictly before each grid point selects the state
    which = np.searchsorted(times, grid, side="left")
    head = intensity_head(params)
    out = np.empty(grid.size)
    for j in np.unique(which):
        sel = which == j
        st = states[j]
        anchor = times[j - 1] if j > 0 else 0.0
        out[sel] = total_intensity_at(st, grid[sel] - anchor, params.decay, head)
    return out


def predict_next_event_time(state: MarkovState, params: GruweParams, t_max_horizon: float,
                            grid_size: int = 500) -> float:
    """Expected waiting time to the next event from ``state``.

    Integrates ``s * lambda(s) * exp(-Lambda(s))`` on a uniform grid over
    ``[0, t_max_horizon]`` with the trapezoid rule; probability mass beyond
    the horizon is placed at the horizon.
    """
    if not t_max_horizon > 0 or not np.isfinite(t_max_horizon):
        raise ConfigError(f"t_max_horizon must be positive, got {t_max_horizon}")
    if grid_size < 2:
        raise ConfigError(f"grid_size must be >= 2, got {grid_size}")
    s = np.linspace(0.0, t_max_horizon, int(grid_size))
    lam = total_intensity_at(state, s, params.decay, intensity_head(params))
    ds = np.diff(s)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (lam[1:] + lam[:-1]) * ds)])
    dens = s * lam * np.exp(-cum)
    return float(np.sum(0.5 * (dens[1:] + dens[:-1]) * ds) + t_max_horizon * np.exp(-cum[-1]))


def predict_next_event_type(state: MarkovState, params: GruweParams, at_horizon: float) -> int:
    """Most intense type at ``at_horizon`` (lowest index on ties)."""
    lam = intensity_at(state, at_horizon, params.decay, intensity_head(params))
    return int(np.argmax(lam))


def thinning_sample(state: MarkovState, params: GruweParams, rng, t_max: float, bound=None,
                    bound_grid: int = 64, safety: float = 1.5):
    """Simulate events from ``state`` over the next ``t_max`` time units.

    Ogata thinning: between events the total intensity is dominated by a
    constant found by a grid search (times ``safety``) unless ``bound`` is
    given. Each accepted event updates the state. Returns a list of
    ``(absolute_time, type)``.
    """
    if not t_max > 0:
        raise ConfigError("t_max must be positive")
    head = intensity_head(params)
    decay = params.decay
    K = params.num_types
    eye, ones = np.eye(K), np.ones(K)
    events = []
    cur = state
    elapsed = 0.0
    while True:
        remaining = t_max - elapsed
        if bound is None:
            grid = np.linspace(0.0, remaining, bound_grid)
            lam_bar = safety * float(np.max(total_intensity_at(cur, grid, decay, head)))
        else:
            lam_bar = float(bound)
        if not lam_bar > 0:
            raise InternalError(f"thinning bound must be positive, got {lam_bar}")
        s = 0.0
        while True:
            s += rng.exponential(1.0 / lam_bar)
            if elapsed + s > t_max:
                return events
            lam = intensity_at(cur, s, decay, head)
            total = float(lam.sum())
            if total > lam_bar:
                raise InternalError(
                    f"thinning bound {lam_bar:.6g} below intensity {total:.6g} "
                    f"at t={state.last_time + elapsed + s:.6g}"
                )
            if rng.random() * lam_bar <= total:
                k = int(min(np.searchsorted(np.cumsum(lam), rng.random() * total, side="right"), K - 1))
                events.append((state.last_time + elapsed + s, k))
                cur, _ = step(cur, StepInput(eye[k], ones, s), params)
                elapsed += s
                break
