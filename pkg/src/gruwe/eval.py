"""Test metrics and the online-inference benchmark."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .cell import MarkovState, forward_sequence, step
from .errors import DataError
from .heads import (
    _decode,
    event_states,
    forecast_rows,
    intensity_head,
    intensity_at,
    predict_at,
    forecast_head,
    predict_next_event_time,
    predict_next_event_type,
    prefix,
    split_index,
    tpp_nll,
)
from .numerics import make_rng
from .params import GruweParams

REPORT_VERSION = 1

EVAL_REPORT_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "task", "n_sequences", "metrics"],
    "properties": {
        "format": {"const": "gruwe-eval-report"},
        "version": {"const": REPORT_VERSION},
        "task": {"enum": ["forecast", "tpp"]},
        "n_sequences": {"type": "integer", "minimum": 0},
        "metrics": {
            "oneOf": [
                {
                    "type": "object",
                    "required": ["mse", "mae", "n_targets"],
                    "properties": {
                        "mse": {"type": "number", "minimum": 0},
                        "mae": {"type": "number", "minimum": 0},
                        "n_targets": {"type": "integer", "minimum": 1},
                    },
                    "additionalProperties": False,
                },
                {
                    "type": "object",
                    "required": ["rmse_time", "error_rate", "mean_ll", "n_events"],
                    "properties": {
                        "rmse_time": {"type": "number", "minimum": 0},
                        "error_rate": {"type": "number", "minimum": 0, "maximum": 1},
                        "mean_ll": {"type": "number"},
                        "n_events": {"type": "integer", "minimum": 0},
                    },
                    "additionalProperties": False,
                },
            ]
        },
    },
}

_LATENCY = {
    "type": "object",
    "required": ["start_step", "end_step", "median_ns", "mean_ns", "p90_ns", "count"],
}

BENCH_REPORT_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "n_updates", "n_predictions", "predict_every", "warmup",
                 "state_bytes", "state_bytes_constant", "params_unchanged", "update_deciles",
                 "predict_deciles"],
    "properties": {
        "format": {"const": "gruwe-bench-online"},
        "version": {"const": REPORT_VERSION},
        "n_updates": {"type": "integer", "minimum": 1},
        "n_predictions": {"type": "integer", "minimum": 0},
        "state_bytes": {"type": "integer", "minimum": 1},
        "state_bytes_constant": {"type": "boolean"},
        "params_unchanged": {"type": "boolean"},
        "update_deciles": {"type": "array", "items": _LATENCY},
        "predict_deciles": {"type": "array", "items": _LATENCY},
    },
}


@dataclass
class ForecastMetrics:
    mse: float
    mae: float
    n_targets: int


@dataclass
class EventMetrics:
    rmse_time: float
    error_rate: float
    mean_ll: float
    n_events: int


def forecast_points(params: GruweParams, collection, observe_fraction=0.5):
    """Per-sequence predictions for every held-out step.

    Yields ``(seq_index, times, predictions, targets, masks)``.
    """
    W, b = params.value("W_out"), params.value("b_out")
    for i, seq in enumerate(collection):
        n_obs = split_index(seq.times, observe_fraction)
        states, _ = forward_sequence(prefix(seq, n_obs), params)
        rows = forecast_rows(seq, n_obs)
        if rows.horizons.size == 0:
            continue
        hs = np.repeat(states[-1].h[None, :], rows.horizons.size, axis=0)
        _, _, out = _decode(hs, rows.horizons[:, None], params.decay, W, b)
        yield i, seq.times[n_obs:], out[:, 0, :], rows.targets, rows.masks


def eval_forecast(params: GruweParams, collection, observe_fraction=0.5) -> ForecastMetrics:
    """MSE and MAE pooled over every observed held-out entry of every sequence."""
    sq = ab = n = 0.0
    for _, _, pred, tgt, mask in forecast_points(params, collection, observe_fraction):
        resid = np.where(mask > 0, pred - tgt, 0.0)
        sq += float(np.sum(resid * resid))
        ab += float(np.sum(np.abs(resid)))
        n += float(mask.sum())
    if n == 0:
        raise DataError("no observed targets to evaluate")
    return ForecastMetrics(sq / n, ab / n, int(n))


def event_points(params: GruweParams, collection, t_max_horizon, grid_size=500):
    """Per-event next-time and next-type predictions.

    Yields ``(seq_index, event_index, true_gap, predicted_gap, true_type, predicted_type)``.
    """
    for i, seq in enumerate(collection):
        states, _ = event_states(seq, params)
        gaps = np.diff(np.concatenate([[0.0], seq.times]))
        for j in range(len(seq)):
            st = states[j]
            yield (i, j, float(gaps[j]),
                   predict_next_event_time(st, params, t_max_horizon, grid_size),
                   int(seq.types[j]),
                   predict_next_event_type(st, params, gaps[j]))


def eval_events(params: GruweParams, collection, t_max_horizon, grid_size=500, mc_samples=20,
                eval_seed=0) -> EventMetrics:
    """Next-event RMSE, type error rate and mean log-likelihood per sequence.

    The log-likelihood uses Monte Carlo compensators with streams fixed by
    ``eval_seed`` and the sequence index.
    """
    if not collection:
        raise DataError("empty test set")
    sq, wrong, n = 0.0, 0, 0
    for _, _, gap, pred_gap, typ, pred_typ in event_points(params, collection, t_max_horizon, grid_size):
        sq += (pred_gap - gap) ** 2
        wrong += int(pred_typ != typ)
        n += 1
    ll = 0.0
    for i, seq in enumerate(collection):
        nll, _, _ = tpp_nll(seq, params, mc_samples, rng=make_rng(eval_seed, 4, i), compute_grad=False)
        ll -= nll
    return EventMetrics(
        float(np.sqrt(sq / n)) if n else 0.0,
        wrong / n if n else 0.0,
        ll / len(collection),
        n,
    )


def metrics_report(task, metrics, n_sequences) -> dict:
    return {
        "format": "gruwe-eval-report",
        "version": REPORT_VERSION,
        "task": task,
        "n_sequences": n_sequences,
        "metrics": asdict(metrics),
    }


def write_json(path, doc):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


def write_points_csv(path, params, collection, task, observe_fraction=0.5, t_max_horizon=None, grid_size=500):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        if task == "forecast":
            w.writerow(["sequence", "time", "variable", "target", "prediction"])
            for i, times, pred, tgt, mask in forecast_points(params, collection, observe_fraction):
                for r, t in enumerate(times):
                    for v in np.flatnonzero(mask[r]):
                        w.writerow([i, repr(float(t)), int(v), repr(float(tgt[r, v])), repr(float(pred[r, v]))])
        else:
            w.writerow(["sequence", "event", "true_gap", "predicted_gap", "true_type", "predicted_type"])
            for row in event_points(params, collection, t_max_horizon, grid_size):
                w.writerow([row[0], row[1], repr(row[2]), repr(row[3]), row[4], row[5]])


# -- online benchmark --------------------------------------------------------

def _decile_stats(samples, offsets):
    samples = np.asarray(samples, dtype=np.float64)
    offsets = np.asarray(offsets)
    out = []
    for chunk, idx in zip(np.array_split(samples, 10), np.array_split(offsets, 10)):
        if chunk.size == 0:
            continue
        out.append({
            "start_step": int(idx[0]),
            "end_step": int(idx[-1]),
            "count": int(chunk.size),
            "median_ns": float(np.median(chunk)),
            "mean_ns": float(np.mean(chunk)),
            "p90_ns": float(np.percentile(chunk, 90)),
        })
    return out


def bench_online(params: GruweParams, stream, predict_every: int = 10, warmup: int = 100,
                 horizon: float = 1.0) -> dict:
    """Feed ``stream`` (an iterable of :class:`~gruwe.cell.StepInput`) one
    step at a time, timing each update and each periodic prediction.

    Latencies come from a monotonic nanosecond clock; the first ``warmup``
    updates are not recorded. The state footprint is checked after every
    update.
    """
    if predict_every < 1:
        raise ValueError("predict_every must be >= 1")
    checksum = params.checksum()
    state = MarkovState.initial(params.hidden_dim)
    nbytes = state.nbytes
    constant = True
    upd, upd_at, prd, prd_at = [], [], [], []
    decay = params.decay
    head = forecast_head(params) if params.task == "forecast" else intensity_head(params)
    predict = predict_at if params.task == "forecast" else intensity_at
    clock = time.perf_counter_ns
    n = 0
    for n, inp in enumerate(stream, start=1):
        t0 = clock()
        state, _ = step(state, inp, params)
        t1 = clock()
        if state.nbytes != nbytes:
            constant = False
        if n > warmup:
            upd.append(t1 - t0)
            upd_at.append(n)
        if n % predict_every == 0:
            t0 = clock()
            predict(state, horizon, decay, head)
            t1 = clock()
            if n > warmup:
                prd.append(t1 - t0)
                prd_at.append(n)
    if n <= warmup:
        raise ValueError(f"stream of {n} steps is not longer than the warm-up ({warmup})")
    return {
        "format": "gruwe-bench-online",
        "version": REPORT_VERSION,
        "task": params.task,
        "n_updates": n,
        "n_predictions": n // predict_every,
        "predict_every": predict_every,
        "warmup": warmup,
        "state_bytes": nbytes,
        "state_bytes_constant": constant,
        "params_unchanged": params.checksum() == checksum,
        "update_deciles": _decile_stats(upd, upd_at),
        "predict_deciles": _decile_stats(prd, prd_at),
    }


def synthetic_stream(params: GruweParams, n_steps: int, seed: int = 0, p_miss: float = 0.3, rate: float = 1.0):
    """Random step inputs matching the model's input layout."""
    from .cell import StepInput

    rng = make_rng(seed, 5)
    D = params.input_dim
    eye = np.eye(D)
    ones = np.ones(D)
    for _ in range(n_steps):
        dt = float(rng.exponential(1.0 / rate))
        if params.task == "tpp":
            yield StepInput(eye[int(rng.integers(D))], ones, dt)
        else:
            m = (rng.random(D) >= p_miss).astype(np.float64)
            yield StepInput(rng.normal(size=D) * m, m, dt)
