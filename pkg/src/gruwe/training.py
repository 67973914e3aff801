"""Optimization: Adam with per-epoch exponential learning-rate decay and
global-norm gradient clipping, epoch loop with validation-based selection,
and checkpoint files."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .errors import CheckpointError, ConfigError, TrainingError
from .heads import forecast_loss, tpp_nll
from .numerics import Parameter, make_rng
from .params import GruweParams, expected_shapes

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "gruwe-checkpoint"
CHECKPOINT_VERSION = 1


def clip_global_norm(grads, max_norm: float) -> float:
    """Scale gradients in place so their joint l2 norm is at most ``max_norm``.

    ``grads`` is a dict name -> array (or a :class:`GruweParams`). Returns the
    factor applied.
    """
    if not max_norm > 0:
        raise ConfigError(f"max_norm must be positive, got {max_norm}")
    if isinstance(grads, GruweParams):
        grads = grads.grads()
    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise TrainingError(f"non-finite gradients in: {', '.join(bad)}")
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm <= max_norm:
        return 1.0
    factor = max_norm / norm
    for g in grads.values():
        g *= factor
    return factor


@dataclass
class OptimizerState:
    lr: float
    lr_decay: float = 0.99
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    epoch: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @property
    def current_lr(self) -> float:
        return self.lr * self.lr_decay ** self.epoch


def adam_step(params: GruweParams, opt: OptimizerState):
    """One bias-corrected Adam update at the current epoch's learning rate."""
    bad = [p.name for p in params if not np.all(np.isfinite(p.grad))]
    if bad:
        raise TrainingError(f"non-finite gradients in: {', '.join(bad)}")
    opt.step += 1
    lr = opt.current_lr
    c1 = 1.0 - opt.beta1 ** opt.step
    c2 = 1.0 - opt.beta2 ** opt.step
    for name, p in params.params.items():
        m = opt.m.setdefault(name, np.zeros_like(p.value))
        v = opt.v.setdefault(name, np.zeros_like(p.value))
        m *= opt.beta1
        m += (1.0 - opt.beta1) * p.grad
        v *= opt.beta2
        v += (1.0 - opt.beta2) * p.grad * p.grad
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return params


# -- losses ------------------------------------------------------------------

def sequence_loss(seq, params: GruweParams, config: TrainConfig, rng=None, compute_grad=True):
    """Task loss of one sequence: ``(loss, grads, n_targets)``.

    ``n_targets`` counts observed forecast targets, or events for TPP.
    """
    if params.task == "forecast":
        return forecast_loss(seq, params, config.observe_fraction, config.prefix_loss, compute_grad)
    nll, grads, _ = tpp_nll(seq, params, config.mc_samples, rng=rng, compute_grad=compute_grad)
    return nll, grads, len(seq)


def validation_metric(collection, params: GruweParams, config: TrainConfig) -> float:
    """Pooled masked MSE (forecast) or mean NLL per sequence (TPP)."""
    if params.task == "forecast":
        num = den = 0.0
        for seq in collection:
            loss, _, n = forecast_loss(seq, params, config.observe_fraction, False, compute_grad=False)
            num += loss * n
            den += n
        return num / den if den else float("nan")
    total = 0.0
    for i, seq in enumerate(collection):
        nll, _, _ = tpp_nll(seq, params, config.mc_samples, rng=make_rng(config.eval_seed, 4, i), compute_grad=False)
        total += nll
    return total / len(collection) if collection else float("nan")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_metric: float
    seconds: float
    skipped: int


@dataclass
class TrainReport:
    task: str
    metric: str
    epochs: list = field(default_factory=list)
    selected_epoch: int = -1

    def to_dict(self, include_timing=True) -> dict:
        rows = []
        for e in self.epochs:
            row = dict(vars(e))
            if not include_timing:
                row.pop("seconds")
            rows.append(row)
        return {
            "format": "gruwe-train-report",
            "version": 1,
            "task": self.task,
            "metric": self.metric,
            "selected_epoch": self.selected_epoch,
            "epochs": rows,
        }


def _fresh_grads(params):
    return {n: np.zeros_like(p.value) for n, p in params.params.items()}


def train(train_set, val_set, config: TrainConfig, params: GruweParams | None = None):
    """Fit a model; returns ``(best_params, report)``.

    Each epoch visits the training sequences in a seeded shuffled order in
    mini-batches of ``config.batch_size`` (gradients averaged), clips, and
    takes an Adam step. The checkpoint with the lowest validation metric is
    kept (training loss when there is no validation data).
    """
    if not train_set:
        raise ConfigError("training set is empty")
    if params is None:
        params = init_params(train_set, config)
    opt = OptimizerState(config.lr, config.lr_decay, config.clip_norm)
    metric = "mse" if params.task == "forecast" else "nll"
    report = TrainReport(params.task, metric)
    best, best_val = params.copy(), float("inf")
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for epoch in range(config.epochs):
            opt.epoch = epoch
            t0 = time.perf_counter()
            order = make_rng(config.seed, 3, epoch).permutation(len(train_set))
            losses, skipped = [], 0

            def work(idx):
                rng = make_rng(config.seed, 2, epoch, int(idx))
                return sequence_loss(train_set[idx], params, config, rng)

            for start in range(0, len(order), config.batch_size):
                batch = order[start:start + config.batch_size]
                results = list(pool.map(work, batch)) if pool else [work(i) for i in batch]
                acc = _fresh_grads(params)
                for idx, (loss, grads, n) in zip(batch, results):
                    if not np.isfinite(loss):
                        raise TrainingError(f"non-finite loss at epoch {epoch}, sequence {int(idx)}")
                    if n == 0:
                        skipped += 1
                    losses.append(loss)
                    for name in acc:
                        acc[name] += grads[name]
                for name, g in acc.items():
                    params[name].grad[...] = g / len(batch)
                clip_global_norm(params, config.clip_norm)
                adam_step(params, opt)
            if skipped:
                log.info("epoch %d: %d sequences had no observed targets", epoch, skipped)
            train_loss = float(np.mean(losses))
            val = validation_metric(val_set, params, config) if val_set else train_loss
            if not np.isfinite(val):
                raise TrainingError(f"non-finite validation metric at epoch {epoch}")
            report.epochs.append(EpochRecord(epoch, opt.current_lr, train_loss, float(val),
                                             time.perf_counter() - t0, skipped))
            log.info("epoch %d lr %.5g train %.6g val %.6g", epoch, opt.current_lr, train_loss, val)
            if val < best_val:
                best_val = val
                best = params.copy()
                report.selected_epoch = epoch
    finally:
        if pool:
            pool.shutdown()
    return best, report


def init_params(train_set, config: TrainConfig) -> GruweParams:
    if config.task == "forecast":
        D = config.input_dim or train_set[0].dim
        P = config.output_dim or D
        if P != D:
            raise ConfigError("forecasting predicts every input variable: output_dim must equal input_dim")
        return GruweParams.init("forecast", D, config.hidden_dim, P, config.seed)
    K = config.num_types or (max((int(s.types.max()) for s in train_set if len(s)), default=0) + 1)
    return GruweParams.init("tpp", K, config.hidden_dim, K, config.seed)


# -- checkpoints -------------------------------------------------------------

def _encode(arr: np.ndarray) -> str:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes().hex()


def _decode(hexstr: str, shape) -> np.ndarray:
    raw = bytes.fromhex(hexstr)
    n = int(np.prod(shape)) if shape else 1
    if len(raw) != 8 * n:
        raise CheckpointError(f"payload has {len(raw)} bytes, expected {8 * n}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def save_checkpoint(path, params: GruweParams, meta: dict | None = None):
    """Write parameters as hex-encoded little-endian float64 in a JSON file."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "task": params.task,
        "dims": {"D": params.input_dim, "H": params.hidden_dim, "out": params.output_dim},
        "meta": meta or {},
        "params": {n: {"shape": list(p.shape), "data": _encode(p.value)} for n, p in params.params.items()},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path, expect: dict | None = None):
    """Read a checkpoint. Returns ``(params, meta)``.

    ``expect`` may pin ``task`` and any of the dims ``D``, ``H``, ``out``;
    a mismatch raises :class:`CheckpointError`.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is not UTF-8 text") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is truncated or corrupt: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        task = doc["task"]
        dims = doc["dims"]
        D, H, out = int(dims["D"]), int(dims["H"]), int(dims["out"])
        shapes = expected_shapes(task, D, H, out)
        raw = doc["params"]
        if set(raw) != set(shapes):
            raise CheckpointError("checkpoint parameter names do not match its task")
        values = {}
        for name, shape in shapes.items():
            entry = raw[name]
            if tuple(entry["shape"]) != shape:
                raise CheckpointError(f"{name}: stored shape {entry['shape']} != {list(shape)}")
            values[name] = Parameter(name, _decode(entry["data"], shape))
        params = GruweParams(task, D, H, out, values)
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} is malformed: {exc}") from exc
    if expect:
        have = {"task": task, "D": D, "H": H, "out": out}
        for key, want in expect.items():
            if want is not None and have[key] != want:
                raise CheckpointError(f"checkpoint {key}={have[key]!r} but config expects {want!r}")
    meta = doc.get("meta", {})
    return params, meta
