"""Sequence containers, JSONL ingestion and synthetic generators.

File formats (one JSON object per line, optional header line first)::

    {"format": "gruwe-series", "version": 1}
    {"times": [0.0, 1.5], "values": [[1.0, 0.0], [0.0, 2.0]], "mask": [[1, 0], [0, 1]]}

    {"format": "gruwe-events", "version": 1}
    {"times": [0.5, 1.5], "types": [0, 0], "t_max": 2.0}

``mask`` is optional (absent means fully observed). Unobserved values may be
any number or ``null`` and are stored as 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

SERIES_FORMAT = "gruwe-series"
EVENTS_FORMAT = "gruwe-events"
FORMAT_VERSION = 1
MAX_REPORTED_ERRORS = 10


@dataclass
class IrregularSeries:
    times: np.ndarray
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != self.times.size:
            values = values.reshape(self.times.size, -1)
        self.values = values
        self.mask = np.asarray(self.mask, dtype=np.float64).reshape(self.values.shape)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise DataError("times must be strictly increasing")
        if not np.all(np.isin(self.mask, (0.0, 1.0))):
            raise DataError("mask entries must be 0 or 1")
        self.values = np.where(self.mask > 0, self.values, 0.0)
        if not np.all(np.isfinite(self.values)):
            raise DataError("observed values must be finite")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.times.size


@dataclass
class EventSequence:
    times: np.ndarray
    types: np.ndarray
    t_max: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.types = np.asarray(self.types, dtype=np.int64)
        self.t_max = float(self.t_max)
        if not (math.isfinite(self.t_max) and self.t_max > 0):
            raise DataError("t_max must be positive and finite")
        if self.times.shape != self.types.shape:
            raise DataError("times and types differ in length")
        if self.times.size:
            if np.any(np.diff(self.times) <= 0):
                raise DataError("event times must be strictly increasing")
            if self.times[0] < 0 or self.times[-1] > self.t_max:
                raise DataError("event times must lie in [0, t_max]")
            if self.types.min() < 0:
                raise DataError("event types must be non-negative")

    def __len__(self):
        return self.times.size


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    seed: int

    def select(self, collection, part):
        return [collection[i] for i in getattr(self, part)]


@dataclass
class Standardization:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, collection) -> "Standardization":
        """Per-variable z-score statistics over observed entries."""
        vals = np.concatenate([s.values for s in collection])
        mask = np.concatenate([s.mask for s in collection])
        count = mask.sum(axis=0)
        safe = np.maximum(count, 1.0)
        mean = (vals * mask).sum(axis=0) / safe
        var = (((vals - mean) * mask) ** 2).sum(axis=0) / safe
        std = np.sqrt(var)
        std = np.where((count > 0) & (std > 0), std, 1.0)
        return cls(np.where(count > 0, mean, 0.0), std)

    def apply(self, seq: IrregularSeries) -> IrregularSeries:
        return IrregularSeries(seq.times, (seq.values - self.mean) / self.std * seq.mask, seq.mask)

    def invert(self, values):
        return np.asarray(values) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


# -- JSONL parsing -----------------------------------------------------------

def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _number_list(v, what):
    if not isinstance(v, list) or not all(_is_number(x) for x in v):
        raise DataError(f"{what} must be a list of numbers")
    arr = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{what} must be finite")
    return arr


def _check_times(times):
    if times.size > 1 and np.any(np.diff(times) <= 0):
        bad = int(np.argmax(np.diff(times) <= 0)) + 1
        raise DataError(f"times not strictly increasing at index {bad}")


def _parse_series(rec, dim):
    if set(rec) - {"times", "values", "mask"}:
        raise DataError(f"unknown fields {sorted(set(rec) - {'times', 'values', 'mask'})}")
    if "times" not in rec or "values" not in rec:
        raise DataError("record needs 'times' and 'values'")
    times = _number_list(rec["times"], "times")
    if times.size == 0:
        raise DataError("series has no observations")
    _check_times(times)
    rows = rec["values"]
    if not isinstance(rows, list) or len(rows) != times.size:
        raise DataError("'values' must have one row per timestamp")
    if not all(isinstance(r, list) for r in rows):
        raise DataError("'values' rows must be lists")
    width = len(rows[0])
    if width == 0 or any(len(r) != width for r in rows):
        raise DataError("ragged or empty 'values' rows")
    if dim is not None and width != dim:
        raise DataError(f"dimension {width} differs from earlier records ({dim})")
    if "mask" in rec:
        mrows = rec["mask"]
        if (not isinstance(mrows, list) or len(mrows) != len(rows)
                or not all(isinstance(r, list) and len(r) == width for r in mrows)):
            raise DataError("'mask' shape differs from 'values'")
        for r in mrows:
            for v in r:
                if not _is_number(v) and not isinstance(v, bool):
                    raise DataError("mask entries must be 0 or 1")
                if v not in (0, 1):
                    raise DataError("mask entries must be 0 or 1")
        mask = np.asarray(mrows, dtype=np.float64)
    else:
        mask = np.ones((len(rows), width))
    values = np.zeros((len(rows), width))
    for i, r in enumerate(rows):
        for j, v in enumerate(r):
            if mask[i, j]:
                if not _is_number(v) or not math.isfinite(v):
                    raise DataError(f"observed value at [{i}][{j}] must be a finite number")
                values[i, j] = v
            elif v is not None and not _is_number(v):
                raise DataError(f"value at [{i}][{j}] must be a number or null")
    return IrregularSeries(times, values, mask)


def _parse_events(rec):
    if set(rec) - {"times", "types", "t_max"}:
        raise DataError(f"unknown fields {sorted(set(rec) - {'times', 'types', 't_max'})}")
    for key in ("times", "types", "t_max"):
        if key not in rec:
            raise DataError(f"record needs '{key}'")
    times = _number_list(rec["times"], "times")
    types = rec["types"]
    if not isinstance(types, list) or not all(isinstance(k, int) and not isinstance(k, bool) for k in types):
        raise DataError("types must be a list of integers")
    if len(types) != times.size:
        raise DataError("times and types differ in length")
    if any(k < 0 for k in types):
        raise DataError("event types must be non-negative")
    t_max = rec["t_max"]
    if not _is_number(t_max) or not math.isfinite(t_max) or t_max <= 0:
        raise DataError("t_max must be a positive finite number")
    _check_times(times)
    if times.size and (times[0] < 0 or times[-1] > t_max):
        raise DataError("event times must lie in [0, t_max]")
    return EventSequence(times, np.asarray(types, dtype=np.int64), t_max)


def _read_jsonl(path, fmt, parse):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc.reason} at byte {exc.start})") from exc
    out, errors = [], []
    first = True
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            try:
                rec = json.loads(line)
            except (json.JSONDecodeError, RecursionError) as exc:
                raise DataError(f"invalid JSON ({exc.msg if hasattr(exc, 'msg') else 'too deeply nested'})")
            if not isinstance(rec, dict):
                raise DataError("record must be a JSON object")
            if first and "format" in rec:
                if rec.get("format") != fmt:
                    raise DataError(f"expected format {fmt!r}, got {rec.get('format')!r}")
                if rec.get("version") != FORMAT_VERSION:
                    raise DataError(f"unsupported {fmt} version {rec.get('version')!r}")
                first = False
                continue
            first = False
            out.append(parse(rec))
        except DataError as exc:
            errors.append(f"{path}:{lineno}: {exc}")
        except (ValueError, TypeError, OverflowError) as exc:
            errors.append(f"{path}:{lineno}: malformed record ({exc})")
    if errors:
        shown = errors[:MAX_REPORTED_ERRORS]
        more = f" (+{len(errors) - len(shown)} more)" if len(errors) > len(shown) else ""
        raise DataError("; ".join(shown) + more)
    return out


def load_series_jsonl(path) -> list[IrregularSeries]:
    dim = [None]

    def parse(rec):
        s = _parse_series(rec, dim[0])
        dim[0] = s.dim
        return s

    return _read_jsonl(path, SERIES_FORMAT, parse)


def load_events_jsonl(path) -> list[EventSequence]:
    return _read_jsonl(path, EVENTS_FORMAT, _parse_events)


def check_event_types(collection, num_types: int):
    for i, seq in enumerate(collection):
        if len(seq) and int(seq.types.max()) >= num_types:
            raise DataError(f"sequence {i}: event type {int(seq.types.max())} >= K={num_types}")


def _write_jsonl(path, fmt, records):
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"format": fmt, "version": FORMAT_VERSION}) + "\n")
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def write_series_jsonl(path, collection):
    _write_jsonl(path, SERIES_FORMAT, (
        {"times": s.times.tolist(), "values": s.values.tolist(), "mask": s.mask.astype(int).tolist()}
        for s in collection
    ))


def write_events_jsonl(path, collection):
    _write_jsonl(path, EVENTS_FORMAT, (
        {"times": s.times.tolist(), "types": s.types.tolist(), "t_max": s.t_max} for s in collection
    ))


# -- splits ------------------------------------------------------------------

def split(collection, ratios=(0.8, 0.1, 0.1), seed=0) -> DatasetSplit:
    """Shuffled train/validation/test partition; rounding leftovers go to train."""
    from .numerics import make_rng

    n = collection if isinstance(collection, int) else len(collection)
    r = np.asarray(ratios, dtype=np.float64)
    if r.shape != (3,) or np.any(r < 0) or not np.all(np.isfinite(r)) or r.sum() <= 0:
        raise ConfigError(f"split ratios must be three non-negative numbers, got {ratios}")
    r = r / r.sum()
    perm = make_rng(seed, 1).permutation(n)
    n_val = int(math.floor(r[1] * n))
    n_test = int(math.floor(r[2] * n))
    n_train = n - n_val - n_test
    return DatasetSplit(
        sorted(perm[:n_train].tolist()),
        sorted(perm[n_train:n_train + n_val].tolist()),
        sorted(perm[n_train + n_val:].tolist()),
        seed,
    )


# -- generators --------------------------------------------------------------

def _poisson_times(rng, rate, t_max):
    times = []
    t = 0.0
    while True:
        nxt = t + rng.exponential(1.0 / rate)
        if nxt == t:
            continue  # float collision: redraw
        if nxt > t_max:
            return np.asarray(times)
        times.append(nxt)
        t = nxt


@dataclass
class DecayTruth:
    amplitude: np.ndarray
    kappa: np.ndarray
    omega: np.ndarray
    phase: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)[..., None]
        return self.amplitude * np.exp(-self.kappa * t) * np.sin(self.omega * t + self.phase)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("amplitude", "kappa", "omega", "phase")}


def gen_decay_process(rng, n_seq, dim=3, rate=3.0, t_max=10.0, p_miss=0.3,
                      kappa=(0.05, 0.2), omega=(0.1, 0.3), amplitude=(0.5, 2.0)):
    """Damped sinusoids observed at Poisson times with random missingness.

    Variable i of each sequence follows ``a_i exp(-kappa_i t) sin(omega_i t + phi_i)``
    with parameters drawn uniformly from the given ranges (phase from
    [0, 2 pi), amplitude sign random). Returns ``(collection, truths)``.
    """
    if n_seq < 0 or dim < 1:
        raise ConfigError("need n_seq >= 0 and dim >= 1")
    if not rate > 0 or not t_max > 0:
        raise ConfigError("rate and t_max must be positive")
    if not 0.0 <= p_miss < 1.0:
        raise ConfigError("p_miss must be in [0, 1)")
    for name, rng_ in (("kappa", kappa), ("omega", omega), ("amplitude", amplitude)):
        lo, hi = rng_
        if lo > hi:
            raise ConfigError(f"{name} range is empty")
    if kappa[0] < 0:
        raise ConfigError("kappa must be non-negative")
    out, truths = [], []
    while len(out) < n_seq:
        times = _poisson_times(rng, rate, t_max)
        truth = DecayTruth(
            rng.uniform(*amplitude, dim) * rng.choice([-1.0, 1.0], dim),
            rng.uniform(*kappa, dim),
            rng.uniform(*omega, dim),
            rng.uniform(0.0, 2 * np.pi, dim),
        )
        if times.size == 0:
            continue
        mask = (rng.random((times.size, dim)) >= p_miss).astype(np.float64)
        out.append(IrregularSeries(times, truth(times) * mask, mask))
        truths.append(truth)
    return out, truths


def poisson_ll(seq: EventSequence, rate, num_types=1) -> float:
    """Log-likelihood under independent homogeneous Poisson processes.

    ``rate`` is the total rate (split evenly across types) or a per-type array.
    """
    rates = np.broadcast_to(np.asarray(rate, dtype=np.float64) / (num_types if np.ndim(rate) == 0 else 1), (num_types,))
    return float(np.sum(np.log(rates[seq.types])) - rates.sum() * seq.t_max)


def gen_poisson_events(rng, n_seq, lambda_star, t_max, num_types=1):
    """Homogeneous Poisson sequences with uniform marks.

    Returns ``(collection, oracle_ll)`` where ``oracle_ll[i]`` is the exact
    log-likelihood of sequence i under the generator.
    """
    if not lambda_star > 0 or not t_max > 0:
        raise ConfigError("lambda_star and t_max must be positive")
    if num_types < 1:
        raise ConfigError("num_types must be >= 1")
    out, lls = [], []
    for _ in range(n_seq):
        times = _poisson_times(rng, lambda_star, t_max)
        types = rng.integers(0, num_types, times.size)
        seq = EventSequence(times, types, t_max)
        out.append(seq)
        lls.append(poisson_ll(seq, lambda_star, num_types))
    return out, lls


def hawkes_ll(seq: EventSequence, mu, alpha, beta, num_types=1) -> float:
    """Exact log-likelihood of an exponential-kernel Hawkes process where each
    type excites only itself: ``lambda_k(t) = mu + alpha sum_{t_i<t, k_i=k} exp(-beta (t - t_i))``."""
    excite = np.zeros(num_types)
    last = 0.0
    ll = 0.0
    for t, k in zip(seq.times, seq.types):
        excite *= np.exp(-beta * (t - last))
        ll += math.log(mu + excite[k])
        excite[k] += alpha
        last = t
    comp = num_types * mu * seq.t_max
    comp += alpha / beta * float(np.sum(1.0 - np.exp(-beta * (seq.t_max - seq.times))))
    return ll - comp


def gen_hawkes_events(rng, n_seq, mu, alpha, beta, t_max, num_types=1):
    """Self-exciting sequences by Ogata thinning.

    Between events every intensity decays, so the current total intensity
    bounds it until the next candidate. Returns ``(collection, oracle_ll)``.
    """
    if not (mu > 0 and beta > 0 and alpha >= 0 and t_max > 0):
        raise ConfigError("need mu > 0, beta > 0, alpha >= 0, t_max > 0")
    if alpha / beta >= 1:
        raise ConfigError(f"unstable Hawkes process: alpha/beta = {alpha / beta:.3g} >= 1")
    if num_types < 1:
        raise ConfigError("num_types must be >= 1")
    out, lls = [], []
    for _ in range(n_seq):
        excite = np.zeros(num_types)
        t = 0.0
        times, types = [], []
        while True:
            bound = num_types * mu + excite.sum()
            w = rng.exponential(1.0 / bound)
            if w == 0.0:
                continue
            t_new = t + w
            if t_new > t_max:
                break
            excite *= np.exp(-beta * w)
            t = t_new
            lam = mu + excite
            u = rng.random() * bound
            if u <= lam.sum():
                k = int(min(np.searchsorted(np.cumsum(lam), u, side="right"), num_types - 1))
                times.append(t)
                types.append(k)
                excite[k] += alpha
        seq = EventSequence(np.asarray(times), np.asarray(types, dtype=np.int64), t_max)
        out.append(seq)
        lls.append(hawkes_ll(seq, mu, alpha, beta, num_types))
    return out, lls


def poisson_mle_rates(collection, num_types=1) -> np.ndarray:
    """Per-type homogeneous Poisson rates fitted by maximum likelihood."""
    counts = np.zeros(num_types)
    exposure = 0.0
    for seq in collection:
        counts += np.bincount(seq.types, minlength=num_types)[:num_types]
        exposure += seq.t_max
    if exposure <= 0 or counts.sum() == 0:
        raise DataError("cannot fit a Poisson rate to an empty collection")
    return np.maximum(counts, 1e-300) / exposure


def mean_interarrival(collection) -> float:
    gaps = [np.diff(np.concatenate([[0.0], s.times])) for s in collection if len(s)]
    if not gaps:
        raise DataError("no events to measure inter-arrival times")
    return float(np.mean(np.concatenate(gaps)))
