"""Command-line entry point.

    gruwe {train|eval|predict|synth|inspect|bench-online} [--config PATH] [--set key=value]...

Exit codes: 0 ok, 2 configuration, 3 data, 4 training/numerical, 5 internal.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from . import data as gdata
from .cell import StepInput, forward_sequence
from .config import TrainConfig, load_config, parse_override
from .decay import classify_regimes, lipschitz_constant
from .errors import ConfigError, DataError, GruweError
from .eval import (
    bench_online,
    eval_events,
    eval_forecast,
    metrics_report,
    synthetic_stream,
    write_json,
    write_points_csv,
)
from .heads import event_states, forecast_head, intensity_at, intensity_head, predict_at
from .numerics import make_rng
from .training import load_checkpoint, save_checkpoint, train



def _load_collection(task, path):
    if path is None:
        raise DataError("no data path given")
    if task == "forecast":
        return gdata.load_series_jsonl(path)
    return gdata.load_events_jsonl(path)


def _split_parts(collection, cfg: TrainConfig):
    sp = gdata.split(collection, cfg.split_ratios, cfg.effective_split_seed)
    return {p: sp.select(collection, p) for p in ("train", "validation", "test")}


def _stored_config(meta, task, overrides=()) -> TrainConfig:
    base = dict(meta.get("config") or {"task": task})
    extra = {}
    for item in overrides:
        k, v = parse_override(item)
        extra[k] = v
    return TrainConfig.from_dict({**base, **extra})


def _check_forecast_dim(collection, params):
    for i, s in enumerate(collection):
        if s.dim != params.input_dim:
            raise DataError(f"sequence {i} has {s.dim} variables, model expects {params.input_dim}")


# -- commands ----------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    collection = _load_collection(cfg.task, cfg.data_path)
    if not collection:
        raise ConfigError(f"no sequences in {cfg.data_path}")
    if cfg.task == "tpp":
        K = cfg.num_types or int(max((int(s.types.max()) for s in collection if len(s)), default=0)) + 1
        gdata.check_event_types(collection, K)
        cfg.num_types = K
    elif cfg.input_dim is not None and collection[0].dim != cfg.input_dim:
        raise DataError(f"data has {collection[0].dim} variables but input_dim is {cfg.input_dim}")
    meta = {"config": cfg.to_dict()}
    parts = _split_parts(collection, cfg)
    tr, va = parts["train"], parts["validation"]
    if not tr:
        raise ConfigError("training split is empty")
    if cfg.task == "forecast" and cfg.standardize:
        stats = gdata.Standardization.fit(tr)
        tr = [stats.apply(s) for s in tr]
        va = [stats.apply(s) for s in va]
        meta["standardization"] = stats.to_dict()
    if cfg.task == "tpp":
        meta["mean_interarrival"] = gdata.mean_interarrival(tr)
    best, report = train(tr, va, cfg)
    meta["selected_epoch"] = report.selected_epoch
    save_checkpoint(cfg.checkpoint_path, best, meta)
    write_json(cfg.report_path, report.to_dict())
    print(f"trained {cfg.task} model: {len(tr)} train / {len(va)} validation sequences, "
          f"selected epoch {report.selected_epoch} ({report.metric} "
          f"{report.epochs[report.selected_epoch].val_metric:.6g})")
    print(f"checkpoint: {cfg.checkpoint_path}\nreport: {cfg.report_path}")
    return 0


def _prepare_eval(args):
    params, meta = load_checkpoint(args.checkpoint)
    if args.task is not None and args.task != params.task:
        raise ConfigError(f"checkpoint is a {params.task} model, not {args.task}")
    overrides = list(args.set)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as f:
                extra = json.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror or exc}") from exc
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(extra, dict):
            raise ConfigError("config must be a JSON object")
        overrides = [f"{k}={json.dumps(v)}" for k, v in extra.items()] + overrides
    cfg = _stored_config(meta, params.task, overrides)
    if cfg.task != params.task:
        raise ConfigError(f"config task {cfg.task} does not match checkpoint task {params.task}")
    return params, meta, cfg


def cmd_eval(args) -> int:
    params, meta, cfg = _prepare_eval(args)
    collection = _load_collection(params.task, args.data)
    if args.split != "all":
        collection = _split_parts(collection, cfg)[args.split]
    if not collection:
        raise DataError("no sequences to evaluate")
    if params.task == "forecast":
        _check_forecast_dim(collection, params)
        if meta.get("standardization"):
            stats = gdata.Standardization.from_dict(meta["standardization"])
            collection = [stats.apply(s) for s in collection]
        metrics = eval_forecast(params, collection, cfg.observe_fraction)
        hmax = None
    else:
        gdata.check_event_types(collection, params.num_types)
        mean_gap = meta.get("mean_interarrival") or gdata.mean_interarrival(collection)
        hmax = cfg.hmax_multiplier * mean_gap
        metrics = eval_events(params, collection, hmax, cfg.grid_size, cfg.mc_samples, cfg.eval_seed)
    doc = metrics_report(params.task, metrics, len(collection))
    if args.out:
        write_json(args.out, doc)
    if args.points_csv:
        write_points_csv(args.points_csv, params, collection, params.task, cfg.observe_fraction, hmax, cfg.grid_size)
    print(f"{'metric':<12} value")
    for k, v in doc["metrics"].items():
        print(f"{k:<12} {v:.6g}" if isinstance(v, float) else f"{k:<12} {v}")
    return 0


def _parse_horizons(text):
    try:
        hs = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad horizon list {text!r}") from exc
    if not hs or any(not math.isfinite(h) or h < 0 for h in hs):
        raise ConfigError("horizons must be non-negative finite numbers")
    return hs


def cmd_predict(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    horizons = _parse_horizons(args.horizons)
    collection = _load_collection(params.task, args.data)
    decay = params.decay
    records = []
    if params.task == "forecast":
        _check_forecast_dim(collection, params)
        stats = gdata.Standardization.from_dict(meta["standardization"]) if meta.get("standardization") else None
        head = forecast_head(params)
        for i, seq in enumerate(collection):
            states, _ = forward_sequence(stats.apply(seq) if stats else seq, params)
            pred = predict_at(states[-1], np.asarray(horizons), decay, head)
            if stats:
                pred = stats.invert(pred)
            records.append({"sequence": i, "end_time": float(seq.times[-1]), "horizons": horizons,
                            "predictions": pred.tolist()})
    else:
        gdata.check_event_types(collection, params.num_types)
        head = intensity_head(params)
        for i, seq in enumerate(collection):
            states, _ = event_states(seq, params)
            end = float(seq.times[-1]) if len(seq) else 0.0
            lam = intensity_at(states[-1], np.asarray(horizons), decay, head)
            records.append({"sequence": i, "end_time": end, "horizons": horizons, "intensities": lam.tolist()})
    with open(args.out, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    print(f"wrote {len(records)} prediction records to {args.out}")
    return 0


GENERATORS = {
    "decay": {"n_seq": 100, "dim": 3, "rate": 3.0, "t_max": 10.0, "p_miss": 0.3,
              "kappa": [0.05, 0.2], "omega": [0.1, 0.3], "amplitude": [0.5, 2.0]},
    "poisson": {"n_seq": 100, "lambda_star": 0.8, "t_max": 50.0, "num_types": 1},
    "hawkes": {"n_seq": 100, "mu": 0.2, "alpha": 0.8, "beta": 1.0, "t_max": 50.0, "num_types": 1},
}


def cmd_synth(args) -> int:
    opts = dict(GENERATORS[args.generator])
    for item in args.set:
        k, v = parse_override(item)
        if k not in opts:
            raise ConfigError(f"unknown {args.generator} generator option {k!r}; known: {', '.join(opts)}")
        opts[k] = v
    if args.config:
        raise ConfigError("synth takes generator options via --set only")
    if not isinstance(opts["n_seq"], int) or isinstance(opts["n_seq"], bool) or opts["n_seq"] < 0:
        raise ConfigError("n_seq must be a non-negative integer")
    rng = make_rng(args.seed, 6)
    try:
        if args.generator == "decay":
            seqs, truths = gdata.gen_decay_process(rng, **{k: tuple(v) if isinstance(v, list) else v for k, v in opts.items()})
            oracle = {"truth": [t.to_dict() for t in truths]}
            gdata.write_series_jsonl(args.out, seqs)
        elif args.generator == "poisson":
            seqs, lls = gdata.gen_poisson_events(rng, **opts)
            oracle = {"log_likelihood": lls}
            gdata.write_events_jsonl(args.out, seqs)
        else:
            seqs, lls = gdata.gen_hawkes_events(rng, **opts)
            oracle = {"log_likelihood": lls}
            gdata.write_events_jsonl(args.out, seqs)
    except TypeError as exc:
        raise ConfigError(f"bad generator options: {exc}") from exc
    sidecar = args.out + ".oracle.json"
    write_json(sidecar, {"format": "gruwe-oracle", "version": 1, "generator": args.generator,
                         "seed": args.seed, "options": opts, **oracle})
    print(f"wrote {len(seqs)} sequences to {args.out} (oracle: {sidecar})")
    return 0


def inspect_rows(params, tol=1e-6):
    decay = params.decay
    rows = []
    for i, (w, b, regime) in enumerate(zip(decay.w_gamma, decay.b_gamma, classify_regimes(decay, tol))):
        rows.append({"unit": i, "w_gamma": float(w), "b_gamma": float(b), "regime": regime.value,
                     "lipschitz": lipschitz_constant(w, b) if w > 0 else None})
    return rows


def cmd_inspect(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    if not args.tol >= 0:
        raise ConfigError("--tol must be non-negative")
    rows = inspect_rows(params, args.tol)
    print(f"{'unit':>4}  {'w_gamma':>12}  {'b_gamma':>12}  {'regime':<14}  {'lipschitz':>12}")
    for r in rows:
        lip = f"{r['lipschitz']:12.6g}" if r["lipschitz"] is not None else f"{'-':>12}"
        print(f"{r['unit']:>4}  {r['w_gamma']:12.6g}  {r['b_gamma']:12.6g}  {r['regime']:<14}  {lip}")
    if args.out:
        write_json(args.out, {"format": "gruwe-regimes", "version": 1, "units": rows})
    return 0


def _stream_from_file(params, path):
    collection = _load_collection(params.task, path)
    if params.task == "forecast":
        _check_forecast_dim(collection, params)
        for seq in collection:
            dts = np.diff(seq.times, prepend=seq.times[:1])
            for i in range(len(seq)):
                yield StepInput(seq.values[i], seq.mask[i], float(dts[i]))
    else:
        gdata.check_event_types(collection, params.num_types)
        eye, ones = np.eye(params.num_types), np.ones(params.num_types)
        for seq in collection:
            dts = np.diff(seq.times, prepend=0.0)
            for k, d in zip(seq.types, dts):
                yield StepInput(eye[k], ones, float(d))


def cmd_bench_online(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    if args.steps < 1 or args.predict_every < 1 or args.warmup < 0:
        raise ConfigError("--steps and --predict-every must be >= 1, --warmup >= 0")
    if args.data:
        stream = list(_stream_from_file(params, args.data))
    else:
        stream = synthetic_stream(params, args.steps, args.seed)
    try:
        report = bench_online(params, stream, args.predict_every, args.warmup, args.horizon)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.out:
        write_json(args.out, report)
    first, last = report["update_deciles"][0], report["update_deciles"][-1]
    print(f"updates: {report['n_updates']}  predictions: {report['n_predictions']}  "
          f"state bytes: {report['state_bytes']} (constant: {report['state_bytes_constant']})")
    print(f"median update latency: first decile {first['median_ns'] / 1e3:.2f} us, "
          f"last decile {last['median_ns'] / 1e3:.2f} us")
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gruwe", description="GRU with exponential basis functions.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                       help="override one config key (value parsed as JSON when possible); repeatable")

    p = sub.add_parser("train", help="train a model from a config file")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute test metrics for a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="JSONL series or events file")
    p.add_argument("--task", choices=["forecast", "tpp"], help="expected task; must match the checkpoint")
    p.add_argument("--split", choices=["all", "train", "validation", "test"], default="all",
                   help="evaluate one part of the checkpoint's train/validation/test split")
    p.add_argument("--out", help="write the metrics report (JSON) here")
    p.add_argument("--points-csv", help="write per-point predictions (CSV) here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="decode predictions at future horizons")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--horizons", required=True, help="comma-separated non-negative horizons")
    p.add_argument("--out", required=True, help="output JSONL file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="generate a synthetic dataset with its oracle sidecar")
    common(p)
    p.add_argument("--generator", choices=sorted(GENERATORS), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect", help="list the decay regime of every hidden unit")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tol", type=float, default=1e-6, help="half-width of the w ~ 0 band")
    p.add_argument("--out", help="also write the table as JSON")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench-online", help="time streaming state updates and predictions")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="stream observations from this file instead of random inputs")
    p.add_argument("--steps", type=int, default=10_000, help="length of the random stream")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--predict-every", type=int, default=10)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--out", help="write the benchmark report (JSON) here")
    p.set_defaults(func=cmd_bench_online)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GruweError as exc:
        kind = {2: "config", 3: "data", 4: "training"}.get(exc.exit_code, "internal")
        print(f"gruwe: {kind} error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"gruwe: data error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001
        print(f"gruwe: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
