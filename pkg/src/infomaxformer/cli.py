"""Command-line interface: train, predict, bench, stats, and sweep.

All artifacts are written as CSV/JSON files under --out (plot-ready
data, no figure rendering).  Exit codes: 0 success, 1 runtime failure,
2 usage or configuration error.  Every command is deterministic for a
fixed --seed apart from wall-clock fields.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import bench as bench_mod
from .attention import attention_stats
from .data import load_csv, prepare_splits, synthetic_series
from .errors import ConfigError, DataError, InfomaxError, VocabError
from .model import (
    Infomaxformer,
    ModelConfig,
    fit,
    load_checkpoint,
    save_checkpoint,
)

USAGE_ERRORS = (ConfigError, DataError, VocabError)
ABLATIONS = {
    "no-tsd": {"use_tsd": False},
    "no-mea": {"use_mea": False},
    "no-distill": {"use_distill": False},
}


def _require_file(path: str) -> str:
    if not os.path.isfile(path):
        raise ConfigError(f"file not found: {path}")
    return path


def _load_config(path: str, seed: int | None, ablate: str | None) -> ModelConfig:
    with open(_require_file(path)) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    cfg = ModelConfig.from_dict(raw)
    if seed is not None:
        cfg = replace(cfg, mea=replace(cfg.mea, seed=seed))
    if ablate is not None:
        if ablate not in ABLATIONS:
            raise ConfigError(
                f"unknown ablation {ablate!r}; expected one of {sorted(ABLATIONS)}"
            )
        cfg = replace(cfg, **ABLATIONS[ablate])
    return cfg


def _config_hash(cfg: ModelConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _outdir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def _write_csv(path: str, header: str, rows) -> None:
    with open(path, "w") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")


# -- commands ------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.seed, args.ablate)
    series = load_csv(_require_file(args.data))
    out = _outdir(args.out)
    splits = prepare_splits(
        series, cfg.L_x, cfg.L_y, cfg.label_length, with_std=cfg.normalize_std
    )
    model = Infomaxformer(cfg, seed=args.seed)
    result = fit(
        model, splits.train.windows, splits.val.windows, seed=args.seed, max_steps=args.max_steps
    )
    _write_csv(
        os.path.join(out, "losses.csv"),
        "epoch,lr,train_loss,val_loss",
        [(e.epoch, repr(e.lr), repr(e.train_loss), repr(e.val_loss)) for e in result.history],
    )
    save_checkpoint(model, os.path.join(out, "checkpoint.json"))
    _write_json(
        os.path.join(out, "manifest.json"),
        {
            "seed": args.seed,
            "config_hash": _config_hash(cfg),
            "config": cfg.to_dict(),
            "data": os.path.abspath(args.data),
            "ablate": args.ablate,
            "epochs_run": len(result.history),
            "steps_run": result.steps,
            "stopped_early": result.stopped_early,
            "final_val_loss": result.history[-1].val_loss if result.history else None,
        },
    )
    print(f"trained {len(result.history)} epochs ({result.steps} steps); artifacts in {out}")
    return 0


def cmd_predict(args) -> int:
    model, _ = load_checkpoint(_require_file(args.checkpoint))
    cfg = model.cfg
    if args.horizon is not None and args.horizon != cfg.L_y:
        new_cfg = replace(cfg, L_y=args.horizon, L_label=cfg.label_length)
        fresh = Infomaxformer(new_cfg, seed=model.seed)
        for name, p in fresh.parameters().items():
            p.data = model.parameters()[name].data.copy()
        model, cfg = fresh, new_cfg
    series = load_csv(_require_file(args.data))
    if series.values.shape[1] != cfg.d_x:
        raise ConfigError(
            f"checkpoint expects {cfg.d_x} features but {args.data} has {series.values.shape[1]}"
        )
    out = _outdir(args.out)
    splits = prepare_splits(
        series, cfg.L_x, cfg.L_y, cfg.label_length, with_std=cfg.normalize_std
    )
    windows = {"train": splits.train, "val": splits.val, "test": splits.test}[args.split].windows
    model.decoder_passes = 0
    preds = np.stack([model.predict(w) for w in windows])
    if model.decoder_passes != len(windows):
        raise InfomaxError(
            f"expected one decoder pass per window, measured {model.decoder_passes} over {len(windows)}"
        )
    targets = np.stack([w.target for w in windows])
    if args.denormalize:
        preds_out = splits.stats.invert(preds)
        targets_out = splits.stats.invert(targets)
    else:
        preds_out, targets_out = preds, targets
    from .data import evaluate

    mse, mae = evaluate(preds_out, targets_out)
    rows = []
    for wi, block in enumerate(preds_out):
        for step, row in enumerate(block):
            rows.append((wi, step) + tuple(repr(float(v)) for v in row))
    _write_csv(
        os.path.join(out, "predictions.csv"),
        "window,step," + ",".join(series.columns),
        rows,
    )
    _write_json(
        os.path.join(out, "metrics.json"),
        {"mse": mse, "mae": mae, "windows": len(windows), "forecasting_steps": 1},
    )
    print(f"predicted {len(windows)} windows: mse={mse:.6f} mae={mae:.6f}")
    return 0


def cmd_bench(args) -> int:
    lengths = _parse_values(args.lengths, int)
    if len(lengths) < 4:
        raise ConfigError(f"bench needs at least 4 ascending lengths, got {lengths}")
    out = _outdir(args.out)
    records = bench_mod.bench_scaling(
        lengths,
        args.mode,
        d_model=args.d_model,
        h=args.h,
        seed=args.seed,
        repeats=args.repeats,
        warmups=args.warmups,
    )
    slope = bench_mod.fit_loglog_slope(records)
    _write_csv(
        os.path.join(out, "bench.csv"),
        "L,mode,wall_time_s,peak_bytes,dot_product_rows,status",
        [
            (r.L, r.mode, repr(r.wall_time), r.peak_bytes, r.dot_product_rows, r.status)
            for r in records
        ],
    )
    _write_json(os.path.join(out, "slope.json"), {"mode": args.mode, "slope": slope})
    print(f"{args.mode} log-log slope over {lengths}: {slope:.3f}")
    return 0


def cmd_stats(args) -> int:
    if (args.checkpoint is None) == (args.config is None):
        raise ConfigError("stats needs exactly one of --checkpoint or --config")
    if args.checkpoint is not None:
        model, _ = load_checkpoint(_require_file(args.checkpoint))
    else:
        model = Infomaxformer(_load_config(args.config, args.seed, None), seed=args.seed)
    cfg = model.cfg
    series = load_csv(_require_file(args.data))
    if series.length < cfg.L_x + cfg.L_y:
        raise DataError(
            f"{args.data} has {series.length} rows; need at least {cfg.L_x + cfg.L_y}"
        )
    from .data import normalize_zero_mean, stamps_from_timestamps, window_dataset

    normalized, stats = normalize_zero_mean(
        series.values, (0, series.length), with_std=cfg.normalize_std
    )
    stamps = stamps_from_timestamps(series.timestamps)
    window = window_dataset(
        normalized, stamps, cfg.L_x, cfg.L_y, cfg.label_length, (0, series.length), stats
    ).windows[0]
    out = _outdir(args.out)
    per_layer = model.encoder_score_matrices(window)
    hist_rows = []
    entropy_rows = []
    for li, layer_scores in enumerate(per_layer):
        for hi, scores in enumerate(layer_scores):
            st = attention_stats(scores)
            for lo, hi_edge, count in st.histogram_rows():
                hist_rows.append((li, hi, repr(lo), repr(hi_edge), count))
            for row, h_val in enumerate(st.row_entropy):
                entropy_rows.append((li, hi, row, repr(float(h_val))))
    _write_csv(os.path.join(out, "attention_histogram.csv"),
               "layer,head,bin_lo,bin_hi,count", hist_rows)
    _write_csv(os.path.join(out, "attention_entropy.csv"),
               "layer,head,row,entropy", entropy_rows)
    print(f"wrote attention statistics for {len(per_layer)} encoder layers to {out}")
    return 0


def cmd_sweep(args) -> int:
    if args.param == "c":
        values = _parse_values(args.values, float)
    else:
        values = _parse_values(args.values, int)
    if not values:
        raise ConfigError("sweep needs a non-empty --values list")
    cfg = _load_config(args.config, args.seed, None)
    if args.data is not None:
        series = load_csv(_require_file(args.data))
    else:
        series = synthetic_series(args.synthetic_length, d=cfg.d_x, seed=args.seed)
    out = _outdir(args.out)
    points = bench_mod.run_sweep(
        args.param, values, cfg, series, seed=args.seed, max_steps=args.max_steps
    )
    _write_csv(
        os.path.join(out, "sweep.csv"),
        "value,mse,mae",
        [(repr(p.value), repr(p.mse), repr(p.mae)) for p in points],
    )
    spread = max(p.mse for p in points) - min(p.mse for p in points)
    print(f"swept {args.param} over {values}: mse spread {spread:.6f}")
    return 0


def _parse_values(text: str, kind) -> list:
    items = [v.strip() for v in text.split(",") if v.strip()]
    try:
        return [kind(v) for v in items]
    except ValueError:
        raise ConfigError(f"could not parse {text!r} as {kind.__name__} list") from None


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infomax",
        description="Long time-series forecasting with sparse maximum-entropy attention.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model and write a checkpoint")
    train.add_argument("--config", required=True, help="model config JSON")
    train.add_argument("--data", required=True, help="input CSV")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--out", default=".", help="output directory")
    train.add_argument("--ablate", choices=sorted(ABLATIONS), default=None)
    train.add_argument("--max-steps", type=int, default=None)
    train.set_defaults(func=cmd_train)

    predict = sub.add_parser("predict", help="one-pass forecasts from a checkpoint")
    predict.add_argument("--checkpoint", required=True)
    predict.add_argument("--data", required=True)
    predict.add_argument("--out", default=".")
    predict.add_argument("--split", choices=("train", "val", "test"), default="test")
    predict.add_argument("--horizon", type=int, default=None)
    predict.add_argument("--denormalize", action="store_true")
    predict.set_defaults(func=cmd_predict)

    bench = sub.add_parser("bench", help="attention scaling benchmark")
    bench.add_argument("--lengths", default="256,512,1024,2048,4096")
    bench.add_argument("--mode", choices=("mea", "dense"), default="mea")
    bench.add_argument("--d-model", type=int, default=64)
    bench.add_argument("--h", type=int, default=2)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--repeats", type=int, default=5)
    bench.add_argument("--warmups", type=int, default=2)
    bench.add_argument("--out", default=".")
    bench.set_defaults(func=cmd_bench)

    stats = sub.add_parser("stats", help="attention score statistics per layer/head")
    stats.add_argument("--checkpoint", default=None)
    stats.add_argument("--config", default=None)
    stats.add_argument("--data", required=True)
    stats.add_argument("--seed", type=int, default=0)
    stats.add_argument("--out", default=".")
    stats.set_defaults(func=cmd_stats)

    sweep = sub.add_parser("sweep", help="metric-vs-value sweep over c or U")
    sweep.add_argument("--param", choices=("c", "U"), required=True)
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--data", default=None, help="CSV path; synthetic data when omitted")
    sweep.add_argument("--synthetic-length", type=int, default=1600)
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--max-steps", type=int, default=None)
    sweep.add_argument("--out", default=".")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except USAGE_ERRORS as e:
        print(f"infomax: {e}", file=sys.stderr)
        return 2
    except InfomaxError as e:
        print(f"infomax: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
