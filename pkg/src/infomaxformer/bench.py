"""Benchmark and sweep machinery: the linear-vs-quadratic scaling
measurement, allocator high-water marks, parameter sweeps, and the
repeat-last-value baseline used by the smoke task.
"""

from __future__ import annotations

import math
import time
import tracemalloc
from dataclasses import dataclass, replace

import numpy as np

from .attention import ATTENTION_COUNTER, MeaConfig, dense_attention, mea_attention
from .data import DatasetSplits, RawSeries, evaluate, prepare_splits
from .distilling import DistillConfig, KVDistiller, split_heads
from .errors import ConfigError
from .model import Infomaxformer, ModelConfig, TrainResult, fit
from .tensor import Tensor


@dataclass
class BenchRecord:
    """One measured point of the scaling curve.

    `wall_time` is the median of `repeats` timed runs after warmups on a
    monotonic clock; `peak_bytes` is the tracemalloc high-water mark of
    one forward (allocator-level, not OS RSS); `dot_product_rows` is the
    instrumented query-key dot-product count of one forward.
    """

    L: int
    wall_time: float
    peak_bytes: int
    dot_product_rows: int
    mode: str = "mea"
    status: str = "ok"


def _median_time(fn, repeats: int = 5, warmups: int = 2, min_time: float = 5e-3) -> float:
    for _ in range(warmups):
        fn()
    once = _time_once(fn)
    inner = max(1, int(math.ceil(min_time / max(once, 1e-9))))
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        times.append((time.perf_counter() - t0) / inner)
    return float(np.median(times))


def _time_once(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def make_attention_forward(L: int, mode: str, d_model: int = 64, h: int = 2, seed: int = 0):
    """Build a zero-argument forward closure over fresh random inputs.

    `mea` runs keys/values distilling plus sparse attention per head;
    `dense` runs exact attention over the undistilled per-head slices.
    """
    if mode not in ("mea", "dense"):
        raise ConfigError(f"unknown benchmark mode {mode!r}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, L]))
    x = Tensor(rng.standard_normal((L, d_model)))
    heads = h ** 3
    q_heads = split_heads(x, heads)
    if mode == "dense":
        def forward():
            for q in q_heads:
                dense_attention(q, q, q)
        return forward
    distiller = KVDistiller(d_model, DistillConfig(h=h), rng)
    cfgs = [MeaConfig(c=3.0, seed=int(s)) for s in np.random.SeedSequence([seed, L, 7]).generate_state(heads)]
    def forward():
        kv = distiller.distill(x)
        for i, q in enumerate(q_heads):
            mea_attention(q, kv.keys[i], kv.values[i], cfgs[i])
    return forward


def bench_scaling(
    lengths,
    mode: str,
    d_model: int = 64,
    h: int = 2,
    seed: int = 0,
    repeats: int = 5,
    warmups: int = 2,
) -> list[BenchRecord]:
    """One attention forward per length; median wall time, peak allocation,
    and the instrumented dot-product count."""
    lengths = list(lengths)
    if len(lengths) < 2 or any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ConfigError("benchmark lengths must be ascending with at least 2 points")
    records = []
    for L in lengths:
        try:
            forward = make_attention_forward(L, mode, d_model=d_model, h=h, seed=seed)
            ATTENTION_COUNTER.reset()
            tracemalloc.start()
            forward()
            _, peak = tracemalloc.get_traced_memory()
            tracemalloc.stop()
            dots = ATTENTION_COUNTER.dot_products
            wall = _median_time(forward, repeats=repeats, warmups=warmups)
            records.append(
                BenchRecord(L=L, wall_time=wall, peak_bytes=peak, dot_product_rows=dots, mode=mode)
            )
        except MemoryError:
            tracemalloc.stop()
            records.append(
                BenchRecord(L=L, wall_time=math.nan, peak_bytes=0, dot_product_rows=0,
                            mode=mode, status="oom")
            )
    return records


def fit_loglog_slope(records) -> float:
    """Least-squares slope of log(wall_time) against log(L) over the ok rows."""
    pts = [(r.L, r.wall_time) for r in records if r.status == "ok" and r.wall_time > 0]
    if len(pts) < 2:
        return math.nan
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


# -- baseline and sweeps -------------------------------------------------------

def repeat_last_baseline(windows) -> tuple[float, float]:
    """MSE/MAE of repeating each window's final observed row over the horizon."""
    preds = np.stack([np.tile(w.input[-1], (w.target.shape[0], 1)) for w in windows])
    targets = np.stack([w.target for w in windows])
    return evaluate(preds, targets)


def evaluate_model(model: Infomaxformer, windows) -> tuple[float, float]:
    preds = np.stack([model.predict(w) for w in windows])
    targets = np.stack([w.target for w in windows])
    return evaluate(preds, targets)


@dataclass
class SweepPoint:
    value: float
    mse: float
    mae: float


def train_and_eval(
    cfg: ModelConfig, splits: DatasetSplits, seed: int, max_steps: int | None = None
) -> tuple[Infomaxformer, TrainResult, tuple[float, float]]:
    model = Infomaxformer(cfg, seed=seed)
    result = fit(model, splits.train.windows, splits.val.windows, seed=seed, max_steps=max_steps)
    metrics = evaluate_model(model, splits.test.windows)
    return model, result, metrics


def run_sweep(
    param: str,
    values,
    cfg: ModelConfig,
    series: RawSeries,
    seed: int = 0,
    max_steps: int | None = None,
) -> list[SweepPoint]:
    """Train/evaluate the configuration once per value of `c` or `U`."""
    if param not in ("c", "U"):
        raise ConfigError(f"sweep parameter must be 'c' or 'U', got {param!r}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    splits = prepare_splits(
        series, cfg.L_x, cfg.L_y, cfg.label_length, with_std=cfg.normalize_std
    )
    points = []
    for v in values:
        if param == "c":
            mea = replace(cfg.mea, c=float(v))
        else:
            mea = replace(cfg.mea, U=int(v))
        cfg_v = replace(cfg, mea=mea)
        _, _, (mse, mae) = train_and_eval(cfg_v, splits, seed=seed, max_steps=max_steps)
        points.append(SweepPoint(value=float(v), mse=mse, mae=mae))
    return points
