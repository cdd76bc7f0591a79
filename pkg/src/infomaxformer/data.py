"""Dataset handling: CSV ingestion with cadence validation, zero-mean
normalization fitted on the training split, stride-1 rolling windows,
chronological splits, calendar features, and the MSE/MAE metrics.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .embedding import CalendarStamp
from .errors import DataError, ShapeError

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"
STD_FLOOR = 1e-8


@dataclass
class RawSeries:
    """A validated multivariate series on a strictly regular time grid."""

    timestamps: list[datetime]
    values: np.ndarray
    columns: list[str]

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def step(self) -> timedelta:
        return self.timestamps[1] - self.timestamps[0]


def load_csv(path) -> RawSeries:
    """Read a timestamped CSV: first column `YYYY-MM-DD HH:MM:SS`, the rest numeric.

    Raises DataError with the offending line number for parse failures
    and with the offending timestamp for cadence breaks.
    """
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        columns = [c.strip() for c in header[1:]]
        timestamps: list[datetime] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ts = datetime.strptime(row[0].strip(), TIMESTAMP_FORMAT)
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparseable timestamp {row[0]!r}") from None
            if len(row) - 1 != len(columns):
                raise DataError(f"{path}:{lineno}: expected {len(columns)} values, got {len(row) - 1}")
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value in row") from None
            timestamps.append(ts)
            rows.append(vals)
    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 rows to establish the cadence")
    step = timestamps[1] - timestamps[0]
    if step <= timedelta(0):
        raise DataError(f"{path}: timestamps are not strictly increasing at {timestamps[1]}")
    for prev, cur in zip(timestamps, timestamps[1:]):
        if cur - prev != step:
            raise DataError(f"{path}: cadence break at {cur} (expected step {step})")
    values = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(values).all():
        raise DataError(f"{path}: non-finite values present after ingestion")
    return RawSeries(timestamps=timestamps, values=values, columns=columns)


def write_csv(series: RawSeries, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["date"] + list(series.columns))
        for ts, row in zip(series.timestamps, series.values):
            writer.writerow([ts.strftime(TIMESTAMP_FORMAT)] + [repr(float(v)) for v in row])


# -- normalization ----------------------------------------------------------

@dataclass
class NormStats:
    """Per-feature training-split statistics kept for de-normalization."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


def normalize_zero_mean(
    values: np.ndarray, train_range: tuple[int, int], with_std: bool = True
) -> tuple[np.ndarray, NormStats]:
    """Subtract the training-range mean (and divide by its population std
    unless `with_std` is off); constant features hit the std floor."""
    lo, hi = train_range
    if hi <= lo:
        raise DataError(f"empty training range ({lo}, {hi})")
    train = values[lo:hi]
    mean = train.mean(axis=0)
    if with_std:
        std = train.std(axis=0)
        flat = std < STD_FLOOR
        if flat.any():
            warnings.warn(
                f"{int(flat.sum())} constant feature(s); std floored at {STD_FLOOR}",
                stacklevel=2,
            )
            std = np.where(flat, STD_FLOOR, std)
    else:
        std = np.ones_like(mean)
    stats = NormStats(mean=mean, std=std)
    return stats.apply(values), stats


# -- calendar features -------------------------------------------------------

def stamps_from_timestamps(timestamps) -> list[CalendarStamp]:
    return [
        CalendarStamp(month=t.month, day=t.day, hour=t.hour, minute=t.minute)
        for t in timestamps
    ]


# -- windowing ---------------------------------------------------------------

@dataclass
class Window:
    """One training/evaluation example: stride-1 aligned slices plus stamps."""

    input: np.ndarray
    label: np.ndarray
    target: np.ndarray
    enc_stamps: list[CalendarStamp]
    dec_stamps: list[CalendarStamp]
    start: int


@dataclass
class WindowedDataset:
    windows: list[Window]
    stats: NormStats | None = None

    def __len__(self) -> int:
        return len(self.windows)


def chronological_splits(T: int, ratios=(0.6, 0.2, 0.2)) -> list[tuple[int, int]]:
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    a = int(T * ratios[0])
    b = a + int(T * ratios[1])
    return [(0, a), (a, b), (b, T)]


def window_dataset(
    values: np.ndarray,
    stamps: list[CalendarStamp],
    L_x: int,
    L_y: int,
    L_label: int,
    span: tuple[int, int],
    stats: NormStats | None = None,
) -> WindowedDataset:
    """Cut stride-1 windows that lie entirely inside `span`.

    Yields span_length - L_x - L_y + 1 windows; fewer than one is an error.
    """
    lo, hi = span
    count = (hi - lo) - L_x - L_y + 1
    if count < 1:
        raise DataError(
            f"split [{lo}, {hi}) is too short for L_x={L_x} plus L_y={L_y} (no windows)"
        )
    if L_label > L_x:
        raise DataError(f"label length {L_label} exceeds input length {L_x}")
    windows = []
    for t in range(lo, lo + count):
        inp = values[t:t + L_x]
        windows.append(
            Window(
                input=inp,
                label=inp[L_x - L_label:],
                target=values[t + L_x:t + L_x + L_y],
                enc_stamps=stamps[t:t + L_x],
                dec_stamps=stamps[t + L_x - L_label:t + L_x + L_y],
                start=t,
            )
        )
    return WindowedDataset(windows=windows, stats=stats)


@dataclass
class DatasetSplits:
    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset
    stats: NormStats


def prepare_splits(
    series: RawSeries,
    L_x: int,
    L_y: int,
    L_label: int,
    ratios=(0.6, 0.2, 0.2),
    with_std: bool = True,
) -> DatasetSplits:
    """Normalize on the training split, then window each split separately."""
    spans = chronological_splits(series.length, ratios)
    normalized, stats = normalize_zero_mean(series.values, spans[0], with_std=with_std)
    stamps = stamps_from_timestamps(series.timestamps)
    train, val, test = (
        window_dataset(normalized, stamps, L_x, L_y, L_label, span, stats) for span in spans
    )
    return DatasetSplits(train=train, val=val, test=test, stats=stats)


# -- metrics -----------------------------------------------------------------

def evaluate(predictions, targets) -> tuple[float, float]:
    """MSE and MAE averaged over every step, feature, and rolled window."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"predictions {p.shape} and targets {t.shape} disagree")
    diff = p - t
    return float(np.mean(diff * diff)), float(np.mean(np.abs(diff)))


# -- synthetic data ----------------------------------------------------------

def synthetic_series(
    T: int,
    d: int = 1,
    seed: int = 0,
    period: float = 24.0,
    amplitude: float = 1.0,
    trend_slope: float = 0.002,
    noise_sigma: float = 0.1,
    start: datetime | None = None,
) -> RawSeries:
    """Seeded sine-plus-trend-plus-noise series on an hourly grid.

    Used by the benchmarks and sweeps so nothing has to be downloaded.
    """
    if start is None:
        start = datetime(2016, 7, 1, 0, 0, 0)
    rng = np.random.default_rng(seed)
    t = np.arange(T, dtype=np.float64)[:, None]
    phase = 2.0 * np.pi * np.arange(d, dtype=np.float64)[None, :] / max(d, 1)
    values = (
        amplitude * np.sin(2.0 * np.pi * t / period + phase)
        + trend_slope * t
        + rng.normal(0.0, noise_sigma, size=(T, d))
    )
    timestamps = [start + timedelta(hours=i) for i in range(T)]
    columns = [f"y{j}" for j in range(d)]
    return RawSeries(timestamps=timestamps, values=values, columns=columns)
