"""Input embedding: scalar projection, sinusoidal positions, calendar
stamps, and the learned per-channel blend that fuses the three.

The scalar stream is lifted to model width by a width-3 convolution,
positions use the fixed sinusoid table (1-based indices), calendar
stamps sum four learned lookup rows, and a (1,1)-kernel convolution over
the three stacked channels produces the final sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, VocabError
from .tensor import Tensor, concat, conv1d, conv2d, reshape, stack0, take_rows

VOCAB_SIZES = {"month": 13, "day": 32, "hour": 24, "minute": 60}


@dataclass(frozen=True)
class CalendarStamp:
    """One time step's calendar fields, validated against the table vocabularies."""

    month: int
    day: int
    hour: int
    minute: int

    def __post_init__(self):
        bounds = {
            "month": (1, 12),
            "day": (1, 31),
            "hour": (0, 23),
            "minute": (0, 59),
        }
        for name, (lo, hi) in bounds.items():
            v = getattr(self, name)
            if not (lo <= v <= hi):
                raise VocabError(f"{name} index {v} outside [{lo}, {hi}]")


class TimeEmbedTables:
    """Four learnable lookup tables covering the full calendar vocabulary."""

    def __init__(self, month: Tensor, day: Tensor, hour: Tensor, minute: Tensor):
        d = month.shape[1]
        for name, t in (("month", month), ("day", day), ("hour", hour), ("minute", minute)):
            if t.shape != (VOCAB_SIZES[name], d):
                raise ConfigError(
                    f"{name} table must be {VOCAB_SIZES[name]}x{d}, got {t.shape}"
                )
        self.month, self.day, self.hour, self.minute = month, day, hour, minute

    @classmethod
    def init(cls, d_model: int, rng: np.random.Generator) -> "TimeEmbedTables":
        def table(rows):
            return Tensor(rng.uniform(-0.1, 0.1, size=(rows, d_model)), requires_grad=True)

        return cls(
            month=table(VOCAB_SIZES["month"]),
            day=table(VOCAB_SIZES["day"]),
            hour=table(VOCAB_SIZES["hour"]),
            minute=table(VOCAB_SIZES["minute"]),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.month": self.month,
            f"{prefix}.day": self.day,
            f"{prefix}.hour": self.hour,
            f"{prefix}.minute": self.minute,
        }


def positional_encoding(L: int, d_model: int) -> np.ndarray:
    """Fixed sinusoid table over positions 1..L; parameter-free and deterministic."""
    if d_model % 2:
        raise ConfigError(f"positional encoding needs an even width, got {d_model}")
    pos = np.arange(1, L + 1, dtype=np.float64)[:, None]
    j = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * j / d_model)
    pe = np.empty((L, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def time_embedding(stamps, tables: TimeEmbedTables) -> Tensor:
    """Sum the four table rows selected by each stamp; [L, d_model]."""
    months = np.array([s.month for s in stamps], dtype=np.intp)
    days = np.array([s.day for s in stamps], dtype=np.intp)
    hours = np.array([s.hour for s in stamps], dtype=np.intp)
    minutes = np.array([s.minute for s in stamps], dtype=np.intp)
    for name, idx, table in (
        ("month", months, tables.month),
        ("day", days, tables.day),
        ("hour", hours, tables.hour),
        ("minute", minutes, tables.minute),
    ):
        if len(idx) and (idx.min() < 0 or idx.max() >= table.shape[0]):
            bad = idx[(idx < 0) | (idx >= table.shape[0])][0]
            raise VocabError(f"{name} index {bad} outside [0, {table.shape[0]})")
    out = take_rows(tables.month, months)
    out = out + take_rows(tables.day, days)
    out = out + take_rows(tables.hour, hours)
    out = out + take_rows(tables.minute, minutes)
    return out


class ScalarProjection:
    """Width-3 convolution lifting [L, d_x] scalars to [L, d_model]."""

    KERNEL = 3

    def __init__(self, d_x: int, d_model: int, rng: np.random.Generator, bias: bool = True):
        fan_in = d_x * self.KERNEL
        bound = 1.0 / np.sqrt(fan_in)
        self.w = Tensor(
            rng.uniform(-bound, bound, size=(d_model, d_x, self.KERNEL)), requires_grad=True
        )
        self.b = Tensor(np.zeros(d_model), requires_grad=True) if bias else None

    def __call__(self, x) -> Tensor:
        return conv1d(x, self.w, self.b, padding="same")

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.w": self.w}
        if self.b is not None:
            out[f"{prefix}.b"] = self.b
        return out


class EmbeddingFusion:
    """Learned pointwise blend of the three embedding channels.

    Implemented as a 2-D convolution with 3 input channels, 1 output
    channel and a (1,1) kernel, so out[t,f] is a weighted sum of the
    three inputs at (t,f) plus an optional bias.
    """

    def __init__(self, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(3.0)
        self.w = Tensor(rng.uniform(-bound, bound, size=(1, 3, 1, 1)), requires_grad=True)
        self.b = Tensor(np.zeros(1), requires_grad=True) if bias else None

    def __call__(self, sp: Tensor, pe: Tensor, te: Tensor) -> Tensor:
        if sp.shape != pe.shape or sp.shape != te.shape:
            raise ConfigError(
                f"fusion inputs must share a shape, got {sp.shape}, {pe.shape}, {te.shape}"
            )
        stacked = stack0([sp, pe, te])
        fused = conv2d(stacked, self.w, self.b, padding="valid")
        return reshape(fused, sp.shape)

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.w": self.w}
        if self.b is not None:
            out[f"{prefix}.b"] = self.b
        return out


class InputEmbedding:
    """Full pipeline from (scalars, stamps) to the model-width sequence."""

    def __init__(
        self,
        d_x: int,
        d_model: int,
        rng: np.random.Generator,
        conv_bias: bool = True,
        fuse_bias: bool = True,
    ):
        self.d_x = d_x
        self.d_model = d_model
        self.proj = ScalarProjection(d_x, d_model, rng, bias=conv_bias)
        self.tables = TimeEmbedTables.init(d_model, rng)
        self.fusion = EmbeddingFusion(rng, bias=fuse_bias)

    def __call__(self, scalars, stamps) -> Tensor:
        if not isinstance(scalars, Tensor):
            scalars = Tensor(scalars)
        L = scalars.shape[0]
        if len(stamps) != L:
            raise DataError(f"{L} scalar rows but {len(stamps)} calendar stamps")
        sp = self.proj(scalars)
        pe = Tensor(positional_encoding(L, self.d_model))
        te = time_embedding(stamps, self.tables)
        return self.fusion(sp, pe, te)

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        out.update(self.proj.named(f"{prefix}.proj"))
        out.update(self.tables.named(f"{prefix}.time"))
        out.update(self.fusion.named(f"{prefix}.fuse"))
        return out
