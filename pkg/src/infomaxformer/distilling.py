"""Keys/values distilling: three rounds of conv -> relu -> max pool that
shrink the time axis by l and the feature axis by h per stage while
multiplying the channel (head) count by h.

After the three stages an [L, d_model] sequence becomes
[h^3 heads, ceil(L / l^3), d_model / h^3], which is what drops the
attention cost from quadratic to linear in the sequence length.
Queries are never distilled; they are split into h^3 contiguous slices
of width d_model / h^3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import MeaConfig
from .errors import ConfigError, ShapeError
from .tensor import Tensor, conv2d, maxpool2d, pad2d_end_edge, relu, reshape

STAGES = 3
CONV_KERNEL = (2, 2)


@dataclass(frozen=True)
class DistillConfig:
    """Pooling geometry: `l` shrinks time, `h` shrinks features and grows heads.

    `l=None` defers to compute_l on the actual input length.
    """

    l: int | None = None
    h: int = 2

    def __post_init__(self):
        if self.l is not None and self.l < 1:
            raise ConfigError(f"time pool factor l must be >= 1, got {self.l}")
        if self.h < 1:
            raise ConfigError(f"feature pool factor h must be >= 1, got {self.h}")

    @property
    def heads(self) -> int:
        return self.h ** STAGES

    def resolve_l(self, L_X: int) -> int:
        return self.l if self.l is not None else compute_l(L_X)


def compute_l(L_X: int) -> int:
    """Default time pool factor: the sixth root of the input length,
    rounded half-up and floored at 1."""
    if L_X < 1:
        raise ConfigError(f"input length must be positive, got {L_X}")
    return max(1, int(math.floor(L_X ** (1.0 / 6.0) + 0.5)))


def distilled_length(L_X: int, l: int) -> int:
    """Time extent after the three pad-then-pool stages."""
    t = L_X
    for _ in range(STAGES):
        t = -(-t // l)
    return t


def check_d_model(d_model: int, h: int) -> None:
    divisor = h ** STAGES
    if d_model % divisor:
        raise ConfigError(
            f"d_model={d_model} must be divisible by h^3={divisor} for keys/values distilling"
        )


@dataclass
class DistilledKV:
    """Distilled key and value stacks, [heads, L_K, d_head] each."""

    keys: Tensor
    values: Tensor

    @property
    def heads(self) -> int:
        return self.keys.shape[0]

    @property
    def length(self) -> int:
        return self.keys.shape[1]

    @property
    def d_head(self) -> int:
        return self.keys.shape[2]


class DistillPipeline:
    """One three-stage conv/relu/pool stack (keys and values each own one)."""

    def __init__(self, d_model: int, h: int, rng: np.random.Generator, bias: bool = True):
        check_d_model(d_model, h)
        self.d_model = d_model
        self.h = h
        kh, kw = CONV_KERNEL
        self.weights: list[Tensor] = []
        self.biases: list[Tensor | None] = []
        c_in = 1
        for _ in range(STAGES):
            c_out = c_in * h
            bound = 1.0 / math.sqrt(c_in * kh * kw)
            self.weights.append(
                Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, kh, kw)), requires_grad=True)
            )
            self.biases.append(Tensor(np.zeros(c_out), requires_grad=True) if bias else None)
            c_in = c_out

    def __call__(self, x: Tensor, l: int) -> Tensor:
        if x.ndim != 2:
            raise ShapeError("distilling expects an [L, d_model] input")
        if x.shape[1] != self.d_model:
            raise ShapeError(f"input width {x.shape[1]} does not match d_model {self.d_model}")
        y = reshape(x, (1, x.shape[0], x.shape[1]))
        for w, b in zip(self.weights, self.biases):
            y = relu(conv2d(y, w, b, padding="same"))
            t = y.shape[1]
            short = (-t) % l
            if short:
                y = pad2d_end_edge(y, short, 0)
            y = maxpool2d(y, l, self.h)
        return y

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.stage{i}.w"] = w
            if b is not None:
                out[f"{prefix}.stage{i}.b"] = b
        return out


class KVDistiller:
    """Paired pipelines producing the distilled keys and values of one block."""

    def __init__(self, d_model: int, cfg: DistillConfig, rng: np.random.Generator, bias: bool = True):
        self.cfg = cfg
        self.key_pipeline = DistillPipeline(d_model, cfg.h, rng, bias=bias)
        self.value_pipeline = DistillPipeline(d_model, cfg.h, rng, bias=bias)

    def distill(self, x: Tensor, l: int | None = None) -> DistilledKV:
        if l is None:
            l = self.cfg.resolve_l(x.shape[0])
        return DistilledKV(
            keys=self.key_pipeline(x, l),
            values=self.value_pipeline(x, l),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        out.update(self.key_pipeline.named(f"{prefix}.k"))
        out.update(self.value_pipeline.named(f"{prefix}.v"))
        return out


def split_heads(x: Tensor, n_heads: int) -> list[Tensor]:
    """Slice [L, d_model] into n_heads contiguous [L, d_model/n_heads] pieces."""
    from .tensor import slice_cols

    L, d_model = x.shape
    if d_model % n_heads:
        raise ShapeError(f"d_model={d_model} is not divisible into {n_heads} heads")
    d_head = d_model // n_heads
    return [slice_cols(x, i * d_head, (i + 1) * d_head) for i in range(n_heads)]


@dataclass
class ComplexityPlan:
    """Analytic per-head dot-product budget for one attention evaluation."""

    l: int
    L_K: int
    u: int
    U: int
    selected_dot_products: float
    sampling_dot_products: int

    @property
    def total(self) -> float:
        return self.selected_dot_products + self.sampling_dot_products


def complexity_plan(L_Q: int, L_X: int, cfg: DistillConfig, mea: MeaConfig) -> ComplexityPlan:
    """Predicted dot products for distilled sparse attention.

    The exact-row term is c*sqrt(L_Q)*sqrt(L_X); with l at its default
    sixth-root value, u rows of length L_X/l^3 collapse to exactly that
    product.  The sampling pass adds U*L_Q.  Runtime counts differ from
    the plan only through pool padding and the rounding of l.
    """
    l = cfg.resolve_l(L_X)
    L_K = distilled_length(L_X, l)
    u = mea.resolve_u(L_Q)
    U = mea.resolve_U(L_K)
    return ComplexityPlan(
        l=l,
        L_K=L_K,
        u=u,
        U=U,
        selected_dot_products=mea.c * math.sqrt(L_Q) * math.sqrt(L_X),
        sampling_dot_products=U * L_Q,
    )
