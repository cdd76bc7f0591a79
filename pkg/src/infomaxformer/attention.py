"""Dense attention reference, entropy utilities, and the sparse
maximum-entropy attention kernel.

The sparse kernel scores every query with the population variance of its
softmax row over a small shared sample of keys.  Low variance means the
row is close to uniform, i.e. high entropy, so those queries get an
exact attention row; every other query falls back to the plain mean of
the visible value rows, which is what a maximally uniform attention row
would produce anyway.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InvalidValueError, MaskError, ShapeError
from .tensor import (
    Tensor,
    assemble_rows,
    cumsum0,
    masked_softmax,
    matmul,
    repeat_rows,
    softmax,
    take_rows,
    transpose2d,
)


@dataclass(frozen=True)
class MeaConfig:
    """Sampling configuration for maximum-entropy attention.

    `c` scales both budgets: u = ceil(c*sqrt(L_Q)) exact rows and
    U = ceil(c*sqrt(L_K)) sampled keys, each capped by the respective
    length.  Explicit `u`/`U` override the formulas (u=0 forces the
    fallback branch everywhere, a hook the tests rely on).
    """

    c: float = 3.0
    U: int | None = None
    u: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.c <= 0:
            raise ConfigError(f"sampling factor c must be positive, got {self.c}")
        if self.U is not None and self.U < 1:
            raise ConfigError(f"U must be at least 1, got {self.U}")
        if self.u is not None and self.u < 0:
            raise ConfigError(f"u must be non-negative, got {self.u}")

    def resolve_u(self, n_queries: int) -> int:
        if self.u is not None:
            return min(self.u, n_queries)
        return min(n_queries, math.ceil(self.c * math.sqrt(n_queries)))

    def resolve_U(self, n_keys: int) -> int:
        if self.U is not None:
            if self.U > n_keys:
                raise ConfigError(f"U={self.U} exceeds the {n_keys} available keys")
            return self.U
        return min(n_keys, math.ceil(self.c * math.sqrt(n_keys)))


@dataclass
class SelectionResult:
    """Variance scores, the selected query set, and the shared key sample."""

    variance_per_query: np.ndarray
    selected: np.ndarray
    sampled_key_indices: np.ndarray


@dataclass
class OpCounter:
    """Instrumented dot-product accounting for the attention kernels.

    `full_rows` counts query rows given an exact attention row;
    `full_row_products` is those rows times the key count, and
    `sampled_products` counts the U-column variance pass, so
    `dot_products` matches the u*L_K + U*L_Q cost model.
    """

    full_rows: int = 0
    full_row_products: int = 0
    sampled_products: int = 0

    @property
    def dot_products(self) -> int:
        return self.full_row_products + self.sampled_products

    def reset(self) -> None:
        self.full_rows = 0
        self.full_row_products = 0
        self.sampled_products = 0


ATTENTION_COUNTER = OpCounter()


# -- masks ---------------------------------------------------------------

def _validate_mask(mask, L_Q: int, L_K: int):
    """Normalize a mask argument to None, 'causal', or a bool matrix."""
    if mask is None:
        return None
    if isinstance(mask, str):
        if mask != "causal":
            raise ConfigError(f"unknown mask kind {mask!r}")
        if L_Q != L_K:
            raise ShapeError(f"causal mask needs L_Q == L_K, got {L_Q} and {L_K}")
        return "causal"
    m = np.asarray(mask, dtype=bool)
    if m.shape != (L_Q, L_K):
        raise ShapeError(f"mask shape {m.shape} does not match ({L_Q}, {L_K})")
    rows = m.any(axis=1)
    if not rows.all():
        raise MaskError(f"query {int(np.argmin(rows))} has no visible keys")
    return m


def _visible_matrix(mask, L_Q: int, L_K: int) -> np.ndarray | None:
    if mask is None:
        return None
    if isinstance(mask, str):
        return np.tril(np.ones((L_Q, L_K), dtype=bool))
    return mask


def _softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_qkv(Q: Tensor, K: Tensor, V: Tensor) -> tuple[int, int, int]:
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise ShapeError("attention operands must be 2-D")
    L_Q, d = Q.shape
    L_K, d_k = K.shape
    if d != d_k:
        raise ShapeError(f"query width {d} does not match key width {d_k}")
    if V.shape[0] != L_K:
        raise ShapeError(f"value rows {V.shape[0]} do not match key rows {L_K}")
    return L_Q, L_K, d


# -- dense reference -------------------------------------------------------

def dense_attention(Q, K, V, mask=None) -> Tensor:
    """Exact scaled dot-product attention; the oracle the sparse path is
    checked against."""
    Q = Q if isinstance(Q, Tensor) else Tensor(Q)
    K = K if isinstance(K, Tensor) else Tensor(K)
    V = V if isinstance(V, Tensor) else Tensor(V)
    L_Q, L_K, d = _check_qkv(Q, K, V)
    mask = _validate_mask(mask, L_Q, L_K)
    ATTENTION_COUNTER.full_rows += L_Q
    ATTENTION_COUNTER.full_row_products += L_Q * L_K
    scores = matmul(Q, transpose2d(K)) * (1.0 / math.sqrt(d))
    if mask is None:
        probs = softmax(scores)
    else:
        probs = masked_softmax(scores, _visible_matrix(mask, L_Q, L_K))
    return matmul(probs, V)


# -- entropy ---------------------------------------------------------------

def entropy(p) -> float:
    """Shannon entropy -sum(p ln p) of a probability vector, with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if p.size < 1:
        raise ShapeError("entropy needs a non-empty vector")
    if (p < 0).any():
        raise InvalidValueError("entropy received a negative probability")
    s = p.sum()
    if abs(s - 1.0) > 1e-6:
        raise InvalidValueError(f"probabilities sum to {s}, not 1 within 1e-6")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def _row_entropies(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


# -- variance proxy ----------------------------------------------------------

def variance_proxy(Q, K, cfg: MeaConfig, mask=None) -> SelectionResult:
    """Rank queries by the variance of their sampled softmax rows.

    One seeded key sample of size U is shared by all queries so the
    variances are comparable.  Under a mask each query only sees the
    sampled keys inside its visible set; an empty intersection counts as
    zero variance (the maximum-entropy reading).  Selection keeps the
    lowest variances: globally top-u when unmasked, and prefix-locally
    under a causal mask so that a query's status never depends on
    anything at a later position.
    """
    Qd = Q.data if isinstance(Q, Tensor) else np.asarray(Q, dtype=np.float64)
    Kd = K.data if isinstance(K, Tensor) else np.asarray(K, dtype=np.float64)
    if Qd.ndim != 2 or Kd.ndim != 2 or Qd.shape[1] != Kd.shape[1]:
        raise ShapeError("variance_proxy expects 2-D Q and K with equal widths")
    L_Q, d = Qd.shape
    L_K = Kd.shape[0]
    mask = _validate_mask(mask, L_Q, L_K)
    U = cfg.resolve_U(L_K)
    rng = np.random.default_rng(cfg.seed)
    sample = np.sort(rng.choice(L_K, size=U, replace=False))
    scores = (Qd @ Kd[sample].T) / math.sqrt(d)
    ATTENTION_COUNTER.sampled_products += U * L_Q

    if mask is None:
        probs = _softmax_np(scores)
        variance = probs.var(axis=1)
    else:
        vis = _visible_matrix(mask, L_Q, L_K)[:, sample]
        k = vis.sum(axis=1)
        masked = np.where(vis, scores, -np.inf)
        seen = k > 0
        row_max = masked.max(axis=1, keepdims=True)
        row_max = np.where(np.isfinite(row_max), row_max, 0.0)
        e = np.exp(masked - row_max)
        denom = e.sum(axis=1, keepdims=True)
        p = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)
        # population variance over the k visible entries; rows sum to 1 so
        # the mean is 1/k and hidden zeros drop out of the square sum
        safe_k = np.maximum(k, 1)
        variance = np.where(seen, (p * p).sum(axis=1) / safe_k - 1.0 / safe_k ** 2, 0.0)
        variance = np.maximum(variance, 0.0)

    if isinstance(mask, str):
        # prefix-local selection: query i is ranked only among queries
        # 0..i so its status cannot depend on later positions
        idx = np.arange(L_Q)
        earlier = idx[None, :] <= idx[:, None]
        beats = (variance[None, :] < variance[:, None]) | (
            (variance[None, :] == variance[:, None]) & (idx[None, :] < idx[:, None])
        )
        rank = (earlier & beats).sum(axis=1)
        if cfg.u is not None:
            budget = np.minimum(cfg.u, idx + 1)
        else:
            budget = np.minimum(idx + 1, np.ceil(cfg.c * np.sqrt(idx + 1.0)).astype(np.intp))
        selected = np.flatnonzero(rank < budget).astype(np.intp)
    else:
        u = cfg.resolve_u(L_Q)
        order = np.lexsort((np.arange(L_Q), variance))
        selected = np.sort(order[:u])
    return SelectionResult(
        variance_per_query=variance,
        selected=selected,
        sampled_key_indices=sample,
    )


# -- maximum-entropy attention ------------------------------------------------

def mea_attention(Q, K, V, cfg: MeaConfig, mask=None) -> Tensor:
    """Sparse attention: exact rows for the selected queries, the mean of
    the visible value rows for everyone else."""
    Q = Q if isinstance(Q, Tensor) else Tensor(Q)
    K = K if isinstance(K, Tensor) else Tensor(K)
    V = V if isinstance(V, Tensor) else Tensor(V)
    L_Q, L_K, d = _check_qkv(Q, K, V)
    mask = _validate_mask(mask, L_Q, L_K)
    sel = variance_proxy(Q, K, cfg, mask)
    selected = sel.selected
    chosen = np.zeros(L_Q, dtype=bool)
    chosen[selected] = True
    non_selected = np.flatnonzero(~chosen)
    pieces = []
    if selected.size:
        ATTENTION_COUNTER.full_rows += int(selected.size)
        ATTENTION_COUNTER.full_row_products += int(selected.size) * L_K
        Qs = take_rows(Q, selected)
        scores = matmul(Qs, transpose2d(K)) * (1.0 / math.sqrt(d))
        if mask is None:
            probs = softmax(scores)
        else:
            vis = _visible_matrix(mask, L_Q, L_K)[selected]
            probs = masked_softmax(scores, vis)
        pieces.append((selected, matmul(probs, V)))
    if non_selected.size:
        if mask is None:
            fallback = repeat_rows(V.mean(axis=0, keepdims=True), int(non_selected.size))
        elif isinstance(mask, str):
            counts = np.arange(1, L_K + 1, dtype=np.float64)[:, None]
            prefix_means = cumsum0(V) * (1.0 / counts)
            fallback = take_rows(prefix_means, non_selected)
        else:
            mf = Tensor(mask.astype(np.float64))
            counts = mask.sum(axis=1, keepdims=True).astype(np.float64)
            means = matmul(mf, V) * (1.0 / counts)
            fallback = take_rows(means, non_selected)
        pieces.append((non_selected, fallback))
    return assemble_rows(L_Q, pieces)


# -- score statistics ----------------------------------------------------------

HISTOGRAM_BINS = 64


@dataclass
class AttentionStats:
    """Softmax-probability histogram plus per-row entropies of a score matrix."""

    bin_edges: np.ndarray
    counts: np.ndarray
    row_entropy: np.ndarray
    n_rows: int = 0
    n_cols: int = 0

    def histogram_rows(self) -> list[tuple[float, float, int]]:
        return [
            (float(self.bin_edges[i]), float(self.bin_edges[i + 1]), int(self.counts[i]))
            for i in range(len(self.counts))
        ]

    def histogram_csv(self) -> str:
        lines = ["bin_lo,bin_hi,count"]
        lines += [f"{lo!r},{hi!r},{c}" for lo, hi, c in self.histogram_rows()]
        return "\n".join(lines) + "\n"

    def entropy_csv(self) -> str:
        lines = ["row,entropy"]
        lines += [f"{i},{float(h)!r}" for i, h in enumerate(self.row_entropy)]
        return "\n".join(lines) + "\n"


def attention_stats(scores) -> AttentionStats:
    """Histogram the softmax probabilities of a raw score matrix and report
    each row's entropy; 64 bins over [0, 1]."""
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    if s.ndim != 2:
        raise ShapeError("attention_stats expects a 2-D score matrix")
    if not np.isfinite(s).all():
        raise InvalidValueError("attention_stats received non-finite scores")
    probs = _softmax_np(s)
    counts, edges = np.histogram(probs, bins=HISTOGRAM_BINS, range=(0.0, 1.0))
    return AttentionStats(
        bin_edges=edges,
        counts=counts,
        row_entropy=_row_entropies(probs),
        n_rows=s.shape[0],
        n_cols=s.shape[1],
    )
