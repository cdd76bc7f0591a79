"""The forecasting network: seasonal encoder, generative decoder with
per-layer decomposition and trend re-injection, loss, optimizer, and the
training loop with early stopping.

The raw input window is decomposed once; the seasonal part is embedded
and drives both encoder and decoder, and the time-mean of the trend is
added back onto the projected decoder output so the network only has to
model the seasonal structure.  The decoder emits every horizon step in a
single forward pass.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .attention import MeaConfig, dense_attention, mea_attention
from .decomposition import series_decomp
from .distilling import DistillConfig, KVDistiller, check_d_model
from .embedding import InputEmbedding
from .errors import ConfigError, DataError, ShapeError, TrainingError
from .tensor import Tensor, concat, conv1d, matmul, relu

DEFAULT_LR = 1e-4


@dataclass(frozen=True)
class ModelConfig:
    """All architecture and training hyperparameters.

    `L_label` defaults to `L_y`; pass `label_double=True` to use 2*L_y.
    Ablation switches: `use_tsd`, `use_mea` (dense attention when off),
    `use_distill` (linear K/V projections when off).
    """

    L_x: int = 96
    L_y: int = 24
    L_label: int | None = None
    d_x: int = 1
    d_y: int = 1
    d_model: int = 512
    N: int = 3
    M: int = 2
    d_ff: int | None = None
    mea: MeaConfig = field(default_factory=MeaConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    decomp_window: int = 25
    lr: float = DEFAULT_LR
    batch_size: int = 32
    max_epochs: int = 10
    early_stop_patience: int = 3
    steps_per_epoch: int | None = None
    label_double: bool = False
    val_subset: int | None = None
    use_tsd: bool = True
    use_mea: bool = True
    use_distill: bool = True
    trend_projection: bool = False
    normalize_std: bool = True

    def __post_init__(self):
        for name in ("L_x", "L_y", "d_x", "d_y", "d_model", "N", "M"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.L_label is not None and self.L_label > self.L_x:
            raise ConfigError(f"L_label={self.L_label} exceeds L_x={self.L_x}")
        if self.label_length > self.L_x:
            raise ConfigError(f"label length {self.label_length} exceeds L_x={self.L_x}")
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even, got {self.d_model}")
        check_d_model(self.d_model, self.distill.h)
        if self.decomp_window < 1 or self.decomp_window % 2 == 0:
            raise ConfigError(f"decomposition window must be odd, got {self.decomp_window}")
        if self.lr <= 0 or self.batch_size < 1:
            raise ConfigError("learning rate and batch size must be positive")

    @property
    def label_length(self) -> int:
        if self.L_label is not None:
            return self.L_label
        return 2 * self.L_y if self.label_double else self.L_y

    @property
    def hidden_width(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d_model

    @property
    def heads(self) -> int:
        return self.distill.heads

    def to_dict(self) -> dict:
        return {
            "L_x": self.L_x,
            "L_y": self.L_y,
            "L_label": self.L_label,
            "d_x": self.d_x,
            "d_y": self.d_y,
            "d_model": self.d_model,
            "N": self.N,
            "M": self.M,
            "d_ff": self.d_ff,
            "mea": {"c": self.mea.c, "U": self.mea.U, "u": self.mea.u, "seed": self.mea.seed},
            "distill": {"l": self.distill.l, "h": self.distill.h},
            "decomp_window": self.decomp_window,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "early_stop_patience": self.early_stop_patience,
            "steps_per_epoch": self.steps_per_epoch,
            "val_subset": self.val_subset,
            "label_double": self.label_double,
            "use_tsd": self.use_tsd,
            "use_mea": self.use_mea,
            "use_distill": self.use_distill,
            "trend_projection": self.trend_projection,
            "normalize_std": self.normalize_std,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = set(cls.to_dict(cls()))  # field names via a default instance
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config field {sorted(unknown)[0]!r}")
        kw = dict(raw)
        if "mea" in kw:
            mea_raw = dict(kw.pop("mea"))
            bad = set(mea_raw) - {"c", "U", "u", "seed"}
            if bad:
                raise ConfigError(f"unknown config field mea.{sorted(bad)[0]!r}")
            kw["mea"] = MeaConfig(**mea_raw)
        if "distill" in kw:
            d_raw = dict(kw.pop("distill"))
            bad = set(d_raw) - {"l", "h"}
            if bad:
                raise ConfigError(f"unknown config field distill.{sorted(bad)[0]!r}")
            kw["distill"] = DistillConfig(**d_raw)
        return cls(**kw)


# -- building blocks ---------------------------------------------------

class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(d_in)
        self.w = Tensor(rng.uniform(-bound, bound, size=(d_in, d_out)), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.w)
        return out + self.b if self.b is not None else out

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.w": self.w}
        if self.b is not None:
            out[f"{prefix}.b"] = self.b
        return out


class MLPBlock:
    """Position-wise feed-forward block: two width-1 convolutions with a ReLU."""

    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        b1 = 1.0 / math.sqrt(d_model)
        b2 = 1.0 / math.sqrt(d_ff)
        self.w1 = Tensor(rng.uniform(-b1, b1, size=(d_ff, d_model, 1)), requires_grad=True)
        self.b1 = Tensor(np.zeros(d_ff), requires_grad=True)
        self.w2 = Tensor(rng.uniform(-b2, b2, size=(d_model, d_ff, 1)), requires_grad=True)
        self.b2 = Tensor(np.zeros(d_model), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        hidden = relu(conv1d(x, self.w1, self.b1, padding="same"))
        return conv1d(hidden, self.w2, self.b2, padding="same")

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }


class MultiHeadMEA:
    """Multi-head attention block with distilled or projected keys/values.

    `full_res_kv` forces linear K/V projections at the query's time
    resolution; the decoder's masked self-attention needs this because
    causal masking is only meaningful when keys align with query
    positions (time-pooled keys straddle a query's future).
    """

    def __init__(
        self,
        cfg: ModelConfig,
        rng: np.random.Generator,
        head_seeds: np.ndarray,
        full_res_kv: bool = False,
    ):
        d_model = cfg.d_model
        self.heads = cfg.heads
        self.d_head = d_model // self.heads
        self.use_mea = cfg.use_mea
        self.wq = Linear(d_model, d_model, rng, bias=False)
        self.distiller: KVDistiller | None = None
        self.wk: Linear | None = None
        self.wv: Linear | None = None
        if full_res_kv or not cfg.use_distill:
            self.wk = Linear(d_model, d_model, rng, bias=False)
            self.wv = Linear(d_model, d_model, rng, bias=False)
        else:
            self.distiller = KVDistiller(d_model, cfg.distill, rng)
        self.wo = Linear(d_model, d_model, rng, bias=False)
        self.head_cfgs = [replace(cfg.mea, seed=int(s)) for s in head_seeds[: self.heads]]

    def _head_kv(self, x_kv: Tensor):
        if self.distiller is not None:
            kv = self.distiller.distill(x_kv)
            return [(kv.keys[h], kv.values[h]) for h in range(self.heads)]
        k = self.wk(x_kv)
        v = self.wv(x_kv)
        from .tensor import slice_cols

        dh = self.d_head
        return [
            (slice_cols(k, h * dh, (h + 1) * dh), slice_cols(v, h * dh, (h + 1) * dh))
            for h in range(self.heads)
        ]

    def __call__(self, x_q: Tensor, x_kv: Tensor, mask=None) -> Tensor:
        from .tensor import slice_cols

        q = self.wq(x_q)
        kvs = self._head_kv(x_kv)
        dh = self.d_head
        outs = []
        for h, (k_h, v_h) in enumerate(kvs):
            q_h = slice_cols(q, h * dh, (h + 1) * dh)
            if self.use_mea:
                outs.append(mea_attention(q_h, k_h, v_h, self.head_cfgs[h], mask))
            else:
                outs.append(dense_attention(q_h, k_h, v_h, mask))
        return self.wo(concat(outs, axis=1))

    def score_matrices(self, x_q: Tensor, x_kv: Tensor) -> list[np.ndarray]:
        """Full per-head score matrices for diagnostics; never used on the
        training path (the sparse kernel does not materialize them)."""
        q = x_q.data @ self.wq.w.data
        kvs = self._head_kv(x_kv)
        dh = self.d_head
        out = []
        for h, (k_h, _) in enumerate(kvs):
            q_h = q[:, h * dh:(h + 1) * dh]
            out.append((q_h @ k_h.data.T) / math.sqrt(dh))
        return out

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        out.update(self.wq.named(f"{prefix}.wq"))
        if self.distiller is not None:
            out.update(self.distiller.named(f"{prefix}.kv"))
        else:
            out.update(self.wk.named(f"{prefix}.wk"))
            out.update(self.wv.named(f"{prefix}.wv"))
        out.update(self.wo.named(f"{prefix}.wo"))
        return out


class EncoderLayer:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, head_seeds: np.ndarray):
        self.attn = MultiHeadMEA(cfg, rng, head_seeds)
        self.mlp = MLPBlock(cfg.d_model, cfg.hidden_width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(x, x)
        return x + self.mlp(x)

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = self.attn.named(f"{prefix}.attn")
        out.update(self.mlp.named(f"{prefix}.mlp"))
        return out


class DecoderLayer:
    """Masked self-attention, decomposition, cross-attention over the
    encoder memory, and the feed-forward block with trend re-injection."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, seeds_self, seeds_cross):
        self.self_attn = MultiHeadMEA(cfg, rng, seeds_self, full_res_kv=True)
        self.cross_attn = MultiHeadMEA(cfg, rng, seeds_cross)
        self.mlp = MLPBlock(cfg.d_model, cfg.hidden_width, rng)
        self.window = cfg.decomp_window
        self.use_tsd = cfg.use_tsd

    def __call__(self, x: Tensor, memory: Tensor) -> Tensor:
        x = x + self.self_attn(x, x, mask="causal")
        if self.use_tsd:
            pair = series_decomp(x, self.window)
            trend, x = pair.trend, pair.seasonal
        else:
            trend = None
        x = x + self.cross_attn(x, memory)
        out = x + self.mlp(x)
        return out + trend if trend is not None else out

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = self.self_attn.named(f"{prefix}.self")
        out.update(self.cross_attn.named(f"{prefix}.cross"))
        out.update(self.mlp.named(f"{prefix}.mlp"))
        return out


# -- the full network ---------------------------------------------------

class Infomaxformer:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        if cfg.use_tsd and cfg.d_y != cfg.d_x and not cfg.trend_projection:
            raise ConfigError(
                f"d_y={cfg.d_y} differs from d_x={cfg.d_x}; enable trend_projection "
                "to map the input trend into output space"
            )
        self.cfg = cfg
        self.seed = seed
        init_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        sample_seeds = np.random.SeedSequence([seed, 1]).generate_state(
            cfg.heads * (cfg.N + 2 * cfg.M) + 8
        )
        cursor = 0

        def next_seeds(n):
            nonlocal cursor
            out = sample_seeds[cursor:cursor + n]
            cursor += n
            return out

        self.enc_embed = InputEmbedding(cfg.d_x, cfg.d_model, init_rng)
        self.dec_embed = InputEmbedding(cfg.d_x, cfg.d_model, init_rng)
        self.encoder = [
            EncoderLayer(cfg, init_rng, next_seeds(cfg.heads)) for _ in range(cfg.N)
        ]
        self.decoder = [
            DecoderLayer(cfg, init_rng, next_seeds(cfg.heads), next_seeds(cfg.heads))
            for _ in range(cfg.M)
        ]
        self.proj = Linear(cfg.d_model, cfg.d_y, init_rng, bias=True)
        self.trend_proj = (
            Linear(cfg.d_x, cfg.d_y, init_rng, bias=True) if cfg.trend_projection else None
        )
        self.decoder_passes = 0

    # -- parameters ---------------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.enc_embed.named("enc_embed"))
        out.update(self.dec_embed.named("dec_embed"))
        for i, layer in enumerate(self.encoder):
            out.update(layer.named(f"encoder.{i}"))
        for i, layer in enumerate(self.decoder):
            out.update(layer.named(f"decoder.{i}"))
        out.update(self.proj.named("proj"))
        if self.trend_proj is not None:
            out.update(self.trend_proj.named("trend_proj"))
        return out

    def zero_parameters(self) -> None:
        for p in self.parameters().values():
            p.data[...] = 0.0

    # -- forward pieces -------------------------------------------------
    def decoder_input_scalars(self, label_scalars: np.ndarray, L_y: int) -> np.ndarray:
        """Label scalars followed by L_y zero-placeholder rows."""
        label_scalars = np.asarray(label_scalars, dtype=np.float64)
        pad = np.zeros((L_y, label_scalars.shape[1]))
        return np.concatenate([label_scalars, pad], axis=0)

    def build_decoder_input(self, label_scalars, dec_stamps, L_y: int | None = None) -> Tensor:
        """Embed the decoder stream: known label rows plus zero scalars for
        the horizon, with true calendar features throughout."""
        if L_y is None:
            L_y = self.cfg.L_y
        if isinstance(label_scalars, Tensor):
            L_label = label_scalars.shape[0]
            if L_y:
                zeros = Tensor(np.zeros((L_y, label_scalars.shape[1])))
                scalars = concat([label_scalars, zeros], axis=0)
            else:
                scalars = label_scalars
        else:
            scalars = Tensor(self.decoder_input_scalars(label_scalars, L_y))
            L_label = len(label_scalars)
        if len(dec_stamps) != L_label + L_y:
            raise DataError(
                f"decoder needs {L_label + L_y} stamps (label plus horizon), got {len(dec_stamps)}"
            )
        return self.dec_embed(scalars, dec_stamps)

    def encode(self, seasonal: Tensor, enc_stamps) -> Tensor:
        x = self.enc_embed(seasonal, enc_stamps)
        for layer in self.encoder:
            x = layer(x)
        return x

    def decode(self, dec_in: Tensor, memory: Tensor) -> Tensor:
        x = dec_in
        for layer in self.decoder:
            x = layer(x, memory)
        self.decoder_passes += 1
        return x

    def forward(self, window) -> Tensor:
        cfg = self.cfg
        x_raw = np.asarray(window.input, dtype=np.float64)
        if x_raw.shape != (cfg.L_x, cfg.d_x):
            raise ShapeError(f"input window {x_raw.shape} does not match ({cfg.L_x}, {cfg.d_x})")
        if len(window.enc_stamps) != cfg.L_x:
            raise DataError(f"need {cfg.L_x} input stamps, got {len(window.enc_stamps)}")
        x = Tensor(x_raw)
        if cfg.use_tsd:
            pair = series_decomp(x, cfg.decomp_window)
            seasonal = pair.seasonal
            trend_mean = pair.trend.data.mean(axis=0)
        else:
            seasonal = x
            trend_mean = None
        memory = self.encode(seasonal, window.enc_stamps)
        label = seasonal[slice(cfg.L_x - cfg.label_length, cfg.L_x)]
        dec_in = self.build_decoder_input(label, window.dec_stamps, cfg.L_y)
        y = self.decode(dec_in, memory)
        pred = self.proj(y[slice(cfg.label_length, cfg.label_length + cfg.L_y)])
        if trend_mean is not None:
            if self.trend_proj is not None:
                pred = pred + self.trend_proj(Tensor(trend_mean[None, :]))
            else:
                pred = pred + Tensor(trend_mean)
        return pred

    def predict(self, window) -> np.ndarray:
        return self.forward(window).data

    def encoder_score_matrices(self, window) -> list[list[np.ndarray]]:
        """Per-layer, per-head dense score matrices of the encoder on one window."""
        cfg = self.cfg
        x = Tensor(np.asarray(window.input, dtype=np.float64))
        if cfg.use_tsd:
            x = series_decomp(x, cfg.decomp_window).seasonal
        stream = self.enc_embed(x, window.enc_stamps)
        collected = []
        for layer in self.encoder:
            collected.append(layer.attn.score_matrices(stream, stream))
            stream = layer(stream)
        return collected


# -- loss and optimization ------------------------------------------------

def mse_loss(pred: Tensor, target) -> Tensor:
    t = np.asarray(target, dtype=np.float64)
    if pred.shape != t.shape:
        raise ShapeError(f"prediction {pred.shape} and target {t.shape} disagree")
    diff = pred - Tensor(t)
    return (diff * diff).mean()


class Adam:
    """Adaptive-moment optimizer with the conventional defaults."""

    def __init__(self, params: dict[str, Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_step(model: Infomaxformer, batch, opt: Adam, lr: float) -> float:
    """One optimizer update on a batch of windows; returns the batch loss."""
    opt.zero_grad()
    total = None
    for window in batch:
        loss = mse_loss(model.forward(window), window.target)
        total = loss if total is None else total + loss
    total = total * (1.0 / len(batch))
    value = total.item()
    if not math.isfinite(value):
        raise TrainingError(f"non-finite training loss {value}; aborting")
    total.backward()
    opt.step(lr)
    return value


def validation_loss(model: Infomaxformer, windows) -> float:
    if not windows:
        return float("nan")
    errs = [float(np.mean((model.predict(w) - w.target) ** 2)) for w in windows]
    return float(np.mean(errs))


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    history: list[EpochStats]
    steps: int
    stopped_early: bool


def fit(
    model: Infomaxformer,
    train_windows,
    val_windows,
    seed: int = 0,
    max_steps: int | None = None,
) -> TrainResult:
    """Train with the halving learning-rate schedule and 3-epoch-patience
    early stopping on the validation loss."""
    cfg = model.cfg
    opt = Adam(model.parameters())
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    if cfg.val_subset is not None and len(val_windows) > cfg.val_subset:
        # evenly spaced deterministic subset keeps epochs cheap
        picks = np.linspace(0, len(val_windows) - 1, cfg.val_subset).astype(int)
        val_windows = [val_windows[i] for i in picks]
    history: list[EpochStats] = []
    best = math.inf
    bad = 0
    steps = 0
    stopped = False
    for epoch in range(cfg.max_epochs):
        lr = cfg.lr * (2.0 ** (-epoch))
        order = rng.permutation(len(train_windows))
        losses = []
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            if cfg.steps_per_epoch is not None and n_batches >= cfg.steps_per_epoch:
                break
            if max_steps is not None and steps >= max_steps:
                break
            batch = [train_windows[i] for i in order[start:start + cfg.batch_size]]
            losses.append(train_step(model, batch, opt, lr))
            n_batches += 1
            steps += 1
        train_loss = float(np.mean(losses)) if losses else math.nan
        val_loss = validation_loss(model, val_windows)
        history.append(EpochStats(epoch=epoch, lr=lr, train_loss=train_loss, val_loss=val_loss))
        if val_loss < best:
            best = val_loss
            bad = 0
        else:
            bad += 1
            if bad >= cfg.early_stop_patience:
                stopped = True
                break
        if max_steps is not None and steps >= max_steps:
            break
    return TrainResult(history=history, steps=steps, stopped_early=stopped)


# -- checkpoints ------------------------------------------------------------

CHECKPOINT_FORMAT = "infomax-checkpoint-v1"


def save_checkpoint(model: Infomaxformer, path, rng_state: dict | None = None) -> None:
    """Write config, named parameter arrays (bit-exact), and RNG state."""
    params = {}
    for name, p in model.parameters().items():
        params[name] = {
            "shape": list(p.data.shape),
            "dtype": str(p.data.dtype),
            "data": base64.b64encode(np.ascontiguousarray(p.data).tobytes()).decode("ascii"),
        }
    blob = {
        "format": CHECKPOINT_FORMAT,
        "config": model.cfg.to_dict(),
        "seed": model.seed,
        "rng_state": rng_state,
        "params": params,
    }
    with open(path, "w") as f:
        json.dump(blob, f, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path) -> tuple[Infomaxformer, dict | None]:
    with open(path) as f:
        blob = json.load(f)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"not a checkpoint file: {path}")
    cfg = ModelConfig.from_dict(blob["config"])
    model = Infomaxformer(cfg, seed=blob.get("seed", 0))
    params = model.parameters()
    stored = blob["params"]
    if set(stored) != set(params):
        raise ConfigError("checkpoint parameters do not match the configured architecture")
    for name, spec in stored.items():
        arr = np.frombuffer(
            base64.b64decode(spec["data"]), dtype=np.dtype(spec["dtype"])
        ).reshape(spec["shape"])
        if tuple(arr.shape) != params[name].data.shape:
            raise ConfigError(f"checkpoint parameter {name} has shape {arr.shape}")
        params[name].data = arr.copy()
    return model, blob.get("rng_state")
