"""Long time-series forecasting with maximum-entropy sparse attention,
keys/values distilling, and trend/seasonal decomposition."""

from .attention import (
    ATTENTION_COUNTER,
    AttentionStats,
    MeaConfig,
    SelectionResult,
    attention_stats,
    dense_attention,
    entropy,
    mea_attention,
    variance_proxy,
)
from .decomposition import DecompositionPair, series_decomp
from .distilling import (
    ComplexityPlan,
    DistillConfig,
    DistilledKV,
    KVDistiller,
    complexity_plan,
    compute_l,
    distilled_length,
    split_heads,
)
from .embedding import (
    CalendarStamp,
    InputEmbedding,
    TimeEmbedTables,
    positional_encoding,
    time_embedding,
)
from .errors import (
    ConfigError,
    DataError,
    InfomaxError,
    InvalidValueError,
    MaskError,
    ShapeError,
    TrainingError,
    VocabError,
)
from .model import (
    Adam,
    Infomaxformer,
    ModelConfig,
    fit,
    load_checkpoint,
    mse_loss,
    save_checkpoint,
    train_step,
)
from .tensor import GradientReport, Tensor, grad_check
from .data import (
    RawSeries,
    Window,
    WindowedDataset,
    evaluate,
    load_csv,
    normalize_zero_mean,
    prepare_splits,
    synthetic_series,
    window_dataset,
)

__version__ = "0.1.0"
