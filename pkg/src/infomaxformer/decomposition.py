"""Trend/seasonal split of a series via a centered moving average.

The trend is the moving average of the input and the seasonal part is
the residual, so the two always sum back to the input exactly.  The
block is used once on the raw input series and inside every decoder
layer on the model-width stream.
"""

from __future__ import annotations

from dataclasses import dataclass

from .tensor import Tensor, avgpool1d_moving, mul

DEFAULT_WINDOW = 25


@dataclass
class DecompositionPair:
    trend: Tensor
    seasonal: Tensor
    window: int


def series_decomp(x, window: int = DEFAULT_WINDOW) -> DecompositionPair:
    """Split [L, d] into (trend, seasonal) with trend + seasonal == x."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    trend = avgpool1d_moving(x, window)
    seasonal = x + mul(trend, -1.0)
    return DecompositionPair(trend=trend, seasonal=seasonal, window=window)
