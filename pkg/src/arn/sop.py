"""Second-order pooling with mean shift and power normalization.

Feature columns are pooled into a C x C co-occurrence matrix whose size
does not depend on how many columns (space-time positions) there are.
All functions accept an unbatched (C, N) or batched (B, C, N) column set.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DimensionError
from .tensor import Tensor

DEFAULT_SIGMA = 2.0
DEFAULT_SHIFT = 0.5


def as_columns(features: Tensor) -> Tensor:
    """Vectorize a (C, T, H, W) or (B, C, T, H, W) feature map into columns."""
    if features.ndim == 4:
        c = features.shape[0]
        return features.reshape(c, -1)
    if features.ndim == 5:
        b, c = features.shape[:2]
        return features.reshape(b, c, -1)
    raise DimensionError(f"expected a 4-D or 5-D feature map, got {features.shape}")


def mean_shift(cols: Tensor, shift: float) -> Tensor:
    """Replace every column phi by phi - shift * mean(columns)."""
    if not 0.0 <= shift <= 1.0:
        raise ConfigError(f"shift factor must lie in [0, 1], got {shift}")
    cols = tn.as_tensor(cols)
    if cols.shape[-1] < 1:
        raise DimensionError("column set is empty")
    if shift == 0.0:
        return cols
    mu = cols.mean(axes=-1, keepdims=True)
    return cols - tn.scalar_mul(mu, shift)


def second_order_pool(cols: Tensor) -> Tensor:
    """(1/N) Phi Phi^T for a C x N column set."""
    cols = tn.as_tensor(cols)
    if cols.ndim not in (2, 3):
        raise DimensionError(f"expected (C, N) or (B, C, N), got {cols.shape}")
    n = cols.shape[-1]
    if n < 1:
        raise DimensionError("cannot pool zero columns")
    cols = canonical_order(cols)
    axes = (1, 0) if cols.ndim == 2 else (0, 2, 1)
    return tn.scalar_mul(tn.matmul(cols, cols.permute(axes)), 1.0 / n)


def canonical_order(cols: Tensor) -> Tensor:
    """Sort the columns lexicographically.

    The pooled matrix is a sum over columns; fixing their order makes the
    floating-point result bit-identical under any permutation of positions.
    """
    data = cols.data if cols.ndim == 3 else cols.data[None]
    order = np.stack([np.lexsort(c[::-1]) for c in data])
    if cols.ndim == 2:
        order = order[0]
    idx = np.broadcast_to(order[..., None, :], cols.shape)
    return tn.take_along(cols, idx, axis=-1)


def power_normalize(x: Tensor, sigma: float = DEFAULT_SIGMA) -> Tensor:
    """Zero-centred sigmoid (1 - e^{-sigma x}) / (1 + e^{-sigma x}) = tanh(sigma x / 2).

    A negative ``sigma`` reproduces the literal (1 - e^{sigma x}) / (1 + e^{sigma x})
    form, which flips polarity.
    """
    if sigma == 0:
        raise ConfigError("power normalization slope sigma must be non-zero")
    # tanh keeps the map exactly odd in floating point
    return tn.tanh(tn.scalar_mul(tn.as_tensor(x), 0.5 * sigma))


def spm(features: Tensor, sigma: float = DEFAULT_SIGMA, shift: float = DEFAULT_SHIFT) -> Tensor:
    """Feature map -> power-normalized second-order pooling matrix."""
    cols = as_columns(features)
    return power_normalize(second_order_pool(mean_shift(cols, shift)), sigma)


def poly_kernel(cols_a, cols_b, r: int) -> float:
    """(1/(N N*)) sum_n sum_n' <phi_n, phi*_n'>^r over two column sets."""
    a = np.asarray(cols_a.data if isinstance(cols_a, Tensor) else cols_a, dtype=np.float64)
    b = np.asarray(cols_b.data if isinstance(cols_b, Tensor) else cols_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("poly_kernel expects two (C, N) column sets")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"channel counts differ: {a.shape[0]} vs {b.shape[0]}")
    if int(r) != r or r < 1:
        raise ConfigError(f"kernel degree must be a positive integer, got {r}")
    gram = a.T @ b
    return float(np.mean(gram ** int(r)))
