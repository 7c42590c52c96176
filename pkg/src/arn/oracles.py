"""Slow reference implementations used by the verification suite and the tests.

Everything here is written with explicit Python loops and no tensor-core
code, so agreement with the fast kernels is an independent check.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import selfsup as ss
from .encoder import AttentionPair


def loop_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def loop_conv3d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride=(1, 1, 1), padding=(0, 0, 0)) -> np.ndarray:
    """Direct 7-loop cross-correlation of (N, C_in, T, H, W) with (C_out, C_in, kt, kh, kw)."""
    n, cin, t, h, wd = x.shape
    cout, cin2, kt, kh, kw = w.shape
    assert cin == cin2
    st, sh, sw = stride
    pt, ph, pw = padding
    xp = np.zeros((n, cin, t + 2 * pt, h + 2 * ph, wd + 2 * pw))
    xp[:, :, pt : pt + t, ph : ph + h, pw : pw + wd] = x
    to = (t + 2 * pt - kt) // st + 1
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((n, cout, to, ho, wo))
    for i in range(n):
        for o in range(cout):
            for z in range(to):
                for y in range(ho):
                    for q in range(wo):
                        acc = 0.0 if b is None else float(b[o])
                        for c in range(cin):
                            for dz, dy, dq in itertools.product(range(kt), range(kh), range(kw)):
                                acc += xp[i, c, z * st + dz, y * sh + dy, q * sw + dq] * w[o, c, dz, dy, dq]
                        out[i, o, z, y, q] = acc
    return out


def loop_max_pool(x: np.ndarray, window) -> np.ndarray:
    """Max over non-overlapping windows of the trailing axes."""
    window = tuple(window)
    k = len(window)
    lead = x.shape[: x.ndim - k]
    out_sp = tuple(n // w for n, w in zip(x.shape[x.ndim - k :], window))
    out = np.empty(lead + out_sp)
    for li in np.ndindex(*lead) if lead else [()]:
        for oi in np.ndindex(*out_sp):
            best = -np.inf
            for wi in np.ndindex(*window):
                src = tuple(o * w + d for o, w, d in zip(oi, window, wi))
                best = max(best, x[li + src])
            out[li + oi] = best
    return out


def loop_second_order_pool(cols: np.ndarray) -> np.ndarray:
    """(1/N) sum_n phi_n phi_n^T for a (C, N) matrix."""
    c, n = cols.shape
    out = np.zeros((c, c))
    for i in range(c):
        for j in range(c):
            out[i, j] = sum(cols[i, k] * cols[j, k] for k in range(n)) / n
    return out


def loop_poly_kernel(cols_a: np.ndarray, cols_b: np.ndarray, r: int) -> float:
    """(1/(N N')) sum_{n, n'} <a_n, b_n'>^r."""
    _, n = cols_a.shape
    _, m = cols_b.shape
    total = 0.0
    for i in range(n):
        for j in range(m):
            total += float(np.dot(cols_a[:, i], cols_b[:, j])) ** r
    return total / (n * m)


def handcrafted_features(clips: np.ndarray, factor: int = 2) -> np.ndarray:
    """Rotation-equivariant stand-in encoder: spatial average pooling only."""
    return ss.avg_downsample(np.asarray(clips, dtype=np.float64), (factor, factor))


def handcrafted_attention(features: np.ndarray) -> AttentionPair:
    """Spatial map = sigmoid(mean over channels and time); no temporal branch."""
    from .encoder import channel_mean_attention

    return AttentionPair(None, channel_mean_attention(features))
