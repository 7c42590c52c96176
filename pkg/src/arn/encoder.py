"""3D Conv-4 feature encoder and the factorized temporal/spatial attention."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DimensionError
from .tensor import Tensor

Params = dict[str, Tensor]

# cross-validated shift coefficients reported for the two benchmarks
ALPHA_DEFAULTS = {
    "hmdb51": {"alpha_t": 0.5, "alpha_s": 1.0},
    "ucf101": {"alpha_t": 1.0, "alpha_s": 1.5},
}


def init_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> Tensor:
    k = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-k, k, size=shape).astype(dtype), requires_grad=True)


def init_conv(rng, params: Params, name: str, cout: int, cin: int, kernel, dtype, bias: bool = True) -> None:
    kernel = tuple(kernel)
    fan_in = cin * int(np.prod(kernel))
    params[f"{name}.w"] = init_uniform(rng, (cout, cin) + kernel, fan_in, dtype)
    if bias:
        params[f"{name}.b"] = init_uniform(rng, (cout,), fan_in, dtype)


def same_padding(kernel) -> tuple[int, int, int]:
    return tuple(k // 2 for k in kernel)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over (T, H, W)."""
    axes = (-3, -2, -1)
    centred = x - x.mean(axes=axes, keepdims=True)
    var = (centred * centred).mean(axes=axes, keepdims=True)
    return centred / tn.sqrt(var + eps)


@dataclass
class EncoderConfig:
    in_channels: int = 3
    blocks: int = 4
    channels: int = 64
    kernel: tuple[int, int, int] = (3, 3, 3)
    spatial_pool: tuple[int, ...] = (2, 2, 2, 2)
    temporal_pool: tuple[int, ...] = (1, 1, 2, 2)
    instance_norm: bool = True
    eps: float = 1e-5

    def __post_init__(self):
        self.kernel = tuple(self.kernel)
        self.spatial_pool = tuple(self.spatial_pool)
        self.temporal_pool = tuple(self.temporal_pool)
        if len(self.spatial_pool) != self.blocks or len(self.temporal_pool) != self.blocks:
            raise ConfigError("pool schedules must have one entry per block")
        if any(k % 2 == 0 for k in self.kernel):
            raise ConfigError("encoder kernel extents must be odd (same padding)")

    @property
    def temporal_factor(self) -> int:
        return int(np.prod(self.temporal_pool))

    @property
    def spatial_factor(self) -> int:
        return int(np.prod(self.spatial_pool))

    def output_shape(self, clip_shape) -> tuple[int, int, int, int]:
        """Closed-form (C, T_f, H_f, W_f) for a (C_in, T, H, W) clip."""
        c, t, h, w = clip_shape
        if c != self.in_channels:
            raise DimensionError(f"clip has {c} channels, encoder expects {self.in_channels}")
        for tp, sp in zip(self.temporal_pool, self.spatial_pool):
            t, h, w = tn.conv_output_shape((t, h, w), self.kernel, 1, same_padding(self.kernel))
            if t % tp or h % sp or w % sp:
                raise DimensionError(
                    f"extents {(t, h, w)} not divisible by pooling ({tp}, {sp}, {sp})"
                )
            t, h, w = t // tp, h // sp, w // sp
            if min(t, h, w) < 1:
                raise DimensionError("pooling schedule collapses an axis")
        return (self.channels, t, h, w)


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float64) -> Params:
    params: Params = {}
    cin = cfg.in_channels
    for i in range(cfg.blocks):
        # instance norm subtracts the per-channel mean, which cancels a bias exactly
        init_conv(rng, params, f"enc{i}", cfg.channels, cin, cfg.kernel, dtype, bias=not cfg.instance_norm)
        cin = cfg.channels
    return params


def encode(clips, params: Params, cfg: EncoderConfig) -> Tensor:
    """Clip(s) (3, T, H, W) or (N, 3, T, H, W) -> features (.., C, T_f, H_f, W_f)."""
    x = tn.as_tensor(clips)
    cfg.output_shape(x.shape[-4:])
    pad = same_padding(cfg.kernel)
    for i in range(cfg.blocks):
        x = tn.conv3d(x, params[f"enc{i}.w"], params.get(f"enc{i}.b"), 1, pad)
        if cfg.instance_norm:
            x = instance_norm(x, cfg.eps)
        x = tn.relu(x)
        x = tn.max_pool(x, (cfg.temporal_pool[i], cfg.spatial_pool[i], cfg.spatial_pool[i]))
    return x


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


@dataclass
class AttentionConfig:
    widths: tuple[int, ...] = (16, 16)
    temporal_kernel: tuple[int, int, int] = (3, 3, 3)
    spatial_kernel: tuple[int, int, int] = (3, 3, 3)
    temporal: bool = True
    spatial: bool = True
    alpha_t: float = 0.5
    alpha_s: float = 1.0
    output: str = "sigmoid"

    def __post_init__(self):
        self.widths = tuple(self.widths)
        self.temporal_kernel = tuple(self.temporal_kernel)
        self.spatial_kernel = tuple(self.spatial_kernel)
        if self.alpha_t < 0 or self.alpha_s < 0:
            raise ConfigError("attention shift coefficients must be non-negative")
        if self.output not in ("sigmoid", "softmax"):
            raise ConfigError(f"unknown attention output {self.output!r}")
        if any(k % 2 == 0 for k in self.temporal_kernel + self.spatial_kernel):
            raise ConfigError("attention kernel extents must be odd (same padding)")


@dataclass
class AttentionPair:
    """Temporal vector (.., T_f) and spatial map (.., H_f, W_f); either may be None."""

    temporal: Tensor | None
    spatial: Tensor | None
    alpha_t: float = 0.5
    alpha_s: float = 1.0
    extra: dict = field(default_factory=dict)


def init_attention(cfg: AttentionConfig, channels: int, rng, dtype=np.float64) -> Params:
    params: Params = {}
    for branch, kernel, on in (("att_t", cfg.temporal_kernel, cfg.temporal), ("att_s", cfg.spatial_kernel, cfg.spatial)):
        if not on:
            continue
        cin = channels
        for j, width in enumerate(cfg.widths + (1,)):
            init_conv(rng, params, f"{branch}{j}", width, cin, kernel, dtype)
            cin = width
    return params


def _branch(features: Tensor, params: Params, prefix: str, depth: int, kernel) -> Tensor:
    x = features
    pad = same_padding(kernel)
    for j in range(depth):
        x = tn.conv3d(x, params[f"{prefix}{j}.w"], params[f"{prefix}{j}.b"], 1, pad)
        if j < depth - 1:
            x = tn.relu(x)
    return x  # (.., 1, T, H, W)


def _squash(x: Tensor, output: str, axes) -> Tensor:
    if output == "sigmoid":
        return tn.sigmoid(x)
    flat_shape = x.shape[: x.ndim - len(axes)] + (-1,)
    flat = x.reshape(flat_shape)
    soft = tn.exp(flat - tn.logsumexp(flat, axis=-1).reshape(flat_shape[:-1] + (1,)))
    return soft.reshape(x.shape)


def temporal_attention(features: Tensor, params: Params, cfg: AttentionConfig) -> Tensor:
    """(.., C, T, H, W) -> (.., T) with entries in (0, 1)."""
    depth = len(cfg.widths) + 1
    x = _branch(features, params, "att_t", depth, cfg.temporal_kernel)
    x = x.mean(axes=(-2, -1))  # (.., 1, T)
    x = x.reshape(x.shape[:-2] + x.shape[-1:])
    return _squash(x, cfg.output, (-1,))


def spatial_attention(features: Tensor, params: Params, cfg: AttentionConfig) -> Tensor:
    """(.., C, T, H, W) -> (.., H, W) with entries in (0, 1)."""
    depth = len(cfg.widths) + 1
    x = _branch(features, params, "att_s", depth, cfg.spatial_kernel)
    x = x.mean(axes=-3)  # (.., 1, H, W)
    x = x.reshape(x.shape[:-3] + x.shape[-2:])
    return _squash(x, cfg.output, (-2, -1))


def channel_mean_attention(features: Tensor) -> Tensor:
    """Parameter-free spatial map: sigmoid of the per-position mean over channels and time."""
    x = tn.as_tensor(features).mean(axes=(-4, -3))
    return tn.sigmoid(x)


def attend(features: Tensor, params: Params, cfg: AttentionConfig) -> AttentionPair:
    t = temporal_attention(features, params, cfg) if cfg.temporal else None
    s = spatial_attention(features, params, cfg) if cfg.spatial else None
    return AttentionPair(t, s, cfg.alpha_t, cfg.alpha_s)


def apply_attention(features: Tensor, att: AttentionPair) -> Tensor:
    """Phi*[c,t,h,w] = (alpha_t + T[t]) * (alpha_s + S[h,w]) * Phi[c,t,h,w].

    A disabled branch (None) contributes a factor of one.
    """
    phi = tn.as_tensor(features)
    lead = phi.shape[:-4]
    _, t_f, h_f, w_f = phi.shape[-4:]
    out = phi
    if att.temporal is not None:
        if att.temporal.shape != lead + (t_f,):
            raise DimensionError(f"temporal attention {att.temporal.shape} vs features {phi.shape}")
        out = out * (att.temporal.reshape(lead + (1, t_f, 1, 1)) + att.alpha_t)
    if att.spatial is not None:
        if att.spatial.shape != lead + (h_f, w_f):
            raise DimensionError(f"spatial attention {att.spatial.shape} vs features {phi.shape}")
        out = out * (att.spatial.reshape(lead + (1, 1, h_f, w_f)) + att.alpha_s)
    return out
