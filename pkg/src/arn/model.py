"""The Action Relation Network: encoder -> attention -> SPM -> relation head,
plus the self-supervised branch sharing the encoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from . import relation as rel
from . import selfsup as ss
from . import sop
from . import tensor as tn
from .encoder import AttentionConfig, AttentionPair, EncoderConfig, Params
from .episodic import Episode
from .errors import ConfigError
from .relation import RelationConfig
from .tensor import Tensor

DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass
class SelfSupConfig:
    kind: str = "rotation"  # rotation | spatial-jigsaw | temporal-jigsaw | none
    beta_ssl: float = 1.0
    gamma: float = 0.5
    lam: float = 0.0
    block_length: int = 2
    dict_size: int = 8
    dict_seed: int = 0

    def __post_init__(self):
        if self.kind is None:
            self.kind = "none"
        if self.kind not in ss.KINDS + ("none",):
            raise ConfigError(f"unknown self-supervision kind {self.kind!r}")
        if self.beta_ssl < 0 or self.gamma < 0 or self.lam < 0:
            raise ConfigError("beta_ssl, gamma and lam must be non-negative")
        if self.block_length < 1:
            raise ConfigError("block_length must be positive")

    @property
    def enabled(self) -> bool:
        return self.kind != "none"


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    relation: RelationConfig = field(default_factory=RelationConfig)
    selfsup: SelfSupConfig = field(default_factory=SelfSupConfig)
    sigma: float = sop.DEFAULT_SIGMA
    shift: float = sop.DEFAULT_SHIFT
    dtype: str = "float32"

    def __post_init__(self):
        if self.sigma == 0:
            raise ConfigError("sigma must be non-zero")
        if not 0.0 <= self.shift <= 1.0:
            raise ConfigError("shift must lie in [0, 1]")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")


def label_set_for(cfg: SelfSupConfig, clip_shape) -> ss.LabelSet:
    if cfg.kind == "temporal-jigsaw":
        t = clip_shape[1]
        if t % cfg.block_length:
            raise ConfigError(f"{t} frames not divisible by block length {cfg.block_length}")
        return ss.LabelSet(cfg.kind, blocks=t // cfg.block_length, size=cfg.dict_size, seed=cfg.dict_seed)
    return ss.LabelSet(cfg.kind)


@dataclass
class Forward:
    total: Tensor
    loss: Tensor
    loss_ssl: Tensor | None
    loss_align: Tensor | None
    scores: Tensor
    keys: list = field(default_factory=list)

    def parts(self) -> dict[str, float]:
        def val(x):
            return float("nan") if x is None else float(x.data)

        return {"L": val(self.loss), "L_ssl": val(self.loss_ssl), "L_align": val(self.loss_align), "total": val(self.total)}


class ARN:
    def __init__(self, cfg: ModelConfig, clip_shape, seed: int = 0):
        self.cfg = cfg
        self.clip_shape = tuple(clip_shape)
        self.dtype = DTYPES[cfg.dtype]
        feat_shape = cfg.encoder.output_shape(self.clip_shape)
        self.feature_shape = feat_shape
        channels = feat_shape[0]
        self.label_set = None
        if cfg.selfsup.enabled:
            ss.check_transport_geometry(
                self.clip_shape, cfg.encoder, cfg.selfsup.kind, self._blocks()
            )
            self.label_set = label_set_for(cfg.selfsup, self.clip_shape)
            if cfg.selfsup.kind == "temporal-jigsaw" and not cfg.attention.temporal:
                raise ConfigError("temporal jigsaw alignment needs temporal attention")
            if cfg.selfsup.kind != "temporal-jigsaw" and not cfg.attention.spatial:
                raise ConfigError(f"{cfg.selfsup.kind} alignment needs spatial attention")
        rng = np.random.default_rng(seed)
        self.params: Params = {}
        self.params.update(enc.init_encoder(cfg.encoder, rng, self.dtype))
        self.params.update(enc.init_attention(cfg.attention, channels, rng, self.dtype))
        self.params.update(rel.init_relation(cfg.relation, channels, rng, self.dtype))
        if self.label_set is not None:
            self.params.update(ss.init_discriminator(channels, len(self.label_set), rng, self.dtype))

    def _blocks(self) -> int:
        if self.cfg.selfsup.kind != "temporal-jigsaw":
            return 4
        return self.clip_shape[1] // self.cfg.selfsup.block_length

    # -- forward pieces -----------------------------------------------------
    def _tensor(self, clips) -> Tensor:
        return Tensor(np.asarray(clips, dtype=self.dtype))

    def features(self, clips) -> Tensor:
        return enc.encode(self._tensor(clips), self.params, self.cfg.encoder)

    def attention(self, feats: Tensor) -> AttentionPair:
        return enc.attend(feats, self.params, self.cfg.attention)

    def descriptors(self, feats: Tensor, att: AttentionPair) -> Tensor:
        return sop.spm(enc.apply_attention(feats, att), self.cfg.sigma, self.cfg.shift)

    def scores(self, support_spm: Tensor, support_labels, query_spm: Tensor, way: int) -> Tensor:
        """(Q, way) relation scores against class-averaged support SPMs."""
        labels = np.asarray(support_labels)
        protos = []
        for c in range(way):
            members = np.flatnonzero(labels == c)
            protos.append(tn.index(support_spm, (members,)).mean(axes=0))
        return rel.score_table(tn.stack(protos), query_spm, self.params, self.cfg.relation)

    def episode_scores(self, support, support_labels, query, way: int) -> Tensor:
        clips = np.concatenate([support, query])
        feats = self.features(clips)
        spm = self.descriptors(feats, self.attention(feats))
        n_s = len(support)
        return self.scores(
            tn.index(spm, (slice(0, n_s),)), support_labels, tn.index(spm, (slice(n_s, None),)), way
        )

    def predict(self, ep: Episode, rng=None) -> np.ndarray:
        scores = self.episode_scores(ep.support, ep.support_labels, ep.query, ep.way)
        return rel.predict(scores, np.arange(ep.way))

    # -- objective ----------------------------------------------------------
    def objective(self, ep: Episode, rng: np.random.Generator | None = None, keys=None) -> Forward:
        """Episode loss plus, when enabled, L_ssl and L_align on one augmented copy per clip."""
        sscfg = self.cfg.selfsup
        clips = np.concatenate([ep.support, ep.query])
        n = len(clips)
        n_s = len(ep.support)
        use_ssl = self.label_set is not None
        if use_ssl:
            if keys is None:
                keys = [self.label_set.sample(rng) for _ in range(n)]
            batch = np.concatenate([clips, ss.augment_batch(clips, keys)])
        else:
            keys, batch = [], clips
        feats = self.features(batch)
        att = self.attention(feats)
        orig = tn.index(feats, (slice(0, n),))
        att_orig = _slice_att(att, slice(0, n))
        spm = self.descriptors(orig, att_orig)
        scores = self.scores(
            tn.index(spm, (slice(0, n_s),)), ep.support_labels, tn.index(spm, (slice(n_s, None),)), ep.way
        )
        loss = rel.episode_loss(scores, np.arange(ep.way), ep.query_labels)
        loss_ssl = loss_align = None
        if use_ssl:
            aug = tn.index(feats, (slice(n, None),))
            loss_ssl = ss.ssl_loss(aug, keys, self.params)
            loss_align = ss.align_loss(att_orig, _slice_att(att, slice(n, None)), keys, sscfg.lam)
        total = ss.total_objective(loss, loss_ssl, loss_align, sscfg.beta_ssl, sscfg.gamma)
        return Forward(total, loss, loss_ssl, loss_align, scores, keys)

    # -- parameters ---------------------------------------------------------
    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.params[k].data = np.asarray(v, dtype=self.dtype).reshape(self.params[k].shape)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        grads = [p.grad for p in self.params.values() if p.grad is not None]
        return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))

    def sgd_step(self, lr: float, clip_norm: float | None = None) -> float:
        """Plain SGD update; returns the global gradient norm before clipping."""
        norm = self.grad_norm()
        scale = lr
        if clip_norm is not None and norm > clip_norm:
            scale = lr * clip_norm / norm
        for p in self.params.values():
            if p.grad is not None:
                p.data -= self.dtype(scale) * p.grad.astype(self.dtype, copy=False)
        return norm


def _slice_att(att: AttentionPair, sl: slice) -> AttentionPair:
    t = tn.index(att.temporal, (sl,)) if att.temporal is not None else None
    s = tn.index(att.spatial, (sl,)) if att.spatial is not None else None
    return AttentionPair(t, s, att.alpha_t, att.alpha_s)
