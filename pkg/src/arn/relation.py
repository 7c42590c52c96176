"""Relation head over support/query SPM pairs and the episode objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as tn
from .encoder import Params, init_conv, init_uniform
from .errors import ContractError, DimensionError
from .tensor import Tensor


@dataclass
class RelationConfig:
    conv_channels: tuple[int, int] = (32, 32)
    hidden: int = 64

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)

    def flat_features(self, spm_size: int) -> int:
        if spm_size % 4:
            raise DimensionError(f"SPM size {spm_size} must be divisible by 4 (two 2x2 pools)")
        return self.conv_channels[-1] * (spm_size // 4) ** 2


def init_relation(cfg: RelationConfig, spm_size: int, rng, dtype=np.float64) -> Params:
    params: Params = {}
    cin = 2
    for i, cout in enumerate(cfg.conv_channels):
        init_conv(rng, params, f"rel{i}", cout, cin, (1, 3, 3), dtype)
        cin = cout
    f = cfg.flat_features(spm_size)
    params["rel_fc0.w"] = init_uniform(rng, (f, cfg.hidden), f, dtype)
    params["rel_fc0.b"] = init_uniform(rng, (cfg.hidden,), f, dtype)
    params["rel_fc1.w"] = init_uniform(rng, (cfg.hidden, 1), cfg.hidden, dtype)
    params["rel_fc1.b"] = init_uniform(rng, (1,), cfg.hidden, dtype)
    return params


def pair(support: Tensor, query: Tensor) -> Tensor:
    """Stack two (.., C, C) SPMs along a new channel axis, support first."""
    if support.shape[-2:] != query.shape[-2:]:
        raise DimensionError(f"SPM sizes differ: {support.shape} vs {query.shape}")
    return tn.stack([support, query], axis=-3)


def relation_forward(pairs: Tensor, params: Params, cfg: RelationConfig) -> Tensor:
    """(M, 2, C, C) stacked pairs -> (M,) scores in (0, 1)."""
    m, two, c, c2 = pairs.shape
    if two != 2 or c != c2:
        raise DimensionError(f"expected (M, 2, C, C) pairs, got {pairs.shape}")
    x = pairs.reshape(m, 2, 1, c, c)
    for i in range(len(cfg.conv_channels)):
        x = tn.conv3d(x, params[f"rel{i}.w"], params[f"rel{i}.b"], 1, (0, 1, 1))
        x = tn.relu(x)
        x = tn.max_pool(x, (1, 2, 2))
    x = x.reshape(m, -1)
    x = tn.relu(x @ params["rel_fc0.w"] + params["rel_fc0.b"])
    x = x @ params["rel_fc1.w"] + params["rel_fc1.b"]
    return tn.sigmoid(x.reshape(m))


def relation_score(spm_s: Tensor, spm_q: Tensor, params: Params, cfg: RelationConfig) -> Tensor:
    """Score a single support/query pair of (C, C) SPMs."""
    spm_s, spm_q = tn.as_tensor(spm_s), tn.as_tensor(spm_q)
    if spm_s.ndim != 2 or spm_s.shape != spm_q.shape:
        raise DimensionError(f"SPM shapes differ or are not square: {spm_s.shape}, {spm_q.shape}")
    return relation_forward(pair(spm_s, spm_q).reshape(1, 2, *spm_s.shape), params, cfg).reshape(())


def score_table(support: Tensor, query: Tensor, params: Params, cfg: RelationConfig) -> Tensor:
    """All (query, support) scores: (S, C, C) x (Q, C, C) -> (Q, S)."""
    s, q = support.shape[0], query.shape[0]
    sup = tn.index(support, (np.tile(np.arange(s), q),))
    qry = tn.index(query, (np.repeat(np.arange(q), s),))
    return relation_forward(pair(sup, qry), params, cfg).reshape(q, s)


def match_indicator(support_labels: Sequence[int], query_labels: Sequence[int]) -> np.ndarray:
    return (np.asarray(query_labels)[:, None] == np.asarray(support_labels)[None, :]).astype(np.float64)


def episode_loss(scores: Tensor, support_labels, query_labels) -> Tensor:
    """Sum over (query, support) pairs of (R - [labels match])^2."""
    target = match_indicator(support_labels, query_labels)
    if scores.shape != target.shape:
        raise ContractError(
            f"score table {scores.shape} does not cover {target.shape} support/query pairs"
        )
    diff = scores - target.astype(scores.dtype)
    return (diff * diff).sum()


def episode_loss_from_pairs(
    scores: Mapping[tuple[int, int], Tensor], support_labels, query_labels
) -> Tensor:
    """Same objective from a {(support_idx, query_idx): score} map; every pair required."""
    rows = []
    for q in range(len(query_labels)):
        row = []
        for s in range(len(support_labels)):
            if (s, q) not in scores:
                raise ContractError(f"missing score for support {s}, query {q}")
            row.append(tn.as_tensor(scores[(s, q)]).reshape(()))
        rows.append(tn.stack(row))
    return episode_loss(tn.stack(rows), support_labels, query_labels)


def predict(scores, support_labels) -> np.ndarray:
    """Per query: argmax over classes of the mean score against that class's supports.

    Ties go to the lowest class label.
    """
    scores = np.atleast_2d(np.asarray(scores.data if isinstance(scores, Tensor) else scores))
    labels = np.asarray(support_labels)
    classes = np.unique(labels)
    means = np.stack([scores[:, labels == c].mean(axis=1) for c in classes], axis=1)
    return classes[np.argmax(means, axis=1)]
