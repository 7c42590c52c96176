import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arn import selfsup as ss
from arn.encoder import AttentionPair, EncoderConfig
from arn.errors import ConfigError, ContractError, DimensionError
from arn.gradcheck import check_gradients
from arn.oracles import handcrafted_attention, handcrafted_features
from arn.tensor import Tensor

seeds = st.integers(0, 2**31 - 1)


# --- label sets -----------------------------------------------------------------


def test_label_set_sizes():
    assert len(ss.LabelSet("rotation")) == 4
    assert len(ss.LabelSet("spatial-jigsaw")) == 24
    assert len(ss.LabelSet("temporal-jigsaw", blocks=4, size=8)) == 8


def test_spatial_labels_are_lexicographic_permutations():
    labels = ss.spatial_jigsaw_labels()
    assert labels == sorted(labels) and labels[0] == (0, 1, 2, 3)
    assert len(set(labels)) == 24


@given(st.integers(3, 5), st.integers(2, 6), seeds)
def test_temporal_dictionary(blocks, size, seed):
    d = ss.temporal_jigsaw_labels(blocks, size, seed)
    assert d[0] == tuple(range(blocks))
    assert len(set(d)) == size
    assert d[1:] == sorted(d[1:])
    assert d == ss.temporal_jigsaw_labels(blocks, size, seed)


def test_temporal_dictionary_too_large():
    with pytest.raises(ConfigError):
        ss.temporal_jigsaw_labels(3, 7)


def test_label_out_of_range():
    with pytest.raises(ContractError):
        ss.LabelSet("rotation").key(4)


# --- group properties (exhaustive over every label) ----------------------------


@given(seeds)
def test_rotation_group(seed):
    clip = np.random.default_rng(seed).standard_normal((3, 2, 6, 6))
    for angle in ss.ROTATION_ANGLES:
        x = clip
        for _ in range(4):
            x = ss.rotate_clip(x, angle)
        np.testing.assert_array_equal(x, clip)
    np.testing.assert_array_equal(ss.rotate_clip(ss.rotate_clip(clip, 90), 270), clip)


def test_rotation_convention():
    frame = np.array([[1.0, 2.0], [3.0, 4.0]])[None, None]
    np.testing.assert_array_equal(ss.rotate_clip(frame, 90)[0, 0], [[2, 4], [1, 3]])
    # output (h, w) reads input (w, H-1-h)
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    r = ss.rotate_clip(x, 90)
    for h, w in itertools.product(range(3), range(3)):
        assert r[0, 0, h, w] == x[0, 0, w, 2 - h]


def test_rotation_needs_square_frames():
    with pytest.raises(ConfigError):
        ss.rotate_clip(np.zeros((3, 2, 4, 6)), 90)
    assert ss.rotate_clip(np.zeros((3, 2, 4, 6)), 180).shape == (3, 2, 4, 6)


@given(seeds)
def test_spatial_jigsaw_inverse_exhaustive(seed):
    clip = np.random.default_rng(seed).standard_normal((3, 2, 4, 6))
    for perm in ss.spatial_jigsaw_labels():
        np.testing.assert_array_equal(ss.spatial_jigsaw(ss.spatial_jigsaw(clip, perm), ss.inverse_perm(perm)), clip)


def test_spatial_jigsaw_semantics():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    out = ss.spatial_jigsaw(x, (3, 2, 1, 0))
    np.testing.assert_array_equal(out[0, 0, :2, :2], x[0, 0, 2:, 2:])
    with pytest.raises(ConfigError):
        ss.spatial_jigsaw(np.zeros((1, 1, 3, 4)), (0, 1, 2, 3))


@given(st.integers(2, 5), st.integers(1, 3), seeds)
def test_temporal_jigsaw_preserves_frame_multiset(blocks, length, seed):
    rng = np.random.default_rng(seed)
    clip = rng.standard_normal((3, blocks * length, 2, 2))
    frames = sorted(clip[:, i].tobytes() for i in range(clip.shape[1]))
    for perm in itertools.permutations(range(blocks)):
        out = ss.temporal_jigsaw(clip, perm)
        assert sorted(out[:, i].tobytes() for i in range(out.shape[1])) == frames
        np.testing.assert_array_equal(ss.temporal_jigsaw(out, ss.inverse_perm(perm)), clip)


def test_temporal_jigsaw_keeps_in_block_order():
    clip = np.arange(6.0).reshape(1, 6, 1, 1)
    out = ss.temporal_jigsaw(clip, (2, 0, 1))
    np.testing.assert_array_equal(out.ravel(), [4, 5, 0, 1, 2, 3])
    with pytest.raises(ConfigError):
        ss.temporal_jigsaw(np.zeros((1, 5, 1, 1)), (1, 0))


# --- transport ----------------------------------------------------------------------


@given(st.sampled_from(["rotation", "spatial-jigsaw"]), st.sampled_from([1, 2, 4]), seeds)
def test_spatial_transport_commutes_with_downsampling(kind, f, seed):
    x = np.random.default_rng(seed).standard_normal((2, 2, 8, 8))
    for key in ss.LabelSet(kind).keys():
        lhs = ss.avg_downsample(ss.augment(x, key), (f, f))
        rhs = ss.transport_map(Tensor(ss.avg_downsample(x, (f, f))), key).data
        np.testing.assert_array_equal(lhs, rhs)


@given(st.sampled_from([1, 2]), seeds)
def test_temporal_transport_commutes_with_downsampling(f, seed):
    x = np.random.default_rng(seed).standard_normal((2, 8, 2, 2))
    for key in ss.LabelSet("temporal-jigsaw", blocks=4, size=8).keys():
        lhs = ss.avg_downsample(ss.augment(x, key), (f, 1, 1))
        down = np.moveaxis(ss.avg_downsample(x, (f, 1, 1)), -3, -1)
        rhs = np.moveaxis(ss.transport_map(Tensor(down), key).data, -1, -3)
        np.testing.assert_array_equal(lhs, rhs)


def test_batched_transport_uses_one_key_per_row(rng):
    maps = rng.standard_normal((3, 4, 4))
    keys = [ss.LabelSet("rotation").key(i) for i in (0, 1, 3)]
    out = ss.transport_map(Tensor(maps), keys).data
    for i, k in enumerate(keys):
        np.testing.assert_array_equal(out[i], ss.transport_map(Tensor(maps[i]), k).data)
    with pytest.raises(ContractError):
        ss.transport_map(Tensor(maps), keys[:2])


def test_avg_downsample_is_order_independent(rng):
    x = rng.standard_normal((4, 4))
    ref = ss.avg_downsample(x, (2, 2))
    np.testing.assert_allclose(ref, x.reshape(2, 2, 2, 2).mean(axis=(1, 3)), rtol=1e-15)
    with pytest.raises(DimensionError):
        ss.avg_downsample(np.zeros((3, 4)), (2, 2))


@pytest.mark.parametrize(
    "kind, clip_shape, enc_kw, ok",
    [
        ("rotation", (3, 8, 32, 32), {}, True),
        ("rotation", (3, 8, 32, 48), {}, False),
        ("spatial-jigsaw", (3, 8, 32, 32), {}, True),
        ("spatial-jigsaw", (3, 8, 48, 48), dict(spatial_pool=(2, 2, 2, 1)), True),
        ("spatial-jigsaw", (3, 8, 16, 16), {}, False),
        ("temporal-jigsaw", (3, 8, 32, 32), dict(temporal_pool=(1, 1, 1, 2)), True),
        ("temporal-jigsaw", (3, 8, 32, 32), {}, False),
    ],
)
def test_transport_geometry(kind, clip_shape, enc_kw, ok):
    enc = EncoderConfig(**enc_kw)
    if ok:
        ss.check_transport_geometry(clip_shape, enc, kind)
    else:
        with pytest.raises((ConfigError, DimensionError)):
            ss.check_transport_geometry(clip_shape, enc, kind)


# --- losses --------------------------------------------------------------------------


@pytest.mark.parametrize("k", [4, 24, 8])
def test_uniform_logits_give_log_k(k, rng):
    params = {"disc.w": Tensor(np.zeros((3, k))), "disc.b": Tensor(np.zeros(k))}
    feats = Tensor(rng.standard_normal((2, 3, 2, 2, 2)))
    keys = [ss.AugmentationKey("rotation", 0, 0), ss.AugmentationKey("rotation", 1, 90)]
    assert float(ss.ssl_loss(feats, keys, params).data) == pytest.approx(2 * np.log(k), abs=1e-10)


def test_cross_entropy_matches_numpy(rng):
    logits = rng.standard_normal((4, 5)) * 3
    labels = np.array([0, 4, 2, 2])
    want = -sum(logits[i, l] - np.log(np.exp(logits[i]).sum()) for i, l in enumerate(labels))
    assert float(ss.cross_entropy(Tensor(logits), labels).data) == pytest.approx(want, rel=1e-12)
    with pytest.raises(ContractError):
        ss.cross_entropy(Tensor(logits), np.array([0, 5, 1, 1]))


def test_ssl_label_beyond_discriminator(rng):
    params = ss.init_discriminator(3, 4, rng)
    key = ss.LabelSet("spatial-jigsaw").key(10)
    with pytest.raises(ContractError):
        ss.ssl_loss(Tensor(rng.standard_normal((1, 3, 2, 2, 2))), [key], params)


def test_alignment_residual_slack():
    a, b = Tensor(np.array([0.5, 0.2])), Tensor(np.array([0.1, 0.2]))
    assert float(ss.alignment_residual(a, b, 0.0).data) == pytest.approx(0.16)
    assert float(ss.alignment_residual(a, b, 0.1).data) == pytest.approx(0.09 + 0.01)
    with pytest.raises(ConfigError):
        ss.alignment_residual(a, b, -0.1)


@given(seeds)
def test_alignment_equivariance_with_handcrafted_attention(seed):
    clips = np.random.default_rng(seed).standard_normal((2, 3, 2, 8, 8))
    att = handcrafted_attention(Tensor(handcrafted_features(clips)))
    for key in ss.LabelSet("rotation").keys():
        keys = [key, key]
        aug = handcrafted_attention(Tensor(handcrafted_features(ss.augment_batch(clips, keys))))
        assert float(ss.align_loss(att, aug, keys, 0.0).data) < 1e-10


def test_alignment_detects_a_non_equivariant_map(rng):
    clips = rng.standard_normal((1, 3, 2, 8, 8))
    att = handcrafted_attention(Tensor(handcrafted_features(clips)))
    key = ss.LabelSet("rotation").key(1)
    # compare against the un-rotated map: should not align
    assert float(ss.align_loss(att, att, [key], 0.0).data) > 1e-6


def test_align_loss_gradients(rng):
    t = Tensor(rng.random((2, 4)), requires_grad=True)
    s = Tensor(rng.random((2, 4, 4)), requires_grad=True)
    s2 = Tensor(rng.random((2, 4, 4)), requires_grad=True)
    keys = [ss.LabelSet("spatial-jigsaw").key(5), ss.LabelSet("spatial-jigsaw").key(17)]

    def loss():
        return ss.align_loss(AttentionPair(t, s), AttentionPair(t, s2), keys, 0.05)

    assert check_gradients(loss, {"s": s, "s2": s2}).ok


def test_total_objective_weights(rng):
    l, lssl, lal = (Tensor(np.array(v)) for v in (1.0, 2.0, 3.0))
    assert float(ss.total_objective(l, lssl, lal, 0.5, 0.25).data) == pytest.approx(1 + 1 + 0.75)
    out = ss.total_objective(l, lssl, lal, 0.0, 0.0)
    assert float(out.data) == 1.0 and out is l
    with pytest.raises(ConfigError):
        ss.total_objective(l, lssl, lal, -1.0, 0.0)
