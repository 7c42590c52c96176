"""Oracle suite behind ``arn verify``.

Each check returns a :class:`Check`. ``expect_error`` checks pass when the
injected misconfiguration is rejected (reported as ``xfail``), and fail if it
slips through.
"""

from __future__ import annotations

import time
import traceback
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import oracles
from . import relation as rel
from . import selfsup as ss
from . import sop
from . import tensor as tn
from .config import parse_config
from .errors import ConfigError
from .gradcheck import check_gradients
from .tensor import Tensor

PASS, FAIL, XFAIL = "pass", "fail", "xfail"


@dataclass
class Check:
    name: str
    status: str
    detail: str = ""
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status in (PASS, XFAIL)

    def line(self) -> str:
        return f"{self.status.upper():5s} {self.name} ({self.seconds:.2f}s) {self.detail}".rstrip()


def _leaf(rng, *shape, positive: bool = False) -> Tensor:
    data = rng.standard_normal(shape)
    if positive:
        data = np.abs(data) + 0.5
    return Tensor(data, requires_grad=True)


def _kinkless(rng, *shape) -> Tensor:
    """Entries bounded away from zero, so relu/abs probes stay on one piece."""
    data = rng.standard_normal(shape)
    data = np.where(np.abs(data) < 0.1, 0.1 * np.sign(data) + data, data)
    return Tensor(data, requires_grad=True)


def op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], dict[str, Tensor]]]:
    """One scalar-valued probe per tensor-core op, each weighted by a fixed random tensor."""
    cases = {}

    def add_case(name, fn, **leaves):
        out_shape = None

        def loss():
            nonlocal out_shape
            y = fn(**leaves)
            if out_shape is None:
                out_shape = y.shape
                loss.weight = rng.standard_normal(y.shape)
            return (y * Tensor(loss.weight)).sum()

        cases[name] = (loss, leaves)

    a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
    add_case("add", lambda x, y: x + y, x=a, y=b)
    add_case("sub", lambda x, y: x - y, x=_leaf(rng, 2, 3), y=_leaf(rng, 1, 3))
    add_case("mul", lambda x, y: x * y, x=_leaf(rng, 3, 4), y=_leaf(rng, 3, 1))
    add_case("div", lambda x, y: x / y, x=_leaf(rng, 3, 4), y=_leaf(rng, 4, positive=True))
    add_case("scalar_mul", lambda x: tn.scalar_mul(x, -1.7), x=_leaf(rng, 5))
    add_case("abs", lambda x: tn.abs_(x), x=_kinkless(rng, 6))
    add_case("exp", lambda x: tn.exp(x), x=_leaf(rng, 5))
    add_case("log", lambda x: tn.log(x), x=_leaf(rng, 5, positive=True))
    add_case("sqrt", lambda x: tn.sqrt(x), x=_leaf(rng, 5, positive=True))
    add_case("sigmoid", lambda x: tn.sigmoid(x), x=_leaf(rng, 6))
    add_case("tanh", lambda x: tn.tanh(x), x=_leaf(rng, 6))
    add_case("relu", lambda x: tn.relu(x), x=_kinkless(rng, 6))
    add_case("reshape", lambda x: x.reshape(4, 3), x=_leaf(rng, 2, 6))
    add_case("permute", lambda x: x.permute((2, 0, 1)), x=_leaf(rng, 2, 3, 4))
    add_case("concat", lambda x, y: tn.concat([x, y], axis=1), x=_leaf(rng, 2, 3), y=_leaf(rng, 2, 2))
    add_case("stack", lambda x, y: tn.stack([x, y], axis=0), x=_leaf(rng, 3), y=_leaf(rng, 3))
    add_case("index", lambda x: tn.index(x, (np.array([0, 2, 0]), slice(None))), x=_leaf(rng, 3, 2))
    add_case("take_along", lambda x: tn.take_along(x, np.array([[2, 2, 0], [1, 0, 1]]), axis=1), x=_leaf(rng, 2, 3))
    add_case("matmul", lambda x, y: tn.matmul(x, y), x=_leaf(rng, 2, 3, 4), y=_leaf(rng, 4, 5))
    add_case("sum", lambda x: x.sum(axes=(0, 2)), x=_leaf(rng, 2, 3, 4))
    add_case("mean", lambda x: x.mean(axes=1, keepdims=True), x=_leaf(rng, 2, 3, 4))
    add_case("logsumexp", lambda x: tn.logsumexp(x, axis=-1), x=_leaf(rng, 3, 5))
    # distinct values keep the arg-max away from ties
    mp = Tensor(rng.permutation(32).reshape(2, 4, 4) * 0.1, requires_grad=True)
    add_case("max_pool", lambda x: tn.max_pool(x, (2, 2)), x=mp)
    add_case(
        "conv3d",
        lambda x, w, b: tn.conv3d(x, w, b, stride=(1, 2, 1), padding=(1, 1, 0)),
        x=_leaf(rng, 2, 2, 3, 5, 4),
        w=_leaf(rng, 3, 2, 3, 3, 2),
        b=_leaf(rng, 3),
    )
    return cases


def gradcheck_config(clip_shape=(3, 4, 16, 16)):
    """Smallest model exercising every objective term, in float64."""
    t = clip_shape[1]
    tpool = "1,1,1,2" if t % 2 == 0 and t >= 4 else "1,1,1,1"
    return parse_config(
        f"""
        data.clip_shape = {",".join(map(str, clip_shape))}
        data.clips_per_class = 3
        data.n_classes = 6
        protocol.way = 2
        protocol.queries = 1
        model.dtype = float64
        model.encoder.channels = 4
        model.encoder.temporal_pool = {tpool}
        model.attention.widths = 4,
        model.relation.conv_channels = 4,4
        model.relation.hidden = 8
        model.selfsup.beta_ssl = 0.1
        model.selfsup.gamma = 0.5
        """
    )


def end_to_end_gradcheck(clip_shape=(3, 4, 16, 16), n_coords: int = 20, seed: int = 0, lam: float = 0.0):
    """Gradient report for L + beta_ssl L_ssl + gamma L_align of one fixed episode."""
    from .config import apply_overrides
    from .episodic import sample_episode
    from .train import build_dataset, build_model

    cfg = gradcheck_config(clip_shape)
    if lam:
        cfg = apply_overrides(cfg, {"model.selfsup.lam": lam})
    ds = build_dataset(cfg.data)
    model = build_model(cfg, ds.clip_shape)
    rng = np.random.default_rng(seed)
    ep = sample_episode(ds, "train", cfg.protocol.way, cfg.protocol.shot, cfg.protocol.queries, rng)
    keys = [model.label_set.sample(rng) for _ in range(len(ep.support) + len(ep.query))]

    def loss():
        return model.objective(ep, None, keys).total

    return check_gradients(loss, model.params, n_coords=n_coords, seed=seed)


# ---------------------------------------------------------------------------
# individual checks; each returns a short detail string or raises AssertionError
# ---------------------------------------------------------------------------


def check_op_gradients(seed: int = 0) -> str:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, (loss, leaves) in op_cases(rng).items():
        rep = check_gradients(loss, leaves, n_coords=1000, seed=seed)
        assert rep.ok, f"{name}: max rel err {rep.max_rel_err:.3g}"
        worst = max(worst, rep.max_rel_err)
    return f"max rel err {worst:.2e}"


def check_objective_gradients(seed: int = 0) -> str:
    rep = end_to_end_gradcheck(seed=seed)
    worst = rep.worst()
    assert rep.ok, f"{worst.name}: max rel err {worst.max_rel_err:.3g}"
    return f"{len(rep.blocks)} blocks, max rel err {rep.max_rel_err:.2e}"


def check_kernels(seed: int = 0) -> str:
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((4, 6)), rng.standard_normal((6, 3))
    assert np.allclose(tn.matmul(Tensor(a), Tensor(b)).data, oracles.loop_matmul(a, b), rtol=1e-12, atol=1e-12)
    x, w, bias = rng.standard_normal((2, 2, 4, 5, 5)), rng.standard_normal((3, 2, 3, 3, 3)), rng.standard_normal(3)
    for stride, pad in (((1, 1, 1), (1, 1, 1)), ((2, 1, 2), (0, 1, 1))):
        fast = tn.conv3d(Tensor(x), Tensor(w), Tensor(bias), stride, pad).data
        slow = oracles.loop_conv3d(x, w, bias, stride, pad)
        assert np.allclose(fast, slow, rtol=1e-12, atol=1e-12), "conv3d disagrees with loop oracle"
    y = rng.standard_normal((2, 4, 6))
    assert np.array_equal(tn.max_pool(Tensor(y), (2, 3)).data, oracles.loop_max_pool(y, (2, 3)))
    return "matmul, conv3d, max_pool agree with loops"


def check_kernel_linearization(seed: int = 0, trials: int = 200) -> str:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        c = int(rng.integers(1, 9))
        pa, pb = rng.standard_normal((c, int(rng.integers(1, 13)))), rng.standard_normal((c, int(rng.integers(1, 13))))
        lhs = float(np.sum(sop.second_order_pool(Tensor(pa)).data * sop.second_order_pool(Tensor(pb)).data))
        rhs = sop.poly_kernel(pa, pb, 2)
        err = abs(lhs - rhs) / max(abs(rhs), 1e-300)
        worst = max(worst, err)
        assert err < 1e-10, f"relative gap {err:.3g} at C={c}"
    return f"{trials} pairs, max rel gap {worst:.2e}"


def check_pool_permutation(seed: int = 0, trials: int = 100) -> str:
    rng = np.random.default_rng(seed)
    cols = rng.standard_normal((6, 10))
    base = sop.second_order_pool(Tensor(cols)).data
    for _ in range(trials):
        perm = rng.permutation(cols.shape[1])
        assert np.array_equal(sop.second_order_pool(Tensor(cols[:, perm])).data, base)
    return f"{trials} column permutations, bit-identical"


def check_augmentation_groups(seed: int = 0) -> str:
    rng = np.random.default_rng(seed)
    clip = rng.standard_normal((3, 8, 8, 8))
    for angle in ss.ROTATION_ANGLES:
        x = clip
        for _ in range(4):
            x = ss.rotate_clip(x, angle)
        assert np.array_equal(x, clip), f"rotation {angle}^4 != id"
    for perm in ss.spatial_jigsaw_labels():
        back = ss.spatial_jigsaw(ss.spatial_jigsaw(clip, perm), ss.inverse_perm(perm))
        assert np.array_equal(back, clip), f"jigsaw {perm} not inverted"
    frames = sorted(clip[:, i].tobytes() for i in range(clip.shape[1]))
    for perm in ss.temporal_jigsaw_labels(4, 8, seed):
        out = ss.temporal_jigsaw(clip, perm)
        assert sorted(out[:, i].tobytes() for i in range(out.shape[1])) == frames, f"{perm} changed frames"
    return "rotation, spatial jigsaw, temporal jigsaw exhaustive"


def check_transport(seed: int = 0) -> str:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 8, 16, 16))
    cases = 0
    for kind, factors in (("rotation", (1, 2, 2)), ("rotation", (2, 4, 4)), ("spatial-jigsaw", (1, 2, 2)), ("spatial-jigsaw", (2, 4, 4))):
        for key in ss.LabelSet(kind).keys():
            lhs = ss.avg_downsample(ss.augment(x, key), factors)
            down = ss.avg_downsample(x, factors)
            rhs = ss.transport_map(Tensor(down), key).data
            assert np.array_equal(lhs, rhs), f"{key.describe()} at factors {factors}"
            cases += 1
    for key in ss.LabelSet("temporal-jigsaw", blocks=4, size=8, seed=seed).keys():
        for ft in (1, 2):
            lhs = ss.avg_downsample(ss.augment(x, key), (ft, 1, 1))
            down = np.moveaxis(ss.avg_downsample(x, (ft, 1, 1)), -3, -1)
            rhs = np.moveaxis(ss.transport_map(Tensor(down), key).data, -1, -3)
            assert np.array_equal(lhs, rhs), f"{key.describe()} at temporal factor {ft}"
            cases += 1
    return f"{cases} augmentation/geometry pairs"


def check_alignment_equivariance(seed: int = 0) -> str:
    rng = np.random.default_rng(seed)
    clips = rng.standard_normal((3, 3, 4, 16, 16))
    feats = oracles.handcrafted_features(clips)
    att = oracles.handcrafted_attention(Tensor(feats))
    worst = 0.0
    for key in ss.LabelSet("rotation").keys():
        keys = [key] * len(clips)
        aug_att = oracles.handcrafted_attention(Tensor(oracles.handcrafted_features(ss.augment_batch(clips, keys))))
        val = float(ss.align_loss(att, aug_att, keys, lam=0.0).data)
        worst = max(worst, val)
        assert val < 1e-10, f"align_loss {val:.3g} at {key.describe()}"
    return f"max align_loss {worst:.2e}"


def check_loss_constants(seed: int = 0) -> str:
    for k in (4, 24, 8):
        params = {"disc.w": Tensor(np.zeros((5, k))), "disc.b": Tensor(np.zeros(k))}
        feats = Tensor(np.random.default_rng(seed).standard_normal((1, 5, 2, 2, 2)))
        key = ss.AugmentationKey("rotation", 0, 0)
        val = float(ss.ssl_loss(feats, [key], params).data)
        assert abs(val - np.log(k)) < 1e-10, f"uniform K={k}: {val} vs ln K"
    single = rel.episode_loss(Tensor(np.array([[0.5]])), [0], [0])
    assert float(single.data) == 0.25
    return "ln K for K in 4, 24, 8; single pair 0.25"


def check_sigma_zero_rejected(seed: int = 0) -> None:
    """Injected misconfiguration: sigma = 0 must raise ConfigError."""
    parse_config("model.sigma = 0")


CHECKS: list[tuple[str, Callable, type[BaseException] | None]] = [
    ("op-gradients", check_op_gradients, None),
    ("objective-gradients", check_objective_gradients, None),
    ("kernel-equivalence", check_kernels, None),
    ("kernel-linearization", check_kernel_linearization, None),
    ("pool-permutation-invariance", check_pool_permutation, None),
    ("augmentation-groups", check_augmentation_groups, None),
    ("transport-well-defined", check_transport, None),
    ("alignment-equivariance", check_alignment_equivariance, None),
    ("loss-constants", check_loss_constants, None),
    ("sigma-zero-rejected", check_sigma_zero_rejected, ConfigError),
]


def run_check(name: str, fn: Callable, expect_error: type[BaseException] | None, seed: int = 0) -> Check:
    start = time.perf_counter()
    try:
        detail = fn(seed)
    except BaseException as exc:  # noqa: BLE001 - every failure becomes a report line
        if isinstance(exc, KeyboardInterrupt):
            raise
        took = time.perf_counter() - start
        if expect_error is not None and isinstance(exc, expect_error):
            return Check(name, XFAIL, f"rejected as expected: {exc}", took)
        if isinstance(exc, AssertionError):
            return Check(name, FAIL, str(exc), took)
        return Check(name, FAIL, traceback.format_exception_only(type(exc), exc)[-1].strip(), took)
    took = time.perf_counter() - start
    if expect_error is not None:
        return Check(name, FAIL, f"expected {expect_error.__name__}, nothing raised", took)
    return Check(name, PASS, detail or "", took)


def run_all(seed: int = 0, only: list[str] | None = None) -> list[Check]:
    return [run_check(n, fn, err, seed) for n, fn, err in CHECKS if only is None or n in only]
