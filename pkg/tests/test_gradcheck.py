import numpy as np
import pytest

from arn import tensor as tn
from arn.gradcheck import check_gradients, numeric_gradient, relative_error
from arn.tensor import Tensor


def test_relative_error_is_symmetric_and_floored():
    assert relative_error(np.array(1.0), np.array(1.1)) == pytest.approx(0.1 / 1.1)
    assert relative_error(np.array(1.1), np.array(1.0)) == pytest.approx(0.1 / 1.1)
    # both tiny: divided by the floor, not by each other
    assert relative_error(np.array(1e-12), np.array(-1e-12), floor=1e-6) == pytest.approx(2e-6)


def test_numeric_gradient_of_quadratic():
    g = numeric_gradient(lambda x: float(np.sum(x**2)), np.array([1.0, -2.0, 0.5]))
    np.testing.assert_allclose(g, [2.0, -4.0, 1.0], rtol=1e-8)


def test_detects_a_wrong_backward(monkeypatch):
    """A deliberately perturbed tanh backward must be caught."""

    def bad_tanh(a):
        y = np.tanh(a.data)
        return tn._make(y, (a,), lambda g: (g * (1.0 - y * y) * 1.01,), "tanh")

    x = Tensor(np.random.default_rng(0).standard_normal(5), requires_grad=True)
    assert check_gradients(lambda: tn.tanh(x).sum(), {"x": x}).ok
    monkeypatch.setattr(tn, "tanh", bad_tanh)
    report = check_gradients(lambda: tn.tanh(x).sum(), {"x": x})
    assert not report.ok
    assert report.max_rel_err > 1e-3


def test_kink_straddling_coordinates_are_replaced():
    # relu input sits 1e-7 from the kink: probes at +-1e-5 land on different pieces
    x = Tensor(np.array([1e-7, 0.3, -0.4, 0.8]), requires_grad=True)
    report = check_gradients(lambda: (tn.relu(x) * 2.0).sum(), {"x": x}, n_coords=3, h=1e-5, seed=0)
    block = report.blocks[0]
    assert report.ok
    assert (0,) not in [tuple(int(i) for i in c) for c in block.coords]
    assert len(block.coords) == 3
    assert block.skipped in (0, 1)


def test_incomplete_block_is_not_ok():
    x = Tensor(np.array([1e-7]), requires_grad=True)
    report = check_gradients(lambda: tn.relu(x).sum(), {"x": x}, n_coords=1, h=1e-5)
    assert report.blocks[0].skipped == 1
    assert not report.complete and not report.ok


def test_parameters_are_restored_after_probing(rng):
    x = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
    before = x.data.copy()
    check_gradients(lambda: (tn.exp(x) * x).sum(), {"x": x}, n_coords=9)
    np.testing.assert_array_equal(x.data, before)
    assert x.grad is None


def test_small_blocks_are_checked_in_full():
    x = tn.Tensor(np.array([0.3, -0.7, 1.1]))
    w = tn.Tensor(np.linspace(-1, 1, 50))
    rep = check_gradients(lambda: (tn.tanh(x).sum() * tn.tanh(w).sum()), {"x": x, "w": w}, n_coords=20)
    sizes = {b.name: (b.size, b.requested, len(b.coords)) for b in rep.blocks}
    assert sizes == {"x": (3, 3, 3), "w": (50, 20, 20)}
    assert rep.ok
