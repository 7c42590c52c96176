import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arn import sop
from arn.errors import ConfigError, DimensionError
from arn.gradcheck import check_gradients
from arn.oracles import loop_poly_kernel, loop_second_order_pool
from arn.tensor import Tensor

seeds = st.integers(0, 2**31 - 1)


@given(st.integers(1, 6), st.integers(1, 10), seeds)
def test_second_order_pool_matches_loop(c, n, seed):
    cols = np.random.default_rng(seed).standard_normal((c, n))
    np.testing.assert_allclose(sop.second_order_pool(Tensor(cols)).data, loop_second_order_pool(cols), rtol=1e-12, atol=1e-12)


@given(st.integers(1, 6), st.integers(1, 10), seeds)
def test_pool_is_symmetric_psd(c, n, seed):
    m = sop.second_order_pool(Tensor(np.random.default_rng(seed).standard_normal((c, n)))).data
    assert np.array_equal(m, m.T)
    assert np.linalg.eigvalsh(m).min() > -1e-10


@given(st.integers(1, 8), st.integers(1, 12), seeds)
def test_pool_exactly_invariant_to_column_permutation(c, n, seed):
    rng = np.random.default_rng(seed)
    cols = rng.standard_normal((c, n))
    base = sop.second_order_pool(Tensor(cols)).data
    assert np.array_equal(sop.second_order_pool(Tensor(cols[:, rng.permutation(n)])).data, base)


def test_batched_pool_matches_per_sample(rng):
    cols = rng.standard_normal((3, 4, 7))
    batched = sop.second_order_pool(Tensor(cols)).data
    for i in range(3):
        np.testing.assert_array_equal(batched[i], sop.second_order_pool(Tensor(cols[i])).data)


@given(st.integers(1, 8), st.integers(1, 12), st.integers(1, 12), seeds)
def test_pool_inner_product_is_degree_two_poly_kernel(c, n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((c, n)), rng.standard_normal((c, m))
    lhs = float(np.sum(sop.second_order_pool(Tensor(a)).data * sop.second_order_pool(Tensor(b)).data))
    assert lhs == pytest.approx(sop.poly_kernel(a, b, 2), rel=1e-10)
    assert sop.poly_kernel(a, b, 2) == pytest.approx(loop_poly_kernel(a, b, 2), rel=1e-12)


def test_poly_kernel_rejects_bad_degree(rng):
    a = rng.standard_normal((2, 3))
    with pytest.raises(ConfigError):
        sop.poly_kernel(a, a, 0)
    with pytest.raises(DimensionError):
        sop.poly_kernel(a, rng.standard_normal((3, 3)), 2)


# --- power normalization ----------------------------------------------------


@given(st.floats(-1e3, 1e3), st.floats(0.05, 50))
def test_power_normalization_bounded_and_odd(x, sigma):
    g = sop.power_normalize(Tensor(np.array([x, -x])), sigma).data
    assert np.all(np.isfinite(g))
    assert np.all(np.abs(g) <= 1.0)
    assert g[0] == -g[1]


@given(st.floats(-15, 15), st.floats(0.1, 5))
def test_power_normalization_matches_zero_centred_sigmoid(x, sigma):
    g = float(sop.power_normalize(Tensor(np.array(x)), sigma).data)
    ref = (1 - np.exp(-sigma * x)) / (1 + np.exp(-sigma * x))
    assert g == pytest.approx(ref, abs=1e-12)


def test_power_normalization_strictly_inside_where_representable():
    # tanh(z) rounds to 1 in float64 once z > ~19; below that it is strictly inside
    x = np.linspace(-9.0, 9.0, 101)
    g = sop.power_normalize(Tensor(x), 2.0).data
    assert np.all(np.abs(g) < 1.0)
    assert np.all(np.diff(g) > 0)


def test_power_normalization_zero_sigma_rejected():
    with pytest.raises(ConfigError):
        sop.power_normalize(Tensor(np.ones(2)), 0.0)


def test_negative_sigma_flips_sign():
    x = Tensor(np.array([0.3, -1.2]))
    np.testing.assert_array_equal(sop.power_normalize(x, -2.0).data, -sop.power_normalize(x, 2.0).data)


# --- mean shift and the full descriptor ---------------------------------------


@pytest.mark.parametrize("shift", [-0.1, 1.5])
def test_mean_shift_range(shift, rng):
    with pytest.raises(ConfigError):
        sop.mean_shift(Tensor(rng.standard_normal((2, 3))), shift)


def test_full_mean_shift_centres_columns(rng):
    cols = rng.standard_normal((3, 6)) + 4.0
    out = sop.mean_shift(Tensor(cols), 1.0).data
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)


def test_spm_shapes_and_gradients(rng):
    feats = Tensor(rng.standard_normal((2, 4, 2, 3, 3)), requires_grad=True)
    out = sop.spm(feats, 2.0, 0.5)
    assert out.shape == (2, 4, 4)
    w = rng.standard_normal(out.shape)
    rep = check_gradients(lambda: (sop.spm(feats, 2.0, 0.5) * Tensor(w)).sum(), {"f": feats}, n_coords=30)
    assert rep.ok, rep.max_rel_err


def test_as_columns_rejects_low_rank():
    with pytest.raises(DimensionError):
        sop.as_columns(Tensor(np.zeros((3, 3))))


def test_canonical_order_gradient_flows_back_to_original_positions(rng):
    cols = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    w = rng.standard_normal((3, 5))
    (sop.canonical_order(cols) * Tensor(w)).sum().backward()
    order = np.lexsort(cols.data[::-1])
    expected = np.zeros_like(w)
    expected[:, order] = w
    np.testing.assert_array_equal(cols.grad, expected)
