import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arn import relation as rel
from arn.errors import ContractError, DimensionError
from arn.gradcheck import check_gradients
from arn.tensor import Tensor


@pytest.fixture
def head(rng):
    cfg = rel.RelationConfig(conv_channels=(3, 3), hidden=5)
    return cfg, rel.init_relation(cfg, 8, rng)


def test_scores_lie_in_unit_interval(head, rng):
    cfg, params = head
    pairs = Tensor(rng.standard_normal((6, 2, 8, 8)) * 5)
    r = rel.relation_forward(pairs, params, cfg).data
    assert r.shape == (6,) and np.all((r > 0) & (r < 1))


def test_score_table_matches_single_pair_calls(head, rng):
    cfg, params = head
    sup, qry = rng.standard_normal((3, 8, 8)), rng.standard_normal((2, 8, 8))
    table = rel.score_table(Tensor(sup), Tensor(qry), params, cfg).data
    assert table.shape == (2, 3)
    for q in range(2):
        for s in range(3):
            single = float(rel.relation_score(Tensor(sup[s]), Tensor(qry[q]), params, cfg).data)
            assert table[q, s] == pytest.approx(single, abs=1e-12)


def test_pair_order_matters(head, rng):
    cfg, params = head
    a, b = Tensor(rng.standard_normal((8, 8))), Tensor(rng.standard_normal((8, 8)))
    assert float(rel.relation_score(a, b, params, cfg).data) != float(rel.relation_score(b, a, params, cfg).data)


def test_spm_size_must_survive_two_pools():
    with pytest.raises(DimensionError):
        rel.RelationConfig().flat_features(6)


def test_mismatched_pair_shapes(head, rng):
    cfg, params = head
    with pytest.raises(DimensionError):
        rel.relation_score(Tensor(np.zeros((8, 8))), Tensor(np.zeros((4, 4))), params, cfg)


def test_single_pair_loss_constant():
    assert float(rel.episode_loss(Tensor(np.array([[0.5]])), [1], [1]).data) == 0.25
    assert float(rel.episode_loss(Tensor(np.array([[0.5]])), [1], [0]).data) == 0.25


@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_episode_loss_equals_explicit_double_sum(way, q_per, seed):
    rng = np.random.default_rng(seed)
    s_labels = np.arange(way)
    q_labels = np.repeat(np.arange(way), q_per)
    scores = rng.random((len(q_labels), way))
    want = sum(
        (scores[q, s] - float(s_labels[s] == q_labels[q])) ** 2
        for q in range(len(q_labels))
        for s in range(way)
    )
    assert float(rel.episode_loss(Tensor(scores), s_labels, q_labels).data) == pytest.approx(want, rel=1e-12)


def test_loss_shape_must_cover_all_pairs():
    with pytest.raises(ContractError):
        rel.episode_loss(Tensor(np.zeros((2, 2))), [0, 1, 2], [0, 1])


def test_loss_from_pairs_requires_every_pair():
    scores = {(0, 0): Tensor(np.array(0.3)), (1, 0): Tensor(np.array(0.6))}
    assert float(rel.episode_loss_from_pairs(scores, [0, 1], [1]).data) == pytest.approx(0.3**2 + 0.4**2)
    with pytest.raises(ContractError):
        rel.episode_loss_from_pairs({(0, 0): Tensor(np.array(0.3))}, [0, 1], [1])


def test_predict_class_means_and_ties():
    scores = np.array([[0.2, 0.9, 0.1, 0.1], [0.5, 0.5, 0.5, 0.5]])
    labels = np.array([0, 1, 1, 0])
    # class 0 mean 0.15, class 1 mean 0.5; second row ties and goes to 0
    np.testing.assert_array_equal(rel.predict(scores, labels), [1, 0])


def test_relation_gradients(head, rng):
    cfg, params = head
    sup = Tensor(rng.standard_normal((2, 8, 8)), requires_grad=True)
    qry = Tensor(rng.standard_normal((2, 8, 8)), requires_grad=True)

    def loss():
        return rel.episode_loss(rel.score_table(sup, qry, params, cfg), [0, 1], [1, 0])

    rep = check_gradients(loss, {**params, "support": sup, "query": qry}, n_coords=20)
    assert rep.ok, rep.worst()
