"""Unit tests for fixed and learnable query dictionaries."""
import numpy as np
import pytest

from qpursuit.diffmath import no_grad, zero_grads
from qpursuit.embedding_store import EmbeddingDataset
from qpursuit.query_dictionary import (
    FixedDictionary,
    LearnableDictionary,
    fit_thresholds,
    fit_zscore,
    fixed_hard_answers,
    fixed_soft_answers,
    init_from_concepts,
    init_random,
    learnable_answers,
    pre_sign_activations,
)


def _unit_rows(n, d, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _data(n=40, d=8, c=2, seed=1):
    rng = np.random.default_rng(seed)
    return EmbeddingDataset(rng.standard_normal((n, d)).astype(np.float32),
                            rng.integers(0, c, n).astype(np.uint32), c)


# -- fixed dictionaries -------------------------------------------------------

def test_fixed_requires_unit_rows():
    with pytest.raises(ValueError, match="unit"):
        FixedDictionary(np.ones((2, 3)))


def test_zscore_pools_over_all_queries_and_samples():
    fixed = FixedDictionary(_unit_rows(5, 8))
    train = _data()
    fit_zscore(fixed, train)
    dots = train.embeddings.astype(np.float64) @ fixed.concept_vectors.T
    assert fixed.zscore_mean == pytest.approx(dots.mean(), abs=1e-12)
    assert fixed.zscore_std == pytest.approx(dots.std(), abs=1e-12)
    soft = fixed_soft_answers(fixed, train.embeddings)
    # globally standardized: pooled mean 0, pooled std 1
    assert abs(soft.mean()) < 1e-12
    assert soft.std() == pytest.approx(1.0, abs=1e-12)


def test_soft_answers_require_fit():
    fixed = FixedDictionary(_unit_rows(2, 4))
    with pytest.raises(ValueError, match="fit_zscore"):
        fixed_soft_answers(fixed, np.zeros((1, 4)))


def test_hard_thresholds_are_per_query_training_means():
    fixed = FixedDictionary(_unit_rows(3, 6, seed=2))
    train = _data(d=6)
    fit_thresholds(fixed, train)
    dots = train.embeddings.astype(np.float64) @ fixed.concept_vectors.T
    assert np.allclose(fixed.thresholds, dots.mean(axis=0), atol=1e-12)
    hard = fixed_hard_answers(fixed, train.embeddings)
    assert set(np.unique(hard)) <= {-1.0, 1.0}
    assert np.array_equal(hard, np.where(dots >= fixed.thresholds, 1.0, -1.0))


def test_hard_answer_tie_goes_positive():
    v = np.array([[1.0, 0.0]])
    fixed = FixedDictionary(v, thresholds=np.array([0.5]))
    ans = fixed_hard_answers(fixed, np.array([[0.5, 0.0]]))  # dot == threshold
    assert ans[0, 0] == 1.0


# -- learnable dictionaries ---------------------------------------------------

def test_init_random_scalars_and_stats():
    dic = init_random(6, 10, seed=0)
    assert dic.v.shape == (6, 10)
    assert np.array_equal(dic.gamma.data, np.ones((1, 6)))
    assert np.array_equal(dic.beta.data, np.zeros((1, 6)))
    assert np.array_equal(dic.bn_running_mean, np.zeros(6))
    assert np.array_equal(dic.bn_running_var, np.ones(6))


def test_init_from_concepts_copies_and_validates():
    vecs = _unit_rows(3, 5)
    dic = init_from_concepts(vecs, names=["a", "b", "c"])
    assert np.array_equal(dic.v.data, vecs)
    with pytest.raises(ValueError, match="nonzero"):
        init_from_concepts(np.zeros((2, 4)))
    with pytest.raises(ValueError, match="name count"):
        init_from_concepts(vecs, names=["only-one"])


def test_train_batch_statistics_normalize_pre_sign_output():
    dic = init_random(8, 16, seed=3)
    rng = np.random.default_rng(4)
    batch = rng.standard_normal((256, 16))
    pre = pre_sign_activations(dic, batch, train=True)
    assert np.max(np.abs(pre.mean(axis=0))) < 1e-9
    # variance is 1/(1 + eps/var_batch) ~= 1 up to the batch-norm epsilon
    assert np.allclose(pre.var(axis=0), 1.0, atol=1e-4)


def test_running_statistics_momentum_update():
    dic = init_random(2, 4, seed=5)
    rng = np.random.default_rng(6)
    batch = rng.standard_normal((64, 4))
    norms = np.linalg.norm(dic.v.data, axis=1, keepdims=True)
    dots = batch @ (dic.v.data / norms).T
    want_mean = 0.9 * 0.0 + 0.1 * dots.mean(axis=0)
    want_var = 0.9 * 1.0 + 0.1 * dots.var(axis=0)
    with no_grad():
        learnable_answers(dic, batch, train=True)
    assert np.allclose(dic.bn_running_mean, want_mean, atol=1e-12)
    assert np.allclose(dic.bn_running_var, want_var, atol=1e-12)


def test_train_requires_two_samples():
    dic = init_random(2, 4, seed=0)
    with pytest.raises(ValueError, match=">= 2"):
        learnable_answers(dic, np.ones((1, 4)), train=True)
    with pytest.raises(ValueError, match="empty"):
        learnable_answers(dic, np.ones((0, 4)), train=False)


def test_inference_uses_running_statistics():
    dic = init_random(3, 6, seed=7)
    dic.bn_running_mean = np.array([5.0, -5.0, 0.0])
    dic.bn_running_var = np.array([1.0, 1.0, 1.0])
    batch = np.zeros((4, 6))
    with no_grad():
        ans = learnable_answers(dic, batch, train=False).data
    # dots are 0; normalized answers are sgn(-mean/std)
    assert np.array_equal(ans[0], [-1.0, 1.0, 1.0])


def test_inference_matches_effective_hyperplanes():
    dic = init_random(10, 12, seed=8)
    rng = np.random.default_rng(9)
    with no_grad():
        learnable_answers(dic, rng.standard_normal((128, 12)), train=True)
    dic.gamma.data = rng.standard_normal((1, 10))
    dic.beta.data = rng.standard_normal((1, 10))
    batch = rng.standard_normal((200, 12))
    with no_grad():
        ans = learnable_answers(dic, batch, train=False).data
    w, b = dic.effective_hyperplanes()
    assert np.array_equal(ans, np.where(batch @ w.T - b >= 0.0, 1.0, -1.0))


def test_soft_mode_returns_bn_output():
    dic = init_random(4, 6, seed=10, answer_mode="soft")
    batch = np.random.default_rng(11).standard_normal((32, 6))
    with no_grad():
        soft = learnable_answers(dic, batch, train=False).data
    assert not set(np.unique(soft)) <= {-1.0, 1.0}


def test_bn_off_is_plain_affine_sign():
    dic = init_random(3, 5, seed=12)
    dic.use_bn = False
    dic.gamma.data = np.array([[2.0, 1.0, 0.5]])
    dic.beta.data = np.array([[0.1, -0.2, 0.0]])
    batch = np.random.default_rng(13).standard_normal((16, 5))
    norms = np.linalg.norm(dic.v.data, axis=1, keepdims=True)
    dots = batch @ (dic.v.data / norms).T
    want = np.where(dots * dic.gamma.data - dic.beta.data >= 0, 1.0, -1.0)
    with no_grad():
        assert np.array_equal(learnable_answers(dic, batch).data, want)


def test_gradients_reach_all_dictionary_parameters():
    dic = init_random(4, 6, seed=14)
    batch = np.random.default_rng(15).standard_normal((32, 6))
    zero_grads(dic.parameters())
    loss = (learnable_answers(dic, batch, train=True) ** 2.0).sum() \
        + learnable_answers(dic, batch, train=True).sum()
    loss.backward()
    for p in dic.parameters():
        assert p.grad is not None
        assert np.any(p.grad != 0.0)


def test_zero_norm_vector_rejected():
    dic = init_random(2, 4, seed=16)
    dic.v.data[0] = 0.0
    with pytest.raises(ValueError, match="zero-norm"):
        learnable_answers(dic, np.ones((4, 4)))


def test_state_round_trip_preserves_running_stats():
    dic = init_random(3, 5, seed=17)
    with no_grad():
        learnable_answers(dic, np.random.default_rng(18).standard_normal((64, 5)),
                          train=True)
    state = {name: t.data.copy() for name, t in dic.named_state()}
    other = init_random(3, 5, seed=99)
    other.load_state(state)
    assert np.array_equal(other.v.data, dic.v.data)
    assert np.array_equal(other.bn_running_mean, dic.bn_running_mean)
    assert np.array_equal(other.bn_running_var, dic.bn_running_var)


def test_pre_sign_diagnostics_do_not_perturb_state():
    dic = init_random(3, 5, seed=19)
    batch = np.random.default_rng(20).standard_normal((32, 5))
    mean0, var0 = dic.bn_running_mean.copy(), dic.bn_running_var.copy()
    pre_sign_activations(dic, batch, train=True)
    assert np.array_equal(dic.bn_running_mean, mean0)
    assert np.array_equal(dic.bn_running_var, var0)
    assert dic.answer_mode == "hard"
