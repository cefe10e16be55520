"""Unit tests for the reverse-mode differentiation core."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpursuit.diffmath import (
    Adam,
    Tensor,
    concat,
    cross_entropy,
    finite_difference_grad,
    layer_norm,
    load_checkpoint,
    no_grad,
    save_checkpoint,
    zero_grads,
)


def _fd_check(build_loss, params, tol=1e-6):
    """Backward gradients of a scalar loss against central differences."""
    zero_grads(params)
    loss = build_loss()
    loss.backward()
    got = [p.grad.copy() for p in params]
    want = finite_difference_grad(lambda: float(build_loss().data), params)
    for g, w in zip(got, want):
        denom = np.maximum(np.abs(w), 1e-8)
        assert np.max(np.abs(g - w) / denom) < tol


def test_add_mul_matmul_gradients():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    c = Tensor(rng.standard_normal((1, 2)), requires_grad=True)  # broadcasts
    _fd_check(lambda: ((a @ b + c) * (a @ b)).sum(), [a, b, c])


def test_broadcast_unbroadcast_gradients():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    g = Tensor(rng.standard_normal((1, 3)), requires_grad=True)
    _fd_check(lambda: (x * g + g).mean(), [x, g])


def test_elementwise_op_gradients():
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((4, 3)) + 2.5, requires_grad=True)
    _fd_check(lambda: (x.log() + x.exp() * 1e-2 + x.tanh() + x ** 1.5).sum(), [x])


def test_relu_gradient_away_from_kink():
    x = Tensor(np.array([[2.0, -3.0, 0.5]]), requires_grad=True)
    _fd_check(lambda: x.relu().sum(), [x])


def test_softmax_and_log_softmax_gradients():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 5)))
    _fd_check(lambda: (x.softmax(axis=1) * w).sum(), [x])
    zero_grads([x])
    _fd_check(lambda: (x.log_softmax(axis=1) * w).sum(), [x])


def test_layer_norm_gradients():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    g = Tensor(rng.standard_normal((1, 6)), requires_grad=True)
    b = Tensor(rng.standard_normal((1, 6)), requires_grad=True)
    _fd_check(lambda: (layer_norm(x, g, b) ** 2.0).sum(), [x, g, b])


def test_masked_fill_blocks_gradient_at_masked_entries():
    x = Tensor(np.array([[1.0, 2.0, 3.0]]), requires_grad=True)
    mask = np.array([[False, True, False]])
    y = x.masked_fill(mask, -50.0)
    assert np.array_equal(y.data, [[1.0, -50.0, 3.0]])
    y.sum().backward()
    assert np.array_equal(x.grad, [[1.0, 0.0, 1.0]])


def test_concat_gradient_routing():
    rng = np.random.default_rng(5)
    a = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    b = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 6)))
    _fd_check(lambda: (concat([a, b], axis=1) * w).sum(), [a, b])


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_no_grad_blocks_graph_construction():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with no_grad():
        y = (x * 3.0).sum()
    assert y._prev == ()
    assert not y.requires_grad


def test_gradients_accumulate_until_zeroed():
    x = Tensor(np.ones((1, 1)), requires_grad=True)
    (x * 2.0).sum().backward()
    (x * 2.0).sum().backward()
    assert x.grad[0, 0] == pytest.approx(4.0)
    x.zero_grad()
    assert x.grad is None


def test_cross_entropy_matches_manual_value():
    logits = Tensor(np.array([[1.0, 0.0], [0.0, 2.0]]), requires_grad=True)
    labels = np.array([0, 1])
    want = -(np.log(np.exp(1) / (np.exp(1) + 1)) +
             np.log(np.exp(2) / (np.exp(2) + 1))) / 2
    assert float(cross_entropy(logits, labels).data) == pytest.approx(want, abs=1e-12)


def test_cross_entropy_gradient():
    rng = np.random.default_rng(6)
    logits = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    labels = np.array([0, 2, 1, 1, 0])
    _fd_check(lambda: cross_entropy(logits, labels), [logits])


def test_sign_st_forward_and_surrogate_backward():
    x = Tensor(np.array([[0.7, -1.2, 0.0]]), requires_grad=True)
    y = x.sign_st()
    assert np.array_equal(y.data, [[1.0, -1.0, 1.0]])  # sgn(0) := +1
    y.sum().backward()
    assert np.allclose(x.grad, 1.0 - np.tanh(x.data) ** 2)


def test_onehot_argmax_st_forward_and_identity_backward():
    p = Tensor(np.array([[0.2, 0.5, 0.3], [0.9, 0.05, 0.05]]), requires_grad=True)
    y = p.onehot_argmax_st(axis=1)
    assert np.array_equal(y.data, [[0, 1, 0], [1, 0, 0]])
    w = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    (y * Tensor(w)).sum().backward()
    assert np.array_equal(p.grad, w)


def test_adam_scalar_recurrence():
    # constant unit gradient: bias-corrected m_hat = 1, v_hat = 1 each step,
    # so every update subtracts lr / (1 + eps)
    p = Tensor(np.array([[0.0]]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    for t in range(1, 4):
        p.grad = np.array([[1.0]])
        opt.step()
        want = -t * 0.1 / (1.0 + 1e-8)
        assert p.data[0, 0] == pytest.approx(want, abs=1e-12)


def test_adam_weight_decay_is_l2_on_gradient():
    p1 = Tensor(np.array([[2.0]]), requires_grad=True)
    p2 = Tensor(np.array([[2.0]]), requires_grad=True)
    o1 = Adam([p1], lr=0.01, weight_decay=0.5)
    o2 = Adam([p2], lr=0.01)
    p1.grad = np.array([[1.0]])
    p2.grad = np.array([[1.0 + 0.5 * 2.0]])  # g + wd * p, applied manually
    o1.step()
    o2.step()
    assert p1.data[0, 0] == pytest.approx(p2.data[0, 0], abs=1e-12)


def test_adam_skips_parameters_without_gradient():
    p = Tensor(np.array([[1.0]]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    opt.step()
    assert p.data[0, 0] == 1.0


def test_finite_difference_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        finite_difference_grad(lambda: 0.0, [], h=0.0)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    named = [("a.w", Tensor(rng.standard_normal((3, 4)).astype(np.float32))),
             ("b.vec", Tensor(rng.standard_normal((1, 5)).astype(np.float32)))]
    path = tmp_path / "m.prms"
    save_checkpoint(named, path)
    state = load_checkpoint(path)
    assert set(state) == {"a.w", "b.vec"}
    for name, t in named:
        assert np.array_equal(state[name], np.atleast_2d(t.data))


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.prms"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_write_is_deterministic(tmp_path):
    named = [("x", Tensor(np.arange(6, dtype=np.float64).reshape(2, 3)))]
    save_checkpoint(named, tmp_path / "a.prms")
    save_checkpoint(named, tmp_path / "b.prms")
    assert (tmp_path / "a.prms").read_bytes() == (tmp_path / "b.prms").read_bytes()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(-50, 50), min_size=4, max_size=4),
                min_size=1, max_size=8))
def test_softmax_rows_are_distributions(rows):
    x = Tensor(np.array(rows))
    y = x.softmax(axis=1).data
    assert np.all(y >= 0)
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(np.log(y + 1e-300), x.log_softmax(axis=1).data, atol=1e-9)
