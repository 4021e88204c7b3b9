"""Gradient and contract checks for the tensor library.

Every differentiable op is checked against central finite differences in
float64 (eps=1e-4, relative error < 1e-4). Expected values in the examples
were computed by hand or with the direct formula written inline.
"""

import numpy as np
import pytest
from conftest import numerical_grad, rel_error
from hypothesis import given, settings
from hypothesis import strategies as st

from inkmath import autograd as ag

F64 = np.float64


def check_grads(build, arrays, tol=1e-4):
    """build(tensors) -> scalar Tensor; compares backward against FD."""
    tensors = [ag.Tensor(a, requires_grad=True, dtype=F64) for a in arrays]
    loss = build(tensors)
    loss.backward()

    def f(arrs):
        ts = [ag.Tensor(a, dtype=F64) for a in arrs]
        return build(ts).item()

    numeric = numerical_grad(f, arrays)
    for t, n in zip(tensors, numeric):
        assert rel_error(t.grad, n) < tol


# -- matmul -------------------------------------------------------------------

def test_matmul_identity():
    m = np.arange(9, dtype=F64).reshape(3, 3)
    out = ag.matmul(ag.Tensor(np.eye(3)), ag.Tensor(m))
    np.testing.assert_array_equal(out.data, m)


def test_matmul_hand_case():
    a = ag.Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = ag.Tensor([[5.0], [6.0]])
    np.testing.assert_allclose(ag.matmul(a, b).data, [[17.0], [39.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        ag.matmul(ag.Tensor(np.ones((2, 3))), ag.Tensor(np.ones((2, 3))))


def test_matmul_grad_is_column_sums(rng):
    # d/da sum(a @ b) = broadcast of the column sums of b over rows of a
    a = rng.uniform(-1, 1, (3, 4))
    b = rng.uniform(-1, 1, (4, 5))
    ta = ag.Tensor(a, requires_grad=True, dtype=F64)
    loss = ag.sum_all(ag.matmul(ta, ag.Tensor(b, dtype=F64)))
    loss.backward()
    expected = np.tile(b.sum(axis=1), (3, 1))
    np.testing.assert_allclose(ta.grad, expected, rtol=1e-12)


def test_matmul_fd(rng):
    a = rng.uniform(-1, 1, (3, 4))
    b = rng.uniform(-1, 1, (4, 2))
    check_grads(lambda ts: ag.sum_all(ag.mul(ag.matmul(ts[0], ts[1]),
                                             ag.matmul(ts[0], ts[1]))),
                [a, b])


def test_matmul_batched_fd(rng):
    a = rng.uniform(-1, 1, (2, 3, 4))
    b = rng.uniform(-1, 1, (4, 5))
    check_grads(lambda ts: ag.sum_all(ag.mul(ag.matmul(ts[0], ts[1]),
                                             ag.matmul(ts[0], ts[1]))),
                [a, b])


# -- masked softmax ------------------------------------------------------------

def test_softmax_uniform():
    out = ag.masked_softmax(ag.Tensor([1.0, 1.0, 1.0, 1.0]))
    np.testing.assert_allclose(out.data, [0.25] * 4)


def test_softmax_forced_by_mask():
    out = ag.masked_softmax(ag.Tensor([0.0, 0.0]), np.array([True, False]))
    np.testing.assert_array_equal(out.data, [1.0, 0.0])


def test_softmax_matches_direct_formula(rng):
    x = rng.uniform(-1, 1, 5)
    out = ag.masked_softmax(ag.Tensor(x, dtype=F64)).data
    direct = np.exp(x) / np.exp(x).sum()
    assert np.abs(out - direct).max() < 1e-6


def test_softmax_rows_sum_to_one_masked_exactly_zero(rng):
    x = rng.uniform(-5, 5, (6, 8))
    mask = rng.random((6, 8)) > 0.4
    mask[:, 0] = True
    out = ag.masked_softmax(ag.Tensor(x), mask).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)
    assert (out[~mask] == 0.0).all()


def test_softmax_fully_masked_row_raises():
    with pytest.raises(ValueError):
        ag.masked_softmax(ag.Tensor([[0.0, 1.0]]), np.array([[False, False]]))


def test_softmax_fd(rng):
    x = rng.uniform(-1, 1, (3, 5))
    mask = np.ones((3, 5), dtype=bool)
    mask[:, 3] = False
    w = rng.uniform(-1, 1, (3, 5))

    def build(ts):
        return ag.sum_all(ag.mul(ag.masked_softmax(ts[0], mask),
                                 ag.Tensor(w, dtype=F64)))

    check_grads(build, [x])


def test_softmax_no_gradient_into_masked_scores(rng):
    x = ag.Tensor(rng.uniform(-1, 1, (2, 4)), requires_grad=True, dtype=F64)
    mask = np.array([[True, True, False, True]] * 2)
    ag.sum_all(ag.mul(ag.masked_softmax(x, mask), ag.Tensor(rng.uniform(-1, 1, (2, 4)), dtype=F64))).backward()
    assert (x.grad[:, 2] == 0.0).all()


# -- layer norm ----------------------------------------------------------------

def test_layer_norm_constant_row_is_zero():
    x = ag.Tensor(np.full((2, 8), 3.7))
    out = ag.layer_norm(x, ag.Tensor(np.ones(8)), ag.Tensor(np.zeros(8)))
    np.testing.assert_array_equal(out.data, np.zeros((2, 8)))


def test_layer_norm_two_points():
    # mean 2, var 1 -> (x - 2) / sqrt(1 + 1e-5) = +/- 0.999995
    out = ag.layer_norm(ag.Tensor([[1.0, 3.0]]),
                        ag.Tensor(np.ones(2)), ag.Tensor(np.zeros(2)))
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-3)
    assert abs(out.data[0, 1] - 1.0) > 1e-7  # epsilon visibly shrinks it


def test_layer_norm_fd(rng):
    x = rng.uniform(-1, 1, (4, 8))
    g = rng.uniform(0.5, 1.5, 8)
    b = rng.uniform(-0.5, 0.5, 8)
    w = rng.uniform(-1, 1, (4, 8))

    def build(ts):
        return ag.sum_all(ag.mul(ag.layer_norm(ts[0], ts[1], ts[2]),
                                 ag.Tensor(w, dtype=F64)))

    check_grads(build, [x, g, b])


# -- cross entropy --------------------------------------------------------------

def test_cross_entropy_confident_limit():
    logits = np.zeros((1, 4))
    losses = []
    for conf in (5.0, 20.0, 80.0):
        l = logits.copy()
        l[0, 2] = conf
        losses.append(ag.cross_entropy(ag.Tensor(l, dtype=F64),
                                       np.array([2])).item())
    assert losses[0] > losses[1] > losses[2]
    assert losses[2] < 1e-12


def test_cross_entropy_uniform_is_log_v():
    out = ag.cross_entropy(ag.Tensor(np.zeros((3, 20)), dtype=F64),
                           np.array([0, 7, 19]))
    assert abs(out.item() - np.log(20)) < 1e-12


def test_cross_entropy_gradient_is_softmax_minus_onehot(rng):
    x = rng.uniform(-1, 1, (4, 6))
    t = ag.Tensor(x, requires_grad=True, dtype=F64)
    targets = np.array([1, 0, 5, 2])
    ag.cross_entropy(t, targets).backward()
    p = np.exp(x) / np.exp(x).sum(axis=1, keepdims=True)
    onehot = np.eye(6)[targets]
    np.testing.assert_allclose(t.grad, (p - onehot) / 4, rtol=1e-10)


def test_cross_entropy_fd(rng):
    x = rng.uniform(-1, 1, (5, 7))
    targets = np.array([0, 3, 6, 2, 2])
    check_grads(lambda ts: ag.cross_entropy(ts[0], targets, ignore_index=2),
                [x])


def test_cross_entropy_all_ignored_raises():
    with pytest.raises(ValueError):
        ag.cross_entropy(ag.Tensor(np.zeros((2, 4))), np.array([1, 1]),
                         ignore_index=1)


def test_cross_entropy_target_out_of_range():
    with pytest.raises(ValueError):
        ag.cross_entropy(ag.Tensor(np.zeros((1, 4))), np.array([4]))


# -- backward mechanics ----------------------------------------------------------

def test_backward_sum_gives_ones():
    w = ag.Tensor(np.arange(6, dtype=F64), requires_grad=True)
    ag.sum_all(w).backward()
    np.testing.assert_array_equal(w.grad, np.ones(6))


def test_backward_square_gives_2w():
    w = ag.Tensor(np.arange(1.0, 5.0), requires_grad=True, dtype=F64)
    ag.sum_all(ag.mul(w, w)).backward()
    np.testing.assert_allclose(w.grad, 2 * w.data)


def test_backward_non_scalar_raises():
    w = ag.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        w.backward()


def test_backward_accumulates_across_calls():
    w = ag.Tensor(np.ones(3), requires_grad=True, dtype=F64)
    loss = ag.sum_all(w)
    loss.backward()
    loss.backward()
    np.testing.assert_array_equal(w.grad, 2 * np.ones(3))


def test_multi_use_accumulates_sum_of_paths(rng):
    # w used twice vs the algebraically identical single-use form
    a = rng.uniform(-1, 1, 4)
    b = rng.uniform(-1, 1, 4)
    w1 = ag.Tensor(rng.uniform(-1, 1, 4), requires_grad=True, dtype=F64)
    ag.sum_all(ag.add(ag.mul(w1, ag.Tensor(a, dtype=F64)),
                      ag.mul(w1, ag.Tensor(b, dtype=F64)))).backward()
    w2 = ag.Tensor(w1.data, requires_grad=True, dtype=F64)
    ag.sum_all(ag.mul(w2, ag.Tensor(a + b, dtype=F64))).backward()
    np.testing.assert_allclose(w1.grad, w2.grad, rtol=1e-12)


@given(k=st.integers(min_value=1, max_value=6))
@settings(max_examples=20, deadline=None)
def test_k_uses_accumulate_k_paths(k):
    w = ag.Tensor(np.array([2.0, -3.0]), requires_grad=True, dtype=F64)
    total = ag.sum_all(w)
    for _ in range(k - 1):
        total = ag.add(total, ag.sum_all(w))
    total.backward()
    np.testing.assert_array_equal(w.grad, k * np.ones(2))


# -- remaining ops ---------------------------------------------------------------

def test_add_broadcast_fd(rng):
    x = rng.uniform(-1, 1, (3, 4))
    b = rng.uniform(-1, 1, 4)
    w = rng.uniform(-1, 1, (3, 4))
    check_grads(lambda ts: ag.sum_all(ag.mul(ag.add(ts[0], ts[1]),
                                             ag.Tensor(w, dtype=F64))),
                [x, b])


def test_scale_and_relu_fd(rng):
    # keep inputs away from the relu kink at 0
    x = rng.uniform(0.1, 1, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4))
    check_grads(lambda ts: ag.sum_all(ag.relu(ag.scale(ts[0], 1.7))), [x])


def test_relu_forward():
    out = ag.relu(ag.Tensor([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])


def test_embedding_lookup_fd(rng):
    table = rng.uniform(-1, 1, (5, 3))
    idx = np.array([[0, 2], [2, 4]])
    w = rng.uniform(-1, 1, (2, 2, 3))
    check_grads(lambda ts: ag.sum_all(ag.mul(ag.embedding_lookup(ts[0], idx),
                                             ag.Tensor(w, dtype=F64))),
                [table])


def test_embedding_lookup_out_of_range():
    with pytest.raises(ValueError):
        ag.embedding_lookup(ag.Tensor(np.ones((3, 2))), np.array([3]))


def test_embedding_repeated_rows_accumulate(rng):
    table = ag.Tensor(rng.uniform(-1, 1, (4, 2)), requires_grad=True, dtype=F64)
    ag.sum_all(ag.embedding_lookup(table, np.array([1, 1, 1]))).backward()
    np.testing.assert_array_equal(table.grad[1], [3.0, 3.0])
    np.testing.assert_array_equal(table.grad[0], [0.0, 0.0])


def test_concat_slice_transpose_reshape_fd(rng):
    a = rng.uniform(-1, 1, (2, 3))
    b = rng.uniform(-1, 1, (2, 2))

    def build(ts):
        c = ag.concat([ts[0], ts[1]], axis=1)          # (2,5)
        d = ag.transpose(c, (1, 0))                    # (5,2)
        e = ag.reshape(d, (2, 5))
        f = ag.slice_(e, (slice(None), slice(1, 4)))   # (2,3)
        return ag.sum_all(ag.mul(f, f))

    check_grads(build, [a, b])


def test_dropout_identity_at_zero(rng):
    x = ag.Tensor(rng.uniform(-1, 1, (3, 3)))
    assert ag.dropout(x, 0.0) is x


def test_dropout_scales_and_zeroes(rng):
    x = ag.Tensor(np.ones((100, 100)), requires_grad=True)
    out = ag.dropout(x, 0.5, rng=np.random.default_rng(7))
    vals = np.unique(out.data)
    assert set(vals.tolist()) == {0.0, 2.0}
    ag.sum_all(out).backward()
    np.testing.assert_array_equal(x.grad, out.data)


def test_dropout_requires_rng():
    with pytest.raises(ValueError):
        ag.dropout(ag.Tensor(np.ones(3)), 0.5)


def test_argmax_lowest_index_tie_break():
    t = ag.Tensor([[1.0, 3.0, 3.0], [2.0, 2.0, 2.0]])
    np.testing.assert_array_equal(t.argmax(axis=-1), [1, 0])


def test_no_grad_skips_graph():
    w = ag.Tensor(np.ones(3), requires_grad=True)
    with ag.no_grad():
        out = ag.sum_all(w)
    assert out.op_trace is None and not out.requires_grad


def test_grad_dtype_follows_input():
    w = ag.Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    ag.sum_all(ag.mul(w, w)).backward()
    assert w.grad.dtype == np.float32
