import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import finite_diff, rel_err

from flowalign.autodiff import (
    NonFiniteError,
    Tensor,
    concat_cols,
    pairwise_dot,
    softmax_1d,
    stack_rows,
)


def test_constructor_rejects_nonfinite():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(NonFiniteError):
        Tensor([np.inf])


def test_linear_loss_gradient_is_input():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5,))
    w = Tensor(rng.normal(size=(5,)), requires_grad=True)
    loss = (w * Tensor(x)).sum()
    loss.backward()
    np.testing.assert_array_equal(w.grad, x)


def test_squared_norm_gradient_is_2w():
    w = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    loss = (w * w).sum()
    loss.backward()
    np.testing.assert_allclose(w.grad, 2 * w.data, rtol=0, atol=0)


def test_backward_rejects_nonscalar():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        (w * 2.0).backward()


def test_grad_accumulates_through_diamond():
    w = Tensor(2.0, requires_grad=True)
    a = w * 3.0
    b = w * 4.0
    loss = (a * b).sum()  # 12 w^2 -> d/dw = 24 w
    loss.backward()
    assert w.grad == pytest.approx(48.0)


def test_matmul_bias_silu_chain_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 4))
    w1 = rng.normal(size=(4, 6))
    b1 = rng.normal(size=(6,))
    w2 = rng.normal(size=(6, 2))

    def value(w1_arr):
        h = np.asarray(x) @ w1_arr + b1
        s = h * (1.0 / (1.0 + np.exp(-h)))
        return float(np.mean(s @ w2))

    w1_t = Tensor(w1.copy(), requires_grad=True)
    out = ((Tensor(x) @ w1_t + Tensor(b1)).silu() @ Tensor(w2)).mean()
    out.backward()
    fd = finite_diff(value, w1.copy())
    assert rel_err(w1_t.grad, fd) < 1e-6


def test_gather_with_zero_pad_gradient():
    x = Tensor(np.arange(6, dtype=np.float64), requires_grad=True)
    idx = np.array([0, 2, -1, 2])
    y = x.gather(idx)
    np.testing.assert_array_equal(y.data, [0.0, 2.0, 0.0, 2.0])
    (y * Tensor([1.0, 10.0, 100.0, 1000.0])).sum().backward()
    np.testing.assert_array_equal(x.grad, [1.0, 0.0, 1010.0, 0.0, 0.0, 0.0])


def test_gather_rejects_out_of_range():
    x = Tensor([1.0, 2.0])
    with pytest.raises(IndexError):
        x.gather(np.array([2]))
    with pytest.raises(IndexError):
        x.gather(np.array([-2]))


def test_pairwise_dot_values_and_transpose_symmetry():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    k_ab = pairwise_dot(Tensor(a), Tensor(b)).data
    k_ba = pairwise_dot(Tensor(b), Tensor(a)).data
    np.testing.assert_array_equal(k_ab, k_ba.T)
    np.testing.assert_allclose(k_ab, a @ b.T, rtol=1e-12)


def test_pairwise_dot_gradient():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(2, 4))
    weights = rng.normal(size=(3, 2))

    def value(a_arr):
        return float(np.sum((a_arr @ b.T) * weights))

    a_t = Tensor(a.copy(), requires_grad=True)
    (pairwise_dot(a_t, Tensor(b)) * Tensor(weights)).sum().backward()
    assert rel_err(a_t.grad, finite_diff(value, a.copy())) < 1e-6


def test_sum_exact_is_order_independent():
    rng = np.random.default_rng(4)
    vals = rng.normal(size=257) * 10.0 ** rng.integers(-8, 8, size=257)
    perm = rng.permutation(257)
    assert Tensor(vals).sum_exact().item() == Tensor(vals[perm]).sum_exact().item()


def test_mean_rows_exact_matches_fsum_and_gradient():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(7, 3))
    t = Tensor(x.copy(), requires_grad=True)
    m = t.mean_rows_exact()
    expected = [math.fsum(x[:, j].tolist()) / 7 for j in range(3)]
    np.testing.assert_array_equal(m.data, expected)
    (m * Tensor([1.0, 2.0, 3.0])).sum().backward()
    np.testing.assert_allclose(t.grad, np.tile([1 / 7, 2 / 7, 3 / 7], (7, 1)))


def test_softmax_1d_normalizes_and_differentiates():
    x = np.array([0.3, -1.2, 2.0, 0.0])
    t = Tensor(x.copy(), requires_grad=True)
    p = softmax_1d(t)
    assert p.data.sum() == pytest.approx(1.0, abs=1e-14)

    weights = np.array([1.0, -2.0, 0.5, 3.0])

    def value(arr):
        e = np.exp(arr - arr.max())
        return float(np.dot(e / e.sum(), weights))

    (p * Tensor(weights)).sum().backward()
    assert rel_err(t.grad, finite_diff(value, x.copy())) < 1e-6


def test_clamp_min_floor_and_gradient_mask():
    t = Tensor([0.5, 1e-20, 2.0], requires_grad=True)
    y = t.clamp_min(1e-12)
    np.testing.assert_array_equal(y.data, [0.5, 1e-12, 2.0])
    (y * Tensor([1.0, 1.0, 1.0])).sum().backward()
    np.testing.assert_array_equal(t.grad, [1.0, 0.0, 1.0])


def test_concat_cols_and_stack_rows_gradients():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones((2, 1)), requires_grad=True)
    c = concat_cols([a, b])
    assert c.shape == (2, 4)
    (c * Tensor(np.arange(8.0).reshape(2, 4))).sum().backward()
    np.testing.assert_array_equal(a.grad, [[0, 1, 2], [4, 5, 6]])
    np.testing.assert_array_equal(b.grad, [[3], [7]])

    rows = [Tensor(np.array([1.0, 2.0]), requires_grad=True) for _ in range(3)]
    s = stack_rows(rows)
    assert s.shape == (3, 2)
    (s * Tensor(np.arange(6.0).reshape(3, 2))).sum().backward()
    np.testing.assert_array_equal(rows[1].grad, [2.0, 3.0])


def test_detach_blocks_gradient():
    w = Tensor([1.0, 2.0], requires_grad=True)
    y = (w * 3.0).detach()
    assert not y.requires_grad
    loss = (w + y).sum()
    loss.backward()
    np.testing.assert_array_equal(w.grad, [1.0, 1.0])


def test_frozen_forward_builds_no_graph():
    w = Tensor([1.0, 2.0], requires_grad=False)
    y = (w * 2.0 + 1.0).sum()
    assert not y.requires_grad
    assert y._parents == ()


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(min_value=-10, max_value=10), min_size=2, max_size=6),
    st.lists(st.floats(min_value=-10, max_value=10), min_size=2, max_size=6),
)
def test_add_mul_match_numpy(xs, ys):
    n = min(len(xs), len(ys))
    a, b = np.array(xs[:n]), np.array(ys[:n])
    np.testing.assert_array_equal((Tensor(a) + Tensor(b)).data, a + b)
    np.testing.assert_array_equal((Tensor(a) * Tensor(b)).data, a * b)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_random_two_layer_net_gradcheck(seed):
    rng = np.random.default_rng(seed)
    din, dh = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    x = rng.normal(size=(2, din))
    w1 = rng.normal(size=(din, dh))
    w2 = rng.normal(size=(dh, 1))

    def value(w1_arr):
        h = x @ w1_arr
        s = h * (1.0 / (1.0 + np.exp(-h)))
        return float(np.sum(s @ w2))

    w1_t = Tensor(w1.copy(), requires_grad=True)
    ((Tensor(x) @ w1_t).silu() @ Tensor(w2)).sum().backward()
    assert rel_err(w1_t.grad, finite_diff(value, w1.copy())) < 1e-6
