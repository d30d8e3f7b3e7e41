import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mkd.autograd import (
    DimensionError,
    DomainError,
    GradError,
    Tensor,
    concat,
    finite_difference_grad,
    grad,
    log,
    matmul,
    max_along_axis,
    no_grad,
    primitive_forward,
    relu,
    sigmoid,
    softmax_stable,
    tsum,
)
from mkd import gradcheck as gc


def test_matmul_hand_value():
    out = matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1], [1]]))
    np.testing.assert_array_equal(out.data, [[3], [7]])


def test_relu_definition():
    np.testing.assert_array_equal(relu(Tensor([-1, 0, 2])).data, [0, 0, 2])


def test_softmax_symmetry():
    np.testing.assert_allclose(softmax_stable(Tensor([0.0, 0.0]), axis=0).data, [0.5, 0.5])


def test_primitive_forward_dispatch():
    out = primitive_forward("add", [Tensor([1.0]), Tensor([2.0])])
    assert out.data[0] == 3.0
    with pytest.raises(ValueError):
        primitive_forward("conv2d", [Tensor([1.0])])


def test_shape_error_names_op_and_shapes():
    with pytest.raises(DimensionError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_log_domain_error():
    with pytest.raises(DomainError):
        log(Tensor([1.0, -1.0]))


def test_first_order_simple():
    x = Tensor(3.0, requires_grad=True)
    (g,) = grad(x * x, [x])
    assert float(g) == 6.0


def test_double_backward_cubic():
    x = Tensor(2.0, requires_grad=True)
    (g,) = grad(x * x * x, [x], create_graph=True)
    (g2,) = grad(g, [x])
    assert float(g2) == pytest.approx(12.0, abs=1e-12)


def test_non_scalar_loss_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(GradError):
        grad(x * x, [x])


def test_unreachable_param_gets_zero_gradient():
    x = Tensor(1.0, requires_grad=True)
    y = Tensor([2.0, 3.0], requires_grad=True)
    gx, gy = grad(x * x, [x, y])
    assert float(gx) == 2.0
    np.testing.assert_array_equal(gy.data, np.zeros(2))


def test_non_grad_param_rejected():
    x = Tensor(1.0, requires_grad=True)
    c = Tensor(1.0)
    with pytest.raises(GradError):
        grad(x * x, [c])


def test_no_grad_blocks_recording():
    x = Tensor(1.0, requires_grad=True)
    with no_grad():
        y = x * x
    assert not y.requires_grad


def test_fd_oracle_square():
    p = {"x": Tensor(3.0, requires_grad=True)}
    fd = finite_difference_grad(lambda q: q["x"].data ** 2, p, h=1e-6)
    assert fd["x"] == pytest.approx(6.0, abs=1e-8)


def test_fd_oracle_sigmoid_at_zero():
    p = {"x": Tensor(np.zeros(4), requires_grad=True)}
    fd = finite_difference_grad(lambda q: tsum(sigmoid(q["x"])), p, h=1e-6)
    np.testing.assert_allclose(fd["x"], 0.25, atol=1e-8)


def test_fd_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_difference_grad(lambda q: 0.0, {}, h=0.0)


@pytest.mark.parametrize("op", sorted(gc._default_ops()))
def test_primitive_gradients_match_fd(op):
    report = gc.check_primitives(trials=10, ops={op: gc._default_ops()[op]})
    assert report[op] <= gc.FIRST_ORDER_TOL


def test_mlp_backward_matches_fd():
    assert gc.check_mlp_backward(trials=3) <= gc.FIRST_ORDER_TOL


def test_second_order_polynomials():
    assert gc.check_second_order() <= gc.SECOND_ORDER_TOL


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=2, max_size=8),
       st.floats(-50, 50))
def test_softmax_shift_invariance_and_simplex(values, shift):
    z = Tensor(np.array(values))
    p = softmax_stable(z, axis=0).data
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all(p > 0) and np.all(p < 1)
    p_shift = softmax_stable(Tensor(np.array(values) + shift), axis=0).data
    np.testing.assert_allclose(p, p_shift, atol=1e-12)


def test_concat_and_max_gradients():
    a = Tensor(np.array([[1.0, 5.0], [2.0, 0.5]]), requires_grad=True)
    b = Tensor(np.array([[3.0, 1.0]]), requires_grad=True)
    out = tsum(max_along_axis(concat([a, b], axis=0), axis=1))
    ga, gb = grad(out, [a, b])
    np.testing.assert_array_equal(ga.data, [[0, 1], [1, 0]])
    np.testing.assert_array_equal(gb.data, [[1, 0]])


def test_max_ties_break_to_lowest_index():
    a = Tensor(np.array([[2.0, 2.0]]), requires_grad=True)
    (g,) = grad(tsum(max_along_axis(a, axis=1)), [a])
    np.testing.assert_array_equal(g.data, [[1.0, 0.0]])
