import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qplex_lab import autodiff as ad
from qplex_lab.acceptance import _primitive_cases
from qplex_lab.errors import ContractError, DimensionError, DomainError, NumericalFailure
from qplex_lab.gradcheck import check_function
from qplex_lab.layers import MLP

T = ad.tensor


def leaf(x):
    return ad.tensor(np.array(x, dtype=float), requires_grad=True)


def test_matmul_identity_and_scalar():
    out = ad.matmul(T([[1.0, 0.0], [0.0, 1.0]]), T([[3.0], [4.0]]))
    assert out.data.tolist() == [[3.0], [4.0]]
    assert ad.matmul(T([[2.0]]), T([[5.0]])).data.tolist() == [[10.0]]


def test_matmul_grad_of_sum_is_ones_times_bt():
    rng = np.random.default_rng(0)
    a, b = leaf(rng.standard_normal((3, 4))), rng.standard_normal((4, 2))
    ad.backward(ad.matmul(a, T(b)).sum())
    np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.T)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.matmul(T(np.ones((2, 3))), T(np.ones((2, 3))))


def test_elementwise_examples():
    assert ad.sigmoid(T(0.0)).data == 0.5
    x = leaf(-3.0)
    y = ad.absolute(x)
    ad.backward(y)
    assert y.data == 3.0 and x.grad == -1.0


def test_abs_gradient_at_zero_is_zero():
    x = leaf([0.0, 2.0])
    ad.backward(ad.absolute(x).sum())
    assert x.grad.tolist() == [0.0, 1.0]


def test_elementwise_dispatch_and_shape_error():
    np.testing.assert_array_equal(ad.elementwise("add", T([1.0, 2.0]), T([3.0, 4.0])).data, [4.0, 6.0])
    np.testing.assert_array_equal(ad.elementwise("relu", T([-1.0, 2.0])).data, [0.0, 2.0])
    with pytest.raises(DimensionError):
        ad.add(T(np.ones(3)), T(np.ones(2)))
    with pytest.raises(DimensionError):
        ad.mul(T(np.ones((2, 1))), T(np.ones((2, 3))))


def test_scalar_broadcast_allowed():
    x = leaf([1.0, 2.0, 3.0])
    s = leaf(2.0)
    ad.backward((x * s).sum())
    assert x.grad.tolist() == [2.0, 2.0, 2.0]
    assert float(s.grad) == 6.0


def test_max_ties_route_to_lowest_index():
    x = leaf([2.0, 5.0, 5.0])
    m = x.max()
    ad.backward(m)
    assert m.data == 5.0
    assert x.grad.tolist() == [0.0, 1.0, 0.0]


def test_sum_and_mean():
    x = leaf([1.0, 2.0, 3.0])
    assert x.sum().data == 6.0
    ad.backward(x.mean())
    np.testing.assert_allclose(x.grad, [1 / 3] * 3)


def test_empty_reduction_axis():
    with pytest.raises(DomainError):
        ad.reduce("max", T(np.ones((2, 0))), axis=1)
    with pytest.raises(DimensionError):
        ad.reduce("sum", T(np.ones(2)), axis=3)


def test_stop_gradient():
    x = leaf([1.0, 2.0])
    y = ad.stop_gradient(x)
    assert y.data.tolist() == [1.0, 2.0]
    ad.backward((y * T([3.0, 4.0])).sum() + 0.0 * x.sum())
    assert x.grad.tolist() == [0.0, 0.0]


def test_stop_gradient_product_gives_x_not_2x():
    rng = np.random.default_rng(1)
    x0 = rng.standard_normal(4)
    x = leaf(x0)
    ad.backward((ad.stop_gradient(x) * x).sum())
    np.testing.assert_allclose(x.grad, x0)
    # the replayed-tape difference quotient agrees with that gradient
    assert check_function(lambda ts: (ad.stop_gradient(ts[0]) * ts[0]).sum(), [x0], rng) < 1e-6


def test_backward_square():
    x = leaf(3.0)
    ad.backward(x * x)
    assert x.grad == 6.0


def test_backward_requires_scalar():
    with pytest.raises(ContractError):
        ad.backward(leaf([1.0, 2.0]) * 2.0)


def test_constant_loss_gives_zero_gradients():
    x = leaf([1.0, 2.0])
    loss = (x * 0.0).sum() + 5.0
    ad.backward(loss)
    assert x.grad.tolist() == [0.0, 0.0]


def test_backward_accumulates_across_calls():
    x = leaf(2.0)
    ad.backward(x * x)
    ad.backward(x * x)
    assert x.grad == 8.0


def test_two_layer_mlp_against_differences():
    rng = np.random.default_rng(2)
    net = MLP(4, 3, 8, 2, rng)
    x = T(rng.standard_normal((5, 4)))
    target = T(rng.standard_normal((5, 3)))
    from qplex_lab.gradcheck import check_parameters

    err = check_parameters(lambda: ad.square(net(x) - target).mean(), net.parameters(), rng)
    assert err < 1e-4


def test_shared_subexpression_matches_unshared_graph():
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal(5)
    x = leaf(x0)
    h = ad.sigmoid(x)
    ad.backward((h * h + h).sum())
    shared = x.grad.copy()
    x2 = leaf(x0)
    ad.backward((ad.sigmoid(x2) * ad.sigmoid(x2) + ad.sigmoid(x2)).sum())
    np.testing.assert_allclose(shared, x2.grad, rtol=1e-12)


def test_tensor_invariants_after_backward():
    x = leaf(np.ones((2, 3)))
    ad.backward(ad.reshape(x, (3, 2)).sum())
    assert x.grad.shape == x.shape
    assert x.data.size == int(np.prod(x.shape))


def test_no_grad_builds_no_graph():
    x = leaf([1.0])
    with ad.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_forward_determinism():
    def run():
        rng = np.random.default_rng(11)
        net = MLP(3, 2, 16, 3, rng)
        return net(T(rng.standard_normal((4, 3)))).data

    assert run().tobytes() == run().tobytes()


# -- optimizer


def test_rmsprop_zero_gradient_leaves_params():
    w = leaf([1.0, -2.0])
    opt = ad.RMSProp([w])
    w.grad = np.zeros(2)
    ad.sgd_like_step([w], opt)
    assert w.data.tolist() == [1.0, -2.0]


def test_rmsprop_descends():
    w = leaf(1.0)
    opt = ad.RMSProp([w], lr=0.01)
    ad.backward(w * w)
    ad.sgd_like_step([w], opt)
    assert float(w.data) < 1.0


def test_rmsprop_converges_on_quadratic():
    c, scale = np.array([0.5, -0.3]), np.array([1.0, 4.0])
    w = leaf([0.0, 1.0])
    opt = ad.RMSProp([w], lr=0.05)
    for _ in range(200):
        opt.zero_grad()
        ad.backward((ad.square(w - T(c)) * T(scale)).sum())
        ad.sgd_like_step([w], opt)
    assert np.max(np.abs(w.data - c)) < 1e-3


def test_rmsprop_nan_gradient():
    w = leaf([1.0])
    opt = ad.RMSProp([w])
    w.grad = np.array([np.nan])
    with pytest.raises(NumericalFailure):
        ad.sgd_like_step([w], opt)


def test_step_rejects_foreign_params():
    w, v = leaf([1.0]), leaf([2.0])
    opt = ad.RMSProp([w])
    with pytest.raises(ContractError):
        ad.sgd_like_step([v], opt)


def test_clip_grad_norm():
    w = leaf([3.0, 4.0])
    w.grad = np.array([30.0, 40.0])
    norm = ad.clip_grad_norm([w], 10.0)
    assert norm == pytest.approx(50.0)
    assert np.linalg.norm(w.grad) == pytest.approx(10.0, rel=1e-6)


# -- property: every primitive against central differences

CASES = _primitive_cases()


@pytest.mark.parametrize("name", sorted(CASES))
@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_primitive_matches_central_differences(name, seed):
    rng = np.random.default_rng(seed)
    fn, inputs = CASES[name](rng)
    assert check_function(fn, inputs, rng) < 1e-4
