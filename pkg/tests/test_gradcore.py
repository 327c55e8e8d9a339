import numpy as np
import pytest

from gradcore import (
    MLP,
    SGD,
    ParamGroup,
    Tensor,
    as_tensor,
    backward,
    concat,
    constant_then_decay,
    grad_check,
    no_grad,
    parameter,
    sgd_step,
)
from uno_errors import ContractError, DomainError, ShapeMismatchError


def _away_from_zero(rng, shape, low=0.2):
    x = rng.uniform(low, 2.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


C = np.array([[0.3, -1.2, 0.7], [1.1, 0.4, -0.5]])
B = np.array([[0.2, -0.4], [1.5, 0.3], [-0.7, 0.9]])

PRIMITIVE_LOSSES = {
    "add": (lambda x: ((x + C) * (x + C)).sum(), (2, 3)),
    "subtract": (lambda x: ((C - x) * (x - 0.5)).sum(), (2, 3)),
    "multiply": (lambda x: (x * x * C).sum(), (2, 3)),
    "divide": (lambda x: (C / (x * x + 1.0)).sum(), (2, 3)),
    "matmul": (lambda x: ((x @ Tensor(B)) * (x @ Tensor(B))).sum(), (2, 3)),
    "exp": (lambda x: (x * 0.5).exp().sum(), (2, 3)),
    "log": (lambda x: (x * x + 0.5).log().sum(), (2, 3)),
    "tanh": (lambda x: (x.tanh() * C).sum(), (2, 3)),
    "relu": (lambda x: (x.relu() * C).sum(), (2, 3)),
    "sigmoid": (lambda x: (x.sigmoid() * C).sum(), (2, 3)),
    "sum": (lambda x: (x.sum(axis=0) * x.sum(axis=0)).sum(), (2, 3)),
    "mean": (lambda x: (x.mean(axis=1) * x.mean(axis=1)).sum(), (2, 3)),
    "max": (lambda x: (x.max(axis=1) * x.max(axis=1)).sum(), (2, 3)),
    "log_softmax": (lambda x: (x.log_softmax() * C).sum(), (2, 3)),
    "concat": (lambda x: (concat([x, x * x], axis=1) * concat([Tensor(C), Tensor(C)], axis=1)).sum(), (2, 3)),
    "slice": (lambda x: (x[:, 1:] * x[:, 1:]).sum() + x[(np.array([0, 1, 1]), np.array([0, 2, 2]))].sum(), (2, 3)),
    "transpose": (lambda x: (x.T @ Tensor(C)).sum(), (2, 3)),
    "reshape": (lambda x: (x.reshape(3, 2) @ Tensor(C)).tanh().sum(), (2, 3)),
}


class TestForward:
    def test_matmul_identity(self, rng):
        a = rng.standard_normal((3, 3))
        np.testing.assert_array_equal((Tensor(np.eye(3)) @ Tensor(a)).data, a)

    def test_log_softmax_uniform(self):
        out = Tensor([0.0, 0.0, 0.0]).log_softmax().data
        np.testing.assert_allclose(out, -np.log(3.0), atol=1e-15)
        assert out[0] == pytest.approx(-1.0986, abs=1e-4)

    def test_sigmoid_zero(self):
        assert Tensor(0.0).sigmoid().item() == 0.5

    def test_leading_dimension_broadcast_only(self):
        a = Tensor(np.ones((2, 3)))
        assert (a + Tensor(np.ones(3))).shape == (2, 3)
        with pytest.raises(ShapeMismatchError):
            a + Tensor(np.ones(2))

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            Tensor([1.0, 2.0]) / Tensor([1.0, 0.0])
        with pytest.raises(DomainError):
            Tensor([-1.0]).log()

    def test_ndarray_left_operand_gives_tensor(self):
        p = parameter(np.ones(3))
        out = np.full(3, 2.0) * p
        assert isinstance(out, Tensor)
        np.testing.assert_array_equal(backward(out.sum())[p].data, np.full(3, 2.0))

    def test_no_grad_records_nothing(self):
        x = parameter(np.ones(2))
        with no_grad():
            y = x * x
        assert y.is_leaf and not y.requires_grad
        assert (x * x).requires_grad


class TestBackward:
    def test_square(self):
        x = parameter(3.0)
        assert backward(x * x)[x].item() == 6.0

    def test_relu_sum(self):
        x = parameter([-1.0, 2.0])
        np.testing.assert_array_equal(backward(x.relu().sum())[x].data, [0.0, 1.0])

    def test_cross_entropy_uniform_logits(self):
        logits = parameter([0.0, 0.0, 0.0])
        g = backward(-logits.log_softmax()[0])[logits].data
        np.testing.assert_allclose(g, [-2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], atol=1e-15)

    def test_shared_subexpression_accumulates(self):
        x = parameter(2.0)
        y = x * 3.0
        assert backward(y * y + y)[x].item() == pytest.approx(2 * 3 * 6.0 + 3.0)

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ContractError):
            backward(parameter(np.ones(2)) * 2.0)

    def test_second_backward_rejected(self):
        x = parameter(1.0)
        loss = x * x
        backward(loss)
        with pytest.raises(ContractError):
            backward(loss)

    def test_gradient_shapes_match_parameters(self, rng):
        mlp = MLP([3, 5, 2], rng)
        loss = (mlp(Tensor(rng.standard_normal((4, 3)))).tanh()).sum()
        grads = backward(loss)
        for p in mlp.parameters():
            assert grads[p].shape == p.shape


class TestGradCheck:
    @pytest.mark.parametrize("name", sorted(PRIMITIVE_LOSSES))
    def test_primitive_at_random_points(self, name):
        fn, shape = PRIMITIVE_LOSSES[name]
        rng = np.random.default_rng(7)
        for _ in range(50):
            point = _away_from_zero(rng, shape)
            assert grad_check(fn, point, h=1e-5) < 1e-6

    def test_quadratic_form(self, rng):
        a = rng.standard_normal((4, 4))
        q = a @ a.T
        fn = lambda x: (x.reshape(1, 4) @ Tensor(q) @ x.reshape(4, 1)).sum()
        assert grad_check(fn, rng.standard_normal(4)) < 1e-8

    def test_nll_random_logits(self, rng):
        fn = lambda x: -x.log_softmax()[(np.arange(3), np.array([0, 2, 1]))].mean()
        assert grad_check(fn, rng.standard_normal((3, 4))) < 1e-6

    def test_constant_function(self):
        assert grad_check(lambda x: as_tensor(2.5), np.ones(3)) == 0.0

    def test_bad_step(self):
        with pytest.raises(ContractError):
            grad_check(lambda x: x.sum(), np.ones(2), h=0.0)


class TestOptimizer:
    def _grads(self, p, g):
        return backward((p * Tensor(g)).sum())

    def test_plain_sgd(self, rng):
        p = parameter(rng.standard_normal(3))
        start = p.data.copy()
        g = rng.standard_normal(3)
        sgd_step([p], self._grads(p, g), lr=0.1)
        np.testing.assert_allclose(p.data, start - 0.1 * g, rtol=0, atol=1e-15)

    def test_zero_gradient_is_fixed_point(self, rng):
        p = parameter(rng.standard_normal(3))
        start = p.data.copy()
        sgd_step([p], self._grads(p, np.zeros(3)), lr=0.1, momentum=0.9)
        np.testing.assert_array_equal(p.data, start)

    def test_weight_decay(self, rng):
        p = parameter(rng.standard_normal(3))
        start = p.data.copy()
        sgd_step([p], self._grads(p, np.zeros(3)), lr=0.1, weight_decay=0.0005)
        np.testing.assert_allclose(p.data, start * (1 - 0.1 * 0.0005), rtol=1e-14)

    def test_momentum_velocity(self):
        p = parameter([1.0])
        state = sgd_step([p], self._grads(p, np.array([1.0])), lr=0.1, momentum=0.9)
        sgd_step([p], self._grads(p, np.array([1.0])), lr=0.1, momentum=0.9, velocity=state)
        # v1 = 1, v2 = 0.9 + 1
        assert p.data[0] == pytest.approx(1.0 - 0.1 - 0.19)

    def test_invalid_hyperparameters(self):
        p = parameter([1.0])
        with pytest.raises(ContractError):
            sgd_step([p], self._grads(p, np.ones(1)), lr=0.0)
        with pytest.raises(ContractError):
            SGD([p], lr=0.1, momentum=1.0)

    def test_missing_gradient(self):
        p, q = parameter([1.0]), parameter([2.0])
        with pytest.raises(ContractError):
            SGD([p, q], lr=0.1).step(self._grads(p, np.ones(1)))

    def test_parameter_groups_use_their_own_lr(self):
        p, q = parameter([0.0]), parameter([0.0])
        opt = SGD([ParamGroup([p], 0.1), ParamGroup([q], 0.01)])
        opt.step(backward((p + q).sum()))
        assert p.data[0] == pytest.approx(-0.1)
        assert q.data[0] == pytest.approx(-0.01)

    def test_gradient_clipping(self):
        p = parameter([0.0, 0.0])
        SGD([p], lr=1.0, max_grad_norm=1.0).step(self._grads(p, np.array([3.0, 4.0])))
        np.testing.assert_allclose(p.data, [-0.6, -0.8])

    def test_constant_then_decay(self):
        assert constant_then_decay(0, 10) == 1.0
        assert constant_then_decay(6, 10) == 1.0
        assert constant_then_decay(9, 10, 0.3, 0.1) == pytest.approx(0.4)
        assert constant_then_decay(10, 10, 0.3, 0.1) == pytest.approx(0.1)
