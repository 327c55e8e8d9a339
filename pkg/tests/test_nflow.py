import numpy as np
import pytest

from gradcore import Tensor, no_grad
from nflow import (
    LOG_2PI,
    CouplingLayer,
    FlowModel,
    base_log_prob,
    flow_forward,
    flow_inverse,
    flow_log_prob,
    flow_sample,
    load_flow,
    mean_log_likelihood,
    save_flow,
    train_flow_mle,
)
from uno_errors import ContractError, ShapeMismatchError


def _randomize(flow, rng, scale=0.3):
    for p in flow.parameters():
        p.data = scale * rng.standard_normal(p.shape)
    return flow


def _numeric_jacobian(fn, x, h=1e-6):
    d = x.size
    jac = np.zeros((d, d))
    for i in range(d):
        plus, minus = x.copy(), x.copy()
        plus[i] += h
        minus[i] -= h
        jac[:, i] = (fn(plus) - fn(minus)) / (2 * h)
    return jac


class TestIdentityFlow:
    def test_forward_is_identity(self, rng):
        flow = FlowModel(3, 4, 8, rng=rng)
        x = rng.standard_normal((5, 3))
        u, logdet = flow_forward(flow, x)
        np.testing.assert_array_equal(u.data, x)
        np.testing.assert_array_equal(logdet.data, np.zeros(5))
        np.testing.assert_array_equal(flow_inverse(flow, x).data, x)

    def test_log_prob_at_origin(self):
        flow = FlowModel(2, 2, 4)
        assert flow_log_prob(flow, np.zeros((1, 2))).item() == pytest.approx(-np.log(2 * np.pi), abs=1e-12)
        assert flow_log_prob(flow, np.array([[1.0, 0.0]])).item() == pytest.approx(-2.337877, abs=1e-6)

    def test_samples_are_standard_normal(self):
        flow = FlowModel(2, 2, 4).freeze()
        x = flow_sample(flow, 100_000, np.random.default_rng(0)).data
        assert np.all(np.abs(x.mean(axis=0)) < 0.02)

    def test_zero_samples(self, rng):
        assert flow_sample(FlowModel(2, 2, 4), 0, rng).shape == (0, 2)


class TestCoupling:
    def test_constant_scale_logdet(self):
        layer = CouplingLayer(2, np.array([1.0, 0.0]), hidden=4, clamp=4.0)
        # last layer bias only: tanh(b) * clamp on the active coordinate
        layer.scale_net.layers[-1].bias.data = np.array([0.0, 0.5])
        s = np.tanh(0.5) * 4.0
        u, logdet = layer.forward(Tensor(np.array([[0.3, 2.0]])))
        assert logdet.item() == pytest.approx(s, abs=1e-15)
        np.testing.assert_allclose(u.data, [[0.3, 2.0 * np.exp(s)]], rtol=1e-14)
        np.testing.assert_allclose(layer.inverse(u).data, [[0.3, 2.0]], rtol=1e-14)

    def test_masked_coordinates_pass_through(self, rng):
        layer = CouplingLayer(4, np.array([1.0, 0.0, 1.0, 0.0]), hidden=8, rng=rng)
        for p in layer.named_parameters().values():
            p.data = rng.standard_normal(p.shape)
        x = rng.standard_normal((6, 4))
        u, _ = layer.forward(Tensor(x))
        np.testing.assert_array_equal(u.data[:, [0, 2]], x[:, [0, 2]])


class TestRandomFlow:
    def test_round_trip(self, rng):
        flow = _randomize(FlowModel(2, 6, 16, rng=rng), rng)
        x = 2.0 * rng.standard_normal((1000, 2))
        with no_grad():
            back = flow.inverse(flow.forward(x)[0]).data
        assert np.max(np.abs(back - x)) < 1e-9

    def test_logdet_matches_jacobian(self, rng):
        flow = _randomize(FlowModel(2, 4, 8, rng=rng), rng)
        fn = lambda v: flow.forward(v[None, :])[0].data[0]
        for _ in range(5):
            x = rng.standard_normal(2)
            _, logdet = flow.forward(x[None, :])
            _, expected = np.linalg.slogdet(_numeric_jacobian(fn, x))
            assert logdet.data[0] == pytest.approx(expected, abs=1e-5)

    def test_log_prob_recomposes(self, rng):
        flow = _randomize(FlowModel(3, 4, 8, rng=rng), rng)
        x = rng.standard_normal((7, 3))
        u, logdet = flow.forward(x)
        expected = -0.5 * np.sum(u.data ** 2, axis=1) - 1.5 * LOG_2PI + logdet.data
        np.testing.assert_array_equal(flow.log_prob(x).data, base_log_prob(u).data + logdet.data)
        np.testing.assert_allclose(flow.log_prob(x).data, expected, rtol=1e-12, atol=1e-12)

    def test_same_seed_same_samples(self, rng):
        flow = _randomize(FlowModel(2, 4, 8, rng=rng), rng)
        a = flow.sample(50, np.random.default_rng(3)).data
        b = flow.sample(50, np.random.default_rng(3)).data
        np.testing.assert_array_equal(a, b)


class TestTraining:
    def test_mle_increases_likelihood(self, rng):
        data = np.array([3.0, -1.0]) + 0.5 * rng.standard_normal((512, 2))
        flow = FlowModel(2, 4, 16, rng=rng)
        before = mean_log_likelihood(flow, data)
        losses = train_flow_mle(flow, data, 150, rng, lr=0.01, batch_size=128)
        assert len(losses) == 150
        assert mean_log_likelihood(flow, data) > before + 1.0

    def test_frozen_flow_refuses_training(self, rng):
        flow = FlowModel(2, 2, 4, rng=rng).freeze()
        assert all(not p.requires_grad for p in flow.parameters())
        assert flow.sample(4, rng).is_leaf
        with pytest.raises(ContractError):
            train_flow_mle(flow, np.zeros((4, 2)), 1, rng)

    def test_shape_checked(self, rng):
        with pytest.raises(ShapeMismatchError):
            FlowModel(2, 2, 4).forward(np.zeros((3, 3)))

    def test_checkpoint_round_trip(self, tmp_path, rng):
        flow = _randomize(FlowModel(2, 3, 8, rng=rng), rng)
        save_flow(flow, tmp_path / "flow")
        loaded = load_flow(tmp_path / "flow")
        x = rng.standard_normal((5, 2))
        np.testing.assert_array_equal(loaded.log_prob(x).data, flow.log_prob(x).data)
