import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metarl_pc.tensor_nn import (Network, OptimizerConfig, ShapeError, StaleTapeError, backward,
                                 forward, load_networks, optimizer_step, save_networks,
                                 soft_update)

from tests._oracles import fd_grad, rel_err


def test_identity_layer_is_identity():
    net = Network([3, 3], ["identity"])
    net.weights[0][...] = np.eye(3)
    x = np.array([0.5, -1.0, 2.0])
    y, _ = forward(net, x)
    np.testing.assert_array_equal(y, x)


@pytest.mark.parametrize("act,fn", [("relu", lambda b: np.maximum(b, 0)), ("tanh", np.tanh),
                                    ("identity", lambda b: b)])
def test_zero_weights_give_activation_of_bias(act, fn):
    net = Network([4, 2], [act])
    net.biases[0][...] = [-0.7, 0.4]
    y, _ = forward(net, np.ones(4))
    np.testing.assert_allclose(y, fn(np.array([-0.7, 0.4])))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 100))
def test_outputs_finite(seed, scale):
    rng = np.random.default_rng(seed)
    net = Network([5, 16, 16, 2], ["relu", "relu", "tanh"], rng)
    y, _ = forward(net, scale * rng.standard_normal((7, 5)))
    assert np.all(np.isfinite(y)) and y.shape == (7, 2)


def test_dimension_mismatch():
    net = Network([3, 2], ["identity"], np.random.default_rng(0))
    with pytest.raises(ShapeError):
        forward(net, np.ones(4))


def test_linear_backward():
    rng = np.random.default_rng(0)
    net = Network([3, 2], ["identity"], rng)
    net.biases[0][...] = 0
    x, g = rng.standard_normal(3), rng.standard_normal(2)
    _, tape = forward(net, x)
    gx = backward(net, tape, g)
    np.testing.assert_allclose(net.gweights[0], np.outer(x, g))
    np.testing.assert_allclose(gx, net.weights[0] @ g)


def test_backward_accumulates():
    rng = np.random.default_rng(1)
    net = Network([3, 4, 1], ["tanh", "identity"], rng)
    x = rng.standard_normal((5, 3))
    _, t1 = forward(net, x)
    backward(net, t1, np.ones((5, 1)))
    once = net.grad.copy()
    _, t2 = forward(net, x)
    backward(net, t2, np.ones((5, 1)))
    np.testing.assert_allclose(net.grad, 2 * once)


def test_backward_without_accumulation_leaves_grad():
    rng = np.random.default_rng(1)
    net = Network([3, 4, 1], ["relu", "identity"], rng)
    _, tape = forward(net, rng.standard_normal((5, 3)))
    backward(net, tape, np.ones((5, 1)), accumulate=False)
    assert not net.grad.any()


def test_stale_tape_rejected():
    rng = np.random.default_rng(2)
    net = Network([2, 2], ["identity"], rng)
    _, tape = forward(net, np.ones(2))
    optimizer_step(net, OptimizerConfig())
    with pytest.raises(StaleTapeError):
        backward(net, tape, np.ones(2))
    other = Network([2, 2], ["identity"], rng)
    _, tape = forward(net, np.ones(2))
    with pytest.raises(StaleTapeError):
        backward(other, tape, np.ones(2))


SHAPES = [
    ([6, 8, 8, 1], ["relu", "relu", "tanh"]),          # actor
    ([10, 8, 8, 1], ["relu", "relu", "identity"]),     # critic
    ([14, 8, 8, 4], ["relu", "relu", "identity"]),     # encoder feature net
    ([4, 6], ["identity"]),                            # encoder head
]


@pytest.mark.parametrize("sizes,acts", SHAPES)
def test_quadratic_gradient_matches_finite_differences(sizes, acts):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        net = Network(sizes, acts, rng)
        x = rng.standard_normal((3, sizes[0]))

        def loss():
            y, _ = forward(net, x)
            return 0.5 * float(np.sum(y * y))

        y, tape = forward(net, x)
        gx = backward(net, tape, y)
        assert rel_err(net.grad, fd_grad(loss, net.theta)) < 1e-5
        assert rel_err(gx, fd_grad(loss, x)) < 1e-5


def test_preactivation_gradient_hook():
    rng = np.random.default_rng(4)
    net = Network([3, 5, 1], ["relu", "tanh"], rng)
    x = rng.standard_normal((4, 3))

    def loss():
        _, t = forward(net, x)
        return float(np.sum(t.outputs[-1])) + 0.3 * float(np.sum(t.pre[-1] ** 2))

    _, tape = forward(net, x)
    backward(net, tape, np.ones((4, 1)), preact_gradient=0.6 * tape.pre[-1])
    assert rel_err(net.grad, fd_grad(loss, net.theta)) < 1e-6


def test_optimizer_zero_gradient_keeps_params_and_decays_moments():
    rng = np.random.default_rng(0)
    net = Network([3, 2], ["identity"], rng)
    # zero first moment and zero gradient: no movement, second moment decays
    net.v[:] = 1.0
    before = net.theta.copy()
    optimizer_step(net, OptimizerConfig())
    np.testing.assert_array_equal(net.theta, before)
    np.testing.assert_allclose(net.v, 0.999)


def test_optimizer_moves_against_constant_gradient():
    net = Network([2, 1], ["identity"], np.random.default_rng(0))
    before = net.theta.copy()
    g = np.array([1.0, -2.0, 0.5])
    for _ in range(100):
        net.grad[:] = g
        optimizer_step(net, OptimizerConfig(learning_rate=1e-2))
    assert np.all(np.sign(net.theta - before) == -np.sign(g))
    assert not net.grad.any()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), lr=st.floats(1e-4, 1e-1), steps=st.integers(1, 50))
def test_step_size_bounded_for_constant_magnitude_gradients(seed, lr, steps):
    rng = np.random.default_rng(seed)
    net = Network([3, 2], ["identity"], rng)
    mag = rng.uniform(1e-3, 10, size=net.n_params)
    cfg = OptimizerConfig(learning_rate=lr)
    for _ in range(steps):
        before = net.theta.copy()
        net.grad[:] = mag * rng.choice([-1.0, 1.0], size=net.n_params)
        optimizer_step(net, cfg)
        assert np.all(np.abs(net.theta - before) <= lr * (1 + cfg.eps) + 1e-15)


def test_adam_step_can_exceed_lr_after_gradient_spike():
    # the per-step bound is not universal: a spike after a long quiet spell overshoots it
    net = Network([1, 1], ["identity"])
    cfg = OptimizerConfig(learning_rate=1e-3)
    for _ in range(2000):
        net.grad[:] = 1e-6
        optimizer_step(net, cfg)
    before = net.theta.copy()
    net.grad[:] = 1.0
    optimizer_step(net, cfg)
    assert np.max(np.abs(net.theta - before)) > 1.5 * cfg.learning_rate


def test_determinism():
    def run(seed):
        rng = np.random.default_rng(seed)
        net = Network([4, 8, 1], ["relu", "identity"], rng)
        x = rng.standard_normal((16, 4))
        for _ in range(20):
            y, tape = forward(net, x)
            backward(net, tape, y)
            optimizer_step(net, OptimizerConfig())
        return net.theta.copy()
    assert run(5).tobytes() == run(5).tobytes()


def test_repeated_calls_keep_shapes():
    rng = np.random.default_rng(0)
    net = Network([4, 8, 3], ["relu", "identity"], rng)
    for n in (1, 5, 1, 5):
        y, tape = forward(net, np.ones((n, 4)))
        assert y.shape == (n, 3)
        assert backward(net, tape, np.ones((n, 3))).shape == (n, 4)


def test_soft_update():
    rng = np.random.default_rng(0)
    a = Network([3, 4, 1], ["relu", "identity"], rng)
    b = Network([3, 4, 1], ["relu", "identity"], rng)
    soft_update(b, a, 1.0)
    assert a.theta.tobytes() == b.theta.tobytes()
    before = b.theta.copy()
    soft_update(b, a, 0.005)
    np.testing.assert_array_equal(b.theta, before)


def test_copy_is_independent_and_views_stay_bound():
    net = Network([3, 4, 1], ["relu", "identity"], np.random.default_rng(0))
    other = net.copy()
    other.theta += 1.0
    assert other.weights[0][0, 0] == net.weights[0][0, 0] + 1.0
    assert other.weights[0].base is not None


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    a = Network([6, 64, 64, 1], ["relu", "relu", "tanh"], rng)
    b = Network([7, 5, 2], ["tanh", "identity"], rng)
    a.m[:] = rng.standard_normal(a.n_params)
    a.v[:] = rng.random(a.n_params)
    a.t = 17
    save_networks(tmp_path / "ck.npz", actor=a, other=b)
    back = load_networks(tmp_path / "ck.npz")
    assert set(back) == {"actor", "other"}
    for name, net in (("actor", a), ("other", b)):
        got = back[name]
        assert got.sizes == net.sizes and got.activations == net.activations and got.t == net.t
        for arr in ("theta", "m", "v"):
            assert getattr(got, arr).tobytes() == getattr(net, arr).tobytes()
    x = rng.standard_normal((3, 6))
    assert forward(back["actor"], x)[0].tobytes() == forward(a, x)[0].tobytes()
