import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metarl_pc.ddpg import (Agent, Batch, DDPGConfig, EmptyBufferError, ReplayBuffer,
                            actor_loss, critic_loss, critic_target, policy, q_value,
                            select_action, soft_update_targets)
from metarl_pc.env import Transition
from metarl_pc.tensor_nn import OptimizerConfig, forward, optimizer_step

from tests._oracles import fd_grad, rel_err


def transition(k, dim=6, task_id=0):
    return Transition(np.full(dim, float(k)), 0.01 * k, -0.1 * k, np.full(dim, k + 0.5), False, task_id)


def random_batch(rng, n, dim):
    return Batch(rng.standard_normal((n, dim)), rng.uniform(-2, 2, n), -rng.random(n),
                 rng.standard_normal((n, dim)), (rng.random(n) < 0.1).astype(float))


def small_agent(seed=0, state_dim=6, latent_dim=3, **cfg):
    cfg = DDPGConfig(**dict(dict(hidden=(8, 8), final_scale=0.3), **cfg))
    return Agent(state_dim, latent_dim, cfg, np.random.default_rng(seed))


# replay buffer ---------------------------------------------------------------

def test_buffer_insert_and_fifo_overwrite():
    buf = ReplayBuffer(6, capacity=5)
    for k in range(3):
        buf.insert(transition(k))
    assert len(buf) == 3
    for k in range(3, 8):
        buf.insert(transition(k))
    assert len(buf) == 5 and buf.n_inserted == 8
    assert [buf.transition(i).a for i in range(5)] == pytest.approx([0.03, 0.04, 0.05, 0.06, 0.07])


def test_buffer_recent_indices():
    buf = ReplayBuffer(6, capacity=5)
    for k in range(7):
        buf.insert(transition(k))
    assert buf.a[buf.recent_indices(2)] == pytest.approx([0.05, 0.06])


def test_sampling_empty_buffer_raises():
    with pytest.raises(EmptyBufferError):
        ReplayBuffer(6).sample_uniform(4, np.random.default_rng(0))


@settings(max_examples=40, deadline=None)
@given(n_insert=st.integers(1, 30), n=st.integers(1, 50), seed=st.integers(0, 1000))
def test_samples_come_from_stored_transitions(n_insert, n, seed):
    buf = ReplayBuffer(6, capacity=10)
    for k in range(n_insert):
        buf.insert(transition(k))
    b = buf.sample_uniform(n, np.random.default_rng(seed))
    stored = set(np.round(buf.a[:len(buf)], 10))
    assert len(b) == n and set(np.round(b.a, 10)) <= stored
    # the state of each sampled row matches its action
    np.testing.assert_allclose(b.s[:, 0] * 0.01, b.a)


def test_uniform_sampling_frequencies():
    buf = ReplayBuffer(6, capacity=10)
    for k in range(10):
        buf.insert(transition(k))
    b = buf.sample_uniform(50_000, np.random.default_rng(1))
    counts = np.bincount(np.round(b.a * 100).astype(int), minlength=10)
    assert np.all(np.abs(counts / 50_000 - 0.1) < 0.01)


# actor / critic ----------------------------------------------------------------

def test_action_bounds_and_determinism():
    agent = small_agent(final_scale=3.0)
    rng = np.random.default_rng(0)
    s, z = rng.standard_normal((100, 6)) * 10, rng.standard_normal((100, 3))
    a = select_action(agent, s, z, True, rng)
    assert np.all(np.abs(a) <= 2.0)
    assert select_action(agent, s[0], z[0], False, None) == select_action(agent, s[0], z[0], False, None)
    with pytest.raises(ValueError):
        select_action(agent, s[0], np.zeros(2), False, None)


def test_critic_target_examples():
    agent = small_agent()
    s1, z = np.ones(6), np.zeros(3)
    assert critic_target(-0.3, s1, z, agent, done=True) == -0.3
    q = q_value(agent, s1, z, policy(agent, s1, z, target=True), target=True)[0]
    assert critic_target(-0.3, s1, z, agent) == pytest.approx(-0.3 + 0.99 * q)


def test_critic_target_zero_network():
    agent = small_agent()
    agent.critic_target.theta[:] = 0.0
    assert critic_target(-0.5, np.ones(6), np.zeros(3), agent) == -0.5


def test_critic_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    agent = small_agent(3)
    batch = random_batch(rng, 12, 6)
    z = rng.standard_normal((12, 3))
    targets = critic_target(batch.r, batch.s_next, z, agent, batch.done)

    def loss():
        return critic_loss(batch, z, agent, targets=targets)[0]

    agent.critic.zero_grad()
    _, gz = critic_loss(batch, z, agent, targets=targets)
    g = agent.critic.grad.copy()
    agent.critic.zero_grad()
    assert rel_err(g, fd_grad(loss, agent.critic.theta)) < 1e-5
    assert rel_err(gz, fd_grad(loss, z)) < 1e-5


def test_actor_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    agent = small_agent(4, preact_penalty=0.2)
    batch = random_batch(rng, 10, 6)
    z = rng.standard_normal((10, 3))
    n = len(batch)

    def loss():
        sz = np.hstack([batch.s, z])
        _, tape = forward(agent.actor, sz)
        q = q_value(agent, batch.s, z, policy(agent, batch.s, z))
        return -q.mean() + 0.2 * float(np.sum(tape.pre[-1] ** 2)) / n

    actor_loss(batch, z, agent)
    g = agent.actor.grad.copy()
    agent.actor.zero_grad()
    assert rel_err(g, fd_grad(loss, agent.actor.theta)) < 1e-5


def test_gradient_separation():
    rng = np.random.default_rng(5)
    agent = small_agent(5)
    batch = random_batch(rng, 8, 6)
    z = rng.standard_normal((8, 3))
    critic_loss(batch, z, agent)
    assert not agent.actor.grad.any()
    agent.critic.zero_grad()
    actor_loss(batch, z, agent)
    assert not agent.critic.grad.any()
    for net in (agent.actor_target, agent.critic_target):
        assert not net.grad.any()


def test_actor_ascends_critic_that_rewards_large_actions():
    # critic wired to Q = a + 5: every actor step must raise the action
    agent = small_agent(6, preact_penalty=0.0)
    c = agent.critic
    c.theta[:] = 0.0
    c.weights[0][-1, 0] = 1.0
    c.biases[0][0] = 5.0
    c.weights[1][0, 0] = 1.0
    c.weights[2][0, 0] = 1.0
    rng = np.random.default_rng(6)
    s, z = rng.uniform(-1, 1, (20, 6)), rng.uniform(-1, 1, (20, 3))
    assert q_value(agent, s, z, np.ones(20)) == pytest.approx(6.0)
    batch = Batch(s, np.zeros(20), np.zeros(20), s, np.zeros(20))
    before = policy(agent, s, z)
    for _ in range(5):
        actor_loss(batch, z, agent)
        optimizer_step(agent.actor, OptimizerConfig(1e-3))
        after = policy(agent, s, z)
        assert np.all(after > before)
        before = after


def test_critic_loss_decreases_on_fixed_batch():
    rng = np.random.default_rng(7)
    agent = small_agent(7)
    batch = random_batch(rng, 64, 6)
    z = rng.standard_normal((64, 3))
    targets = critic_target(batch.r, batch.s_next, z, agent, batch.done)
    losses = []
    for _ in range(200):
        losses.append(critic_loss(batch, z, agent, targets=targets)[0])
        optimizer_step(agent.critic, OptimizerConfig(1e-3))
    assert losses[-1] < 0.5 * losses[0]
    assert sum(b > a * (1 + 1e-9) for a, b in zip(losses, losses[1:])) < 10


def test_stacked_loss_is_sum_of_task_means():
    rng = np.random.default_rng(8)
    agent = small_agent(8)
    b1, b2 = random_batch(rng, 5, 6), random_batch(rng, 5, 6)
    z1, z2 = np.tile(rng.standard_normal(3), (5, 1)), np.tile(rng.standard_normal(3), (5, 1))
    l1, _ = critic_loss(b1, z1, agent)
    l2, _ = critic_loss(b2, z2, agent)
    ls, _ = critic_loss(Batch.concat([b1, b2]), np.vstack([z1, z2]), agent, scale=1 / 5)
    assert ls == pytest.approx(l1 + l2, rel=1e-12)


def test_soft_update_targets():
    agent = small_agent(9)
    agent.actor.theta += 1.0
    old = agent.actor_target.theta.copy()
    soft_update_targets(agent, 0.1)
    np.testing.assert_allclose(agent.actor_target.theta, 0.9 * old + 0.1 * agent.actor.theta)


def test_zero_width_latent():
    agent = small_agent(10, latent_dim=0)
    s = np.ones((4, 6))
    assert select_action(agent, s, np.zeros((4, 0)), False, None).shape == (4,)
