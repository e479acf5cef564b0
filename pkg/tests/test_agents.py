import math

import numpy as np
import pytest

from entropy_lab.agents import (
    Agent,
    AgentConfig,
    Interaction,
    a2c_loss_grad,
    dqn_loss_grad,
    loss_value,
    make_config,
    pg_loss_grad,
    ppo_loss_grad,
    ql_loss_grad,
    upstream_grad,
)
from entropy_lab.numerics import (
    InvalidInputError,
    MlpSpec,
    finite_difference_gradient,
    forward,
    output_jacobian,
    policy_gradient,
    relative_error,
    softmax,
)

GRADS = {"pg": pg_loss_grad, "ql": ql_loss_grad, "dqn": dqn_loss_grad,
         "a2c": a2c_loss_grad, "ppo": ppo_loss_grad}


def linear_agent(kind, W, **kw):
    W = np.asarray(W, dtype=float)
    cfg = make_config(kind, W.shape[1], W.shape[0] - (kind in ("a2c", "ppo")), lr=0.1, **kw)
    agent = Agent(cfg, init_rng=np.random.default_rng(0))
    agent.params = agent.params.with_theta(W.ravel())
    return agent


def random_agent(kind, rng, hidden=None):
    d = int(rng.integers(2, 6))
    K = int(rng.integers(2, 6))
    if hidden is None:
        hidden = (int(rng.integers(2, 7)),)
    cfg = make_config(kind, d, K, hidden, lr=0.01, activation="tanh")
    agent = Agent(cfg, init_rng=rng)
    agent.params = agent.params.with_theta(agent.params.theta * 2.0)
    if kind == "ppo":
        agent.snapshot = agent.params.with_theta(
            agent.params.theta + 0.02 * rng.normal(size=agent.params.theta.size))
    s = rng.normal(size=d)
    a = int(rng.integers(K))
    r = float(rng.normal())
    return agent, s, a, r


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(lr=0.0), dict(batch_size=0), dict(ppo_clip=1.0),
                                    dict(ql_epsilon=1.5), dict(kind="sarsa")])
    def test_invariants(self, kw):
        args = dict(kind="pg", net=MlpSpec(2, (), 2), lr=0.1)
        args.update(kw)
        with pytest.raises(InvalidInputError):
            AgentConfig(**args)

    def test_value_head_width(self):
        cfg = make_config("a2c", 4, 3)
        assert cfg.net.output_dim == 4
        assert cfg.n_actions == 3

    def test_defaults(self):
        cfg = make_config("dqn", 4, 3)
        assert cfg.batch_size == 32
        assert cfg.dqn_buffer_capacity == 50_000
        assert cfg.ppo_clip == 0.2 and cfg.ppo_epochs == 10
        assert cfg.net.activation == "relu"


class TestAct:
    def test_uniform_pg(self):
        agent = linear_agent("pg", np.zeros((10, 3)))
        rng = np.random.default_rng(0)
        acts = [agent.act(np.ones(3), rng) for _ in range(10_000)]
        freq = np.bincount(acts, minlength=10) / 10_000
        assert np.all(np.abs(freq - 0.1) <= 0.02)

    def test_greedy_dqn(self):
        agent = linear_agent("dqn", [[1.0, 0.0], [3.0, 0.0], [2.0, 0.0]],
                             dqn_epsilon_start=0.0, dqn_epsilon_end=0.0)
        rng = np.random.default_rng(0)
        assert {agent.act([1.0, 0.0], rng) for _ in range(200)} == {1}

    def test_ql_ties_uniform(self):
        agent = linear_agent("ql", np.zeros((4, 2)))
        rng = np.random.default_rng(1)
        acts = [agent.act([1.0, 1.0], rng) for _ in range(10_000)]
        freq = np.bincount(acts, minlength=4) / 10_000
        assert np.all(np.abs(freq - 0.25) <= 0.02)

    def test_ql_distribution(self):
        agent = linear_agent("ql", [[2.0], [1.0], [0.0], [0.0]])
        np.testing.assert_allclose(agent.policy_probs([[1.0]])[0],
                                   [0.9 + 0.025, 0.025, 0.025, 0.025])

    def test_dqn_epsilon_schedule(self):
        cfg = make_config("dqn", 2, 2, lr=0.1)
        agent = Agent(cfg, init_rng=np.random.default_rng(0), total_interactions=1000)
        assert agent.epsilon == 1.0
        agent.steps = 50
        assert agent.epsilon == pytest.approx(0.525)
        agent.steps = 100
        assert agent.epsilon == pytest.approx(0.05)
        agent.steps = 900
        assert agent.epsilon == pytest.approx(0.05)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            linear_agent("pg", np.zeros((2, 3))).act([1.0, 2.0])

    def test_deterministic_given_stream(self):
        agent = linear_agent("pg", np.random.default_rng(0).normal(size=(5, 3)))
        a = [agent.act(np.ones(3), np.random.default_rng(4)) for _ in range(1)]
        b = [agent.act(np.ones(3), np.random.default_rng(4)) for _ in range(1)]
        assert a == b


class TestGradientOracles:
    @pytest.mark.parametrize("kind", ["pg", "ql", "dqn", "a2c", "ppo"])
    def test_matches_finite_differences(self, kind):
        rng = np.random.default_rng({"pg": 1, "ql": 2, "dqn": 3, "a2c": 4, "ppo": 5}[kind])
        for _ in range(50):
            agent, s, a, r = random_agent(kind, rng, hidden=(int(rng.integers(2, 6)),) *
                                          int(rng.integers(0, 3)))
            K = agent.n_actions
            adv = pi_old = None
            if kind == "a2c":
                adv = r - float(forward(agent.params, s)[K])
            if kind == "ppo":
                adv = r - float(forward(agent.snapshot, s)[K])
                pi_old = float(softmax(forward(agent.snapshot, s)[:K])[a])
            g = GRADS[kind](agent, s, a, r)
            fd = finite_difference_gradient(
                lambda t: loss_value(agent, s, a, r, theta=t, adv=adv, pi_old=pi_old),
                agent.params.theta, 1e-5)
            assert relative_error(g, fd) <= 1e-6

    def test_pg_expanded_form(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            agent, s, a, r = random_agent("pg", rng)
            pi = softmax(forward(agent.params, s))
            expected = -r * policy_gradient(agent.params, s, a) / pi[a]
            np.testing.assert_allclose(pg_loss_grad(agent, s, a, r), expected, atol=1e-10)

    def test_pg_zero_reward(self):
        agent, s, a, _ = random_agent("pg", np.random.default_rng(1))
        assert not pg_loss_grad(agent, s, a, 0.0).any()

    def test_pg_linear_outer(self):
        W = np.random.default_rng(2).normal(size=(3, 4))
        agent = linear_agent("pg", W)
        s = np.array([1.0, -2.0, 0.5, 3.0])
        pi = softmax(W @ s)
        coef = -pi
        coef[1] += 1
        np.testing.assert_allclose(pg_loss_grad(agent, s, 1, 0.7).reshape(3, 4),
                                   -0.7 * np.outer(coef, s), atol=1e-14)

    @pytest.mark.parametrize("kind", ["ql", "dqn"])
    def test_q_zero_residual(self, kind):
        agent = linear_agent(kind, [[1.0, 2.0], [3.0, 4.0]])
        assert not GRADS[kind](agent, [1.0, 1.0], 0, 3.0).any()

    @pytest.mark.parametrize("kind", ["ql", "dqn"])
    def test_q_row_locality(self, kind):
        agent = linear_agent(kind, [[1.0, 2.0], [3.0, 4.0]])
        g = GRADS[kind](agent, [1.0, 1.0], 1, 0.0).reshape(2, 2)
        assert not g[0].any()
        np.testing.assert_array_equal(g[1], [14.0, 14.0])

    def test_dqn_update_direction(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            agent, s, a, r = random_agent("dqn", rng)
            z = forward(agent.params, s)[a]
            step = agent.params.with_theta(agent.params.theta - 1e-4 * dqn_loss_grad(agent, s, a, r))
            assert np.sign(forward(step, s)[a] - z) == np.sign(r - z)

    def test_a2c_zero_advantage(self):
        agent, s, a, _ = random_agent("a2c", np.random.default_rng(4))
        v = float(forward(agent.params, s)[agent.n_actions])
        assert np.abs(a2c_loss_grad(agent, s, a, v)).max() == 0.0

    def test_a2c_value_head_part(self):
        W = np.random.default_rng(5).normal(size=(3, 2))
        agent = linear_agent("a2c", W)
        s = np.array([0.4, -1.2])
        v = W[2] @ s
        g = a2c_loss_grad(agent, s, 0, 1.0).reshape(3, 2)
        np.testing.assert_allclose(g[2], -(1.0 - v) * s, atol=1e-14)

    def test_ppo_ratio_one_equals_a2c(self):
        rng = np.random.default_rng(6)
        agent, s, a, r = random_agent("ppo", rng)
        agent.snapshot = agent.params
        twin = Agent(make_config("a2c", agent.config.net.input_dim, agent.n_actions,
                                 agent.config.net.hidden, lr=0.01, activation="tanh"),
                     params=agent.params)
        np.testing.assert_allclose(ppo_loss_grad(agent, s, a, r), a2c_loss_grad(twin, s, a, r),
                                   atol=1e-14)

    def test_ppo_outside_band(self):
        # pi(0|s) = 0.75 now, 0.5 under the snapshot: ratio 1.5
        W = np.array([[math.log(3.0), 0.0], [0.0, 0.0], [0.2, 0.0]])
        agent = linear_agent("ppo", W)
        agent.snapshot = agent.params.with_theta(np.r_[0.0, 0.0, 0.0, 0.0, 0.2, 0.0])
        s = np.array([1.0, 0.5])
        assert softmax(forward(agent.params, s)[:2])[0] == pytest.approx(0.75)
        g = ppo_loss_grad(agent, s, 0, 1.0).reshape(3, 2)
        assert not g[:2].any()
        np.testing.assert_allclose(g[2], -(1.0 - 0.2) * s)

    def test_ppo_needs_snapshot(self):
        agent = linear_agent("ppo", np.zeros((3, 2)))
        with pytest.raises(InvalidInputError):
            ppo_loss_grad(agent, [1.0, 0.0], 0, 1.0)

    def test_wrong_kind(self):
        with pytest.raises(InvalidInputError):
            ql_loss_grad(linear_agent("pg", np.zeros((2, 2))), [1.0, 0.0], 0, 1.0)

    def test_upstream_ppo_band_mask(self):
        Z = np.array([[math.log(3.0), 0.0, 0.0]])
        dZ = upstream_grad("ppo", Z, np.array([0]), np.array([1.0]), np.array([1.0]),
                           np.array([0.5]), 0.2)
        np.testing.assert_array_equal(dZ[0, :2], [0.0, 0.0])


class TestTrainStep:
    def test_zero_gradient_unchanged(self):
        agent = linear_agent("pg", [[1.0, 2.0], [3.0, 4.0]])
        before = agent.params.theta.copy()
        agent.train_step([Interaction(np.array([1.0, 1.0]), 0, 0.0)])
        np.testing.assert_array_equal(agent.params.theta, before)

    @pytest.mark.parametrize("kind", ["pg", "ql", "a2c"])
    def test_repeated_batch_equals_single(self, kind):
        rng = np.random.default_rng(7)
        agent, s, a, r = random_agent(kind, rng)
        one = Agent(agent.config, params=agent.params).train_step([Interaction(s, a, r)])
        four = Agent(agent.config, params=agent.params).train_step([Interaction(s, a, r)] * 4)
        np.testing.assert_allclose(four.params.theta, one.params.theta, atol=1e-15)

    def test_linear_pg_output_update(self):
        rng = np.random.default_rng(8)
        W = rng.normal(size=(4, 3))
        agent = linear_agent("pg", W)
        s, x = rng.normal(size=3), rng.normal(size=3)
        pi = softmax(W @ s)
        coef = -pi
        coef[2] += 1
        before = forward(agent.params, x)
        agent.train_step([Interaction(s, 2, 1.0)])
        np.testing.assert_allclose(forward(agent.params, x),
                                   before + 0.1 * coef * (s @ x), atol=1e-12)

    def test_averages_over_batch(self):
        rng = np.random.default_rng(9)
        agent, _, _, _ = random_agent("ql", rng)
        batch = [Interaction(rng.normal(size=agent.config.net.input_dim),
                             int(rng.integers(agent.n_actions)), float(rng.normal()))
                 for _ in range(5)]
        expected = agent.params.theta - 0.01 / 5 * sum(
            ql_loss_grad(agent, *b) for b in batch)
        agent.train_step(batch)
        np.testing.assert_allclose(agent.params.theta, expected, atol=1e-14)

    def test_ppo_epochs_share_snapshot(self):
        rng = np.random.default_rng(10)
        agent, s, a, r = random_agent("ppo", rng)
        cfg = agent.config
        start = agent.params
        agent.train_step([Interaction(s, a, r)])
        assert agent.snapshot is start
        assert agent.updates == cfg.ppo_epochs
        # replay the loop step by step against the fixed snapshot
        manual = Agent(cfg, params=start)
        manual.snapshot = start
        K = manual.n_actions
        adv = r - float(forward(start, s)[K])
        for _ in range(cfg.ppo_epochs):
            manual.params = manual.params.with_theta(
                manual.params.theta - cfg.lr * ppo_loss_grad(manual, s, a, r, adv))
        np.testing.assert_allclose(agent.params.theta, manual.params.theta, atol=1e-14)

    def test_dqn_buffer_capacity(self):
        cfg = make_config("dqn", 2, 2, lr=0.01, batch_size=4, dqn_buffer_capacity=10)
        agent = Agent(cfg, init_rng=np.random.default_rng(0), rng=np.random.default_rng(1))
        for i in range(30):
            agent.observe(np.array([1.0, float(i)]), i % 2, 1.0)
        assert len(agent.buffer) == 10
        # FIFO: oldest survivor is interaction 18 (28 inserted after 7 full batches)
        assert agent.buffer[0].s[1] == 18.0
        assert agent.updates == 7

    def test_observe_trains_on_full_batch(self):
        cfg = make_config("pg", 2, 2, lr=0.1, batch_size=3)
        agent = Agent(cfg, init_rng=np.random.default_rng(0))
        flags = [agent.observe(np.ones(2), 0, 1.0) for _ in range(7)]
        assert flags == [False, False, True, False, False, True, False]
        assert len(agent.pending) == 1

    def test_gradient_step_zero_lr(self):
        agent, s, a, r = random_agent("a2c", np.random.default_rng(11))
        before = agent.params.theta.copy()
        agent.gradient_step([Interaction(s, a, r)], lr=0.0)
        np.testing.assert_array_equal(agent.params.theta, before)

    @pytest.mark.parametrize("kind", ["pg", "ql", "a2c", "dqn", "ppo"])
    def test_determinism(self, kind):
        def trajectory():
            cfg = make_config(kind, 3, 4, (5,), lr=0.05, batch_size=2)
            agent = Agent(cfg, init_rng=np.random.default_rng(0), rng=np.random.default_rng(1),
                          total_interactions=40)
            env_rng = np.random.default_rng(2)
            thetas = []
            for _ in range(40):
                s = env_rng.normal(size=3)
                a = agent.act(s)
                agent.observe(s, a, float(a == 0))
                thetas.append(agent.params.theta.copy())
            return np.array(thetas)

        np.testing.assert_array_equal(trajectory(), trajectory())


class TestStructure:
    def test_ql_one_row_pg_all_rows(self):
        rng = np.random.default_rng(12)
        violations = 0
        for _ in range(200):
            K, d = int(rng.integers(2, 8)), int(rng.integers(1, 6))
            W = rng.normal(size=(K, d))
            s = rng.normal(size=d)
            a = int(rng.integers(K))
            r = float(rng.normal())
            ql = linear_agent("ql", W)
            ql.train_step([Interaction(s, a, r)])
            changed = np.flatnonzero((ql.params.theta.reshape(K, d) != W).any(axis=1))
            violations += not (changed.tolist() in ([a], []))
            pg = linear_agent("pg", W)
            pg.train_step([Interaction(s, a, r)])
            violations += not (pg.params.theta.reshape(K, d) != W).any(axis=1).all()
        assert violations == 0

    def test_jacobian_rows_for_value_head(self):
        agent, s, _, _ = random_agent("a2c", np.random.default_rng(13))
        J = output_jacobian(agent.params, s)
        assert J.shape == (agent.n_actions + 1, agent.params.theta.size)
