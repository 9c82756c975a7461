import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from photonic_ppo.baseline import ClassicalPolicy, ValueNet
from photonic_ppo.circuit import ActionDistribution, PhotonicCircuit, policy_distribution, softmax_with_temperature
from photonic_ppo.exceptions import InvalidConfigError, ShapeError
from photonic_ppo.fock import SimConfig
from photonic_ppo.ppo import (
    AdamState,
    Batch,
    Hyperparameters,
    RolloutBuffer,
    TrajectoryStep,
    adam_step,
    clip_objective,
    discounted_returns,
    entropy_categorical,
    gae_advantages,
    gradient,
    kl_categorical,
    ppo_loss,
    update,
    value_loss,
)


def brute_gae(rewards, values, bootstrap, gamma, lam):
    T = len(rewards)
    v = list(values) + [bootstrap]
    deltas = [rewards[t] + gamma * v[t + 1] - v[t] for t in range(T)]
    return np.array([sum((gamma * lam) ** l * deltas[t + l] for l in range(T - t)) for t in range(T)])


def make_batch(policy, theta, rng, n=4, hp=Hyperparameters()):
    obs = rng.uniform(-0.2, 0.2, (n, 2))
    scores, _ = policy.scores(theta, obs)
    probs, logp = softmax_with_temperature(scores, hp.tau)
    actions = rng.integers(0, 2, n)
    # Old policy close to the current one keeps ratios away from the clip kinks.
    shift = rng.uniform(-0.1, 0.1, n)
    log_old = logp[np.arange(n), actions] + shift
    probs_old = np.clip(probs + rng.uniform(-0.05, 0.05, (n, 1)) * [1, -1], 0.05, 0.95)
    return Batch(obs, actions, log_old, probs_old, rng.normal(size=n), rng.normal(size=n))


def dist(p0):
    return ActionDistribution(p0, 1 - p0, math.log(p0), math.log(1 - p0))


probabilities = st.floats(1e-6, 1 - 1e-6)


class TestHyperparameters:
    def test_defaults(self):
        hp = Hyperparameters()
        assert (hp.gamma, hp.lam, hp.epsilon, hp.beta, hp.c2, hp.alpha) == (0.99, 0.95, 0.2, 0.1, 0.01, 0.075)
        assert (hp.lr_policy, hp.lr_value, hp.horizon, hp.memory, hp.minibatch) == (0.01, 0.005, 200, 10000, 8)

    @pytest.mark.parametrize("kwargs", [{"gamma": 0.0}, {"lam": 1.5}, {"epsilon": -0.1}, {"minibatch": 0},
                                        {"tau": 0.0}, {"buffer_mode": "replay"}])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidConfigError):
            Hyperparameters(**kwargs)

    def test_replace_coerces_strings(self):
        hp = Hyperparameters().replace(lr_policy="0.02", minibatch="16", normalize_advantages="false", **{"lambda": "0.9"})
        assert hp.lr_policy == 0.02 and hp.minibatch == 16 and hp.normalize_advantages is False and hp.lam == 0.9

    def test_replace_unknown(self):
        with pytest.raises(InvalidConfigError):
            Hyperparameters().replace(learning_rate=1)

    def test_step_decay(self):
        hp = Hyperparameters(lr_decay=0.5, lr_decay_every=10)
        assert [hp.learning_rate_scale(e) for e in (0, 9, 10, 25)] == [1.0, 1.0, 0.5, 0.25]
        assert Hyperparameters().learning_rate_scale(500) == 1.0


class TestReturns:
    def test_examples(self):
        np.testing.assert_allclose(discounted_returns([1.0], 0.99), [1.0])
        np.testing.assert_allclose(discounted_returns([1, 1, 1], 0.99), [2.9701, 1.99, 1.0], atol=1e-12)
        np.testing.assert_array_equal(discounted_returns([3, 1, 2], 0.0), [3, 1, 2])
        assert discounted_returns([], 0.9).size == 0

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=50), st.floats(0.01, 1.0))
    def test_recursion(self, rewards, gamma):
        out = discounted_returns(rewards, gamma)
        for t in range(len(rewards) - 1):
            assert out[t] == rewards[t] + gamma * out[t + 1]
        assert out[-1] == rewards[-1]


class TestGAE:
    def test_examples(self):
        np.testing.assert_allclose(gae_advantages([1.0], [0.5], 0.0, 0.99, 0.95), [0.5])
        r, v = np.array([1.0, 0.5, 2.0]), np.array([0.2, -0.1, 0.4])
        deltas = r + 0.9 * np.append(v[1:], 0.3) - v
        np.testing.assert_allclose(gae_advantages(r, v, 0.3, 0.9, 0.0), deltas, atol=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            gae_advantages([1, 2], [0.0], 0.0, 0.99, 0.95)

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 50), st.floats(0.5, 1.0), st.floats(0.0, 1.0))
    def test_matches_double_sum(self, seed, T, gamma, lam):
        rng = np.random.default_rng(seed)
        r, v, b = rng.normal(size=T), rng.normal(size=T), float(rng.normal())
        np.testing.assert_allclose(gae_advantages(r, v, b, gamma, lam), brute_gae(r, v, b, gamma, lam), rtol=0, atol=1e-12)


class TestObjectiveTerms:
    def test_clip_examples(self):
        assert clip_objective(1.0, 0.7, 0.2) == 0.7
        assert clip_objective(1.5, 2.0, 0.2) == pytest.approx(2.4)
        assert clip_objective(0.5, -1.0, 0.2) == pytest.approx(-0.8)

    @given(st.floats(1e-3, 10), st.floats(-10, 10), st.floats(0, 1))
    def test_clip_pessimistic(self, ratio, adv, eps):
        assert clip_objective(ratio, adv, eps) <= ratio * adv + 1e-12

    def test_kl_examples(self):
        assert kl_categorical(dist(0.3), dist(0.3)) == 0.0
        assert kl_categorical(dist(0.9), dist(0.5)) == pytest.approx(0.9 * math.log(1.8) + 0.1 * math.log(0.2), abs=1e-12)
        assert kl_categorical(dist(0.9), dist(0.5)) == pytest.approx(0.368064, abs=1e-6)

    @given(probabilities, probabilities)
    def test_kl_nonnegative(self, a, b):
        kl = kl_categorical(dist(a), dist(b))
        assert kl >= -1e-15
        if abs(a - b) > 1e-6:
            assert kl > 0

    def test_entropy_examples(self):
        assert entropy_categorical(dist(0.5)) == pytest.approx(math.log(2), abs=1e-15)
        assert entropy_categorical(policy_distribution(1e3, 0.0)) == pytest.approx(0.0, abs=1e-12)
        assert entropy_categorical(policy_distribution(1.0, 0.0)) == pytest.approx(0.582203, abs=1e-6)

    def test_value_loss(self):
        assert value_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert value_loss([0.0], [2.0]) == 4.0
        assert value_loss([1.0, 3.0], [2.0, 2.0]) == 1.0
        with pytest.raises(ValueError):
            value_loss([], [])


class TestPPOLoss:
    def _single(self, hp, advantage=0.7, log_old=math.log(0.4), probs_old=(0.4, 0.6)):
        policy = ClassicalPolicy()
        theta = policy.init_params(np.random.default_rng(0))
        obs = np.array([[0.1, -0.3]])
        batch = Batch(obs, np.array([0]), np.array([log_old]), np.array([probs_old]),
                      np.array([advantage]), np.array([1.0]))
        return policy, theta, obs, batch

    def test_breakdown_matches_independent_terms(self):
        hp = Hyperparameters()
        policy, theta, obs, batch = self._single(hp)
        loss, _, _ = ppo_loss(policy, theta, batch, hp)
        scores, _ = policy.scores(theta, obs)
        p = policy_distribution(*scores[0], hp.tau)
        ratio = p.p0 / 0.4
        old = ActionDistribution(0.4, 0.6, math.log(0.4), math.log(0.6))
        assert loss.clip == pytest.approx(clip_objective(ratio, 0.7, hp.epsilon), abs=1e-12)
        assert loss.kl == pytest.approx(kl_categorical(p, old), abs=1e-12)
        assert loss.entropy == pytest.approx(entropy_categorical(p), abs=1e-12)
        expected = -(loss.clip - hp.beta * loss.kl + hp.c2 * loss.entropy) + hp.alpha * loss.l2
        assert loss.total == pytest.approx(expected, abs=1e-12)

    def test_zero_advantage_on_policy(self):
        hp = Hyperparameters()
        circ = PhotonicCircuit(SimConfig(2, 6), 1)
        theta = circ.init_params(np.random.default_rng(2))
        obs = np.array([[0.05, 0.1], [-0.1, 0.0]])
        scores, _ = circ.scores(theta, obs)
        probs, logp = softmax_with_temperature(scores, hp.tau)
        actions = np.array([0, 1])
        batch = Batch(obs, actions, logp[[0, 1], actions], probs, np.zeros(2), np.zeros(2))
        loss, _, _ = ppo_loss(circ, theta, batch, hp)
        ent = float(np.mean(-np.sum(probs * logp, axis=1)))
        assert loss.clip == 0.0 and loss.kl == pytest.approx(0.0, abs=1e-15)
        assert loss.total == pytest.approx(-hp.c2 * ent + hp.alpha * circ.l2(theta), abs=1e-14)

    def test_term_isolation(self):
        hp = Hyperparameters(beta=0.0, c2=0.0, alpha=0.0)
        policy, theta, _, batch = self._single(hp)
        loss, _, _ = ppo_loss(policy, theta, batch, hp)
        assert loss.total == -loss.clip

    def test_empty_batch(self):
        policy = ClassicalPolicy()
        empty = Batch(np.zeros((0, 2)), np.zeros(0, int), np.zeros(0), np.zeros((0, 2)), np.zeros(0), np.zeros(0))
        with pytest.raises(ValueError):
            ppo_loss(policy, np.zeros(42), empty, Hyperparameters())


class TestGradient:
    def test_constant_and_quadratic(self):
        np.testing.assert_array_equal(gradient(lambda x: 3.0, np.ones(3)), np.zeros(3))
        np.testing.assert_allclose(gradient(lambda x: float(np.sum(x**2)), np.array([1.0, 2.0])), [2, 4], atol=1e-6)

    def test_non_finite(self):
        with pytest.raises(FloatingPointError):
            gradient(lambda x: float("nan"), np.zeros(2))

    @pytest.mark.parametrize("kind", ["single", "reupload", "classical"])
    def test_adjoint_matches_finite_differences(self, kind):
        hp = Hyperparameters()
        policy = ClassicalPolicy() if kind == "classical" else PhotonicCircuit(SimConfig(2, 8), 3, kind)
        rng = np.random.default_rng(7)
        theta = policy.init_params(rng)
        batch = make_batch(policy, theta, rng, hp=hp)
        _, g, _ = ppo_loss(policy, theta, batch, hp, grad=True)
        fd = gradient(lambda t: ppo_loss(policy, t, batch, hp)[0].total, theta, h=1e-4)
        mask = np.abs(fd) > 1e-6
        assert np.all(np.abs(g - fd)[mask] / np.abs(fd[mask]) <= 1e-3)


class TestAdam:
    def test_zero_gradient(self):
        p = np.array([1.0, -2.0])
        out, state = adam_step(p, np.zeros(2), AdamState.zeros(2), 0.1)
        np.testing.assert_array_equal(out, p)
        assert state.t == 1

    @given(st.lists(st.floats(-10, 10).filter(lambda g: abs(g) > 1e-3), min_size=1, max_size=8))
    def test_first_step(self, grads):
        g = np.array(grads)
        out, _ = adam_step(np.zeros_like(g), g, AdamState.zeros(g.size), 0.01)
        np.testing.assert_allclose(out, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-9)

    def test_matches_reference_sequence(self):
        rng = np.random.default_rng(0)
        p, state = np.zeros(3), AdamState.zeros(3)
        m = v = np.zeros(3)
        ref = np.zeros(3)
        for t in range(1, 6):
            g = rng.normal(size=3)
            p, state = adam_step(p, g, state, 0.05)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p, ref, rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step(np.zeros(2), np.zeros(3), AdamState.zeros(2), 0.1)


def _fill(buffer, rng, policy, theta, hp, episodes=2):
    for _ in range(episodes):
        n = int(rng.integers(3, 12))
        for t in range(n):
            obs = tuple(rng.uniform(-0.1, 0.1, 2))
            scores, norms = policy.scores(theta, [obs])
            probs, logp = softmax_with_temperature(scores, hp.tau)
            a = int(rng.integers(0, 2))
            buffer.append(TrajectoryStep(obs, a, 1.0, float(logp[0, a]), float(rng.normal()), t == n - 1,
                                         tuple(probs[0]), None if norms is None else float(norms[0])))


class TestBuffer:
    def test_capacity_window(self):
        buf = RolloutBuffer(capacity=5)
        for i in range(8):
            buf.append(TrajectoryStep((0.0, 0.0), 0, float(i), -0.7, 0.0, False))
        assert len(buf) == 5
        assert [s.reward for s in buf.steps] == [3, 4, 5, 6, 7]

    def test_segments_and_compute(self):
        buf = RolloutBuffer()
        rewards = [1, 1, 1, 1, 1]
        dones = [False, True, False, False, True]
        values = [0.1, 0.2, 0.3, 0.4, 0.5]
        for r, d, v in zip(rewards, dones, values):
            buf.append(TrajectoryStep((0.0, 0.0), 0, r, -0.7, v, d))
        assert buf.segments() == [(0, 2), (2, 5)]
        returns, adv = buf.compute(0.9, 0.8)
        np.testing.assert_allclose(returns, np.concatenate([discounted_returns([1, 1], 0.9), discounted_returns([1, 1, 1], 0.9)]))
        np.testing.assert_allclose(adv[2:], gae_advantages([1, 1, 1], [0.3, 0.4, 0.5], 0.0, 0.9, 0.8))

    def test_normalized_batch(self):
        buf = RolloutBuffer()
        _fill(buf, np.random.default_rng(0), ClassicalPolicy(), np.zeros(42), Hyperparameters())
        buf.compute(0.99, 0.95)
        b = buf.batch(normalize=True)
        assert abs(b.advantages.mean()) < 1e-12 and b.advantages.std() == pytest.approx(1.0, abs=1e-6)

    def test_batch_requires_compute(self):
        buf = RolloutBuffer()
        buf.append(TrajectoryStep((0.0, 0.0), 0, 1.0, -0.7, 0.0, True))
        with pytest.raises(RuntimeError):
            buf.batch()


class TestUpdate:
    def _setup(self, seed=0):
        hp = Hyperparameters()
        policy, vnet = PhotonicCircuit(SimConfig(2, 6), 1, "single"), ValueNet()
        rng = np.random.default_rng(seed)
        theta, vtheta = policy.init_params(rng), vnet.init_params(rng)
        buf = RolloutBuffer()
        _fill(buf, rng, policy, theta, hp)
        return hp, policy, vnet, theta, vtheta, buf

    def test_deterministic(self):
        hp, policy, vnet, theta, vtheta, buf = self._setup()
        runs = [
            update(buf, policy, theta, vnet, vtheta, AdamState.zeros(theta.size), AdamState.zeros(32), hp,
                   np.random.default_rng(9))
            for _ in range(2)
        ]
        np.testing.assert_array_equal(runs[0].theta, runs[1].theta)
        np.testing.assert_array_equal(runs[0].value_theta, runs[1].value_theta)
        assert runs[0].diagnostics == runs[1].diagnostics

    def test_diagnostics(self):
        hp, policy, vnet, theta, vtheta, buf = self._setup(1)
        res = update(buf, policy, theta, vnet, vtheta, AdamState.zeros(theta.size), AdamState.zeros(32), hp,
                     np.random.default_rng(1))
        d = res.diagnostics
        for key in ("policy_loss", "clip_term", "kl_term", "entropy_term", "l2_term", "value_loss",
                    "mean_kl", "mean_entropy", "min_state_norm"):
            assert np.isfinite(d[key]), key
        assert d["n_minibatches"] == hp.epochs * math.ceil(len(buf) / hp.minibatch)
        assert 0 < d["min_state_norm"] <= 1 + 1e-9
        assert d["mean_kl"] <= 0.5
        assert res.policy_adam.t == d["n_minibatches"]

    def test_zero_advantages_move_only_regularized_directions(self):
        # With no advantage signal, the clip term has zero gradient; only entropy, KL
        # and L2 terms act. Freezing those coefficients leaves parameters fixed.
        hp = Hyperparameters(beta=0.0, c2=0.0, alpha=0.0, normalize_advantages=False)
        policy, vnet = ClassicalPolicy(), ValueNet()
        rng = np.random.default_rng(3)
        theta, vtheta = policy.init_params(rng), vnet.init_params(rng)
        buf = RolloutBuffer()
        for t in range(6):
            obs = tuple(rng.uniform(-0.1, 0.1, 2))
            probs, logp = softmax_with_temperature(policy.scores(theta, [obs])[0], 1.0)
            buf.append(TrajectoryStep(obs, 0, 0.0, float(logp[0, 0]), 0.0, t == 5, tuple(probs[0])))
        res = update(buf, policy, theta, vnet, vtheta, AdamState.zeros(42), AdamState.zeros(32), hp,
                     np.random.default_rng(0))
        np.testing.assert_array_equal(res.theta, theta)

    def test_finite_difference_engine_agrees(self):
        hp, policy, vnet, theta, vtheta, buf = self._setup(2)
        hp = hp.replace(epochs=1)
        args = (buf, policy, theta, vnet, vtheta)
        a = update(*args, AdamState.zeros(theta.size), AdamState.zeros(32), hp, np.random.default_rng(4))
        b = update(*args, AdamState.zeros(theta.size), AdamState.zeros(32), hp, np.random.default_rng(4),
                   gradient_engine="finite-difference")
        np.testing.assert_allclose(a.theta, b.theta, atol=1e-6)

    def test_empty_buffer(self):
        with pytest.raises(ValueError):
            update(RolloutBuffer(), ClassicalPolicy(), np.zeros(42), ValueNet(), np.zeros(32),
                   AdamState.zeros(42), AdamState.zeros(32), Hyperparameters(), np.random.default_rng(0))
