import math

import numpy as np
import pytest

from conftest import random_model
from hipmdp.control import (FourierValueFn, ModelEnv, SarsaConfig, default_sarsa,
                            fourier_features, plan_then_act, sarsa_run)
from hipmdp.envs import Cartpole
from hipmdp.errors import InvalidInputError, NumericalError
from hipmdp.filtering import init_belief


class Bandit:
    """One state, one action, reward 1, episode ends immediately."""

    actions = (0,)
    max_steps = 1

    def reset(self, rng):
        return np.array([0.5])

    def step(self, s, a, rng=None):
        return s, 1.0, True


class Chain:
    """Random walk on [0, 1] that never terminates on its own."""

    actions = (0, 1)
    max_steps = 40

    def reset(self, rng):
        return np.array([0.5])

    def step(self, s, a, rng=None):
        s2 = np.clip(s + (0.05 if a else -0.05), 0.0, 1.0)
        return s2, float(s2[0]), False


class TestFourierFeatures:
    def test_constant_term(self):
        fn = FourierValueFn(3, [-1, -2], [1, 2], 2)
        rng = np.random.default_rng(0)
        for _ in range(10):
            phi = fourier_features(rng.uniform(-1, 1, 2), fn)
            assert phi[0] == 1.0

    def test_lower_bound_gives_ones(self):
        fn = FourierValueFn(2, [-1, 0, 5], [1, 3, 6], 1)
        np.testing.assert_allclose(fourier_features([-1, 0, 5], fn), 1.0, rtol=0, atol=1e-15)

    def test_midpoint_order_one(self):
        fn = FourierValueFn(1, [0.0], [2.0], 1)
        np.testing.assert_allclose(fourier_features([1.0], fn), [1.0, 0.0], atol=1e-15)

    def test_direct_evaluation(self):
        fn = FourierValueFn(3, [-1, -1], [1, 1], 1)
        s = np.array([0.3, -0.6])
        bar = (s + 1) / 2
        expect = [math.cos(math.pi * (c0 * bar[0] + c1 * bar[1]))
                  for c0 in range(4) for c1 in range(4)]
        np.testing.assert_allclose(fourier_features(s, fn), expect, atol=1e-13)

    def test_feature_count_and_bounds(self):
        fn = FourierValueFn(3, np.zeros(4), np.ones(4), 2)
        assert fn.n_features == 4 ** 4 and fn.theta.shape == (2, 256)
        phi = fourier_features(np.full(4, 0.37), fn)
        assert np.all(np.abs(phi) <= 1.0)

    def test_rate_scale(self):
        fn = FourierValueFn(2, [0, 0], [1, 1], 1)
        np.testing.assert_allclose(fn.rate_scale, [1.0 if not c.any() else 1 / np.linalg.norm(c)
                                                   for c in fn.coeffs])

    def test_clipping_is_counted(self):
        fn = FourierValueFn(2, [0.0], [1.0], 1)
        fourier_features([0.5], fn)
        assert fn.n_clipped == 0
        np.testing.assert_array_equal(fourier_features([7.0], fn), fourier_features([1.0], fn))
        assert fn.n_clipped == 1

    @pytest.mark.parametrize("args", [(-1, [0], [1], 1), (2, [1], [0], 1), (2, [0], [np.inf], 1),
                                      (2, [0, 0], [1], 1), (2, [0], [1], 0)])
    def test_validation(self, args):
        with pytest.raises(InvalidInputError):
            FourierValueFn(*args)


class TestSarsa:
    def test_no_learning_leaves_fn_unchanged(self):
        fn = FourierValueFn(2, [0.0], [1.0], 2)
        fn.theta[:] = np.random.default_rng(0).standard_normal(fn.theta.shape)
        before = fn.theta.copy()
        res = sarsa_run(Chain(), fn, SarsaConfig(alpha=0.0, epsilon=1.0, episodes=5,
                                                 max_steps=40), np.random.default_rng(1))
        np.testing.assert_array_equal(fn.theta, before)
        assert res.steps == [40] * 5

    def test_random_policy_is_uniform(self):
        fn = FourierValueFn(1, [0.0], [1.0], 2)
        fn.theta[1] = 100.0
        counts = np.zeros(2)

        class Recorder(Chain):
            def step(self, s, a, rng=None):
                counts[a] += 1
                return super().step(s, a, rng)

        sarsa_run(Recorder(), fn, SarsaConfig(alpha=0.0, epsilon=1.0, episodes=50,
                                              max_steps=40), np.random.default_rng(2))
        assert abs(counts[0] / counts.sum() - 0.5) < 0.05

    def test_bandit_fixed_point(self):
        fn = FourierValueFn(0, [0.0], [1.0], 1)
        sarsa_run(Bandit(), fn, SarsaConfig(gamma=0.0, alpha=0.1, epsilon=0.0, episodes=300,
                                            max_steps=1), np.random.default_rng(0))
        assert fn.theta[0, 0] == pytest.approx(1.0, abs=1e-10)

    def test_seeded_runs_repeat(self):
        def run():
            env = Cartpole()
            fn = FourierValueFn.for_domain(env, 3)
            res = sarsa_run(env, fn, default_sarsa("cartpole"), np.random.default_rng(5),
                            episodes=5, record=True)
            return fn.theta, res.returns, res.episodes

        t1, r1, e1 = run()
        t2, r2, e2 = run()
        np.testing.assert_array_equal(t1, t2)
        assert r1 == r2
        np.testing.assert_array_equal(np.array([t.s for ep in e1 for t in ep]),
                                      np.array([t.s for ep in e2 for t in ep]))

    def test_divergence_detected(self):
        fn = FourierValueFn(1, [0.0], [1.0], 2)
        cfg = SarsaConfig(gamma=1.0, alpha=1e6, epsilon=0.1, episodes=5, max_steps=40)
        with pytest.raises(NumericalError, match="diverged"):
            sarsa_run(Chain(), fn, cfg, np.random.default_rng(0))

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            SarsaConfig(gamma=1.5)
        with pytest.raises(InvalidInputError):
            SarsaConfig(epsilon=-0.1)
        with pytest.raises(InvalidInputError):
            default_sarsa("pendulum")

    def test_cartpole_learning_curve(self):
        """One learner, five blocks of 30 episodes: block means rise monotonically."""
        monotone = 0
        for seed in range(5):
            env = Cartpole()
            fn = FourierValueFn.for_domain(env, 3)
            res = sarsa_run(env, fn, default_sarsa("cartpole"), np.random.default_rng(seed),
                            episodes=150)
            blocks = np.array(res.returns).reshape(5, 30).mean(axis=1)
            monotone += bool(np.all(np.diff(blocks) >= 0))
        assert monotone >= 4


class TestPlanThenAct:
    def _model(self):
        m = random_model(0, K=1, d=4, n_actions=2, noise=1e-4)
        return m.with_features([0])

    def test_k1_equals_planning_on_fixed_model(self):
        model = self._model()
        env = Cartpole()
        cfg = SarsaConfig(alpha=0.005, epsilon=0.05, episodes=1, max_steps=60)
        kw = dict(episodes=3, planning_episodes=2, initial_planning=2)

        fn_a = FourierValueFn.for_domain(env, 2)
        a = plan_then_act(model, None, env, fn_a, cfg, np.random.default_rng(3), **kw)
        fixed = ModelEnv(model, [1.0], env)
        fn_b = FourierValueFn.for_domain(env, 2)
        b = plan_then_act(fixed, None, env, fn_b, cfg, np.random.default_rng(3), **kw)

        assert a.returns == b.returns and a.steps == b.steps
        np.testing.assert_array_equal(fn_a.theta, fn_b.theta)
        assert a.belief.dim == 0 and b.belief is None
        assert all(list(w) == [1.0] for w in a.weights)

    def test_belief_is_updated(self):
        m = random_model(1, K=2, d=4, n_actions=2, noise=1e-3)
        env = Cartpole()
        cfg = SarsaConfig(alpha=0.005, epsilon=0.05, episodes=1, max_steps=50)
        prior = init_belief(m)
        res = plan_then_act(m, prior, env, FourierValueFn.for_domain(env, 1), cfg,
                            np.random.default_rng(0), episodes=2, planning_episodes=1,
                            initial_planning=1)
        assert np.all(np.diag(res.belief.P) > np.diag(prior.P))
        assert len(res.returns) == 2 and len(res.weights) == 2

    def test_model_env_applies_domain_rules(self):
        m = self._model()
        env = ModelEnv(m, [1.0], Cartpole())
        rng = np.random.default_rng(0)
        s2, r, done = env.step(np.array([0.0, 0.0, 5.0, 0.0]), 1, rng)
        assert done and r == 0.0
