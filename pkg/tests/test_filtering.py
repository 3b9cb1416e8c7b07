import numpy as np
import pytest

from conftest import dense_gp_mean, make_model, make_support, random_model
from hipmdp.data import InstanceBatch, TransitionTuple
from hipmdp.errors import InvalidInputError, NumericalError
from hipmdp.filtering import (OnlineFilter, WeightBelief, filter_update, init_belief,
                              interpolate_basis, mean_weights)
from hipmdp.model import predict_delta


def _tuples(model, w, n, seed, noise=0.0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        s = rng.uniform(-1, 1, model.dim)
        a = int(rng.integers(len(model.actions)))
        mean, var = predict_delta(model, w, s, a)
        out.append(TransitionTuple(s, a, s + mean + noise * rng.standard_normal(model.dim), 0.0))
    return out


def _one_shot(model, tuples):
    """Bayesian linear regression posterior built from a dense design matrix."""
    var0 = model.sigma_w ** 2 + model.mu_var
    rows, targets, noise = [], [], []
    for t in tuples:
        F = interpolate_basis(model, t.s, t.a)
        rows.append(F[:, 1:])
        targets.append(t.s_next - t.s - F[:, 0])
        noise.append(model.noise_variances[model.action_index(t.a)])
    X = np.vstack(rows)
    y = np.concatenate(targets)
    Rinv = np.diag(1.0 / np.concatenate(noise))
    cov = np.linalg.inv(np.diag(1.0 / var0) + X.T @ Rinv @ X)
    return cov @ (model.mu_mean / var0 + X.T @ Rinv @ y), cov


class TestBelief:
    def test_prior_variance(self):
        m = random_model(0, K=3)
        mean, cov = init_belief(m).moments()
        np.testing.assert_allclose(mean, m.mu_mean, rtol=1e-12)
        np.testing.assert_allclose(np.diag(cov), 16.0 + m.mu_var, rtol=1e-12)
        assert np.count_nonzero(cov - np.diag(np.diag(cov))) == 0

    def test_moment_round_trip(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((3, 3))
        cov = A @ A.T + 0.5 * np.eye(3)
        mean = rng.standard_normal(3)
        m2, c2 = WeightBelief.from_moments(mean, cov).moments()
        np.testing.assert_allclose(m2, mean, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(c2, cov, rtol=1e-12, atol=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            WeightBelief([np.nan], [[1.0]])

    def test_singular_precision(self):
        with pytest.raises(NumericalError):
            mean_weights(WeightBelief([0.0, 0.0], np.zeros((2, 2))))


class TestInterpolateBasis:
    def test_matches_dense_gp_mean(self):
        m = random_model(2, K=3)
        s = np.array([0.3, -0.4])
        F = interpolate_basis(m, s, 1)
        p = m.support.kernel(1, 0)
        for j in range(m.dim):
            for k in range(m.K):
                expect = 0.0
                if m.z[k, 1, j]:
                    expect = dense_gp_mean(m.support.points, m.f[k, 1, j], s[None, :],
                                           p.lengthscales, p.signal_variance,
                                           p.noise_variance + p.jitter)[0][0]
                assert F[j, k] == pytest.approx(expect, rel=1e-9, abs=1e-13)

    def test_far_from_support_is_zero(self):
        m = random_model(3, K=2)
        np.testing.assert_allclose(interpolate_basis(m, np.array([50.0, 50.0]), 0), 0.0,
                                   atol=1e-300)

    def test_near_noiseless_interpolates_nodes(self):
        S = make_support([[-1.0], [0.0], [1.0]], lengthscale=0.5, noise=1e-12)
        f = np.array([[[[0.2, -0.1, 0.4]]], [[[1.0, 2.0, 3.0]]]])
        m = make_model(S, np.ones((2, 1, 1), dtype=bool), f)
        np.testing.assert_allclose(interpolate_basis(m, np.array([0.0]), 0)[0], [-0.1, 2.0],
                                   rtol=1e-4)


class TestFilterUpdate:
    def test_k1_is_noop(self):
        m = random_model(4, K=1)
        b = init_belief(m)
        assert b.dim == 0
        b2 = filter_update(b, m, _tuples(m, [1.0], 5, 0))
        assert b2.dim == 0
        np.testing.assert_array_equal(mean_weights(b2).w, [1.0])

    def test_batched_equals_sequential(self):
        m = random_model(5, K=3)
        ts = _tuples(m, [1.0, 0.5, -1.0], 12, 1, noise=0.01)
        seq = init_belief(m)
        for t in ts:
            seq = filter_update(seq, m, [t])
        batch = filter_update(init_belief(m), m, ts)
        np.testing.assert_allclose(seq.h, batch.h, rtol=1e-12)
        np.testing.assert_allclose(seq.P, batch.P, rtol=1e-12)

    def test_matches_one_shot_regression(self):
        m = random_model(6, K=3)
        ts = _tuples(m, [1.0, -0.3, 0.8], 20, 2, noise=0.05)
        mean, cov = filter_update(init_belief(m), m, ts).moments()
        omean, ocov = _one_shot(m, ts)
        np.testing.assert_allclose(mean, omean, rtol=1e-8)
        np.testing.assert_allclose(cov, ocov, rtol=1e-8)

    def test_noiseless_recovery(self):
        S = make_support(np.random.default_rng(7).uniform(-1, 1, (6, 2)), noise=1e-8,
                         n_actions=2)
        rng = np.random.default_rng(8)
        z = np.ones((3, 2, 2), dtype=bool)
        m = make_model(S, z, rng.standard_normal((3, 2, 2, 6)))
        w_true = np.array([1.0, 0.7, -1.4])
        belief = filter_update(init_belief(m), m, _tuples(m, w_true, 30, 9))
        np.testing.assert_allclose(mean_weights(belief).w, w_true, atol=1e-3)

    def test_uncertainty_shrinks(self):
        m = random_model(9, K=3)
        belief = init_belief(m)
        trace = np.trace(belief.moments()[1])
        for t in _tuples(m, [1.0, 0.2, 0.2], 15, 3, noise=0.01):
            belief = filter_update(belief, m, [t])
            np.linalg.cholesky(belief.P)
            new = np.trace(belief.moments()[1])
            assert new <= trace * (1 + 1e-12)
            trace = new

    def test_accepts_instance_batch(self):
        m = random_model(10, K=2)
        ts = _tuples(m, [1.0, 0.4], 6, 4)
        a = filter_update(init_belief(m), m, ts)
        b = filter_update(init_belief(m), m, InstanceBatch.from_tuples(0, ts))
        np.testing.assert_allclose(a.P, b.P, rtol=1e-14)

    def test_errors(self):
        m = random_model(11, K=3)
        with pytest.raises(InvalidInputError):
            filter_update(init_belief(m), m, [])
        with pytest.raises(InvalidInputError):
            filter_update(WeightBelief([0.0], [[1.0]]), m, _tuples(m, [1, 0, 0], 1, 0))
        bad = TransitionTuple(np.zeros(3), 0, np.zeros(3), 0.0)
        with pytest.raises(InvalidInputError):
            filter_update(init_belief(m), m, [bad])


class TestOnlineFilter:
    def test_cadence(self):
        m = random_model(12, K=2)
        ts = _tuples(m, [1.0, 0.9], 7, 5)
        flt = OnlineFilter(m, every=3)
        prior = flt.belief
        for i, t in enumerate(ts):
            flt.observe(t)
            if i < 2:
                assert flt.belief is prior
        flt.flush()
        expect = filter_update(init_belief(m), m, ts)
        np.testing.assert_allclose(flt.belief.P, expect.P, rtol=1e-12)
        np.testing.assert_allclose(flt.weights().w, mean_weights(expect).w, rtol=1e-10)

    def test_invalid_cadence(self):
        with pytest.raises(InvalidInputError):
            OnlineFilter(random_model(13), every=0)
