import json

import numpy as np
import pytest

from conftest import dense_gp_mean, make_model, make_support, random_model
from hipmdp.errors import InvalidInputError, ModelFormatError
from hipmdp.model import (InstanceWeights, LatentDynamicsModel, load_model, model_to_dict,
                          predict_delta, save_model, simulate_step, wrap_state)


def _assert_models_equal(a: LatentDynamicsModel, b: LatentDynamicsModel):
    np.testing.assert_array_equal(a.z, b.z)
    np.testing.assert_array_equal(a.f, b.f)
    np.testing.assert_array_equal(a.mu_mean, b.mu_mean)
    np.testing.assert_array_equal(a.mu_var, b.mu_var)
    np.testing.assert_array_equal(a.support.points, b.support.points)
    assert a.support.params == b.support.params
    assert a.support.actions == b.support.actions
    assert a.support.wrap_dims == b.support.wrap_dims
    assert (a.sigma_w, a.sigma_w0) == (b.sigma_w, b.sigma_w0)
    assert a.meta == b.meta


class TestInvariants:
    def test_baseline_weight_fixed(self):
        with pytest.raises(InvalidInputError):
            InstanceWeights(0, [0.5, 1.0])
        assert InstanceWeights(0, [1.0, 2.0]).K == 2

    def test_baseline_filter_required(self):
        S = make_support([[0.0], [1.0]])
        z = np.ones((1, 1, 1), dtype=bool)
        z[0, 0, 0] = False
        with pytest.raises(InvalidInputError):
            make_model(S, z, np.zeros((1, 1, 1, 2)))

    def test_dead_feature_rejected(self):
        S = make_support([[0.0], [1.0]])
        z = np.array([[[True]], [[False]]])
        with pytest.raises(InvalidInputError):
            make_model(S, z, np.zeros((2, 1, 1, 2)))

    def test_non_finite_basis_rejected(self):
        S = make_support([[0.0], [1.0]])
        f = np.array([[[[0.0, np.inf]]]])
        with pytest.raises(InvalidInputError):
            make_model(S, np.ones((1, 1, 1), dtype=bool), f)


class TestPredictDelta:
    def test_baseline_only_ignores_instance(self):
        m = random_model(0, K=1)
        s = np.array([0.2, -0.3])
        first = predict_delta(m, [1.0], s, 1)[0]
        np.testing.assert_array_equal(predict_delta(m, InstanceWeights(7, [1.0]), s, 1)[0], first)

    def test_zero_extra_weights_give_baseline(self):
        m = random_model(1, K=3)
        base = m.with_features([0])
        s = np.array([0.4, 0.1])
        for a in (0, 1):
            np.testing.assert_allclose(predict_delta(m, [1.0, 0.0, 0.0], s, a)[0],
                                       predict_delta(base, [1.0], s, a)[0], rtol=1e-13)

    def test_direct_summation(self):
        rng = np.random.default_rng(4)
        pts = rng.uniform(-1, 1, (5, 2))
        S = make_support(pts, lengthscale=0.9, sf2=1.3, noise=0.02)
        z = np.array([[[True, True]], [[True, False]]])
        f = rng.standard_normal((2, 1, 2, 5)) * z[..., None]
        m = make_model(S, z, f)
        w = np.array([1.0, -0.7])
        s = np.array([0.3, 0.2])
        p = S.kernel(0, 0)
        expect = np.zeros(2)
        for j in range(2):
            for k in range(2):
                if z[k, 0, j]:
                    g, _ = dense_gp_mean(pts, f[k, 0, j], s[None, :], 0.9, 1.3,
                                         0.02 + p.jitter)
                    expect[j] += w[k] * g[0]
        mean, var = predict_delta(m, w, s, 0)
        np.testing.assert_allclose(mean, expect, rtol=1e-10, atol=1e-14)
        np.testing.assert_array_equal(var, [0.02, 0.02])

    def test_errors(self):
        m = random_model(2, K=3)
        with pytest.raises(InvalidInputError):
            predict_delta(m, [1.0, 0.0], [0.0, 0.0], 0)
        with pytest.raises(InvalidInputError):
            predict_delta(m, [1.0, 0.0, 0.0], [0.0, 0.0, 0.0], 0)
        with pytest.raises(InvalidInputError):
            predict_delta(m, [1.0, 0.0, 0.0], [0.0, 0.0], 5)

    def test_stepper_matches_predict_delta(self):
        m = random_model(3, K=3)
        w = np.array([1.0, 0.4, -1.2])
        step = m.stepper(w)
        s = np.array([0.1, 0.9])
        for a in (0, 1):
            np.testing.assert_allclose(step(s, a), predict_delta(m, w, s, a)[0], rtol=1e-12)


class TestSimulateStep:
    def test_noiseless(self):
        S = make_support(np.random.default_rng(0).uniform(-1, 1, (4, 2)), noise=1e-300)
        m = make_model(S, np.ones((1, 1, 2), dtype=bool),
                       np.random.default_rng(1).standard_normal((1, 1, 2, 4)))
        s = np.array([0.25, -0.5])
        mean, _ = predict_delta(m, [1.0], s, 0)
        s2 = simulate_step(m, [1.0], s, 0, np.random.default_rng(3))
        np.testing.assert_array_equal(s2, s + mean)

    def test_fixed_seed_repeats(self):
        m = random_model(5)
        w = [1.0, 0.3, 0.1]

        def trajectory(seed):
            rng = np.random.default_rng(seed)
            s, out = np.zeros(2), []
            for t in range(20):
                s = simulate_step(m, w, s, t % 2, rng)
                out.append(s)
            return np.array(out)

        np.testing.assert_array_equal(trajectory(9), trajectory(9))

    def test_monte_carlo_mean(self):
        m = random_model(6, noise=0.05)
        w = np.array([1.0, 0.5, -0.5])
        s = np.array([0.1, 0.2])
        rng = np.random.default_rng(0)
        draws = np.array([simulate_step(m, w, s, 1, rng) for _ in range(10_000)]) - s
        mean, var = predict_delta(m, w, s, 1)
        se = np.sqrt(var / len(draws))
        assert np.all(np.abs(draws.mean(0) - mean) < 3 * se)

    def test_wrapping(self):
        s = wrap_state([3.0 + 0.5, 1.0, -3.0 - 0.5, 2.0], (0, 2))
        assert -np.pi < s[0] <= np.pi and -np.pi < s[2] <= np.pi
        assert s[1] == 1.0 and s[3] == 2.0


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        m = random_model(7, K=3)
        m = LatentDynamicsModel(m.support, m.z, m.f / 3.0, m.mu_mean * np.pi, m.mu_var,
                                m.sigma_w, m.sigma_w0, {"note": "x", "seed": 3})
        path = tmp_path / "m.json"
        save_model(m, path)
        _assert_models_equal(load_model(path), m)

    def test_round_trip_preserves_predictions(self, tmp_path):
        m = random_model(8, K=2)
        path = tmp_path / "m.json"
        save_model(m, path)
        m2 = load_model(path)
        s = np.array([0.3, 0.3])
        np.testing.assert_array_equal(predict_delta(m, [1, 2.0], s, 0)[0],
                                      predict_delta(m2, [1, 2.0], s, 0)[0])

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "m.json"
        save_model(random_model(9), path)
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(ModelFormatError, match="schema violation"):
            load_model(path)

    def _doc(self):
        return model_to_dict(random_model(10, K=2))

    def _load_doc(self, tmp_path, doc):
        path = tmp_path / "m.json"
        path.write_text(json.dumps(doc))
        return load_model(path)

    def test_baseline_filter_off(self, tmp_path):
        doc = self._doc()
        doc["z"][0] = 0
        with pytest.raises(ModelFormatError, match="invariant violation"):
            self._load_doc(tmp_path, doc)

    def test_version_mismatch(self, tmp_path):
        doc = self._doc()
        doc["format_version"] = 99
        with pytest.raises(ModelFormatError, match="format_version"):
            self._load_doc(tmp_path, doc)

    def test_missing_field_named(self, tmp_path):
        doc = self._doc()
        del doc["f"]
        with pytest.raises(ModelFormatError, match="'f'"):
            self._load_doc(tmp_path, doc)

    def test_wrong_length_named(self, tmp_path):
        doc = self._doc()
        doc["support_points"] = doc["support_points"][:-1]
        with pytest.raises(ModelFormatError, match="support_points"):
            self._load_doc(tmp_path, doc)

    def test_non_finite_named(self, tmp_path):
        doc = self._doc()
        path = tmp_path / "m.json"
        text = json.dumps(doc).replace('"sigma_w": 4.0', '"sigma_w": Infinity')
        path.write_text(text)
        with pytest.raises(ModelFormatError, match="sigma_w"):
            load_model(path)

    def test_non_binary_z(self, tmp_path):
        doc = self._doc()
        doc["z"][-1] = 0.5
        with pytest.raises(ModelFormatError, match="'z'"):
            self._load_doc(tmp_path, doc)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelFormatError, match="cannot read"):
            load_model(tmp_path / "nope.json")

    def test_numbers_use_full_precision(self, tmp_path):
        m = random_model(11, K=1)
        path = tmp_path / "m.json"
        save_model(m, path)
        doc = json.loads(path.read_text())
        assert doc["f"] == [float(v) for v in m.f.ravel()]
