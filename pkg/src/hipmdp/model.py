"""The trained HiP-MDP transition model and its file format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve

from . import _core
from .data import InstanceBatch, TransitionTuple  # noqa: F401  (re-exported)
from .errors import InvalidInputError, ModelFormatError
from .gp import KernelParams, SupportSet, cholesky, kernel_matrix

FORMAT_NAME = "hipmdp-model"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class InstanceWeights:
    """Latent weights of one instance; ``w[0]`` is the fixed baseline weight 1."""

    instance_id: int
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64).ravel()
        if len(w) < 1 or w[0] != 1.0:
            raise InvalidInputError("baseline weight w[0] must equal 1")
        object.__setattr__(self, "w", w)

    @property
    def K(self):
        return len(self.w)


@dataclass(frozen=True, eq=False)
class LatentDynamicsModel:
    """Filter matrix ``z`` (K, A, D), basis values ``f`` (K, A, D, m) at the
    support points, and the posterior over per-feature weight means.

    Feature 0 is the baseline (mean dynamics) and is active everywhere.
    """

    support: SupportSet
    z: np.ndarray
    f: np.ndarray
    mu_mean: np.ndarray
    mu_var: np.ndarray
    sigma_w: float
    sigma_w0: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        z = np.asarray(self.z).astype(bool)
        f = np.asarray(self.f, dtype=np.float64)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "mu_mean", np.asarray(self.mu_mean, dtype=np.float64).ravel())
        object.__setattr__(self, "mu_var", np.asarray(self.mu_var, dtype=np.float64).ravel())
        K, A, D = z.shape
        if K < 1:
            raise InvalidInputError("model needs at least the baseline feature")
        if (A, D) != (len(self.support.actions), self.support.dim):
            raise InvalidInputError(f"z shape {z.shape} does not match support")
        if f.shape != (K, A, D, self.support.size):
            raise InvalidInputError(f"f shape {f.shape} != {(K, A, D, self.support.size)}")
        if not z[0].all():
            raise InvalidInputError("z: baseline feature must be active for every (a, d)")
        if K > 1 and not z[1:].any(axis=(1, 2)).all():
            raise InvalidInputError("z: every feature must be active for some (a, d)")
        if not np.isfinite(f).all():
            raise InvalidInputError("f: basis values must be finite")
        if self.mu_mean.shape != (K - 1,) or self.mu_var.shape != (K - 1,):
            raise InvalidInputError("weight-mean posteriors must have K-1 entries")
        if not (np.isfinite(self.mu_mean).all() and (self.mu_var > 0).all()):
            raise InvalidInputError("weight-mean posteriors must be finite with positive variance")
        if not (self.sigma_w > 0 and self.sigma_w0 > 0):
            raise InvalidInputError("sigma_w and sigma_w0 must be positive")

    @property
    def K(self):
        return self.z.shape[0]

    @property
    def actions(self):
        return self.support.actions

    @property
    def dim(self):
        return self.support.dim

    @property
    def wrap_dims(self):
        return self.support.wrap_dims

    def action_index(self, a):
        try:
            return self.support.actions.index(int(a))
        except ValueError:
            raise InvalidInputError(f"action {a} not in model action set {self.actions}") from None

    @cached_property
    def noise_variances(self):
        """(A, D) observation noise per (action, output)."""
        return np.array([[self.support.kernel(a, j).noise_variance for j in range(self.dim)]
                         for a in self.actions])

    @cached_property
    def _kernel_arrays(self):
        inv_ls2 = np.array([[self.support.kernel(a, j).inv_ls2 for j in range(self.dim)]
                            for a in self.actions])
        sf2 = np.array([[self.support.kernel(a, j).signal_variance for j in range(self.dim)]
                        for a in self.actions])
        return inv_ls2, sf2

    @cached_property
    def interp_coef(self):
        """(A, D, m, K): ``(K_SS + noise I)^-1 f_kad(S)``, masked by ``z``."""
        K, A, D, m = self.f.shape
        out = np.zeros((A, D, m, K))
        for ai, a in enumerate(self.actions):
            for j in range(D):
                p = self.support.kernel(a, j)
                Kss = kernel_matrix(self.support.points, self.support.points, p)
                Kss[np.diag_indices_from(Kss)] += p.noise_variance
                cf = cholesky(Kss, p.jitter)
                out[ai, j] = cho_solve(cf, self.f[:, ai, j, :].T, check_finite=False)
                out[ai, j] *= self.z[:, ai, j][None, :]
        return out

    def kernel_vectors(self, s, a):
        """(D, m) kernel between ``s`` and every support point, per output."""
        ai = self.action_index(a)
        s = self.check_state(s)
        inv_ls2, sf2 = self._kernel_arrays
        return np.stack([_core.se_kernel_vector(s, self.support.points, inv_ls2[ai, j],
                                                sf2[ai, j]) for j in range(self.dim)])

    def check_state(self, s):
        s = np.asarray(s, dtype=np.float64).ravel()
        if s.shape != (self.dim,):
            raise InvalidInputError(f"state has {s.size} components, model expects {self.dim}")
        return s

    def check_weights(self, w):
        if isinstance(w, InstanceWeights):
            w = w.w
        w = np.asarray(w, dtype=np.float64).ravel()
        if w.shape != (self.K,):
            raise InvalidInputError(f"weights have length {w.size}, model has K={self.K}")
        return w

    def combined_coef(self, w):
        """(A, D, m) interpolation coefficients with the weights folded in."""
        return self.interp_coef @ self.check_weights(w)

    def stepper(self, w):
        """Return a fast ``(s, a) -> mean delta`` closure for fixed weights."""
        coef = self.combined_coef(w)
        inv_ls2, sf2 = self._kernel_arrays
        points = self.support.points
        index = {a: i for i, a in enumerate(self.actions)}

        def mean_delta(s, a):
            ai = index[a]
            return _core.interp_outputs(s, points, inv_ls2[ai], sf2[ai], coef[ai])

        return mean_delta

    def with_features(self, keep):
        """Model restricted to the features in ``keep`` (must include 0)."""
        keep = list(keep)
        if not keep or keep[0] != 0:
            raise InvalidInputError("feature subset must start with the baseline")
        rest = [k - 1 for k in keep[1:]]
        return LatentDynamicsModel(self.support, self.z[keep], self.f[keep], self.mu_mean[rest],
                                   self.mu_var[rest], self.sigma_w, self.sigma_w0,
                                   dict(self.meta))


def predict_delta(model: LatentDynamicsModel, w, s, a):
    """Mean and variance of ``s' - s`` under weights ``w``."""
    w = model.check_weights(w)
    s = model.check_state(s)
    ai = model.action_index(a)
    inv_ls2, sf2 = model._kernel_arrays
    mean = _core.interp_outputs(s, model.support.points, inv_ls2[ai], sf2[ai],
                                model.interp_coef[ai] @ w)
    return mean, model.noise_variances[ai].copy()


def wrap_state(s, wrap_dims):
    if wrap_dims:
        s = np.array(s, dtype=np.float64)
        for j in wrap_dims:
            s[j] = _core.wrap_angle(float(s[j]))
    return s


def simulate_step(model: LatentDynamicsModel, w, s, a, rng):
    """Sample a next state from the model."""
    mean, var = predict_delta(model, w, s, a)
    noise = rng.standard_normal(model.dim) * np.sqrt(var)
    return wrap_state(np.asarray(s, dtype=np.float64) + mean + noise, model.wrap_dims)


# --- persistence -----------------------------------------------------------

def _floats(a):
    return [float(v) for v in np.asarray(a, dtype=np.float64).ravel()]


def model_to_dict(model: LatentDynamicsModel) -> dict:
    K, A, D, m = model.f.shape
    return {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "header": {"K": K, "d": D, "n_actions": A, "n_support": m},
        "actions": list(model.actions),
        "wrap_dims": list(model.wrap_dims),
        "support_points": _floats(model.support.points),
        "kernels": [
            {"action": a, "dim": j,
             "lengthscales": list(model.support.kernel(a, j).lengthscales),
             "signal_variance": model.support.kernel(a, j).signal_variance,
             "noise_variance": model.support.kernel(a, j).noise_variance}
            for a in model.actions for j in range(D)
        ],
        "z": [int(v) for v in model.z.ravel()],
        "f": _floats(model.f),
        "weight_means": {"mean": _floats(model.mu_mean), "var": _floats(model.mu_var)},
        "sigma_w": float(model.sigma_w),
        "sigma_w0": float(model.sigma_w0),
        "meta": model.meta,
    }


def save_model(model: LatentDynamicsModel, path):
    text = json.dumps(model_to_dict(model), indent=1, allow_nan=False)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.write("\n")


def _require(doc, key, kind=None):
    if not isinstance(doc, dict) or key not in doc:
        raise ModelFormatError(f"schema violation: missing field '{key}'")
    val = doc[key]
    if kind is not None and not isinstance(val, kind):
        raise ModelFormatError(f"schema violation: field '{key}' has wrong type")
    return val


def _array(doc, key, n, shape=None):
    vals = _require(doc, key, list)
    if len(vals) != n:
        raise ModelFormatError(f"schema violation: field '{key}' has {len(vals)} values, "
                               f"expected {n}")
    try:
        arr = np.array(vals, dtype=np.float64)
    except (TypeError, ValueError):
        raise ModelFormatError(f"schema violation: field '{key}' is not numeric") from None
    if not np.isfinite(arr).all():
        raise ModelFormatError(f"non-finite value in field '{key}'")
    return arr.reshape(shape) if shape is not None else arr


def _number(doc, key):
    v = _require(doc, key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ModelFormatError(f"schema violation: field '{key}' is not a number")
    if not math.isfinite(v):
        raise ModelFormatError(f"non-finite value in field '{key}'")
    return float(v)


def model_from_dict(doc) -> LatentDynamicsModel:
    if _require(doc, "format") != FORMAT_NAME:
        raise ModelFormatError("schema violation: field 'format' is not a hipmdp model")
    version = _require(doc, "format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"format_version {version} unsupported (expected {FORMAT_VERSION})")
    header = _require(doc, "header", dict)
    K, D, A, m = (int(_number(header, k)) for k in ("K", "d", "n_actions", "n_support"))
    actions = _require(doc, "actions", list)
    if len(actions) != A:
        raise ModelFormatError("schema violation: field 'actions' disagrees with header")
    wrap_dims = _require(doc, "wrap_dims", list)
    points = _array(doc, "support_points", m * D, (m, D))
    params = {}
    kernels = _require(doc, "kernels", list)
    if len(kernels) != A * D:
        raise ModelFormatError("schema violation: field 'kernels' has wrong length")
    for entry in kernels:
        key = (int(_number(entry, "action")), int(_number(entry, "dim")))
        ls = _array(entry, "lengthscales", D)
        try:
            params[key] = KernelParams(ls, _number(entry, "signal_variance"),
                                       _number(entry, "noise_variance"))
        except InvalidInputError as exc:
            raise ModelFormatError(f"kernels: {exc}") from None
    z = _array(doc, "z", K * A * D, (K, A, D))
    if not np.isin(z, (0.0, 1.0)).all():
        raise ModelFormatError("schema violation: field 'z' must be binary")
    f = _array(doc, "f", K * A * D * m, (K, A, D, m))
    wm = _require(doc, "weight_means", dict)
    mu_mean = _array(wm, "mean", K - 1)
    mu_var = _array(wm, "var", K - 1)
    try:
        support = SupportSet(points, params, actions, wrap_dims)
        return LatentDynamicsModel(support, z.astype(bool), f, mu_mean, mu_var,
                                   _number(doc, "sigma_w"), _number(doc, "sigma_w0"),
                                   doc.get("meta", {}) or {})
    except InvalidInputError as exc:
        raise ModelFormatError(f"invariant violation: {exc}") from None


def load_model(path) -> LatentDynamicsModel:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"schema violation: {path} is not a complete model file ({exc})") from None
    return model_from_dict(doc)
