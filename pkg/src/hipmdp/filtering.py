"""Closed-form Gaussian filtering of a new instance's latent weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import InstanceBatch, state_delta
from .errors import InvalidInputError, NumericalError
from .model import InstanceWeights, LatentDynamicsModel


@dataclass(frozen=True)
class WeightBelief:
    """Information-form Gaussian over the non-baseline weights w_2..w_K."""

    h: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64).ravel()
        P = np.atleast_2d(np.asarray(self.P, dtype=np.float64)).reshape(len(h), len(h))
        if not (np.isfinite(h).all() and np.isfinite(P).all()):
            raise InvalidInputError("belief entries must be finite")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "P", P)

    @property
    def dim(self):
        return len(self.h)

    @classmethod
    def from_moments(cls, mean, cov):
        cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        P = np.linalg.inv(cov) if cov.size else np.zeros((0, 0))
        return cls(P @ np.asarray(mean, dtype=np.float64), P)

    def moments(self):
        if self.dim == 0:
            return np.zeros(0), np.zeros((0, 0))
        cov = np.linalg.inv(self.P)
        return cov @ self.h, cov


def init_belief(model: LatentDynamicsModel) -> WeightBelief:
    """Prior N(E[mu_k], sigma_w^2 + var(mu_k)) per feature, independent."""
    var = model.sigma_w ** 2 + model.mu_var
    return WeightBelief(model.mu_mean / var, np.diag(1.0 / var))


def interpolate_basis(model: LatentDynamicsModel, s, a):
    """(D, K) matrix of interpolated basis means at ``s``; zero where z = 0."""
    kv = model.kernel_vectors(s, a)                       # (D, m)
    coef = model.interp_coef[model.action_index(a)]       # (D, m, K), already z-masked
    return np.einsum("dm,dmk->dk", kv, coef)


def _design(model, tuples):
    """Stack (F, residual, noise) over tuples; residual has the baseline removed."""
    Fs, rs, vs = [], [], []
    for t in tuples:
        s = model.check_state(t.s)
        s_next = model.check_state(t.s_next)
        ai = model.action_index(t.a)
        F = interpolate_basis(model, s, t.a)
        delta = state_delta(s, s_next, model.wrap_dims)
        Fs.append(F[:, 1:])
        rs.append(delta - F[:, 0])
        vs.append(model.noise_variances[ai])
    return np.vstack(Fs), np.concatenate(rs), np.concatenate(vs)


def filter_update(belief: WeightBelief, model: LatentDynamicsModel, tuples) -> WeightBelief:
    """Add the information carried by ``tuples`` (one call may batch n steps)."""
    if isinstance(tuples, InstanceBatch):
        tuples = tuples.tuples
    tuples = list(tuples)
    if not tuples:
        raise InvalidInputError("filter_update needs at least one tuple")
    if belief.dim != model.K - 1:
        raise InvalidInputError(f"belief dimension {belief.dim} != K-1 = {model.K - 1}")
    if belief.dim == 0:
        return belief
    F, r, v = _design(model, tuples)
    Fw = F / v[:, None]
    return WeightBelief(belief.h + Fw.T @ r, belief.P + Fw.T @ F)


def mean_weights(belief: WeightBelief, instance_id=-1) -> InstanceWeights:
    """Posterior mean weights with the baseline weight 1 prepended."""
    if belief.dim == 0:
        return InstanceWeights(instance_id, np.ones(1))
    try:
        L = np.linalg.cholesky(belief.P)
    except np.linalg.LinAlgError:
        raise NumericalError("belief precision is not positive definite") from None
    mu = np.linalg.solve(L.T, np.linalg.solve(L, belief.h))
    return InstanceWeights(instance_id, np.concatenate([[1.0], mu]))


class OnlineFilter:
    """Incremental filter with a configurable update cadence.

    Tuples are buffered and folded into the belief every ``every`` steps;
    :meth:`flush` forces an update.
    """

    def __init__(self, model: LatentDynamicsModel, every: int = 1, belief=None):
        if every < 1:
            raise InvalidInputError("update cadence must be >= 1")
        self.model = model
        self.every = every
        self.belief = init_belief(model) if belief is None else belief
        self._buffer = []

    def observe(self, t):
        self._buffer.append(t)
        if len(self._buffer) >= self.every:
            self.flush()

    def flush(self):
        if self._buffer:
            self.belief = filter_update(self.belief, self.model, self._buffer)
            self._buffer = []
        return self.belief

    def weights(self):
        return mean_weights(self.belief)
