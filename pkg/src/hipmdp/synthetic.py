"""Planted IBP-GP problems with known structure, for recovery checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .data import InstanceBatch
from .gp import KernelParams, ProjectedBatch, SupportSet, cholesky, kernel_matrix
from .model import LatentDynamicsModel


@dataclass
class PlantedProblem:
    truth: LatentDynamicsModel
    weights: np.ndarray           # (B, K) true instance weights
    batches: list                 # ProjectedBatch per instance
    noise_sd: float


def planted_problem(seed, *, n_instances=8, n_support=30, dim=2, n_actions=2,
                    z_extra=None, noise_sd=0.05, lengthscale=1.0, signal_variance=1.0,
                    weight_sd=1.0, box=2.0):
    """Draw a known model and noisy projected data at its support points.

    ``z_extra`` is a (K-1, A, D) binary pattern for the non-baseline features;
    the default plants two features sharing one row.
    """
    rng = np.random.default_rng(seed)
    if z_extra is None:
        z_extra = np.zeros((2, n_actions, dim), dtype=bool)
        z_extra[0, 0, 0] = z_extra[0, 1, 1] = z_extra[0, 0, 1] = True
        z_extra[1, 1, 0] = z_extra[1, 0, 1] = True
    z_extra = np.asarray(z_extra, dtype=bool)
    K = len(z_extra) + 1
    points = rng.uniform(-box, box, size=(n_support, dim))
    p = KernelParams(np.full(dim, lengthscale), signal_variance, noise_sd ** 2)
    params = {(a, j): p for a in range(n_actions) for j in range(dim)}
    support = SupportSet(points, params, range(n_actions))
    Kss = kernel_matrix(points, points, p)
    L = np.linalg.cholesky(Kss + p.jitter * np.eye(n_support))
    f = np.einsum("ij,kadj->kadi", L, rng.standard_normal((K, n_actions, dim, n_support)))
    z = np.concatenate([np.ones((1, n_actions, dim), dtype=bool), z_extra])
    f = f * z[..., None]
    W = np.concatenate([np.ones((n_instances, 1)),
                        weight_sd * rng.standard_normal((n_instances, K - 1))], axis=1)
    batches = []
    for b in range(n_instances):
        clean = np.einsum("k,kadm->adm", W[b], f)
        noisy = clean + noise_sd * rng.standard_normal(clean.shape)
        batches.append(ProjectedBatch(b, noisy, np.ones(n_actions, dtype=bool)))
    truth = LatentDynamicsModel(support, z, f, np.zeros(K - 1), np.full(K - 1, 1.0),
                                weight_sd, 1.0)
    return PlantedProblem(truth, W, batches, noise_sd)


def sample_transitions(model: LatentDynamicsModel, w, n, rng, box=2.0, instance_id=0):
    """Random states with noisy next states drawn from ``model`` under weights ``w``."""
    from .model import predict_delta

    s = rng.uniform(-box, box, size=(n, model.dim))
    a = rng.integers(0, len(model.actions), size=n)
    s_next = np.empty_like(s)
    for i in range(n):
        mean, var = predict_delta(model, w, s[i], model.actions[a[i]])
        s_next[i] = s[i] + mean + np.sqrt(var) * rng.standard_normal(model.dim)
    return InstanceBatch(instance_id, s, np.asarray(model.actions)[a], s_next, np.zeros(n))


def interp_truth(model, f_values, ai, j, X):
    """GP-mean interpolation of support values, as the model does off-support."""
    p = model.support.kernel(model.actions[ai], j)
    Kss = kernel_matrix(model.support.points, model.support.points, p)
    Kss[np.diag_indices_from(Kss)] += p.noise_variance
    return kernel_matrix(X, model.support.points, p) @ cho_solve(cholesky(Kss, p.jitter), f_values)
