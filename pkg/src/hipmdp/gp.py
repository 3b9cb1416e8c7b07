"""Squared-exponential Gaussian processes, support selection and batch projection."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _core
from .data import InstanceBatch, subsample_indices
from .errors import InvalidInputError, NumericalError

JITTER = 1e-6
VAR_FLOOR = 1e-8
MIN_FIT_POINTS = 10


class HyperparameterFallbackWarning(UserWarning):
    """Too little data to maximize the marginal likelihood; heuristic used."""


@dataclass(frozen=True)
class KernelParams:
    """Anisotropic SE kernel plus observation noise for one (action, output) pair."""

    lengthscales: tuple
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        vals = ls + (self.signal_variance, self.noise_variance)
        if not ls or not all(math.isfinite(v) and v > 0 for v in vals):
            raise InvalidInputError(f"kernel parameters must be finite and positive: {vals}")

    @property
    def dim(self):
        return len(self.lengthscales)

    @property
    def inv_ls2(self):
        return 1.0 / np.square(np.asarray(self.lengthscales))

    @property
    def jitter(self):
        return JITTER * self.signal_variance


@dataclass
class SupportSet:
    """Pseudo-input states plus per-(action, output) kernel parameters."""

    points: np.ndarray
    params: dict
    actions: tuple
    wrap_dims: tuple = ()
    selection_errors: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.actions = tuple(int(a) for a in self.actions)
        self.wrap_dims = tuple(int(j) for j in self.wrap_dims)
        if len(self.points) < 1:
            raise InvalidInputError("support set needs at least one point")
        for a in self.actions:
            for j in range(self.dim):
                if (a, j) not in self.params:
                    raise InvalidInputError(f"missing kernel parameters for (a={a}, d={j})")

    @property
    def size(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]

    def kernel(self, a, j) -> KernelParams:
        return self.params[(a, j)]


@dataclass
class ProjectedBatch:
    """GP-predicted state differences of one instance at every support point.

    ``delta`` has shape (n_actions, dim, n_support); ``present[a]`` is False
    when the instance never took action ``a`` and that slot must be ignored.
    """

    instance_id: int
    delta: np.ndarray
    present: np.ndarray


def _check_dims(x, p):
    if x.shape[-1] != p.dim:
        raise InvalidInputError(f"state dimension {x.shape[-1]} != kernel dimension {p.dim}")


def kernel_eval(x1, x2, p: KernelParams) -> float:
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    _check_dims(x1, p)
    _check_dims(x2, p)
    if x1.shape != x2.shape:
        raise InvalidInputError("state shapes differ")
    return float(_core.se_kernel_vector(x1, x2[None, :], p.inv_ls2, p.signal_variance)[0])


def kernel_matrix(X1, X2, p: KernelParams):
    X1 = np.atleast_2d(np.asarray(X1, dtype=np.float64))
    X2 = np.atleast_2d(np.asarray(X2, dtype=np.float64))
    _check_dims(X1, p)
    _check_dims(X2, p)
    return _core.se_kernel_matrix(X1, X2, p.inv_ls2, p.signal_variance)


def cholesky(A, jitter):
    """Lower Cholesky factor of ``A + jitter*I``; jitter grows tenfold on failure."""
    n = A.shape[0]
    eye = np.eye(n)
    for _ in range(6):
        try:
            return cho_factor(A + jitter * eye, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(f"matrix of size {n} is not positive definite after jitter")


def train_factor(X, p: KernelParams):
    K = kernel_matrix(X, X, p)
    K[np.diag_indices_from(K)] += p.noise_variance
    return cholesky(K, p.jitter)


def gp_predict(train_x, train_y, p: KernelParams, query):
    """Posterior mean and latent-function variance of a zero-mean GP."""
    query = np.atleast_2d(np.asarray(query, dtype=np.float64))
    _check_dims(query, p)
    train_y = np.asarray(train_y, dtype=np.float64).ravel()
    if len(train_y) == 0:
        return np.zeros(len(query)), np.full(len(query), p.signal_variance)
    train_x = np.atleast_2d(np.asarray(train_x, dtype=np.float64))
    if len(train_x) != len(train_y):
        raise InvalidInputError("train_x and train_y differ in length")
    cf = train_factor(train_x, p)
    Ks = kernel_matrix(query, train_x, p)
    mean = Ks @ cho_solve(cf, train_y, check_finite=False)
    v = cho_solve(cf, Ks.T, check_finite=False)
    var = p.signal_variance - np.einsum("ij,ji->i", Ks, v)
    return mean, np.maximum(var, 0.0)


def log_marginal_likelihood(X, y, p: KernelParams):
    cf = train_factor(X, p)
    alpha = cho_solve(cf, y, check_finite=False)
    return float(-0.5 * y @ alpha - np.log(np.diag(cf[0])).sum()
                 - 0.5 * len(y) * math.log(2.0 * math.pi))


def _golden_max(fn, lo, hi, tol=1e-3):
    """Maximize a unimodal scalar function on [lo, hi], endpoints included."""
    if hi - lo <= tol:
        return lo if fn(lo) >= fn(hi) else hi
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - ratio * (b - a)
    d = a + ratio * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - ratio * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + ratio * (b - a)
            fd = fn(d)
    best_x, best_f = (c, fc) if fc >= fd else (d, fd)
    for edge in (lo, hi):
        fe = fn(edge)
        if fe > best_f:
            best_x, best_f = edge, fe
    return best_x


def heuristic_params(X, y, noise_floor=0.0):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    ls = np.maximum(X.std(axis=0), 1e-6) if len(X) > 1 else np.ones(X.shape[1])
    scale = max(float(np.mean(y * y)) if len(y) else 0.0, VAR_FLOOR)
    noise = max(0.1 * scale, VAR_FLOOR, noise_floor * scale)
    return KernelParams(ls, scale, noise)


def fit_kernel(X, y, *, seed=0, max_points=200, sweeps=3, noise_floor=1e-6):
    """Fit SE hyperparameters by coordinate-wise golden-section search on the
    log marginal likelihood, over log-parameters.

    ``noise_floor`` is a lower bound on the noise variance relative to the
    mean square of ``y`` (deterministic simulators otherwise drive it to zero).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) < MIN_FIT_POINTS:
        warnings.warn(f"only {len(y)} points; using heuristic kernel parameters",
                      HyperparameterFallbackWarning, stacklevel=2)
        return heuristic_params(X, y, noise_floor)
    idx = subsample_indices(len(y), max_points, np.random.default_rng(seed))
    X, y = X[idx], y[idx]
    d = X.shape[1]
    init = heuristic_params(X, y, noise_floor)
    scale = init.signal_variance
    theta = np.log(np.r_[init.lengthscales, init.signal_variance, init.noise_variance])
    sd = np.log(np.asarray(init.lengthscales))
    var_hi = math.log(max(100.0 * scale, 10.0 * VAR_FLOOR))
    noise_lo = math.log(max(VAR_FLOOR, noise_floor * scale))
    bounds = [(s - math.log(100.0), s + math.log(100.0)) for s in sd]
    bounds.append((math.log(VAR_FLOOR), var_hi))
    bounds.append((noise_lo, max(var_hi, noise_lo)))
    theta = np.clip(theta, [b[0] for b in bounds], [b[1] for b in bounds])

    def objective(th):
        try:
            p = KernelParams(np.exp(th[:d]), math.exp(th[d]), math.exp(th[d + 1]))
            return log_marginal_likelihood(X, y, p)
        except NumericalError:
            return -np.inf

    for _ in range(sweeps):
        for i in range(d + 2):
            def coord(v, i=i):
                th = theta.copy()
                th[i] = v
                return objective(th)
            theta[i] = _golden_max(coord, *bounds[i])
    return KernelParams(np.exp(theta[:d]), math.exp(theta[d]), math.exp(theta[d + 1]))


def _xy(data, action, dim, wrap_dims):
    if isinstance(data, InstanceBatch):
        batch = data
    else:
        batch = InstanceBatch.from_tuples(-1, list(data))
    mask = batch.actions == action
    return batch.states[mask], batch.deltas(wrap_dims)[mask][:, dim]


def fit_hyperparams(data, action, dim, *, seed=0, max_points=200, wrap_dims=(),
                    noise_floor=1e-6) -> KernelParams:
    """Kernel parameters for predicting ``s'_dim - s_dim`` under ``action``.

    ``data`` is an :class:`InstanceBatch` or a sequence of transition tuples.
    With fewer than ten matching tuples a heuristic is returned and a
    :class:`HyperparameterFallbackWarning` is emitted.
    """
    X, y = _xy(data, action, dim, wrap_dims)
    return fit_kernel(X, y, seed=seed, max_points=max_points, noise_floor=noise_floor)


def fit_all_hyperparams(batch: InstanceBatch, actions, *, seed=0, max_points=200,
                        wrap_dims=(), noise_floor=1e-6):
    return {(a, j): fit_hyperparams(batch, a, j, seed=seed, max_points=max_points,
                                    wrap_dims=wrap_dims, noise_floor=noise_floor)
            for a in actions for j in range(batch.dim)}


def _batch_action_data(batches, actions, wrap_dims, max_points, seed):
    """Per (batch, action): capped (states, deltas) subsample, deterministic in seed."""
    out = []
    for b, batch in enumerate(batches):
        deltas = batch.deltas(wrap_dims)
        rng = np.random.default_rng([seed, b])
        per = {}
        for a in actions:
            rows = np.flatnonzero(batch.actions == a)
            keep = rows[subsample_indices(len(rows), max_points, rng)]
            if len(keep):
                per[a] = (batch.states[keep], deltas[keep])
        out.append(per)
    return out


def greedy_support(batches, m, params, actions, *, wrap_dims=(), max_points=300, seed=0):
    """Greedy minimax-reconstruction support selection.

    Returns ``(points, max_errors)`` where ``max_errors[i]`` is the largest
    absolute reconstruction error over all batches, actions and outputs with
    the first ``i + 1`` points selected.
    """
    actions = tuple(actions)
    data = _batch_action_data(batches, actions, wrap_dims, max_points, seed)
    stacked = [s for per in data for s, _ in per.values()]
    if not stacked:
        raise InvalidInputError("no observed states")
    uniq, inverse = np.unique(np.vstack(stacked), axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    if m < 1 or m > len(uniq):
        raise InvalidInputError(f"support size {m} not in [1, {len(uniq)}] distinct states")
    dim = uniq.shape[1]

    # Per (b, a, j): GP weights of the batch's own data, for projecting onto support.
    entries = []
    offset = 0
    for b, per in enumerate(data):
        for a in actions:
            if a not in per:
                continue
            X, Y = per[a]
            ids = inverse[offset:offset + len(X)]
            offset += len(X)
            for j in range(dim):
                p = params[(a, j)]
                cf = train_factor(X, p)
                entries.append(dict(a=a, j=j, X=X, y=Y[:, j], ids=ids, p=p,
                                    alpha=cho_solve(cf, Y[:, j], check_finite=False)))

    # Seed: largest |delta|, first occurrence wins.
    best, seed_id = -1.0, None
    for e in entries:
        i = int(np.argmax(np.abs(e["y"])))
        if abs(e["y"][i]) > best:
            best, seed_id = abs(e["y"][i]), int(e["ids"][i])
    chosen = [seed_id]
    selected = np.zeros(len(uniq), dtype=bool)
    selected[seed_id] = True
    errors = []
    for e in entries:
        e["proj"] = [float(kernel_matrix(uniq[seed_id], e["X"], e["p"])[0] @ e["alpha"])]
        e["KXS"] = kernel_matrix(e["X"], uniq[seed_id], e["p"])
    while True:
        S = uniq[chosen]
        factors = {}
        worst, worst_id, max_err = -1.0, None, 0.0
        for e in entries:
            key = (e["a"], e["j"])
            if key not in factors:
                Kss = kernel_matrix(S, S, e["p"])
                Kss[np.diag_indices_from(Kss)] += e["p"].noise_variance
                factors[key] = cholesky(Kss, e["p"].jitter)
            coef = cho_solve(factors[key], np.asarray(e["proj"]), check_finite=False)
            err = np.abs(e["y"] - e["KXS"] @ coef)
            max_err = max(max_err, float(err.max()))
            err[selected[e["ids"]]] = -1.0
            i = int(np.argmax(err))
            if err[i] > worst:
                worst, worst_id = float(err[i]), int(e["ids"][i])
        errors.append(max_err)
        if len(chosen) == m:
            break
        chosen.append(worst_id)
        selected[worst_id] = True
        for e in entries:
            e["proj"].append(float(kernel_matrix(uniq[worst_id], e["X"], e["p"])[0] @ e["alpha"]))
            e["KXS"] = np.hstack([e["KXS"], kernel_matrix(e["X"], uniq[worst_id], e["p"])])
    return uniq[chosen], errors


def select_support_points(batches, m, params, actions, *, wrap_dims=(), max_points=300,
                          seed=0) -> SupportSet:
    points, errors = greedy_support(batches, m, params, actions, wrap_dims=wrap_dims,
                                    max_points=max_points, seed=seed)
    return SupportSet(points, dict(params), actions, wrap_dims, selection_errors=errors)


class PooledMean:
    """GP fit to the pooled data of all training instances, used as the prior
    mean when projecting individual batches.

    Away from an instance's own observations its projection then falls back to
    the shared pooled prediction instead of to zero, so instances differ at a
    support point only where their data actually disagree.
    """

    def __init__(self, batches, support: SupportSet, *, max_points=300, seed=0):
        # Same subsamples as project_batch(..., seed=seed, index=i), so the pooled
        # fit passes through every point the per-instance residual fits will see.
        data = [_batch_action_data([b], support.actions, support.wrap_dims, max_points,
                                   seed + i)[0] for i, b in enumerate(batches)]
        self.support = support
        self.fits = {}
        self.at_support = np.zeros((len(support.actions), support.dim, support.size))
        for ai, a in enumerate(support.actions):
            parts = [per[a] for per in data if a in per]
            if not parts:
                continue
            X = np.vstack([x for x, _ in parts])
            Y = np.vstack([y for _, y in parts])
            for j in range(support.dim):
                p = support.kernel(a, j)
                alpha = cho_solve(train_factor(X, p), Y[:, j], check_finite=False)
                self.fits[(a, j)] = (X, alpha)
                self.at_support[ai, j] = kernel_matrix(support.points, X, p) @ alpha

    def predict(self, a, j, X):
        if (a, j) not in self.fits:
            return np.zeros(len(X))
        Xt, alpha = self.fits[(a, j)]
        return kernel_matrix(X, Xt, self.support.kernel(a, j)) @ alpha


def project_batch(batch: InstanceBatch, support: SupportSet, *, max_points=300, seed=0,
                  index=0, prior: PooledMean | None = None) -> ProjectedBatch:
    """GP-predict the batch's state differences at every support point, per (a, d).

    With ``prior`` the batch's residuals about the pooled fit are projected and
    the pooled prediction is added back.
    """
    if len(batch) == 0:
        raise InvalidInputError(f"instance {batch.instance_id}: empty batch")
    n_a = len(support.actions)
    delta = np.zeros((n_a, support.dim, support.size))
    present = np.zeros(n_a, dtype=bool)
    data = _batch_action_data([batch], support.actions, support.wrap_dims, max_points,
                              seed + index)[0]
    for ai, a in enumerate(support.actions):
        if a not in data:
            continue
        X, Y = data[a]
        present[ai] = True
        for j in range(support.dim):
            p = support.kernel(a, j)
            y = Y[:, j]
            if prior is not None:
                y = y - prior.predict(a, j, X)
                delta[ai, j] = prior.at_support[ai, j]
            cf = train_factor(X, p)
            delta[ai, j] += kernel_matrix(support.points, X, p) @ cho_solve(
                cf, y, check_finite=False)
    return ProjectedBatch(batch.instance_id, delta, present)
