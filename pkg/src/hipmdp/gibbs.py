"""Blocked Gibbs sampler for the IBP-GP transition model.

Each prediction row (action a, output d) has its own GP prior over basis
values at the support points.  All per-row computations are carried out in
the eigenbasis of that row's (jittered) support Gram matrix ``K = U diag(lam) U^T``:
rotating the projected differences by ``U^T`` leaves Gaussian densities
unchanged and makes the basis posterior and the f-marginalized likelihoods
separable across eigen-components.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import InvalidInputError, NumericalError
from .gp import ProjectedBatch, SupportSet, kernel_matrix
from .model import LatentDynamicsModel

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GibbsConfig:
    alpha: float = 2.0
    sigma_w: float = 4.0
    sigma_w0: float = 1.0
    iterations: int = 100
    n_w: int = 20
    seed: int = 0
    chains: int = 1
    # Random-walk Metropolis moves on the weights with every basis function
    # marginalized; 0 disables them (pure conditional Gibbs).
    mh_weight_steps: int = 3
    mh_step: float = 0.1
    # How z moves treat the other features' basis functions in the row:
    # "feature" conditions on them (subtracts their current values), "row"
    # integrates them out as well.
    collapse: str = "row"
    # Test switch: drop every likelihood term so the chain samples the prior.
    use_likelihood: bool = True

    def __post_init__(self):
        if not self.alpha >= 0:
            raise InvalidInputError("alpha must be non-negative")
        if not (self.sigma_w > 0 and self.sigma_w0 > 0):
            raise InvalidInputError("sigma_w and sigma_w0 must be positive")
        if self.iterations < 1 or self.n_w < 1 or self.chains < 1:
            raise InvalidInputError("iterations, n_w and chains must be >= 1")
        if self.collapse not in ("row", "feature"):
            raise InvalidInputError("collapse must be 'row' or 'feature'")


def marginal_loglik(R, W, lam, s2):
    """log N(vec R; 0, W W^T (x) diag(lam) + s2 I), rotated coordinates.

    ``R`` is (B, m) residuals in the eigenbasis, ``W`` is (B, k) weights.
    With k = 0 this is the plain white-noise likelihood.
    """
    B, m = R.shape
    if B == 0:
        return 0.0
    total = B * m * (LOG_2PI + math.log(s2)) + float(np.sum(R * R)) / s2
    if W.shape[1]:
        gam, V = np.linalg.eigh(W.T @ W)
        gam = np.maximum(gam, 0.0)
        u = (R.T @ W) @ V                      # (m, k)
        lg = lam[:, None] * gam[None, :]       # (m, k)
        total += float(np.sum(np.log1p(lg / s2)))
        total -= float(np.sum(u * u * lam[:, None] / (s2 + lg))) / s2
    return -0.5 * total


def basis_posterior_rotated(R, W, lam, s2):
    """Posterior of rotated basis values g (k, m) given residuals R = W g + noise.

    Returns ``(mean, V, var)``: for eigen-component j the covariance is
    ``V diag(var[j]) V^T``.
    """
    gam, V = np.linalg.eigh(W.T @ W)
    gam = np.maximum(gam, 0.0)
    var = 1.0 / (gam[None, :] / s2 + 1.0 / lam[:, None])     # (m, k)
    rhs = (R.T @ W) @ V / s2                                  # (m, k)
    mean = V @ (var * rhs).T                                  # (k, m)
    return mean, V, var


def weight_mean_posterior(w, sigma_w, sigma_w0):
    """Conjugate posterior of each feature's weight mean from B weight samples.

    ``w`` is (B, K); the prior is N(0, sigma_w0^2) and each w_bk ~ N(mu_k, sigma_w^2).
    Returns per-feature posterior means (K,) and the shared variance.
    """
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    B = w.shape[0]
    var = 1.0 / (1.0 / sigma_w0 ** 2 + B / sigma_w ** 2)
    return var * w.sum(axis=0) / sigma_w ** 2, var


def log_ibp(Z, alpha):
    """IBP log-probability of a binary matrix (rows x features), up to
    feature-ordering equivalence classes."""
    N, K = Z.shape
    harmonic = sum(1.0 / i for i in range(1, N + 1))
    if K == 0:
        return -alpha * harmonic
    if alpha <= 0:
        return -np.inf
    mk = Z.sum(axis=0)
    _, counts = np.unique(Z.T, axis=0, return_counts=True)
    return float(K * math.log(alpha) - gammaln(counts + 1).sum() - alpha * harmonic
                 + np.sum(gammaln(N - mk + 1) + gammaln(mk) - gammaln(N + 1)))


class _Problem:
    """Data and per-row eigendecompositions shared by all chains."""

    def __init__(self, batches, support: SupportSet):
        if len(batches) < 2:
            raise InvalidInputError("need at least two instances")
        self.support = support
        self.instance_ids = [pb.instance_id for pb in batches]
        A, D, m = len(support.actions), support.dim, support.size
        self.shape = (A, D, m)
        self.B = len(batches)
        self.present = np.array([pb.present for pb in batches], dtype=bool)   # (B, A)
        for pb in batches:
            if pb.delta.shape != self.shape:
                raise InvalidInputError(f"instance {pb.instance_id}: projected shape "
                                        f"{pb.delta.shape} != {self.shape}")
        delta = np.array([pb.delta for pb in batches])                          # (B, A, D, m)
        self.lam = np.zeros((A, D, m))
        self.U = np.zeros((A, D, m, m))
        self.s2 = np.zeros((A, D))
        self.data = np.zeros_like(delta)
        for ai, a in enumerate(support.actions):
            for j in range(D):
                p = support.kernel(a, j)
                Kss = kernel_matrix(support.points, support.points, p)
                Kss[np.diag_indices_from(Kss)] += p.jitter
                lam, U = np.linalg.eigh(Kss)
                if not np.isfinite(lam).all():
                    raise NumericalError(f"eigendecomposition failed for row (a={a}, d={j})")
                self.lam[ai, j] = np.maximum(lam, p.jitter)
                self.U[ai, j] = U
                self.s2[ai, j] = p.noise_variance
                self.data[:, ai, j] = delta[:, ai, j] @ U
        self.rows = [(ai, j) for ai in range(A) for j in range(D)]

    @property
    def n_rows(self):
        return len(self.rows)


@dataclass
class GibbsState:
    """Sampler state; basis values ``g`` are stored in each row's eigenbasis."""

    z: np.ndarray          # (K, A, D) bool
    g: np.ndarray          # (K, A, D, m)
    w: np.ndarray          # (B, K), w[:, 0] == 1
    mu: np.ndarray         # (K,) sampled weight means (entry 0 unused)
    mu_mean: np.ndarray    # (K,) posterior of the weight means
    mu_var: np.ndarray
    joint: float = -np.inf

    @property
    def K(self):
        return self.z.shape[0]

    def copy(self):
        return GibbsState(self.z.copy(), self.g.copy(), self.w.copy(), self.mu.copy(),
                          self.mu_mean.copy(), self.mu_var.copy(), self.joint)


@dataclass
class GibbsDiagnostics:
    chain: int
    k_trace: list = field(default_factory=list)
    loglik_trace: list = field(default_factory=list)
    best_iteration: int = 0
    best_joint: float = -np.inf
    accepted_births: int = 0


class GibbsSampler:
    """One chain of the blocked sampler over (f, w, z, mu)."""

    def __init__(self, problem: _Problem, cfg: GibbsConfig, rng):
        self.pb = problem
        self.cfg = cfg
        self.rng = rng
        A, D, m = problem.shape
        B = problem.B
        self.state = GibbsState(np.ones((1, A, D), dtype=bool), np.zeros((1, A, D, m)),
                                np.ones((B, 1)), np.ones(1), np.zeros(1), np.ones(1))
        for ai, j in problem.rows:
            mean, _, _ = self._basis_moments(ai, j, [0], self._rows_data(ai, j)[1])
            self.state.g[0, ai, j] = mean[0]

    # -- helpers --------------------------------------------------------

    def _rows_data(self, ai, j):
        idx = np.flatnonzero(self.pb.present[:, ai])
        return idx, self.pb.data[idx, ai, j]

    def _residual(self, ai, j, idx, R, exclude=()):
        """Data minus contributions of active features not in ``exclude``."""
        st = self.state
        active = [k for k in range(st.K) if st.z[k, ai, j] and k not in exclude]
        if active:
            R = R - st.w[np.ix_(idx, active)] @ st.g[active, ai, j]
        return R

    def _basis_moments(self, ai, j, feats, R):
        idx = np.flatnonzero(self.pb.present[:, ai])
        W = self.state.w[np.ix_(idx, feats)]
        return basis_posterior_rotated(R, W, self.pb.lam[ai, j], self.pb.s2[ai, j])

    def _draw_basis(self, ai, j, feats, R):
        mean, V, var = self._basis_moments(ai, j, feats, R)
        eps = self.rng.standard_normal(var.shape)
        return mean + V @ (np.sqrt(var) * eps).T

    def _loglik(self, R, W, ai, j):
        if not self.cfg.use_likelihood:
            return 0.0
        return marginal_loglik(R, W, self.pb.lam[ai, j], self.pb.s2[ai, j])

    def _counts_other(self, ai, j):
        z = self.state.z
        return z.reshape(z.shape[0], -1).sum(axis=1) - z[:, ai, j]

    def _delete(self, feats):
        keep = [k for k in range(self.state.K) if k not in set(feats)]
        st = self.state
        st.z, st.g, st.w = st.z[keep], st.g[keep], st.w[:, keep]
        st.mu, st.mu_mean, st.mu_var = st.mu[keep], st.mu_mean[keep], st.mu_var[keep]

    def _append(self, n_new, W_new):
        st = self.state
        A, D, m = self.pb.shape
        st.z = np.concatenate([st.z, np.zeros((n_new, A, D), dtype=bool)])
        st.g = np.concatenate([st.g, np.zeros((n_new, A, D, m))])
        st.w = np.concatenate([st.w, W_new], axis=1)
        st.mu = np.concatenate([st.mu, np.zeros(n_new)])
        st.mu_mean = np.concatenate([st.mu_mean, np.zeros(n_new)])
        st.mu_var = np.concatenate([st.mu_var, np.full(n_new, self.cfg.sigma_w0 ** 2)])

    # -- posterior moments (used by the sampler and by oracle tests) --------

    def basis_posterior(self, ai, j):
        """Mean (k, m) and covariance (k m, k m) of active f_ad in state coordinates."""
        st = self.state
        feats = [k for k in range(st.K) if st.z[k, ai, j]]
        idx, R = self._rows_data(ai, j)
        mean, V, var = self._basis_moments(ai, j, feats, R)
        U = self.pb.U[ai, j]
        k, m = mean.shape
        # cov(g) couples features within each eigen-component j
        cov_g = np.zeros((k, m, k, m))
        for c in range(m):
            cov_g[:, c, :, c] = V @ np.diag(var[c]) @ V.T
        T = np.kron(np.eye(k), U)
        cov = T @ cov_g.reshape(k * m, k * m) @ T.T
        return feats, mean @ U.T, cov

    def weight_posterior(self, b):
        """Mean and covariance of w_b over features k >= 1."""
        st = self.state
        K = st.K
        if K == 1:
            return np.zeros(0), np.zeros((0, 0))
        prec = np.eye(K - 1) / self.cfg.sigma_w ** 2
        rhs = st.mu[1:] / self.cfg.sigma_w ** 2
        for ai, j in self.pb.rows:
            if not self.pb.present[b, ai]:
                continue
            s2 = self.pb.s2[ai, j]
            F = st.g[1:, ai, j] * st.z[1:, ai, j][:, None]        # (K-1, m)
            y = self.pb.data[b, ai, j] - st.g[0, ai, j]
            prec += F @ F.T / s2
            rhs += F @ y / s2
        L = np.linalg.cholesky(prec)
        cov = np.linalg.inv(prec)
        mean = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        return mean, cov

    def _split(self, ai, j, exclude):
        """Residual and marginalized weight columns for a move on ``exclude``.

        In "feature" mode the other active features are subtracted at their
        current values; in "row" mode they stay in the marginal covariance.
        """
        st = self.state
        idx, R = self._rows_data(ai, j)
        if self.cfg.collapse == "feature":
            return idx, self._residual(ai, j, idx, R, exclude), np.zeros((len(idx), 0))
        others = [k for k in range(st.K) if st.z[k, ai, j] and k not in exclude]
        return idx, R, st.w[np.ix_(idx, others)]

    def filter_log_probs(self, k, ai, j):
        """(log p(z=0 | rest), log p(z=1 | rest)) unnormalized, for k >= 1."""
        idx, R, W0 = self._split(ai, j, (k,))
        m_other = self._counts_other(ai, j)[k]
        p1 = m_other / self.pb.n_rows
        l0 = self._loglik(R, W0, ai, j)
        l1 = self._loglik(R, np.hstack([W0, self.state.w[idx, k][:, None]]), ai, j)
        lp0 = math.log1p(-p1) if p1 < 1 else -np.inf
        lp1 = math.log(p1) if p1 > 0 else -np.inf
        return lp0 + l0, lp1 + l1

    # -- Gibbs steps -----------------------------------------------------

    def sample_basis(self, ai, j):
        st = self.state
        feats = [k for k in range(st.K) if st.z[k, ai, j]]
        _, R = self._rows_data(ai, j)
        st.g[feats, ai, j] = self._draw_basis(ai, j, feats, R)

    def sample_weights(self, b):
        st = self.state
        if st.K == 1:
            return
        mean, cov = self.weight_posterior(b)
        L = np.linalg.cholesky(cov + 1e-12 * np.eye(len(mean)) * np.trace(cov) / len(mean))
        st.w[b, 1:] = mean + L @ self.rng.standard_normal(len(mean))

    def sample_filter_existing(self, k, ai, j):
        """Resample z_kad with f_kad marginalized; singletons are left to the birth move."""
        st = self.state
        if self._counts_other(ai, j)[k] == 0:
            return
        lp0, lp1 = self.filter_log_probs(k, ai, j)
        p1 = 1.0 / (1.0 + math.exp(min(lp0 - lp1, 700.0))) if lp1 > -np.inf else 0.0
        new = self.rng.random() < p1
        st.z[k, ai, j] = new
        if self.cfg.collapse == "row":
            st.g[k, ai, j] = 0.0
            self.sample_basis(ai, j)
        elif new:
            idx, R = self._rows_data(ai, j)
            R = self._residual(ai, j, idx, R, exclude=(k,))
            st.g[k, ai, j] = self._draw_basis(ai, j, [k], R)[0]
        else:
            st.g[k, ai, j] = 0.0

    def propose_new_features(self, ai, j):
        """Metropolis-Hastings replacement of the row's singleton features.

        A Poisson(alpha / n_rows) number of fresh features is proposed with
        weights drawn from N(0, sigma_w^2); their likelihood is estimated by
        averaging the f-marginalized likelihood over ``n_w`` weight draws.
        Returns the number of features born.
        """
        cfg, st = self.cfg, self.state
        if cfg.alpha <= 0:
            return 0
        n_new = int(self.rng.poisson(cfg.alpha / self.pb.n_rows))
        others = self._counts_other(ai, j)
        singles = [k for k in range(1, st.K) if st.z[k, ai, j] and others[k] == 0]
        if n_new == 0 and not singles:
            return 0
        idx, R, W0 = self._split(ai, j, singles)
        l_old = self._loglik(R, np.hstack([W0, st.w[np.ix_(idx, singles)]]), ai, j)
        B = self.pb.B
        if n_new:
            draws = cfg.sigma_w * self.rng.standard_normal((cfg.n_w, B, n_new))
            ls = np.array([self._loglik(R, np.hstack([W0, Wd[idx]]), ai, j) for Wd in draws])
            l_new = float(logsumexp(ls) - math.log(cfg.n_w))
        else:
            l_new = self._loglik(R, W0, ai, j)
        if math.log(self.rng.random() + 1e-300) >= l_new - l_old:
            return 0
        self._delete(singles)
        if n_new:
            pick = self.rng.choice(cfg.n_w, p=np.exp(ls - logsumexp(ls)))
            first = st.K
            self._append(n_new, draws[pick])
            feats = list(range(first, first + n_new))
            st.z[feats, ai, j] = True
            if cfg.collapse == "row":
                self.sample_basis(ai, j)
            else:
                st.g[feats, ai, j] = self._draw_basis(ai, j, feats, R)
        elif cfg.collapse == "row":
            self.sample_basis(ai, j)
        return n_new

    def update_weight_means(self):
        cfg, st = self.cfg, self.state
        mean, var = weight_mean_posterior(st.w, cfg.sigma_w, cfg.sigma_w0)
        st.mu_mean = mean
        st.mu_var = np.full(st.K, var)
        st.mu = mean + math.sqrt(var) * self.rng.standard_normal(st.K)
        st.mu[0] = st.mu_mean[0] = 1.0

    def joint_loglik(self):
        """log p(data, w, mu, z) with every basis function marginalized."""
        st, cfg = self.state, self.cfg
        total = 0.0
        if cfg.use_likelihood:
            for ai, j in self.pb.rows:
                idx, R = self._rows_data(ai, j)
                feats = [k for k in range(st.K) if st.z[k, ai, j]]
                total += marginal_loglik(R, st.w[np.ix_(idx, feats)], self.pb.lam[ai, j],
                                         self.pb.s2[ai, j])
        if st.K > 1:
            sw2, s02 = cfg.sigma_w ** 2, cfg.sigma_w0 ** 2
            dev = st.w[:, 1:] - st.mu[None, 1:]
            total += -0.5 * float(np.sum(dev * dev / sw2 + LOG_2PI + math.log(sw2)))
            total += -0.5 * float(np.sum(st.mu[1:] ** 2 / s02 + LOG_2PI + math.log(s02)))
        Z = st.z[1:].reshape(st.K - 1, self.pb.n_rows).T
        total += log_ibp(Z, cfg.alpha)
        return total

    def collapsed_weight_logpost(self, w):
        """log p(data, w | z, mu) with all basis values integrated out."""
        st, cfg = self.state, self.cfg
        total = 0.0
        if cfg.use_likelihood:
            for ai, j in self.pb.rows:
                idx, R = self._rows_data(ai, j)
                feats = [k for k in range(st.K) if st.z[k, ai, j]]
                total += marginal_loglik(R, w[np.ix_(idx, feats)], self.pb.lam[ai, j],
                                         self.pb.s2[ai, j])
        dev = w[:, 1:] - st.mu[None, 1:]
        return total - 0.5 * float(np.sum(dev * dev)) / cfg.sigma_w ** 2

    def mh_weights(self):
        """Metropolis moves on w with f collapsed: per-instance random walks
        and per-feature rescalings.  Returns the number of accepted moves.

        Conditional Gibbs on w given f (and f given w) crawls along the
        scale/rotation ridge of the bilinear model; these moves do not.
        """
        st, cfg = self.state, self.cfg
        if st.K == 1 or cfg.mh_weight_steps == 0:
            return 0
        accepted = 0
        cur = self.collapsed_weight_logpost(st.w)
        step = cfg.mh_step * cfg.sigma_w
        for _ in range(cfg.mh_weight_steps):
            for b in range(self.pb.B):
                prop = st.w.copy()
                prop[b, 1:] += step * self.rng.standard_normal(st.K - 1)
                new = self.collapsed_weight_logpost(prop)
                if math.log(self.rng.random() + 1e-300) < new - cur:
                    st.w, cur = prop, new
                    accepted += 1
            for k in range(1, st.K):
                c = math.exp(cfg.mh_step * self.rng.standard_normal())
                prop = st.w.copy()
                prop[:, k] *= c
                new = self.collapsed_weight_logpost(prop)
                # multiplicative proposal on B coordinates: Jacobian c^B
                if math.log(self.rng.random() + 1e-300) < new - cur + self.pb.B * math.log(c):
                    st.w, cur = prop, new
                    accepted += 1
        return accepted

    def sweep(self):
        births = 0
        self.mh_weights()
        for ai, j in self.pb.rows:
            self.sample_basis(ai, j)
        for b in range(self.pb.B):
            self.sample_weights(b)
        for ai, j in self.pb.rows:
            k = 1
            while k < self.state.K:
                self.sample_filter_existing(k, ai, j)
                if not self.state.z[k].any():
                    self._delete([k])
                    continue
                k += 1
        for ai, j in self.pb.rows:
            births += self.propose_new_features(ai, j)
        self.update_weight_means()
        self.state.joint = self.joint_loglik()
        return births

    # -- output ------------------------------------------------------------

    def to_model(self, state: GibbsState, meta=None) -> LatentDynamicsModel:
        """Model with basis values set to their posterior mean given (z, w)."""
        saved = self.state
        self.state = state.copy()
        try:
            A, D, m = self.pb.shape
            f = np.zeros((state.K, A, D, m))
            for ai, j in self.pb.rows:
                feats, mean, _ = self._posterior_mean_only(ai, j)
                f[feats, ai, j] = mean
        finally:
            self.state = saved
        return LatentDynamicsModel(self.pb.support, state.z, f, state.mu_mean[1:],
                                   state.mu_var[1:], self.cfg.sigma_w, self.cfg.sigma_w0,
                                   meta or {})

    def _posterior_mean_only(self, ai, j):
        st = self.state
        feats = [k for k in range(st.K) if st.z[k, ai, j]]
        _, R = self._rows_data(ai, j)
        mean, _, _ = self._basis_moments(ai, j, feats, R)
        return feats, mean @ self.pb.U[ai, j].T, None


def run_chain(problem: _Problem, cfg: GibbsConfig, chain: int = 0):
    """Run one chain; return (best state, sampler, diagnostics)."""
    rng = np.random.default_rng([cfg.seed, chain])
    sampler = GibbsSampler(problem, cfg, rng)
    sampler.update_weight_means()
    sampler.state.joint = sampler.joint_loglik()
    diag = GibbsDiagnostics(chain)
    best = sampler.state.copy()
    diag.k_trace.append(best.K)
    diag.loglik_trace.append(best.joint)
    diag.best_joint = best.joint
    for it in range(1, cfg.iterations + 1):
        diag.accepted_births += sampler.sweep()
        st = sampler.state
        if not (st.z[0].all() and np.all(st.w[:, 0] == 1.0)):
            raise NumericalError("baseline feature lost during sampling")
        diag.k_trace.append(st.K)
        diag.loglik_trace.append(st.joint)
        if st.joint > best.joint:
            best = st.copy()
            diag.best_iteration, diag.best_joint = it, st.joint
        log.debug("chain %d iteration %d: K=%d joint=%.3f", chain, it, st.K, st.joint)
    return best, sampler, diag


@dataclass
class GibbsResult:
    model: LatentDynamicsModel
    diagnostics: list
    train_weights: dict
    chain_models: list


def run_gibbs(batches, support: SupportSet, cfg: GibbsConfig) -> GibbsResult:
    """Fit z, f and the weight posteriors; the best chain's MAP-like state wins."""
    problem = _Problem(batches, support)
    results = [run_chain(problem, cfg, c) for c in range(cfg.chains)]
    models, diags = [], []
    best_c = max(range(cfg.chains), key=lambda c: results[c][2].best_joint)
    for best, sampler, diag in results:
        weights = {int(i): best.w[b].tolist() for b, i in enumerate(problem.instance_ids)}
        models.append(sampler.to_model(best, {"train_weights": weights}))
        diags.append(diag)
    best_state = results[best_c][0]
    train_weights = {int(i): best_state.w[b].copy() for b, i in enumerate(problem.instance_ids)}
    return GibbsResult(models[best_c], diags, train_weights, models)


def average_model(batches, support: SupportSet, cfg: GibbsConfig | None = None):
    """Pooled K=1 model: the baseline posterior mean with every instance weight fixed at 1."""
    cfg = cfg or GibbsConfig()
    sampler = GibbsSampler(_Problem(batches, support), cfg, np.random.default_rng(cfg.seed))
    sampler.update_weight_means()
    return sampler.to_model(sampler.state, {"kind": "average"})


def write_diagnostics(path, diagnostics, extra=None):
    """Per-iteration CSV: iteration, K, joint_loglik, chain (+ constant extra columns)."""
    extra = extra or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "K", "joint_loglik", "chain", *extra])
        for d in diagnostics:
            for it, (k, ll) in enumerate(zip(d.k_trace, d.loglik_trace)):
                w.writerow([it, k, repr(float(ll)), d.chain, *extra.values()])
