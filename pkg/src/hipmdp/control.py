"""Sarsa(0) with a Fourier-basis value function, and model-based plan-then-act."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .data import TransitionTuple
from .errors import InvalidInputError, NumericalError
from .filtering import OnlineFilter, WeightBelief, init_belief, mean_weights
from .model import LatentDynamicsModel, wrap_state

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e9


class FourierValueFn:
    """Linear action values over the full Fourier cosine basis of a given order.

    One coefficient vector per action, indexed by the multi-indices
    c in {0..order}^d (row-major, last dimension fastest).
    """

    def __init__(self, order, low, high, n_actions):
        low = np.asarray(low, dtype=np.float64).ravel()
        high = np.asarray(high, dtype=np.float64).ravel()
        if order < 0:
            raise InvalidInputError("Fourier order must be >= 0")
        if low.shape != high.shape or not (np.isfinite(low).all() and np.isfinite(high).all()):
            raise InvalidInputError("bounds must be finite and of equal length")
        if not np.all(low < high):
            raise InvalidInputError("each lower bound must be below its upper bound")
        if n_actions < 1:
            raise InvalidInputError("need at least one action")
        self.order = int(order)
        self.low, self.high = low, high
        self.coeffs = np.array(list(itertools.product(range(order + 1), repeat=len(low))),
                               dtype=np.int64).reshape(-1, len(low))
        norms = np.linalg.norm(self.coeffs, axis=1)
        self.rate_scale = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
        self.theta = np.zeros((n_actions, len(self.coeffs)))
        self.n_clipped = 0
        self._span = high - low

    @classmethod
    def for_domain(cls, domain, order):
        low, high = domain.bounds
        return cls(order, low, high, len(domain.actions))

    @property
    def n_features(self):
        return len(self.coeffs)

    def copy(self):
        out = FourierValueFn(self.order, self.low, self.high, len(self.theta))
        out.theta = self.theta.copy()
        out.n_clipped = self.n_clipped
        return out

    def features(self, s):
        s_unit = (np.asarray(s, dtype=np.float64) - self.low) / self._span
        if s_unit.min() < 0.0 or s_unit.max() > 1.0:
            self.n_clipped += 1
            s_unit = np.clip(s_unit, 0.0, 1.0)
        return _core.fourier_features(s_unit, self.coeffs)

    def values(self, phi):
        return self.theta @ phi


def fourier_features(s, fn: FourierValueFn):
    """cos(pi c . s_bar) for every multi-index c; s_bar is s scaled into [0, 1]^d."""
    return fn.features(s)


@dataclass
class SarsaConfig:
    gamma: float = 0.99
    alpha: float = 0.001
    epsilon: float = 0.05
    episodes: int = 30
    max_steps: int = 300

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidInputError("gamma must lie in [0, 1]")
        if self.alpha < 0 or not 0.0 <= self.epsilon <= 1.0:
            raise InvalidInputError("alpha must be >= 0 and epsilon in [0, 1]")
        if self.episodes < 0 or self.max_steps < 1:
            raise InvalidInputError("episodes must be >= 0 and max_steps >= 1")


DEFAULT_ORDER = {"cartpole": 3, "acrobot": 5}


def default_sarsa(domain_name):
    if domain_name == "cartpole":
        return SarsaConfig(gamma=0.99, alpha=0.005, epsilon=0.05, episodes=30, max_steps=300)
    if domain_name == "acrobot":
        return SarsaConfig(gamma=1.0, alpha=0.001, epsilon=0.0, episodes=30, max_steps=500)
    raise InvalidInputError(f"unknown domain {domain_name!r}")


@dataclass
class SarsaResult:
    returns: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    episodes: list = field(default_factory=list)   # list of lists of TransitionTuple


def _select(fn, phi, actions, epsilon, rng):
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(len(actions)))
    q = fn.values(phi)
    best = np.flatnonzero(q == q.max())
    if len(best) == 1:
        return int(best[0])
    return int(best[rng.integers(len(best))])


def sarsa_episode(env, fn: FourierValueFn, cfg: SarsaConfig, rng, observer=None, record=False):
    """Run one episode with on-line Sarsa(0) updates.

    Returns (return, steps, transitions); ``observer`` receives each tuple.
    """
    actions = env.actions
    s = env.reset(rng)
    phi = fn.features(s)
    ai = _select(fn, phi, actions, cfg.epsilon, rng)
    total, steps, log_ = 0.0, 0, []
    learn = cfg.alpha > 0
    for _ in range(cfg.max_steps):
        a = actions[ai]
        s2, r, done = env.step(s, a, rng)
        total += r
        steps += 1
        if record or observer is not None:
            t = TransitionTuple(s, a, s2, r)
            if record:
                log_.append(t)
            if observer is not None:
                observer(t)
        if done:
            if learn:
                fn.theta[ai] += cfg.alpha * (r - fn.theta[ai] @ phi) * fn.rate_scale * phi
            break
        phi2 = fn.features(s2)
        ai2 = _select(fn, phi2, actions, cfg.epsilon, rng)
        if learn:
            td = r + cfg.gamma * (fn.theta[ai2] @ phi2) - fn.theta[ai] @ phi
            fn.theta[ai] += cfg.alpha * td * fn.rate_scale * phi
        s, phi, ai = s2, phi2, ai2
    peak = np.abs(fn.theta).max()
    if not peak <= DIVERGENCE_LIMIT:
        raise NumericalError(f"Sarsa diverged: max |coefficient| = {peak:.3g} after "
                             f"{steps} steps (try a smaller learning rate)")
    return total, steps, log_


def sarsa_run(env, fn: FourierValueFn, cfg: SarsaConfig, rng, *, episodes=None,
              record=False, observer=None) -> SarsaResult:
    """Run ``episodes`` (default ``cfg.episodes``) Sarsa episodes, mutating ``fn``."""
    out = SarsaResult()
    n = cfg.episodes if episodes is None else episodes
    for _ in range(n):
        ret, steps, trans = sarsa_episode(env, fn, cfg, rng, observer, record)
        out.returns.append(ret)
        out.steps.append(steps)
        if record:
            out.episodes.append(trans)
    return out


class ModelEnv:
    """Environment whose transitions are sampled from a learned model."""

    def __init__(self, model: LatentDynamicsModel, weights, domain):
        self.model = model
        self.domain = domain
        self.actions = domain.actions
        self.max_steps = domain.max_steps
        self._mean = model.stepper(weights)
        self._sd = np.sqrt(model.noise_variances)
        self._index = {a: i for i, a in enumerate(model.actions)}
        self._wrap = model.wrap_dims

    def reset(self, rng):
        return self.domain.reset(rng)

    def step(self, s, a, rng):
        noise = self._sd[self._index[a]] * rng.standard_normal(len(s))
        s2 = wrap_state(s + self._mean(s, a) + noise, self._wrap)
        s2 = self.domain.project_state(s2)
        r, done = self.domain.outcome(s, a, s2)
        return s2, r, done


@dataclass
class PlanResult:
    returns: list
    steps: list
    belief: WeightBelief | None
    weights: list                   # point weights used for each real episode


def plan_then_act(model, belief, env, fn: FourierValueFn, cfg: SarsaConfig, rng, *,
                  episodes, planning_episodes=5, initial_planning=50, filter_every=1):
    """Interleave simulated Sarsa on a model with real episodes on ``env``.

    ``model`` is either a :class:`LatentDynamicsModel` (weights filtered from
    real tuples, planning on the point estimate) or a simulator exposing
    ``step`` (planning with the true dynamics, no filtering).
    """
    learned = isinstance(model, LatentDynamicsModel)
    filt = None
    if learned:
        filt = OnlineFilter(model, every=filter_every,
                            belief=init_belief(model) if belief is None else belief)

    def planner():
        if not learned:
            return model
        return ModelEnv(model, mean_weights(filt.belief).w, env)

    sim_cfg = SarsaConfig(cfg.gamma, cfg.alpha, cfg.epsilon, cfg.episodes, env.max_steps)
    sarsa_run(planner(), fn, sim_cfg, rng, episodes=initial_planning)
    out = PlanResult([], [], None, [])
    for ep in range(episodes):
        sim = planner()
        out.weights.append(mean_weights(filt.belief).w.copy() if learned else None)
        sarsa_run(sim, fn, sim_cfg, rng, episodes=planning_episodes)
        ret, steps, _ = sarsa_episode(env, fn, cfg, rng,
                                      observer=filt.observe if learned else None)
        if learned:
            filt.flush()
        out.returns.append(ret)
        out.steps.append(steps)
        log.debug("episode %d: return %.1f in %d steps", ep, ret, steps)
    out.belief = filt.belief if learned else None
    return out
