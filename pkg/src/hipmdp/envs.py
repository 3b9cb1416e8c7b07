"""Cartpole and acrobot simulators parametrized by hidden physical parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import _core
from .errors import InvalidInputError

CARTPOLE_MASSES = (0.1, 0.15, 0.2, 0.25, 0.3)
CARTPOLE_LENGTHS = (0.4, 0.45, 0.5, 0.55, 0.6)
# Training settings as published, (.3, .4) listed twice.
CARTPOLE_TRAINING = ((0.1, 0.4), (0.3, 0.4), (0.15, 0.45), (0.2, 0.55), (0.25, 0.5),
                     (0.3, 0.4), (0.3, 0.6))
ACROBOT_MASSES = (0.7, 0.9, 1.1, 1.3)
ACROBOT_TRAINING = ((0.7, 0.7), (0.7, 1.3), (0.9, 0.7), (0.9, 1.1), (1.1, 0.9), (1.1, 1.3),
                    (1.3, 0.7), (1.3, 1.3))


@dataclass(frozen=True)
class CartpoleParams:
    m: float = 0.1
    l: float = 0.5
    tau: float = 0.02
    g: float = 9.8
    cart_mass: float = 1.0
    force: float = 10.0

    def __post_init__(self):
        if not all(v > 0 for v in asdict(self).values()):
            raise InvalidInputError(f"cartpole parameters must be positive: {self}")

    @property
    def total_mass(self):
        return self.cart_mass + self.m


@dataclass(frozen=True)
class AcrobotParams:
    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    lc1: float = 0.5
    lc2: float = 0.5
    i1: float = 1.0
    i2: float = 1.0
    torque: float = 1.0
    tau: float = 0.2
    substeps: int = 4
    g: float = 9.8
    max_vel1: float = 4 * math.pi
    max_vel2: float = 9 * math.pi

    def __post_init__(self):
        if min(self.m1, self.m2, self.l1, self.l2) <= 0 or self.substeps < 1:
            raise InvalidInputError(f"acrobot masses and lengths must be positive: {self}")


def cartpole_step(s, a, p: CartpoleParams):
    """One Euler step; action 0 pushes left, 1 pushes right.  Returns (s', r, done).

    The reward is +1 for every step after which the pole is still up.
    """
    force = p.force if a == 1 else -p.force
    s2 = _core.cartpole_step(float(s[0]), float(s[1]), float(s[2]), float(s[3]), force,
                             p.m, p.l, p.tau, p.g, p.cart_mass)
    s2 = np.array(s2)
    done = Cartpole.failed(s2)
    return s2, 0.0 if done else 1.0, done


def acrobot_step(s, a, p: AcrobotParams):
    """Integrate over one control interval; ``a`` in {-1, 0, +1} scales the torque."""
    if a not in (-1, 0, 1):
        raise InvalidInputError(f"acrobot action must be -1, 0 or +1, got {a!r}")
    torque = float(a) * p.torque
    s2 = _core.acrobot_step(float(s[0]), float(s[1]), float(s[2]), float(s[3]), torque,
                            p.m1, p.m2, p.l1, p.lc1, p.lc2, p.i1, p.i2, p.g,
                            p.tau / p.substeps, p.substeps, p.max_vel1, p.max_vel2, True)
    s2 = np.array(s2)
    return s2, -1.0, Acrobot.at_goal(s2, p)


def acrobot_energy(s, p: AcrobotParams):
    """Total mechanical energy (angles measured from hanging down)."""
    th1, dth1, th2, dth2 = (float(v) for v in s)
    w2 = dth1 + dth2
    kin = (0.5 * (p.m1 * p.lc1 ** 2 + p.i1) * dth1 ** 2
           + 0.5 * p.m2 * (p.l1 ** 2 * dth1 ** 2 + p.lc2 ** 2 * w2 ** 2
                           + 2.0 * p.l1 * p.lc2 * dth1 * w2 * math.cos(th2))
           + 0.5 * p.i2 * w2 ** 2)
    pot = -p.g * (p.m1 * p.lc1 * math.cos(th1)
                  + p.m2 * (p.l1 * math.cos(th1) + p.lc2 * math.cos(th1 + th2)))
    return kin + pot


class Cartpole:
    """Pole balancing; state (x, x_dot, theta, theta_dot)."""

    name = "cartpole"
    state_names = ("x", "x_dot", "theta", "theta_dot")
    actions = (0, 1)
    dim = 4
    wrap_dims = ()
    max_steps = 300
    theta_limit = 12 * 2 * math.pi / 360
    x_limit = 2.4
    bounds = (np.array([-2.4, -3.0, -0.21, -3.5]), np.array([2.4, 3.0, 0.21, 3.5]))
    params_cls = CartpoleParams
    param_names = ("m", "l")

    def __init__(self, params: CartpoleParams | None = None):
        self.params = params or CartpoleParams()

    @staticmethod
    def failed(s):
        return bool(abs(s[2]) > Cartpole.theta_limit or abs(s[0]) > Cartpole.x_limit)

    def reset(self, rng):
        return rng.uniform(-0.05, 0.05, size=4)

    def outcome(self, s, a, s_next):
        done = self.failed(s_next)
        return 0.0 if done else 1.0, done

    def project_state(self, s):
        return s

    def step(self, s, a, rng=None):
        return cartpole_step(s, a, self.params)

    def true_params(self):
        return {"m": self.params.m, "l": self.params.l}


class Acrobot:
    """Two-link swing-up; state (theta1, theta1_dot, theta2, theta2_dot)."""

    name = "acrobot"
    state_names = ("theta1", "theta1_dot", "theta2", "theta2_dot")
    actions = (-1, 0, 1)
    dim = 4
    wrap_dims = (0, 2)
    max_steps = 500
    bounds = (np.array([-math.pi, -4 * math.pi, -math.pi, -9 * math.pi]),
              np.array([math.pi, 4 * math.pi, math.pi, 9 * math.pi]))
    params_cls = AcrobotParams
    param_names = ("m1", "m2")

    def __init__(self, params: AcrobotParams | None = None):
        self.params = params or AcrobotParams()

    @staticmethod
    def at_goal(s, p: AcrobotParams | None = None):
        l1 = p.l1 if p else 1.0
        l2 = p.l2 if p else 1.0
        return bool(-l1 * math.cos(s[0]) - l2 * math.cos(s[0] + s[2]) > 1.0)

    def reset(self, rng):
        return rng.uniform(-0.1, 0.1, size=4)

    def outcome(self, s, a, s_next):
        return -1.0, self.at_goal(s_next, self.params)

    def project_state(self, s):
        """Apply the velocity clamps to a state produced outside the simulator."""
        p = self.params
        s = np.array(s, dtype=np.float64)
        s[1] = min(max(s[1], -p.max_vel1), p.max_vel1)
        s[3] = min(max(s[3], -p.max_vel2), p.max_vel2)
        return s

    def step(self, s, a, rng=None):
        return acrobot_step(s, a, self.params)

    def true_params(self):
        return {"m1": self.params.m1, "m2": self.params.m2}


DOMAINS = {"cartpole": Cartpole, "acrobot": Acrobot}


def make_domain(name, setting=None):
    """Domain instance for a (mass, length) or (m1, m2) setting."""
    try:
        cls = DOMAINS[name]
    except KeyError:
        raise InvalidInputError(f"unknown domain {name!r}") from None
    if setting is None:
        return cls()
    return cls(cls.params_cls(**dict(zip(cls.param_names, map(float, setting)))))


def parameter_grid(name):
    if name == "cartpole":
        return [(m, l) for m in CARTPOLE_MASSES for l in CARTPOLE_LENGTHS]
    if name == "acrobot":
        return [(m1, m2) for m1 in ACROBOT_MASSES for m2 in ACROBOT_MASSES]
    raise InvalidInputError(f"unknown domain {name!r}")


def training_settings(name):
    return list(CARTPOLE_TRAINING if name == "cartpole" else ACROBOT_TRAINING)


def sample_instance(name, rng, grid=None):
    """Draw a parameter setting uniformly from ``grid`` (default: the full grid)."""
    grid = list(parameter_grid(name) if grid is None else grid)
    if not grid:
        raise InvalidInputError("empty parameter grid")
    setting = grid[int(rng.integers(len(grid)))]
    return make_domain(name, setting).params
