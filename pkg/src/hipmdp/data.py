"""Transition records and per-instance batches."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from ._core import wrap_angle
from .errors import InvalidInputError


class TransitionTuple(NamedTuple):
    s: np.ndarray
    a: int
    s_next: np.ndarray
    r: float


def state_delta(s, s_next, wrap_dims=()):
    """``s_next - s`` with angular dimensions differenced on the circle."""
    delta = np.asarray(s_next, dtype=np.float64) - np.asarray(s, dtype=np.float64)
    for j in wrap_dims:
        if delta.ndim == 1:
            delta[j] = wrap_angle(float(delta[j]))
        else:
            delta[:, j] = np.pi - np.mod(np.pi - delta[:, j], 2.0 * np.pi)
    return delta


@dataclass
class InstanceBatch:
    """All transitions observed in one task instance.

    ``true_params`` holds the simulator parameters for evaluation and is
    never read by inference code.
    """

    instance_id: int
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    true_params: dict | None = None
    episodes: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2:
            self.states = self.states.reshape(len(self.actions), -1)
        self.next_states = np.asarray(self.next_states, dtype=np.float64).reshape(self.states.shape)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if not (len(self.states) == len(self.actions) == len(self.rewards)):
            raise InvalidInputError("states, actions and rewards differ in length")

    @classmethod
    def from_tuples(cls, instance_id, tuples: Sequence[TransitionTuple], true_params=None,
                    dim=None):
        if len(tuples) == 0:
            d = 0 if dim is None else dim
            return cls(instance_id, np.zeros((0, d)), np.zeros(0, dtype=np.int64),
                       np.zeros((0, d)), np.zeros(0), true_params)
        return cls(
            instance_id,
            np.array([t.s for t in tuples], dtype=np.float64),
            np.array([t.a for t in tuples], dtype=np.int64),
            np.array([t.s_next for t in tuples], dtype=np.float64),
            np.array([t.r for t in tuples], dtype=np.float64),
            true_params,
        )

    def __len__(self):
        return len(self.actions)

    @property
    def dim(self):
        return self.states.shape[1]

    @property
    def tuples(self) -> list[TransitionTuple]:
        return [TransitionTuple(self.states[i], int(self.actions[i]), self.next_states[i],
                                float(self.rewards[i])) for i in range(len(self))]

    def deltas(self, wrap_dims=()):
        return state_delta(self.states, self.next_states, wrap_dims)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return InstanceBatch(self.instance_id, self.states[idx], self.actions[idx],
                             self.next_states[idx], self.rewards[idx], self.true_params,
                             None if self.episodes is None else self.episodes[idx])


def subsample_indices(n, cap, rng):
    """Sorted uniform subsample of ``range(n)`` of size ``min(n, cap)``."""
    if cap is None or n <= cap:
        return np.arange(n)
    return np.sort(rng.choice(n, size=cap, replace=False))


TRAJECTORY_FIELDS = ("instance_id", "episode", "t")


def write_trajectories(path, batch: InstanceBatch, state_names: Iterable[str]):
    """Dump a batch as CSV: instance_id, episode, t, state..., action, reward, next state..."""
    names = list(state_names)
    episodes = batch.episodes if batch.episodes is not None else np.zeros(len(batch), dtype=int)
    t = np.zeros(len(batch), dtype=int)
    for i in range(1, len(batch)):
        t[i] = t[i - 1] + 1 if episodes[i] == episodes[i - 1] else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*TRAJECTORY_FIELDS, *names, "action", "reward", *[n + "_next" for n in names]])
        for i in range(len(batch)):
            w.writerow([batch.instance_id, int(episodes[i]), int(t[i]),
                        *[repr(float(v)) for v in batch.states[i]], int(batch.actions[i]),
                        repr(float(batch.rewards[i])),
                        *[repr(float(v)) for v in batch.next_states[i]]])


def read_trajectories(path, true_params=None) -> InstanceBatch:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError(f"{path}: empty trajectory file")
    header, body = rows[0], rows[1:]
    a_col = header.index("action")
    d = a_col - len(TRAJECTORY_FIELDS)
    if len(header) != a_col + 2 + d:
        raise InvalidInputError(f"{path}: malformed trajectory header")
    data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
    iid = int(data[0, 0]) if len(body) else 0
    return InstanceBatch(
        iid,
        data[:, 3:3 + d],
        data[:, a_col].astype(np.int64),
        data[:, a_col + 2:],
        data[:, a_col + 1],
        true_params,
        data[:, 1].astype(np.int64),
    )
