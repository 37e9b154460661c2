"""Fixed-capacity ring buffer of transitions with uniform sampling.

Snapshot format (little-endian): magic ``FRLB``, u32 version, u64 capacity,
u64 occupancy, u64 write cursor, u32 state_dim, u32 action_dim, then
``occupancy`` row-major records (oldest slot first) of
``state f64[state_dim] | action f64[action_dim] | reward f64 |
next_state f64[state_dim] | terminal u8``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_MAGIC = b"FRLB"
_VERSION = 1


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.write_cursor = 0
        self.occupancy = 0
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity)

    def push(self, t: Transition) -> None:
        s = np.asarray(t.state, dtype=np.float64)
        a = np.asarray(t.action, dtype=np.float64)
        s2 = np.asarray(t.next_state, dtype=np.float64)
        if s.shape != (self.state_dim,) or s2.shape != (self.state_dim,):
            raise ValueError(f"state dim mismatch: {s.shape} vs ({self.state_dim},)")
        if a.shape != (self.action_dim,):
            raise ValueError(f"action dim mismatch: {a.shape} vs ({self.action_dim},)")
        if not np.isfinite(t.reward):
            raise ValueError("reward must be finite")
        i = self.write_cursor
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = float(t.reward)
        self.next_states[i] = s2
        self.terminals[i] = 1.0 if t.terminal else 0.0
        self.write_cursor = (i + 1) % self.capacity
        self.occupancy = min(self.occupancy + 1, self.capacity)

    def get(self, i: int) -> Transition:
        if not 0 <= i < self.occupancy:
            raise IndexError(i)
        return Transition(state=self.states[i].copy(), action=self.actions[i].copy(),
                          reward=float(self.rewards[i]), next_state=self.next_states[i].copy(),
                          terminal=bool(self.terminals[i]))

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n i.i.d. uniform draws (with replacement) over occupied slots."""
        if self.occupancy < 1:
            raise ValueError("cannot sample from an empty buffer")
        if n < 1:
            raise ValueError("n must be >= 1")
        return rng.integers(0, self.occupancy, size=n)

    def sample_batch(self, n: int, rng: np.random.Generator):
        """Batch of (states, actions, rewards, next_states, terminals) arrays."""
        idx = self.sample_indices(n, rng)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.terminals[idx])

    def sample_transitions(self, n: int, rng: np.random.Generator) -> list[Transition]:
        return [self.get(i) for i in self.sample_indices(n, rng)]

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<IQQQII", _VERSION, self.capacity, self.occupancy,
                                self.write_cursor, self.state_dim, self.action_dim))
            for i in range(self.occupancy):
                f.write(self.states[i].astype("<f8").tobytes())
                f.write(self.actions[i].astype("<f8").tobytes())
                f.write(struct.pack("<d", self.rewards[i]))
                f.write(self.next_states[i].astype("<f8").tobytes())
                f.write(struct.pack("<B", int(self.terminals[i])))

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        with open(path, "rb") as f:
            if f.read(4) != _MAGIC:
                raise ValueError("not a replay buffer snapshot")
            version, capacity, occupancy, cursor, sd, ad = struct.unpack("<IQQQII", f.read(36))
            if version != _VERSION:
                raise ValueError(f"unsupported snapshot version {version}")
            buf = cls(capacity, sd, ad)
            buf.occupancy = occupancy
            buf.write_cursor = cursor
            for i in range(occupancy):
                buf.states[i] = np.frombuffer(f.read(8 * sd), dtype="<f8")
                buf.actions[i] = np.frombuffer(f.read(8 * ad), dtype="<f8")
                (buf.rewards[i],) = struct.unpack("<d", f.read(8))
                buf.next_states[i] = np.frombuffer(f.read(8 * sd), dtype="<f8")
                (term,) = struct.unpack("<B", f.read(1))
                buf.terminals[i] = float(term)
        return buf
