"""Episode replay storage with prioritized sampling.

Episodes (not transitions) are the storage unit: gridworld episodes are at
most 100 steps and the lambda-return targets want whole trajectories anyway.
Sampling is proportional to ``priority ** omega`` through a sum tree, with
importance weights ``(1 / (size * P(i))) ** beta`` normalized by the batch
max. ``omega = 0`` degenerates to a plain uniform buffer.

One writer and one reader may call into the buffer from different threads;
all public operations hold an internal lock and are linearizable.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from zipfgrid.errors import ContractViolationError, InvalidArgumentError

PRIORITY_FLOOR = 1e-6


@dataclass
class EpisodeRecord:
    """One full episode; arrays share a common length L <= episode timeout."""

    observations: np.ndarray  # (L, ...) states the agent acted from
    actions: np.ndarray       # (L,)
    rewards: np.ndarray       # (L,)
    terminals: np.ndarray     # (L,) bool, True exactly at the last step
    priority: float = 1.0
    insertion_index: int = -1

    def __post_init__(self):
        n = len(self.actions)
        if not (len(self.observations) == len(self.rewards) == len(self.terminals) == n > 0):
            raise InvalidArgumentError("episode arrays must share a positive length")
        if not self.terminals[-1] or self.terminals[:-1].any():
            raise InvalidArgumentError("episode must terminate exactly at its last step")
        if self.priority < 0:
            raise InvalidArgumentError("priority must be non-negative")

    def __len__(self) -> int:
        return len(self.actions)


class SumTree:
    """Array-backed binary sum tree with O(log n) point update and prefix search."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._tree = np.zeros(2 * capacity, dtype=np.float64)

    def set(self, index: int, value: float) -> None:
        i = index + self.capacity
        self._tree[i] = value
        i >>= 1
        while i >= 1:
            self._tree[i] = self._tree[2 * i] + self._tree[2 * i + 1]
            i >>= 1

    def get(self, index: int) -> float:
        return float(self._tree[index + self.capacity])

    def total(self) -> float:
        return float(self._tree[1])

    def find_prefix(self, mass: float) -> int:
        """Leaf index i with cumsum(0..i-1) <= mass < cumsum(0..i)."""
        i = 1
        while i < self.capacity:
            left = self._tree[2 * i]
            if mass < left:
                i = 2 * i
            else:
                mass -= left
                i = 2 * i + 1
        return i - self.capacity


@dataclass(frozen=True)
class Handle:
    slot: int
    insertion_index: int


class PrioritizedBuffer:
    """Ring of episodes with mixed max/mean TD-error priorities."""

    def __init__(
        self,
        capacity_episodes: int = 1000,
        priority_mix: float = 0.9,
        priority_exponent: float = 1.0,
        is_exponent: float = 0.6,
    ):
        if capacity_episodes < 1:
            raise InvalidArgumentError("capacity must be >= 1")
        self.capacity = capacity_episodes
        self.priority_mix = priority_mix
        self.priority_exponent = priority_exponent
        self.is_exponent = is_exponent
        self._episodes: list[EpisodeRecord | None] = [None] * capacity_episodes
        self._raw_priority = np.zeros(capacity_episodes, dtype=np.float64)
        cap2 = 1
        while cap2 < capacity_episodes:
            cap2 *= 2
        self._tree = SumTree(cap2)
        self._next_slot = 0
        self._size = 0
        self._insertions = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return self._size

    @property
    def total_mass(self) -> float:
        return self._tree.total()

    def insert(self, episode: EpisodeRecord) -> None:
        with self._lock:
            # the ring fills slots 0.._size-1 before wrapping, so occupied
            # slots are always exactly the first _size entries
            priority = float(self._raw_priority[: self._size].max()) if self._size else 1.0
            episode.priority = priority
            episode.insertion_index = self._insertions
            slot = self._next_slot
            self._episodes[slot] = episode
            self._raw_priority[slot] = priority
            self._tree.set(slot, priority ** self.priority_exponent)
            self._next_slot = (slot + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)
            self._insertions += 1

    def sample_batch(
        self, batch_size: int, rng: np.random.Generator
    ) -> tuple[list[EpisodeRecord], np.ndarray, list[Handle]]:
        with self._lock:
            if self._size == 0:
                raise ContractViolationError("cannot sample from an empty buffer")
            total = self._tree.total()
            slots = []
            for _ in range(batch_size):
                u = rng.random() * total
                slot = self._tree.find_prefix(u)
                if self._episodes[slot] is None:  # rounding at the tail
                    slot = next(s for s in range(self.capacity - 1, -1, -1)
                                if self._episodes[s] is not None)
                slots.append(slot)
            probs = np.array(
                [self._tree.get(s) / total for s in slots], dtype=np.float64
            )
            weights = (1.0 / (self._size * probs)) ** self.is_exponent
            weights /= weights.max()
            episodes = [self._episodes[s] for s in slots]
            handles = [Handle(s, self._episodes[s].insertion_index) for s in slots]
            return episodes, weights, handles

    def update_priorities(self, handles: list[Handle], td_magnitudes: list[np.ndarray]) -> None:
        """Replace priorities with ``mix*max|td| + (1-mix)*mean|td|`` (floored).

        Handles whose episode was evicted since sampling are ignored.
        """
        with self._lock:
            for handle, magnitudes in zip(handles, td_magnitudes):
                deltas = np.asarray(magnitudes, dtype=np.float64)
                if (deltas < 0).any():
                    raise InvalidArgumentError("TD-error magnitudes must be non-negative")
                episode = self._episodes[handle.slot]
                if episode is None or episode.insertion_index != handle.insertion_index:
                    continue
                mixed = self.priority_mix * deltas.max() + (1 - self.priority_mix) * deltas.mean()
                priority = max(float(mixed), PRIORITY_FLOOR)
                episode.priority = priority
                self._raw_priority[handle.slot] = priority
                self._tree.set(handle.slot, priority ** self.priority_exponent)

    def rebuild_check(self) -> tuple[float, float]:
        """(tree root, from-scratch sum) for consistency checks."""
        with self._lock:
            total = self._tree.total()
            naive = float(
                sum(
                    self._raw_priority[s] ** self.priority_exponent
                    for s in range(self.capacity)
                    if self._episodes[s] is not None
                )
            )
            return total, naive
