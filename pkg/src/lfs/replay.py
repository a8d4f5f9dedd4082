"""Experience stores: the RL buffer of transitions and the auxiliary buffer of synthetic pairs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Generic, TypeVar

import numpy as np

from .framekit import Observation, SyntheticPair

DEFAULT_CAPACITY = 40000

T = TypeVar("T")


class InsufficientData(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Transition:
    obs: Observation
    action: np.ndarray
    reward: float
    next_obs: Observation
    done: bool = False

    def __post_init__(self):
        if self.obs.synthetic or self.next_obs.synthetic:
            raise ValueError("transitions hold real observations only")
        if self.next_obs.t != self.obs.t + 1:
            raise ValueError(f"non-consecutive timestamps {self.obs.t} -> {self.next_obs.t}")


class RingBuffer(Generic[T]):
    def __init__(self, item_type: type, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.item_type = item_type
        self.capacity = capacity
        self._items: list[T] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, item: T) -> None:
        if not isinstance(item, self.item_type):
            raise TypeError(f"buffer holds {self.item_type.__name__}, got {type(item).__name__}")
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._cursor] = item
        self._cursor = (self._cursor + 1) % self.capacity

    def sample_batch(self, m: int, rng: np.random.Generator, require_warm: bool = True) -> list[T]:
        """``m`` items drawn uniformly with replacement.

        By default a buffer holding fewer than ``m`` items refuses to sample;
        ``require_warm=False`` only needs one stored item.
        """
        if not self._items:
            raise InsufficientData("buffer is empty")
        if require_warm and len(self._items) < m:
            raise InsufficientData(f"buffer holds {len(self._items)} items but {m} were requested; "
                                   "defer training until the buffer is warm")
        idx = rng.integers(0, len(self._items), size=m)
        return [self._items[i] for i in idx]

    def items(self) -> list[T]:
        """Stored items, oldest first."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._cursor:] + self._items[:self._cursor]


def rl_buffer(capacity: int = DEFAULT_CAPACITY) -> RingBuffer[Transition]:
    return RingBuffer(Transition, capacity)


def aux_buffer(capacity: int = DEFAULT_CAPACITY) -> RingBuffer[SyntheticPair]:
    return RingBuffer(SyntheticPair, capacity)


@dataclass
class TransitionBatch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    synthetic: np.ndarray

    def __len__(self) -> int:
        return len(self.reward)

    @classmethod
    def from_transitions(cls, items: list[Transition]) -> "TransitionBatch":
        return cls(
            obs=np.stack([tr.obs.pixels for tr in items]),
            action=np.stack([np.asarray(tr.action, dtype=np.float64) for tr in items]),
            reward=np.array([tr.reward for tr in items], dtype=np.float64),
            next_obs=np.stack([tr.next_obs.pixels for tr in items]),
            done=np.array([tr.done for tr in items], dtype=np.float64),
            synthetic=np.array([tr.obs.synthetic or tr.next_obs.synthetic for tr in items]),
        )


def stack_pairs(pairs: list[SyntheticPair]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([p.prev.pixels for p in pairs]), np.stack([p.next.pixels for p in pairs])
