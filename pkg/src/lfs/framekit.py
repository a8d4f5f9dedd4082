"""Frame stacking, frame-mask synthesis and random-shift augmentation.

Observations are H x W x 3C arrays with frames stacked oldest-first along the
channel axis: channels ``[0:C]`` hold F_{t-2}, ``[C:2C]`` F_{t-1} and
``[2C:3C]`` F_t.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

FRAME_STACK = 3
QUEUE_CAPACITY = 5


class QueueCorruption(AssertionError):
    pass


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray
    index: int


@dataclass(frozen=True, eq=False)
class Observation:
    pixels: np.ndarray
    t: int
    synthetic: bool = False

    @property
    def channels_per_frame(self) -> int:
        return self.pixels.shape[-1] // FRAME_STACK

    def frame(self, slot: int) -> np.ndarray:
        """Slot 0 is the oldest stacked frame, slot 2 the newest."""
        c = self.channels_per_frame
        return self.pixels[..., slot * c:(slot + 1) * c]


@dataclass(frozen=True, eq=False)
class SyntheticPair:
    """Frame-masked observation Ô^t_{t-1} (``prev``) and its neighbour Ô^t_t (``next``)."""
    prev: Observation
    next: Observation
    t: int


def stack_frames(f_a: Frame, f_b: Frame, f_c: Frame) -> Observation:
    frames = (f_a, f_b, f_c)
    shapes = {f.pixels.shape for f in frames}
    if len(shapes) != 1:
        raise ValueError(f"frame geometry mismatch: {[f.pixels.shape for f in frames]}")
    pixels = np.concatenate([f.pixels for f in frames], axis=-1)
    consecutive = f_b.index == f_a.index + 1 and f_c.index == f_b.index + 1
    return Observation(pixels=pixels, t=f_c.index, synthetic=not consecutive)


class FrameQueue:
    """The five most recent real observations of one episode (seven frames)."""

    def __init__(self):
        self._items: deque[Observation] = deque(maxlen=QUEUE_CAPACITY)

    def push(self, obs: Observation) -> None:
        if obs.synthetic:
            raise ValueError("only real observations enter the frame queue")
        self._items.append(obs)

    def clear(self) -> None:
        self._items.clear()

    def full(self) -> bool:
        return len(self._items) == QUEUE_CAPACITY

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Observation:
        return self._items[i]

    def __iter__(self):
        return iter(self._items)


def check_overlaps(queue: FrameQueue) -> None:
    """Each entry's newest two frames must equal the next entry's oldest two."""
    for i in range(len(queue) - 1):
        a, b = queue[i], queue[i + 1]
        if not (np.array_equal(a.frame(1), b.frame(0)) and np.array_equal(a.frame(2), b.frame(1))):
            raise QueueCorruption(f"frame queue entries {i} and {i + 1} do not overlap")


def frame_mask(queue: FrameQueue) -> SyntheticPair:
    """Drop F_{t-2} and restack the remaining frames of the queue.

    Returns Ô^t_{t-1} = (F_{t-4}, F_{t-3}, F_{t-1}) and
    Ô^t_t = (F_{t-3}, F_{t-1}, F_t).
    """
    if not queue.full():
        raise ValueError(f"frame queue holds {len(queue)} of {QUEUE_CAPACITY} observations")
    q = queue
    if not np.array_equal(q[0].frame(2), q[2].frame(0)):
        raise QueueCorruption("entry 0 newest frame differs from entry 2 oldest frame")
    if not np.array_equal(q[2].frame(2), q[4].frame(0)):
        raise QueueCorruption("entry 2 newest frame differs from entry 4 oldest frame")
    if not np.array_equal(q[2].frame(2), q[3].frame(1)):
        raise QueueCorruption("entry 2 newest frame differs from entry 3 middle frame")
    check_overlaps(queue)

    f1 = q[2].frame(0)  # F_{t-4}
    f2 = q[2].frame(1)  # F_{t-3}
    f4 = q[4].frame(1)  # F_{t-1}
    f5 = q[4].frame(2)  # F_t
    syn_obs = np.concatenate([f1, f2, f4], axis=-1)
    syn_next_obs = np.concatenate([f2, f4, f5], axis=-1)
    if syn_obs.shape != q[4].pixels.shape:
        raise QueueCorruption(f"synthetic observation shape {syn_obs.shape} != {q[4].pixels.shape}")
    t = q[4].t
    return SyntheticPair(prev=Observation(syn_obs, t - 1, synthetic=True),
                         next=Observation(syn_next_obs, t, synthetic=True), t=t)


def stack_window(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Batched real and synthetic pairs from frame windows.

    ``frames`` has shape (B, 5, H, W, C) holding F_{t-4}..F_t. Returns
    ``(real_prev, real_next, syn_prev, syn_next)``, each (B, H, W, 3C), equal to
    what :func:`stack_frames` and :func:`frame_mask` produce for the same frames.
    """
    f = [frames[:, i] for i in range(5)]  # f[4] is F_t
    real_prev = np.concatenate([f[1], f[2], f[3]], axis=-1)
    real_next = np.concatenate([f[2], f[3], f[4]], axis=-1)
    syn_prev = np.concatenate([f[0], f[1], f[3]], axis=-1)
    syn_next = np.concatenate([f[1], f[3], f[4]], axis=-1)
    return real_prev, real_next, syn_prev, syn_next


def random_shift(obs: np.ndarray, pad: int, rng: np.random.Generator) -> np.ndarray:
    """Replicate-pad by ``pad`` and crop back at a random integer offset.

    Works on a single H x W x C array or a batch (N, H, W, C); each batch item
    gets its own offset, shared by all of its channels.
    """
    single = obs.ndim == 3
    x = obs[None] if single else obs
    n, h, w, _ = x.shape
    if pad < 0 or pad >= min(h, w) / 2:
        raise ValueError(f"random shift pad {pad} must satisfy 0 <= pad < {min(h, w) / 2}")
    if pad == 0:
        return obs.copy()
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)), mode="edge")
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    out = np.empty_like(x)
    for i, (dy, dx) in enumerate(offsets):
        out[i] = padded[i, dy:dy + h, dx:dx + w]
    return out[0] if single else out
