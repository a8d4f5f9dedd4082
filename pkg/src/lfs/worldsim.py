"""Procedurally rendered pixel control tasks.

Two tasks are built in:

``speedworld``
    A damped, velocity-capped point mass on a horizontal track with
    half-elastic walls. Reward per tick is ``|v| / v_max``, so only an agent
    that perceives its direction of motion (frame stacking) keeps its speed.
``toyreach``
    A planar two-joint arm that has to put its end effector on a target.

Both are pure: :func:`step` returns a new :class:`EnvState` and rendering only
reads the state.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

TASKS = ("speedworld", "toyreach")
ACTION_DIMS = {"speedworld": 1, "toyreach": 2}

# speedworld dynamics, in pixels and ticks
SPEED_CAP = 1.0
ACCEL = 0.15
DAMPING = 0.05
RESTITUTION = 0.5
AGENT_SIGMA = 0.8

# toyreach geometry
LINK1 = 4.0
LINK2 = 3.0
JOINT_RATE = 0.25
REACH_TOL = 0.75


@dataclass(frozen=True)
class EnvSpec:
    name: str = "speedworld"
    height: int = 16
    width: int = 16
    channels: int = 1
    episode_length: int = 250
    action_repeat: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.name not in TASKS:
            raise ValueError(f"unknown environment {self.name!r}; choose from {TASKS}")
        if self.height < 8 or self.width < 8:
            raise ValueError(f"frame dims must be >= 8, got {self.height}x{self.width}")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.action_repeat < 1:
            raise ValueError("action repeat must be >= 1")
        if self.episode_length % self.action_repeat:
            raise ValueError(f"episode length {self.episode_length} is not a multiple of "
                             f"action repeat {self.action_repeat}")

    @property
    def action_dim(self) -> int:
        return ACTION_DIMS[self.name]

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)


@dataclass(frozen=True)
class EnvState:
    spec: EnvSpec
    # speedworld: (x, v); toyreach: (q1, q2, target_x, target_y)
    physics: tuple[float, ...]
    t: int = 0
    clamped_actions: int = 0
    info: dict = field(default_factory=dict, compare=False)


def track_bounds(spec: EnvSpec) -> tuple[float, float]:
    return 2.0, spec.width - 2.0


def arm_base(spec: EnvSpec) -> tuple[float, float]:
    return spec.width / 2.0, spec.height / 2.0


def reachable_cells(spec: EnvSpec) -> list[tuple[int, int]]:
    """Pixel centres (x, y) that the arm's end effector can touch."""
    bx, by = arm_base(spec)
    lo, hi = abs(LINK1 - LINK2), LINK1 + LINK2
    cells = []
    for y in range(spec.height):
        for x in range(spec.width):
            d = np.hypot(x - bx, y - by)
            if lo <= d <= hi:
                cells.append((x, y))
    return cells


def end_effector(spec: EnvSpec, q1: float, q2: float) -> tuple[float, float]:
    bx, by = arm_base(spec)
    ex = bx + LINK1 * np.cos(q1) + LINK2 * np.cos(q1 + q2)
    ey = by + LINK1 * np.sin(q1) + LINK2 * np.sin(q1 + q2)
    return float(ex), float(ey)


def reset(spec: EnvSpec, seed: int | None = None) -> tuple[EnvState, np.ndarray]:
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    if spec.name == "speedworld":
        lo, hi = track_bounds(spec)
        physics = (float(rng.uniform(lo, hi)), 0.0)
    else:
        cells = reachable_cells(spec)
        tx, ty = cells[int(rng.integers(len(cells)))]
        q1, q2 = rng.uniform(-np.pi, np.pi, size=2)
        physics = (float(q1), float(q2), float(tx), float(ty))
    state = EnvState(spec=spec, physics=physics)
    return state, render(state)


def _speedworld_tick(spec: EnvSpec, physics, a: np.ndarray):
    x, v = physics
    v = (1.0 - DAMPING) * v + ACCEL * float(a[0])
    v = float(np.clip(v, -SPEED_CAP, SPEED_CAP))
    x = x + v
    lo, hi = track_bounds(spec)
    if x < lo:
        x, v = lo + (lo - x) * RESTITUTION, -v * RESTITUTION
    elif x > hi:
        x, v = hi - (x - hi) * RESTITUTION, -v * RESTITUTION
    x = float(np.clip(x, lo, hi))
    return (x, v), abs(v) / SPEED_CAP


def _toyreach_tick(spec: EnvSpec, physics, a: np.ndarray):
    q1, q2, tx, ty = physics
    q1 = float(np.angle(np.exp(1j * (q1 + JOINT_RATE * a[0]))))
    q2 = float(np.angle(np.exp(1j * (q2 + JOINT_RATE * a[1]))))
    ex, ey = end_effector(spec, q1, q2)
    dist = float(np.hypot(ex - tx, ey - ty))
    if dist <= REACH_TOL:
        reward = 1.0
    else:
        reward = -dist / (2.0 * (LINK1 + LINK2))
    return (q1, q2, tx, ty), reward


def step(state: EnvState, action) -> tuple[EnvState, np.ndarray, float, bool]:
    """Advance one simulator tick. Actions outside [-1, 1] are clamped and counted."""
    spec = state.spec
    if state.t >= spec.episode_length:
        raise RuntimeError("episode already finished; call reset()")
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape != (spec.action_dim,):
        raise ValueError(f"{spec.name} expects action of shape ({spec.action_dim},), got {a.shape}")
    clamped = state.clamped_actions
    if np.any(np.abs(a) > 1.0) or not np.all(np.isfinite(a)):
        clamped += 1
        logger.debug("action %s clamped to [-1, 1]", a)
        a = np.clip(np.nan_to_num(a), -1.0, 1.0)
    if spec.name == "speedworld":
        physics, reward = _speedworld_tick(spec, state.physics, a)
    else:
        physics, reward = _toyreach_tick(spec, state.physics, a)
    new = dataclasses.replace(state, physics=physics, t=state.t + 1, clamped_actions=clamped,
                              info={"clamped": clamped != state.clamped_actions})
    return new, render(new), float(reward), new.t == spec.episode_length


def _blob(spec: EnvSpec, cx: float, cy: float, sigma: float) -> np.ndarray:
    ys = np.arange(spec.height, dtype=np.float64)[:, None]
    xs = np.arange(spec.width, dtype=np.float64)[None, :]
    return np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma * sigma))


def render(state: EnvState) -> np.ndarray:
    """H x W x C frame in [0, 1]; pixel (row, col) has its centre at (y, x) = (row, col)."""
    spec = state.spec
    if spec.name == "speedworld":
        x, _ = state.physics
        img = _blob(spec, x, spec.height / 2.0, AGENT_SIGMA)
        lo, hi = track_bounds(spec)
        # faint wall markers so the agent can localise the track ends
        img[:, int(np.floor(lo)) - 1] = np.maximum(img[:, int(np.floor(lo)) - 1], 0.25)
        img[:, int(np.ceil(hi)) + 1] = np.maximum(img[:, int(np.ceil(hi)) + 1], 0.25)
    else:
        q1, q2, tx, ty = state.physics
        bx, by = arm_base(spec)
        ex, ey = end_effector(spec, q1, q2)
        jx, jy = bx + LINK1 * np.cos(q1), by + LINK1 * np.sin(q1)
        img = 0.5 * _blob(spec, tx, ty, 0.7)
        for s in np.linspace(0.0, 1.0, 6):
            img = np.maximum(img, 0.6 * _blob(spec, bx + s * (jx - bx), by + s * (jy - by), 0.5))
            img = np.maximum(img, 0.6 * _blob(spec, jx + s * (ex - jx), jy + s * (ey - jy), 0.5))
        img = np.maximum(img, _blob(spec, ex, ey, 0.7))
    img = np.clip(img, 0.0, 1.0)
    return np.repeat(img[:, :, None], spec.channels, axis=2)


class Env:
    """Stateful convenience wrapper that applies the action repeat.

    ``step`` sums rewards over the repeated ticks and returns the last frame.
    """

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.state: EnvState | None = None

    def reset(self, seed: int | None = None) -> np.ndarray:
        self.state, frame = reset(self.spec, seed)
        return frame

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self.state is None:
            raise RuntimeError("reset() must be called first")
        total = 0.0
        done = False
        frame = None
        for _ in range(self.spec.action_repeat):
            self.state, frame, reward, done = step(self.state, action)
            total += reward
            if done:
                break
        return frame, total, done
