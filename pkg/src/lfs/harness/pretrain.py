"""Action-free pre-training of the encoder on recorded frame packs."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .. import numgrad as ng
from ..framekit import QUEUE_CAPACITY, random_shift, stack_window
from ..protossl import NetworkBank, SslLearner, ssl_update_step
from ..worldsim import Env, EnvSpec
from .config import TrainConfig
from .framepack import episodes, read_pack, write_pack
from .train import _fmt, _open_csv, checkpoint_arrays

logger = logging.getLogger(__name__)

# a frame queue holds five observations spanning seven frames
MIN_EPISODE_FRAMES = QUEUE_CAPACITY + 2


def record_random_videos(spec: EnvSpec, n_episodes: int, frames_per_episode: int, seed: int = 0) -> np.ndarray:
    """Uniform-random-policy frames as uint8, one frame per agent step (after the action repeat)."""
    spec = EnvSpec(name=spec.name, height=spec.height, width=spec.width, channels=spec.channels,
                   episode_length=(frames_per_episode - 1) * spec.action_repeat,
                   action_repeat=spec.action_repeat, seed=spec.seed)
    env = Env(spec)
    rng = np.random.default_rng(seed)
    out = np.empty((n_episodes * frames_per_episode, spec.height, spec.width, spec.channels), dtype=np.uint8)
    i = 0
    for _ in range(n_episodes):
        frame = env.reset(seed=int(rng.integers(2**31)))
        done = False
        while True:
            out[i] = np.round(np.clip(frame, 0.0, 1.0) * 255.0)
            i += 1
            if done:
                break
            frame, _, done = env.step(rng.uniform(-1.0, 1.0, size=spec.action_dim))
    assert i == len(out)
    return out


def record_packs(spec: EnvSpec, out_dir: str | Path, n_episodes: int = 320, frames_per_episode: int = 250,
                 seed: int = 0) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{spec.name}.lfsp"
    write_pack(path, record_random_videos(spec, n_episodes, frames_per_episode, seed), frames_per_episode)
    return path


class VideoWindows:
    """Indexable five-frame windows over a set of episodes, never crossing an episode boundary."""

    def __init__(self, episode_list: list[np.ndarray]):
        self.episodes = episode_list
        starts = []
        for e, frames in enumerate(episode_list):
            starts.extend((e, s) for s in range(len(frames) - QUEUE_CAPACITY + 1))
        self.index = np.array(starts, dtype=np.int64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.index)

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        picks = self.index[rng.integers(0, len(self.index), size=m)]
        return np.stack([self.episodes[e][s:s + QUEUE_CAPACITY] for e, s in picks])


def load_video_episodes(pack_paths, expect_shape: tuple[int, int, int] | None = None) -> list[np.ndarray]:
    """All episodes from the given packs as float frames in [0, 1]; short episodes are skipped."""
    out = []
    geometry = expect_shape
    for path in pack_paths:
        frames, episode_length = read_pack(path)
        if geometry is None:
            geometry = frames.shape[1:]
        if frames.shape[1:] != tuple(geometry):
            raise ValueError(f"{path}: frame geometry {frames.shape[1:]} differs from {tuple(geometry)}")
        scale = 255.0 if frames.dtype == np.uint8 else 1.0
        for ep in episodes(frames, episode_length):
            if len(ep) < MIN_EPISODE_FRAMES:
                logger.warning("%s: skipping episode of %d frames (need %d)", path, len(ep), MIN_EPISODE_FRAMES)
                continue
            out.append(ep.astype(np.float32) / np.float32(scale))
    if not out:
        raise ValueError("no usable episodes in the given packs")
    return out


def pretrain_on_videos(config: TrainConfig, pack_paths, out: str | Path,
                       updates: int | None = None) -> Path:
    """Train the encoder on video frames alone and write ``encoder.lfsc`` under ``out``.

    Real pairs are consecutive stacked observations, synthetic pairs come from
    the frame mask; both are drawn from five-frame windows of single episodes.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    updates = config.pretrain_updates if updates is None else updates
    arch = config.bank_arch()
    eps = load_video_episodes(pack_paths, (config.height, config.width, config.channels))
    windows = VideoWindows(eps)
    rng = np.random.default_rng(config.seed)
    bank = NetworkBank.create(arch, seed=config.seed)
    learner = SslLearner(bank, config.ssl_hyper(), config.lnc_config(), rng,
                         use_synthetic=not config.disable_fm,
                         fixed_synthetic=config.fixed_synthetic if config.disable_lnc else None,
                         augment_pad=config.random_shift_pad)
    m, pad = config.batch_size, config.random_shift_pad
    fh, writer = _open_csv(out / "pretrain_metrics.csv", ("update", "lfs_loss", "n_selected", "grad_norm"))
    with fh:
        for u in range(updates):
            real_prev, real_next, _, _ = stack_window(windows.sample(m, rng))
            _, _, syn_prev, syn_next = stack_window(windows.sample(m, rng))
            real_prev = random_shift(real_prev, pad, rng)
            real_next = random_shift(real_next, pad, rng)
            result = ssl_update_step(learner, real_prev, real_next, syn_prev, syn_next)
            writer.writerow([u + 1, _fmt(result.loss), result.n_selected, _fmt(result.grad_norm)])
            if (u + 1) % 1000 == 0:
                logger.info("pretrain update %d loss %.4f", u + 1, result.loss)
    path = out / "encoder.lfsc"
    ng.save_checkpoint(path, checkpoint_arrays(config, bank))
    return path
