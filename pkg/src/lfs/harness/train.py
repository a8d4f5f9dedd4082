"""End-to-end training loop, evaluation and run checkpoints."""
from __future__ import annotations

import csv
import logging
import time
import traceback
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import numgrad as ng
from ..framekit import FrameQueue, Observation, SyntheticPair, frame_mask, random_shift
from ..lnc import lnc
from ..protossl import NetworkBank, SslLearner, encode, ssl_update_step
from ..replay import Transition, TransitionBatch, aux_buffer, rl_buffer, stack_pairs
from ..sac import SacAgent, SacNets, act, value_stats
from ..worldsim import Env, EnvSpec
from .config import TrainConfig, parse_config_text

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "update", "episode_return", "lfs_loss", "n_selected", "critic_loss", "actor_loss",
                  "alpha", "grad_norm")
VALUE_COLUMNS = ("update", "n_selected", "synthetic_mean", "synthetic_max", "real_mean", "real_max")


class ObservationStacker:
    """Builds real stacked observations from the frames of one episode.

    The first observation repeats the reset frame; later ones always hold the
    three most recent frames, oldest first.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = dtype
        self._frames: deque[np.ndarray] = deque(maxlen=3)
        self.t = 0

    def reset(self, frame: np.ndarray) -> Observation:
        frame = np.asarray(frame, dtype=self.dtype)
        self._frames.clear()
        self._frames.extend([frame] * 3)
        self.t = 0
        return self._current()

    def push(self, frame: np.ndarray) -> Observation:
        self._frames.append(np.asarray(frame, dtype=self.dtype))
        self.t += 1
        return self._current()

    def _current(self) -> Observation:
        return Observation(np.concatenate(list(self._frames), axis=-1), self.t, synthetic=False)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _text_to_array(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def _array_to_text(arr: np.ndarray) -> str:
    return np.asarray(arr).astype(np.uint8).tobytes().decode("utf-8")


def build_bank(config: TrainConfig) -> NetworkBank:
    bank = NetworkBank.create(config.bank_arch(), seed=config.seed)
    if config.encoder_checkpoint:
        arrays = ng.load_checkpoint(config.encoder_checkpoint)
        bank.load_state(arrays, encoder_only=True)
    return bank


def build_nets(config: TrainConfig) -> SacNets:
    return SacNets(config.latent_dim, config.env_spec().action_dim, config.sac_hyper(), seed=config.seed + 7919)


def checkpoint_arrays(config: TrainConfig, bank: NetworkBank, nets: SacNets | None = None,
                      step: int = 0) -> dict[str, np.ndarray]:
    arrays = dict(bank.state())
    if nets is not None:
        arrays.update(nets.state())
    arrays["meta.config"] = _text_to_array(config.to_text())
    arrays["meta.step"] = np.array(float(step))
    return arrays


@dataclass
class LoadedPolicy:
    config: TrainConfig
    bank: NetworkBank
    nets: SacNets | None
    step: int


def load_policy(path: str | Path) -> LoadedPolicy:
    arrays = ng.load_checkpoint(path)
    if "meta.config" not in arrays:
        raise ValueError(f"{path} carries no run configuration")
    config = parse_config_text(_array_to_text(arrays["meta.config"]))
    config = config.replace(encoder_checkpoint="")
    bank = NetworkBank.create(config.bank_arch(), seed=config.seed)
    bank.load_state(arrays)
    nets = None
    if any(k.startswith("sac.") for k in arrays):
        nets = build_nets(config)
        nets.load_state(arrays)
    return LoadedPolicy(config, bank, nets, int(arrays.get("meta.step", np.array(0.0))))


def evaluate(bank: NetworkBank, nets: SacNets, spec: EnvSpec, episodes: int = 10,
             seed: int = 0) -> tuple[float, float, list[float]]:
    """Deterministic-policy returns over ``episodes`` episodes with fixed reset seeds."""
    if bank.arch.obs_shape != (spec.height, spec.width, 3 * spec.channels):
        raise ValueError(f"policy expects observations {bank.arch.obs_shape}, "
                         f"environment renders {(spec.height, spec.width, 3 * spec.channels)}")
    env = Env(spec)
    returns = []
    for ep in range(episodes):
        stacker = ObservationStacker()
        obs = stacker.reset(env.reset(seed=10_000 + seed * 1000 + ep))
        total, done = 0.0, False
        while not done:
            a = act(obs.pixels, nets, bank, mode="deterministic")
            frame, r, done = env.step(a)
            total += r
            obs = stacker.push(frame)
        returns.append(total)
    return float(np.mean(returns)), float(np.std(returns)), returns


def random_policy_returns(spec: EnvSpec, episodes: int, seed: int = 0) -> list[float]:
    rng = np.random.default_rng(seed)
    env = Env(spec)
    out = []
    for ep in range(episodes):
        env.reset(seed=10_000 + seed * 1000 + ep)
        total, done = 0.0, False
        while not done:
            _, r, done = env.step(rng.uniform(-1.0, 1.0, size=spec.action_dim))
            total += r
        out.append(total)
    return out


class _Run:
    """Mutable state of one training run."""

    def __init__(self, config: TrainConfig, out: Path):
        self.config = config
        self.out = out
        seeds = np.random.SeedSequence(config.seed).spawn(3)
        self.env_rng, self.act_rng, self.update_rng = (np.random.default_rng(s) for s in seeds)
        self.spec = config.env_spec()
        self.env = Env(self.spec)
        self.bank = build_bank(config)
        self.nets = build_nets(config)
        self.agent = SacAgent(self.nets, self.bank, self.update_rng)
        self.ssl_active = not config.freeze_encoder
        self.fm_active = self.ssl_active and not config.disable_fm
        self.learner = SslLearner(self.bank, config.ssl_hyper(), config.lnc_config(), self.update_rng,
                                  use_synthetic=self.fm_active,
                                  fixed_synthetic=config.fixed_synthetic if config.disable_lnc else None,
                                  augment_pad=config.random_shift_pad)
        self.rl = rl_buffer(config.buffer_capacity)
        self.aux = aux_buffer(config.buffer_capacity)
        self.queue = FrameQueue()
        self.stacker = ObservationStacker()
        self.updates = 0
        self.transitions = 0
        self.synthetic_pushes = 0

    def start_episode(self) -> Observation:
        frame = self.env.reset(seed=int(self.env_rng.integers(2**31)))
        obs = self.stacker.reset(frame)
        self.queue.clear()
        self.queue.push(obs)
        return obs

    def record(self, obs: Observation, action: np.ndarray, reward: float, next_obs: Observation) -> None:
        # both tasks end only on the time limit, so every stored transition bootstraps
        self.rl.push(Transition(obs, action, reward, next_obs, done=False))
        self.transitions += 1
        self.queue.push(next_obs)
        if self.fm_active and self.queue.full():
            self.aux.push(frame_mask(self.queue))
            self.synthetic_pushes += 1

    def update(self) -> tuple[dict, object, np.ndarray | None]:
        cfg, rng = self.config, self.update_rng
        m = cfg.batch_size
        batch = TransitionBatch.from_transitions(self.rl.sample_batch(m, rng))
        batch.obs = random_shift(batch.obs, cfg.random_shift_pad, rng)
        batch.next_obs = random_shift(batch.next_obs, cfg.random_shift_pad, rng)
        ssl = None
        if self.ssl_active:
            syn_prev = syn_next = None
            if self.fm_active and len(self.aux) >= m:
                syn_prev, syn_next = stack_pairs(self.aux.sample_batch(m, rng))
            ssl = ssl_update_step(self.learner, batch.obs, batch.next_obs, syn_prev, syn_next)
        metrics = self.agent.update(batch)
        self.updates += 1
        return metrics, ssl, batch.obs


def _open_csv(path: Path, columns) -> tuple[object, csv.writer]:
    fh = open(path, "w", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    return fh, writer


def train_end_to_end(config: TrainConfig, out: str | Path) -> Path:
    """Run the full online training loop, writing metrics and checkpoints under ``out``.

    On any error a ``FAILED`` file with the traceback is left in the partially
    written run directory and the error is re-raised.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.to_text())
    for stale in ("FAILED", "DONE"):
        (out / stale).unlink(missing_ok=True)
    files = []
    try:
        metrics_fh, metrics = _open_csv(out / "metrics.csv", METRIC_COLUMNS)
        eval_fh, evals = _open_csv(out / "eval.csv", ("step", "mean_return", "std_return"))
        files = [metrics_fh, eval_fh]
        values = None
        if config.value_window_start >= 0:
            values_fh, values = _open_csv(out / "values.csv", VALUE_COLUMNS)
            files.append(values_fh)
        _loop(config, out, metrics, evals, values)
    except BaseException:
        for fh in files:
            fh.close()
        (out / "FAILED").write_text(traceback.format_exc())
        raise
    for fh in files:
        fh.close()
    (out / "DONE").write_text("")
    return out


def _loop(config: TrainConfig, out: Path, metrics, evals, values) -> None:
    run = _Run(config, out)
    repeat = config.action_repeat
    obs = run.start_episode()
    started = time.time()
    window = range(config.value_window_start, config.value_window_start + config.value_window_length)
    for step in range(config.agent_steps):
        if step < config.init_agent_steps:
            action = run.act_rng.uniform(-1.0, 1.0, size=run.spec.action_dim)
        else:
            action = act(obs.pixels, run.nets, run.bank, mode="stochastic", rng=run.act_rng)
        frame, reward, done = run.env.step(action)
        next_obs = run.stacker.push(frame)
        run.record(obs, action, reward, next_obs)
        obs = next_obs
        if done:
            obs = run.start_episode()

        if step < config.init_agent_steps:
            continue
        sac_metrics, ssl, real_obs = run.update()
        env_steps = (step + 1) * repeat
        eval_return = None
        if env_steps % config.eval_interval == 0 or step == config.agent_steps - 1:
            mean, std, _ = evaluate(run.bank, run.nets, run.spec, config.eval_episodes, seed=config.seed)
            evals.writerow([env_steps, _fmt(mean), _fmt(std)])
            eval_return = mean
            logger.info("step %d eval %.2f +- %.2f (%.0fs)", env_steps, mean, std, time.time() - started)
        metrics.writerow([
            env_steps, run.updates, _fmt(eval_return),
            _fmt(ssl.loss if ssl else float("nan")), ssl.n_selected if ssl else 0,
            _fmt(sac_metrics["critic_loss"]), _fmt(sac_metrics["actor_loss"]), _fmt(sac_metrics["alpha"]),
            _fmt(ssl.grad_norm if ssl else float("nan")),
        ])
        if values is not None and run.updates - 1 in window:
            _log_values(run, values, ssl, real_obs)
    arrays = checkpoint_arrays(config, run.bank, run.nets, config.total_steps)
    arrays["meta.transitions"] = np.array(float(run.transitions))
    arrays["meta.synthetic_pairs"] = np.array(float(run.synthetic_pushes))
    ng.save_checkpoint(out / "final.lfsc", arrays)


def _log_values(run: _Run, values, ssl, real_obs: np.ndarray) -> None:
    cfg = run.config
    rng = np.random.default_rng(run.updates)
    real_mean, real_max = value_stats(real_obs, run.nets, run.bank, cfg.value_samples, rng)
    selected = ssl.selected_prev if ssl is not None else None
    if selected is not None and len(selected):
        syn_mean, syn_max = value_stats(selected, run.nets, run.bank, cfg.value_samples, rng)
        n = len(selected)
    else:
        syn_mean = syn_max = float("nan")
        n = 0
    values.writerow([run.updates, n, _fmt(syn_mean), _fmt(syn_max), _fmt(real_mean), _fmt(real_max)])


def read_metrics(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    for col in rows[0].keys() if rows else METRIC_COLUMNS:
        out[col] = np.array([float(r[col]) if r[col] != "" else np.nan for r in rows])
    return out


def collect_observations(bank: NetworkBank, nets: SacNets, config: TrainConfig, n: int,
                         seed: int = 0) -> tuple[np.ndarray, list[SyntheticPair]]:
    """Real observations and frame-masked pairs gathered by running the stochastic policy."""
    spec = config.env_spec()
    env = Env(spec)
    rng = np.random.default_rng(seed)
    stacker, queue = ObservationStacker(), FrameQueue()
    real, pairs = [], []
    done = True
    while len(real) < n or len(pairs) < n:
        if done:
            obs = stacker.reset(env.reset(seed=int(rng.integers(2**31))))
            queue.clear()
            queue.push(obs)
        a = act(obs.pixels, nets, bank, mode="stochastic", rng=rng)
        frame, _, done = env.step(a)
        obs = stacker.push(frame)
        queue.push(obs)
        real.append(obs.pixels)
        if queue.full():
            pairs.append(frame_mask(queue))
    return np.stack(real[:n]), pairs[:n]


def analyze_values(policy: LoadedPolicy, batches: int = 10, seed: int = 0) -> dict[str, tuple[float, float]]:
    """Critic values of LNC-selected synthetic and real observations under a uniform-random policy."""
    cfg, bank, nets = policy.config, policy.bank, policy.nets
    if nets is None:
        raise ValueError("checkpoint holds no SAC networks")
    m = cfg.batch_size
    real, pairs = collect_observations(bank, nets, cfg, m * batches, seed)
    syn_prev, _ = stack_pairs(pairs)
    rng = np.random.default_rng(seed)
    rows = {"real": [], "synthetic": []}
    for b in range(batches):
        real_b = real[b * m:(b + 1) * m]
        syn_b = syn_prev[b * m:(b + 1) * m]
        selected = lnc(encode(syn_b, bank), encode(real_b, bank), cfg.lnc_config()).selected
        rows["real"].append(value_stats(real_b, nets, bank, cfg.value_samples, rng))
        if selected:
            rows["synthetic"].append(value_stats(syn_b[selected], nets, bank, cfg.value_samples, rng))
    return {k: (float(np.mean([r[0] for r in v])) if v else float("nan"),
                float(np.max([r[1] for r in v])) if v else float("nan")) for k, v in rows.items()}


def summarize_values(path: str | Path) -> dict[str, tuple[float, float]]:
    """Window averages from a run's values.csv, skipping updates with no selected synthetic data."""
    data = read_metrics(path)
    has_syn = data["n_selected"] > 0
    return {"synthetic": (float(np.mean(data["synthetic_mean"][has_syn])),
                          float(np.max(data["synthetic_max"][has_syn]))),
            "real": (float(np.mean(data["real_mean"])), float(np.max(data["real_max"])))}
