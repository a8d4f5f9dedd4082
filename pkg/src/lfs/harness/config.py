"""Run configuration and its flat ``key = value`` text format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from ..lnc import LncConfig
from ..protossl import BankArch, SslHyper
from ..sac import SacHyper
from ..worldsim import EnvSpec


@dataclass
class TrainConfig:
    # environment
    env: str = "speedworld"
    height: int = 84
    width: int = 84
    channels: int = 3
    episode_length: int = 1000
    action_repeat: int = 2
    # schedule, in environment steps (ticks)
    total_steps: int = 500000
    init_steps: int = 4000
    eval_interval: int = 20000
    eval_episodes: int = 10
    seed: int = 0
    # networks
    conv_channels: int = 32
    conv_layers: int = 4
    latent_dim: int = 128
    ssl_hidden: int = 1024
    prototypes: int = 512
    feature_dim: int = 50
    sac_hidden: int = 1024
    # optimisation
    batch_size: int = 512
    buffer_capacity: int = 40000
    random_shift_pad: int = 4
    lr: float = 1e-4
    tau: float = 0.1
    eta: float = 0.05
    sinkhorn_epsilon: float = 0.05
    sinkhorn_iters: int = 3
    discount: float = 0.99
    actor_update_freq: int = 2
    critic_target_update_freq: int = 2
    critic_target_momentum: float = 0.01
    init_temperature: float = 0.1
    log_std_min: float = -10.0
    log_std_max: float = 2.0
    lnc_k: int = 1
    lnc_c: float = 0.9
    lnc_r: float = 0.1
    # variants
    disable_lnc: bool = False
    disable_fm: bool = False
    # 52 synthetic pairs in a batch of 512, scaled to other batch sizes
    synthetic_fraction: float = 52 / 512
    freeze_encoder: bool = False
    encoder_checkpoint: str = ""
    pretrain_updates: int = 60000
    # critic-value logging on LNC-selected synthetic vs real observations
    value_window_start: int = -1
    value_window_length: int = 1000
    value_samples: int = 10

    def __post_init__(self):
        if self.init_steps >= self.total_steps:
            raise ValueError("init_steps must be smaller than total_steps")
        for name in ("total_steps", "init_steps", "eval_interval"):
            if getattr(self, name) % self.action_repeat:
                raise ValueError(f"{name} must be divisible by action_repeat={self.action_repeat}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        self.env_spec()

    @property
    def agent_steps(self) -> int:
        return self.total_steps // self.action_repeat

    @property
    def init_agent_steps(self) -> int:
        return self.init_steps // self.action_repeat

    @property
    def fixed_synthetic(self) -> int:
        return int(round(self.synthetic_fraction * self.batch_size))

    def env_spec(self, seed: int | None = None) -> EnvSpec:
        return EnvSpec(name=self.env, height=self.height, width=self.width, channels=self.channels,
                       episode_length=self.episode_length, action_repeat=self.action_repeat,
                       seed=self.seed if seed is None else seed)

    def bank_arch(self) -> BankArch:
        return BankArch(obs_shape=(self.height, self.width, 3 * self.channels),
                        conv_channels=(self.conv_channels,) * self.conv_layers,
                        conv_strides=(2,) + (1,) * (self.conv_layers - 1),
                        latent_dim=self.latent_dim, hidden=self.ssl_hidden, n_prototypes=self.prototypes)

    def ssl_hyper(self) -> SslHyper:
        return SslHyper(tau=self.tau, eta=self.eta, epsilon=self.sinkhorn_epsilon,
                        sinkhorn_iters=self.sinkhorn_iters, lr=self.lr)

    def sac_hyper(self) -> SacHyper:
        return SacHyper(discount=self.discount, actor_update_freq=self.actor_update_freq,
                        critic_target_update_freq=self.critic_target_update_freq,
                        critic_tau=self.critic_target_momentum, lr=self.lr, alpha_lr=self.lr,
                        init_temperature=self.init_temperature, log_std_min=self.log_std_min,
                        log_std_max=self.log_std_max, feature_dim=self.feature_dim, hidden=self.sac_hidden)

    def lnc_config(self) -> LncConfig:
        return LncConfig(k=self.lnc_k, c=self.lnc_c, r=self.lnc_r)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in dataclasses.fields(self))


def desk_preset(**overrides) -> TrainConfig:
    """Small-frame configuration sized for a single CPU core."""
    base = dict(height=16, width=16, channels=1, episode_length=250, total_steps=30000, init_steps=2000,
                eval_interval=10000, conv_channels=32, latent_dim=128, ssl_hidden=128, prototypes=32,
                feature_dim=50, sac_hidden=128, batch_size=32, buffer_capacity=40000, random_shift_pad=1,
                lr=1e-4)
    base.update(overrides)
    return TrainConfig(**base)


PRESETS = {"full": TrainConfig, "desk": desk_preset}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(raw: str, kind):
    if kind is bool or kind == "bool":
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return low in ("true", "1", "yes")
    if kind is int or kind == "int":
        return int(raw)
    if kind is float or kind == "float":
        return float(raw)
    return raw


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, ``preset = desk`` picks the base."""
    kinds = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values: dict[str, object] = {}
    preset = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "preset":
            if raw not in PRESETS:
                raise ValueError(f"line {lineno}: unknown preset {raw!r}")
            preset = raw
            continue
        if key not in kinds:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        try:
            values[key] = _parse_value(raw, kinds[key])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key}: {exc}") from None
    if preset is not None:
        return PRESETS[preset](**values)
    if base is not None:
        return base.replace(**values)
    return TrainConfig(**values)


def load_config(path: str | Path) -> TrainConfig:
    return parse_config_text(Path(path).read_text())
