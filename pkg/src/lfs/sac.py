"""Soft actor-critic on detached encoder features."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numgrad as ng
from .protossl import NetworkBank, encode
from .replay import TransitionBatch

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SacHyper:
    discount: float = 0.99
    actor_update_freq: int = 2
    critic_target_update_freq: int = 2
    critic_tau: float = 0.01
    lr: float = 1e-4
    alpha_lr: float = 1e-4
    init_temperature: float = 0.1
    log_std_min: float = -10.0
    log_std_max: float = 2.0
    feature_dim: int = 50
    hidden: int = 1024

    def __post_init__(self):
        if self.actor_update_freq < 1 or self.critic_target_update_freq < 1:
            raise ValueError("update frequencies must be >= 1")
        if not 0 < self.discount < 1:
            raise ValueError("discount must lie in (0, 1)")
        if not 0 < self.critic_tau <= 1:
            raise ValueError("critic target momentum must lie in (0, 1]")


def _init_head(graph: ng.ParamGraph, latent_dim: int, feature_dim: int, rng) -> None:
    ng.init_affine(graph, "head", latent_dim, feature_dim, rng)


def _head(p, h) -> ng.Tensor:
    return ng.tanh(ng.layer_norm(ng.affine(ng.as_tensor(h), p["head.w"], p["head.b"])))


def _init_mlp3(graph: ng.ParamGraph, prefix: str, d_in: int, hidden: int, d_out: int, rng) -> None:
    ng.init_affine(graph, f"{prefix}.l0", d_in, hidden, rng, gain=math.sqrt(2.0))
    ng.init_affine(graph, f"{prefix}.l1", hidden, hidden, rng, gain=math.sqrt(2.0))
    ng.init_affine(graph, f"{prefix}.l2", hidden, d_out, rng)


def _mlp3(p, prefix: str, x: ng.Tensor) -> ng.Tensor:
    x = ng.relu(ng.affine(x, p[f"{prefix}.l0.w"], p[f"{prefix}.l0.b"]))
    x = ng.relu(ng.affine(x, p[f"{prefix}.l1.w"], p[f"{prefix}.l1.b"]))
    return ng.affine(x, p[f"{prefix}.l2.w"], p[f"{prefix}.l2.b"])


class _Frozen:
    """Read-only view of a graph whose tensors carry no gradient."""

    def __init__(self, graph: ng.ParamGraph):
        self._graph = graph

    def __getitem__(self, name: str) -> ng.Tensor:
        return ng.Tensor(self._graph[name].data)


class SacNets:
    def __init__(self, latent_dim: int, action_dim: int, hyper: SacHyper, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.latent_dim = latent_dim
        self.action_dim = action_dim
        self.hyper = hyper
        self.critic = ng.ParamGraph()
        _init_head(self.critic, latent_dim, hyper.feature_dim, rng)
        _init_mlp3(self.critic, "q1", hyper.feature_dim + action_dim, hyper.hidden, 1, rng)
        _init_mlp3(self.critic, "q2", hyper.feature_dim + action_dim, hyper.hidden, 1, rng)
        self.critic_target = self.critic.copy()
        for t in self.critic_target.params.values():
            t.requires_grad = False
        self.actor = ng.ParamGraph()
        _init_head(self.actor, latent_dim, hyper.feature_dim, rng)
        _init_mlp3(self.actor, "pi", hyper.feature_dim, hyper.hidden, 2 * action_dim, rng)
        self.alpha = ng.ParamGraph({"log_alpha": np.array(math.log(hyper.init_temperature))})

    @property
    def temperature(self) -> float:
        return float(np.exp(self.alpha["log_alpha"].data))

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, g in (("critic", self.critic), ("critic_target", self.critic_target),
                          ("actor", self.actor), ("alpha", self.alpha)):
            out.update({f"sac.{prefix}.{n}": v for n, v in g.state().items()})
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for prefix, g in (("critic", self.critic), ("critic_target", self.critic_target),
                          ("actor", self.actor), ("alpha", self.alpha)):
            key = f"sac.{prefix}."
            g.load_state({k[len(key):]: v for k, v in arrays.items() if k.startswith(key)})


def q_values(params, h, action) -> tuple[ng.Tensor, ng.Tensor]:
    x = ng.concat([_head(params, h), ng.as_tensor(action)], axis=1)
    return _mlp3(params, "q1", x), _mlp3(params, "q2", x)


def policy_params(nets: SacNets, params, h) -> tuple[ng.Tensor, ng.Tensor]:
    """Gaussian mean and log-stddev, the latter squashed into the configured bounds."""
    out = _mlp3(params, "pi", _head(params, h))
    a = nets.action_dim
    mu = out[:, :a]
    lo, hi = nets.hyper.log_std_min, nets.hyper.log_std_max
    log_std = ng.add(lo, ng.mul(ng.add(ng.tanh(out[:, a:]), 1.0), 0.5 * (hi - lo)))
    return mu, log_std


def sample_action(nets: SacNets, params, h, rng: np.random.Generator) -> tuple[ng.Tensor, ng.Tensor]:
    """Reparameterised tanh-Gaussian sample and its log-probability (per row)."""
    mu, log_std = policy_params(nets, params, h)
    eps = rng.standard_normal(mu.shape)
    pre = ng.add(mu, ng.mul(ng.exp(log_std), eps))
    action = ng.tanh(pre)
    gauss = ng.sub(ng.mul(log_std, -1.0), 0.5 * (eps * eps + LOG_2PI))
    squash = ng.log(ng.add(ng.mul(ng.square(action), -1.0), 1.0 + 1e-6))
    log_prob = ng.tsum(ng.sub(gauss, squash), axis=1)
    return action, log_prob


def act(obs, nets: SacNets, bank: NetworkBank, mode: str = "stochastic",
        rng: np.random.Generator | None = None) -> np.ndarray:
    obs = np.asarray(obs)
    single = obs.ndim == 3
    h = encode(obs[None] if single else obs, bank)
    with ng.no_grad():
        if mode == "deterministic":
            mu, _ = policy_params(nets, nets.actor, h)
            a = np.tanh(mu.data)
        elif mode == "stochastic":
            if rng is None:
                raise ValueError("stochastic mode needs an rng")
            a = sample_action(nets, nets.actor, h, rng)[0].data
        else:
            raise ValueError(f"unknown mode {mode!r}")
    return a[0] if single else a


def _guard(batch: TransitionBatch) -> None:
    if np.any(batch.synthetic):
        raise ValueError("SAC updates accept real transitions only; batch contains synthetic observations")


class SacAgent:
    """Twin-critic SAC with its own optimizers and update counter."""

    def __init__(self, nets: SacNets, bank: NetworkBank, rng: np.random.Generator):
        self.nets = nets
        self.bank = bank
        self.rng = rng
        hyper = nets.hyper
        self.critic_opt = ng.Adam(nets.critic, lr=hyper.lr)
        self.actor_opt = ng.Adam(nets.actor, lr=hyper.lr)
        self.alpha_opt = ng.Adam(nets.alpha, lr=hyper.alpha_lr, betas=(0.5, 0.999))
        self.updates = 0

    @property
    def target_entropy(self) -> float:
        return -float(self.nets.action_dim)

    def bellman_target(self, batch: TransitionBatch, h_next: np.ndarray) -> np.ndarray:
        """r + discount * (1 - done) * (min target critic - alpha * log pi) at a freshly sampled next action."""
        nets = self.nets
        with ng.no_grad():
            a_next, logp_next = sample_action(nets, nets.actor, h_next, self.rng)
            tq1, tq2 = q_values(nets.critic_target, h_next, a_next.data)
            soft_v = np.minimum(tq1.data[:, 0], tq2.data[:, 0]) - nets.temperature * logp_next.data
        return batch.reward + nets.hyper.discount * (1.0 - batch.done) * soft_v

    def critic_update(self, batch: TransitionBatch, features=None) -> float:
        _guard(batch)
        nets = self.nets
        h, h_next = features if features is not None else (encode(batch.obs, self.bank),
                                                             encode(batch.next_obs, self.bank))
        y = self.bellman_target(batch, h_next)

        def loss_fn(p):
            q1, q2 = q_values(p, h, batch.action)
            d1 = ng.sub(ng.reshape(q1, (-1,)), y)
            d2 = ng.sub(ng.reshape(q2, (-1,)), y)
            return ng.add(ng.mean(ng.square(d1)), ng.mean(ng.square(d2)))

        loss, grads = ng.eval_with_gradients(nets.critic, loss_fn)
        self.critic_opt.step(grads)
        return loss

    def actor_alpha_update(self, batch: TransitionBatch, features=None, critic_fn=None) -> tuple[float, float]:
        """Actor step against the frozen twin critics, then one temperature step.

        ``critic_fn(h, action)`` may replace the learned critics; it must return
        two (B, 1) tensors.
        """
        _guard(batch)
        nets = self.nets
        h = features if features is not None else encode(batch.obs, self.bank)
        if critic_fn is None:
            frozen = _Frozen(nets.critic)

            def critic_fn(h_, a_):
                return q_values(frozen, h_, a_)

        alpha = nets.temperature
        saved = {}

        def actor_loss(p):
            action, logp = sample_action(nets, p, h, self.rng)
            q1, q2 = critic_fn(h, action)
            q = ng.reshape(ng.minimum(q1, q2), (-1,))
            saved["logp"] = logp.data.copy()
            return ng.mean(ng.sub(ng.mul(logp, alpha), q))

        loss, grads = ng.eval_with_gradients(nets.actor, actor_loss)
        self.actor_opt.step(grads)
        return loss, self.alpha_step(saved["logp"])

    def alpha_step(self, log_probs: np.ndarray) -> float:
        """Move log(alpha) so the policy entropy approaches the target entropy."""
        gap = -np.asarray(log_probs) - self.target_entropy

        def alpha_loss(p):
            return ng.mean(ng.mul(ng.exp(p["log_alpha"]), gap))

        _, grads = ng.eval_with_gradients(self.nets.alpha, alpha_loss)
        self.alpha_opt.step(grads)
        return self.nets.temperature

    def soft_update_targets(self) -> None:
        tau = self.nets.hyper.critic_tau
        for name, t in self.nets.critic_target.items():
            t.data = (1.0 - tau) * t.data + tau * self.nets.critic[name].data

    def update(self, batch: TransitionBatch) -> dict[str, float]:
        """Critic step every call, actor/alpha and target EMA at their configured frequencies."""
        hyper = self.nets.hyper
        h = encode(batch.obs, self.bank)
        h_next = encode(batch.next_obs, self.bank)
        metrics = {"critic_loss": self.critic_update(batch, (h, h_next)), "actor_loss": float("nan"),
                   "alpha": self.nets.temperature}
        if self.updates % hyper.actor_update_freq == 0:
            metrics["actor_loss"], metrics["alpha"] = self.actor_alpha_update(batch, h)
        if self.updates % hyper.critic_target_update_freq == 0:
            self.soft_update_targets()
        self.updates += 1
        return metrics


def value_stats(observations, nets: SacNets, bank: NetworkBank, samples: int,
                rng: np.random.Generator) -> tuple[float, float]:
    """Batch mean and max of per-observation values under a uniform-random policy.

    Each observation's value is its min-critic value averaged over the same
    ``samples`` uniformly drawn actions.
    """
    obs = np.asarray(observations)
    h = encode(obs, bank)
    n = len(h)
    actions = rng.uniform(-1.0, 1.0, size=(samples, nets.action_dim))
    with ng.no_grad():
        q1, q2 = q_values(nets.critic, np.repeat(h, samples, axis=0), np.tile(actions, (n, 1)))
    per_obs = np.minimum(q1.data[:, 0], q2.data[:, 0]).reshape(n, samples).mean(axis=1)
    return float(per_obs.mean()), float(per_obs.max())
