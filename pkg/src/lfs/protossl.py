"""Prototype-clustering temporal association with EMA targets.

The online branch maps an earlier observation through encoder, projector and
predictor; the target branch maps the later observation through EMA copies of
encoder and projector. Targets come from a Sinkhorn-Knopp equipartition of the
target embeddings over the prototypes, and the loss is the cross-entropy
between those targets and the online prototype softmax.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import numgrad as ng
from .framekit import random_shift
from .lnc import LncConfig, assemble_aux_batch, lnc

logger = logging.getLogger(__name__)

# code-path counters, read by the harness to show that training modes share one update
CALLS: Counter = Counter()

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class SslHyper:
    tau: float = 0.1
    eta: float = 0.05
    epsilon: float = 0.05
    sinkhorn_iters: int = 3
    lr: float = 1e-4

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("softmax temperature must be positive")
        if not 0 < self.eta <= 1:
            raise ValueError("EMA momentum must lie in (0, 1]")
        if not self.epsilon > 0:
            raise ValueError("Sinkhorn epsilon must be positive")
        if self.sinkhorn_iters < 1:
            raise ValueError("Sinkhorn needs at least one iteration")


@dataclass(frozen=True)
class BankArch:
    obs_shape: tuple[int, int, int] = (84, 84, 9)
    conv_channels: tuple[int, ...] = (32, 32, 32, 32)
    conv_strides: tuple[int, ...] = (2, 1, 1, 1)
    kernel: int = 3
    latent_dim: int = 128
    hidden: int = 1024
    n_prototypes: int = 512

    def __post_init__(self):
        if len(self.conv_channels) != len(self.conv_strides):
            raise ValueError("conv_channels and conv_strides must have equal length")
        h, w = self.conv_output_hw()
        if h < 1 or w < 1:
            raise ValueError(f"frames of {self.obs_shape[:2]} are too small for the conv trunk")

    def conv_output_hw(self) -> tuple[int, int]:
        h, w = self.obs_shape[:2]
        for s in self.conv_strides:
            h = (h - self.kernel) // s + 1
            w = (w - self.kernel) // s + 1
        return h, w

    @property
    def representation_dim(self) -> int:
        h, w = self.conv_output_hw()
        return h * w * self.conv_channels[-1]


def init_encoder(graph: ng.ParamGraph, arch: BankArch, rng: np.random.Generator) -> None:
    c_in = arch.obs_shape[2]
    for i, c_out in enumerate(arch.conv_channels):
        ng.init_conv(graph, f"encoder.conv{i}", c_in, c_out, arch.kernel, rng)
        c_in = c_out
    ng.init_affine(graph, "encoder.fc", arch.representation_dim, arch.latent_dim, rng)


def init_mlp(graph: ng.ParamGraph, prefix: str, d_in: int, hidden: int, d_out: int,
             rng: np.random.Generator) -> None:
    ng.init_affine(graph, f"{prefix}.l0", d_in, hidden, rng, gain=np.sqrt(2.0))
    ng.init_affine(graph, f"{prefix}.l1", hidden, d_out, rng)


def encoder_forward(graph: ng.ParamGraph, arch: BankArch, obs) -> ng.Tensor:
    x = ng.as_tensor(np.asarray(obs) - 0.5)
    for i, s in enumerate(arch.conv_strides):
        x = ng.relu(ng.conv2d(x, graph[f"encoder.conv{i}.w"], graph[f"encoder.conv{i}.b"], stride=s))
    x = ng.reshape(x, (x.shape[0], -1))
    return ng.affine(x, graph["encoder.fc.w"], graph["encoder.fc.b"])


def mlp_forward(graph: ng.ParamGraph, prefix: str, x: ng.Tensor) -> ng.Tensor:
    h = ng.relu(ng.affine(x, graph[f"{prefix}.l0.w"], graph[f"{prefix}.l0.b"]))
    return ng.affine(h, graph[f"{prefix}.l1.w"], graph[f"{prefix}.l1.b"])


class NetworkBank:
    """Online encoder/projector/predictor/prototypes plus EMA encoder/projector."""

    TARGET_PREFIXES = ("encoder.", "projector.")

    def __init__(self, arch: BankArch, online: ng.ParamGraph, target: ng.ParamGraph):
        self.arch = arch
        self.online = online
        self.target = target
        for t in self.target.params.values():
            t.requires_grad = False

    @classmethod
    def create(cls, arch: BankArch, seed: int = 0) -> "NetworkBank":
        rng = np.random.default_rng(seed)
        online = ng.ParamGraph()
        init_encoder(online, arch, rng)
        init_mlp(online, "projector", arch.latent_dim, arch.hidden, arch.latent_dim, rng)
        init_mlp(online, "predictor", arch.latent_dim, arch.hidden, arch.latent_dim, rng)
        protos = rng.standard_normal((arch.n_prototypes, arch.latent_dim))
        online.add("prototypes", protos / np.linalg.norm(protos, axis=1, keepdims=True))
        target = ng.ParamGraph({n: t.data for n, t in online.items() if n.startswith(cls.TARGET_PREFIXES)})
        return cls(arch, online, target)

    def encoder_names(self) -> list[str]:
        return self.online.names("encoder.")

    def state(self) -> dict[str, np.ndarray]:
        out = {f"bank.online.{n}": v for n, v in self.online.state().items()}
        out.update({f"bank.target.{n}": v for n, v in self.target.state().items()})
        return out

    def load_state(self, arrays: dict[str, np.ndarray], encoder_only: bool = False) -> None:
        online = {k[len("bank.online."):]: v for k, v in arrays.items() if k.startswith("bank.online.")}
        target = {k[len("bank.target."):]: v for k, v in arrays.items() if k.startswith("bank.target.")}
        if encoder_only:
            online = {k: v for k, v in online.items() if k.startswith("encoder.")}
            self.online.load_state(online, strict=False)
            self.target.load_state({k: v for k, v in target.items() if k.startswith("encoder.")}, strict=False)
            return
        self.online.load_state(online)
        self.target.load_state(target)

    def check_obs(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-3:] != tuple(self.arch.obs_shape):
            raise ValueError(f"observation shape {obs.shape[-3:]} does not match network input {self.arch.obs_shape}")
        return obs


def _batched(obs: np.ndarray) -> tuple[np.ndarray, bool]:
    return (obs[None], True) if obs.ndim == 3 else (obs, False)


def encode(obs, bank: NetworkBank, branch: str = "online") -> np.ndarray:
    """Latent embedding h; never records gradients."""
    if branch not in ("online", "target"):
        raise ValueError(f"branch must be 'online' or 'target', got {branch!r}")
    x, single = _batched(bank.check_obs(obs))
    graph = bank.online if branch == "online" else bank.target
    with ng.no_grad():
        h = encoder_forward(graph, bank.arch, x).data
    return h[0] if single else h


def online_embedding(obs, bank: NetworkBank) -> ng.Tensor:
    """z = predictor(projector(encoder(obs))) with gradients to the online parameters."""
    x, _ = _batched(bank.check_obs(obs))
    g = bank.online
    return mlp_forward(g, "predictor", mlp_forward(g, "projector", encoder_forward(g, bank.arch, x)))


def target_embedding(obs, bank: NetworkBank) -> np.ndarray:
    x, single = _batched(bank.check_obs(obs))
    g = bank.target
    with ng.no_grad():
        z = mlp_forward(g, "projector", encoder_forward(g, bank.arch, x)).data
    return z[0] if single else z


def prototype_scores(z, prototypes, tau: float) -> ng.Tensor:
    """Softmax over cosine similarities between embeddings and prototypes, at temperature tau."""
    z = ng.as_tensor(z)
    single = z.ndim == 1
    if single:
        z = ng.reshape(z, (1, -1))
    scores = ng.matmul(ng.l2_normalize(z, axis=-1), ng.transpose(ng.l2_normalize(prototypes, axis=-1)))
    p = ng.softmax(scores, tau=tau, axis=-1)
    return ng.reshape(p, (-1,)) if single else p


def sinkhorn_plan(scores: np.ndarray, epsilon: float, iters: int, trace: list | None = None) -> np.ndarray:
    """Entropic transport plan with sample marginals 1/M (rows) and prototype marginals 1/P (columns).

    Each iteration rescales columns then rows, so the returned rows sum to
    exactly 1/M and columns approach 1/P. If ``trace`` is given, the column
    sums after each column step and the row sums after each row step are
    appended to it as pairs.
    """
    s = np.asarray(scores, dtype=np.float64) / epsilon
    q = np.exp(s - s.max())
    if not np.all(np.isfinite(q)) or q.sum() == 0:
        raise FloatingPointError("Sinkhorn kernel overflowed or vanished")
    m, p = q.shape
    q /= q.sum()
    for _ in range(iters):
        col = q.sum(axis=0, keepdims=True)
        if np.any(col == 0):
            raise FloatingPointError("Sinkhorn column underflow; increase epsilon")
        q /= col
        q /= p
        col_sums = q.sum(axis=0) if trace is not None else None
        q /= q.sum(axis=1, keepdims=True)
        q /= m
        if trace is not None:
            trace.append((col_sums, q.sum(axis=1)))
    return q


def sinkhorn_assign(z_targets: np.ndarray, prototypes: np.ndarray, epsilon: float = 0.05,
                    iters: int = 3) -> np.ndarray:
    """Balanced soft assignments Q (M x P), each row a distribution over prototypes."""
    z = np.asarray(z_targets, dtype=np.float64)
    c = np.asarray(prototypes.data if isinstance(prototypes, ng.Tensor) else prototypes, dtype=np.float64)
    if z.ndim != 2 or c.ndim != 2 or z.shape[1] != c.shape[1]:
        raise ValueError(f"embedding dimension mismatch: {z.shape} vs {c.shape}")
    with ng.no_grad():
        zn = ng.l2_normalize(z, axis=-1).data
        cn = ng.l2_normalize(c, axis=-1).data
    plan = sinkhorn_plan(zn @ cn.T, epsilon, iters)
    return plan * plan.shape[0]


def lfs_loss(p: ng.Tensor, q: np.ndarray) -> ng.Tensor:
    """Mean cross-entropy -1/M sum_x q_x . log p_x; gradient flows only into p."""
    q = np.asarray(q, dtype=np.float64)
    p = ng.as_tensor(p)
    if p.shape != q.shape:
        raise ng.ShapeError(f"lfs_loss: probabilities {p.shape} vs targets {q.shape}")
    tiny = (p.data < PROB_FLOOR) & (q > 0)
    if np.any(tiny):
        logger.warning("lfs_loss: %d probabilities below %.0e clamped", int(tiny.sum()), PROB_FLOOR)
    logp = ng.log(ng.clamp_min(p, PROB_FLOOR))
    return ng.mul(ng.tsum(ng.mul(logp, q)), -1.0 / q.shape[0])


def ema_update(bank: NetworkBank, eta: float) -> None:
    """target <- (1 - eta) * target + eta * online, for every target parameter."""
    if not 0 < eta <= 1:
        raise ValueError(f"EMA momentum must lie in (0, 1], got {eta}")
    for name, t in bank.target.items():
        online = bank.online[name].data
        t.data = online.copy() if eta == 1 else (1.0 - eta) * t.data + eta * online


def aux_objective(bank: NetworkBank, prev: np.ndarray, nxt: np.ndarray, hyper: SslHyper):
    """Loss closure over the online graph, plus the fixed Sinkhorn targets it uses."""
    q = sinkhorn_assign(target_embedding(nxt, bank), bank.online["prototypes"].data,
                        hyper.epsilon, hyper.sinkhorn_iters)

    def loss_fn(graph: ng.ParamGraph) -> ng.Tensor:
        z = online_embedding(prev, bank)
        return lfs_loss(prototype_scores(z, graph["prototypes"], hyper.tau), q)

    return loss_fn, q


@dataclass
class SslStepResult:
    loss: float
    n_selected: int
    grad_norm: float
    selected_prev: np.ndarray = field(repr=False, default=None)


class SslLearner:
    """Owns the bank's optimizer and the settings of one auxiliary-training run.

    ``use_synthetic=False`` drops frame-masked data entirely; ``fixed_synthetic``
    replaces LNC with a fixed count of randomly chosen synthetic pairs.
    """

    def __init__(self, bank: NetworkBank, hyper: SslHyper, lnc_config: LncConfig, rng: np.random.Generator,
                 use_synthetic: bool = True, fixed_synthetic: int | None = None, augment_pad: int = 0):
        self.bank = bank
        self.hyper = hyper
        self.lnc_config = lnc_config
        self.rng = rng
        self.use_synthetic = use_synthetic
        self.fixed_synthetic = fixed_synthetic
        self.augment_pad = augment_pad
        self.optimizer = ng.Adam(bank.online, lr=hyper.lr)


def ssl_update_step(learner: SslLearner, real_prev: np.ndarray, real_next: np.ndarray,
                    syn_prev: np.ndarray | None = None, syn_next: np.ndarray | None = None) -> SslStepResult:
    """One auxiliary update on an RL batch (already augmented) and a synthetic sample.

    LNC selection, auxiliary batch assembly, one Adam step on the online
    parameters and the EMA target update.
    """
    CALLS["ssl_update_step"] += 1
    bank, hyper, rng = learner.bank, learner.hyper, learner.rng
    m = len(real_prev)
    empty = real_prev[:0]
    sel_prev, sel_next = empty, empty
    if learner.use_synthetic and syn_prev is not None and len(syn_prev):
        if learner.augment_pad:
            syn_prev = random_shift(syn_prev, learner.augment_pad, rng)
            syn_next = random_shift(syn_next, learner.augment_pad, rng)
        if learner.fixed_synthetic is not None:
            idx = np.sort(rng.choice(len(syn_prev), size=min(learner.fixed_synthetic, len(syn_prev), m),
                                     replace=False))
        else:
            result = lnc(encode(syn_prev, bank), encode(real_prev, bank), learner.lnc_config)
            idx = np.asarray(result.selected, dtype=int)
        sel_prev, sel_next = syn_prev[idx], syn_next[idx]
    batch = assemble_aux_batch(sel_prev, sel_next, real_prev, real_next, m, rng)

    loss_fn, _ = aux_objective(bank, batch.prev, batch.next, hyper)
    loss, grads = ng.eval_with_gradients(bank.online, loss_fn)
    learner.optimizer.step(grads)
    bank.online.zero_grad()
    ema_update(bank, hyper.eta)
    return SslStepResult(loss=loss, n_selected=len(sel_prev), grad_norm=ng.grad_norm(grads),
                         selected_prev=sel_prev)
