"""Per-primitive gradient-check cases shared by the unit and acceptance suites.

Each case maps an rng to (inputs, build) where ``build(tensors)`` returns a
non-scalar tensor; the checked loss is its weighted sum with fixed weights.
"""
from __future__ import annotations

import numpy as np

from lfs import numgrad as ng

from .oracles import central_differences, relative_error


def _pos(rng, shape):
    return rng.uniform(0.5, 2.0, size=shape)


def _away_from_zero(rng, shape):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < 0.05, 0.05 * np.sign(x) + x, x)


CASES = {
    "add": lambda rng: ({"a": rng.standard_normal((3, 4)), "b": rng.standard_normal(4)},
                        lambda t: ng.add(t["a"], t["b"])),
    "sub": lambda rng: ({"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((3, 1))},
                        lambda t: ng.sub(t["a"], t["b"])),
    "mul": lambda rng: ({"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((3, 4))},
                        lambda t: ng.mul(t["a"], t["b"])),
    "div": lambda rng: ({"a": rng.standard_normal((3, 4)), "b": _pos(rng, (3, 4))},
                        lambda t: ng.div(t["a"], t["b"])),
    "square": lambda rng: ({"a": rng.standard_normal((5,))}, lambda t: ng.square(t["a"])),
    "matmul": lambda rng: ({"a": rng.standard_normal((3, 5)), "b": rng.standard_normal((5, 2))},
                           lambda t: ng.matmul(t["a"], t["b"])),
    "affine": lambda rng: ({"x": rng.standard_normal((4, 6)), "w": rng.standard_normal((6, 3)),
                            "b": rng.standard_normal(3)},
                           lambda t: ng.affine(t["x"], t["w"], t["b"])),
    "conv2d_stride2": lambda rng: ({"x": rng.standard_normal((2, 7, 7, 2)), "w": rng.standard_normal((3, 3, 2, 3)),
                                    "b": rng.standard_normal(3)},
                                   lambda t: ng.conv2d(t["x"], t["w"], t["b"], stride=2)),
    "conv2d_pad1": lambda rng: ({"x": rng.standard_normal((1, 5, 5, 2)), "w": rng.standard_normal((3, 3, 2, 2)),
                                 "b": rng.standard_normal(2)},
                                lambda t: ng.conv2d(t["x"], t["w"], t["b"], stride=1, padding=1)),
    "relu": lambda rng: ({"a": _away_from_zero(rng, (4, 5))}, lambda t: ng.relu(t["a"])),
    "tanh": lambda rng: ({"a": rng.standard_normal((4, 5))}, lambda t: ng.tanh(t["a"])),
    "exp": lambda rng: ({"a": rng.standard_normal((4, 5))}, lambda t: ng.exp(t["a"])),
    "log": lambda rng: ({"a": _pos(rng, (4, 5))}, lambda t: ng.log(t["a"])),
    "sum_axis": lambda rng: ({"a": rng.standard_normal((3, 4, 2))}, lambda t: ng.tsum(t["a"], axis=1)),
    "mean": lambda rng: ({"a": rng.standard_normal((3, 4))}, lambda t: ng.mean(t["a"], axis=0, keepdims=True)),
    "dot": lambda rng: ({"a": rng.standard_normal((3, 6)), "b": rng.standard_normal((3, 6))},
                        lambda t: ng.dot(t["a"], t["b"], axis=-1)),
    "l2_normalize": lambda rng: ({"a": rng.standard_normal((3, 6))}, lambda t: ng.l2_normalize(t["a"], axis=-1)),
    "softmax": lambda rng: ({"a": rng.standard_normal((3, 6))}, lambda t: ng.softmax(t["a"], tau=0.5)),
    "log_softmax": lambda rng: ({"a": rng.standard_normal((3, 6))}, lambda t: ng.log_softmax(t["a"], tau=0.7)),
    "layer_norm": lambda rng: ({"a": rng.standard_normal((3, 6)), "g": rng.standard_normal(6),
                                "b": rng.standard_normal(6)},
                               lambda t: ng.layer_norm(t["a"], t["g"], t["b"])),
    "minimum": lambda rng: ({"a": rng.standard_normal((4, 3)), "b": rng.standard_normal((4, 3))},
                            lambda t: ng.minimum(t["a"], t["b"])),
    "clamp_min": lambda rng: ({"a": _away_from_zero(rng, (4, 3))}, lambda t: ng.clamp_min(t["a"], 0.0)),
    "concat": lambda rng: ({"a": rng.standard_normal((2, 3)), "b": rng.standard_normal((2, 2))},
                           lambda t: ng.concat([t["a"], t["b"]], axis=1)),
    "getitem": lambda rng: ({"a": rng.standard_normal((4, 6))}, lambda t: t["a"][:, 1:4]),
    "transpose": lambda rng: ({"a": rng.standard_normal((2, 5))}, lambda t: ng.transpose(t["a"])),
    "reshape": lambda rng: ({"a": rng.standard_normal((2, 6))}, lambda t: ng.reshape(t["a"], (3, 4))),
}


def check_case(name: str, seed: int) -> float:
    """Relative error between analytic and finite-difference gradients for one trial."""
    rng = np.random.default_rng(seed)
    inputs, build = CASES[name](rng)
    weights = None

    def loss_value() -> float:
        with ng.no_grad():
            out = build({k: ng.Tensor(v) for k, v in inputs.items()})
        return float(np.sum(out.data * weights))

    tensors = {k: ng.Tensor(v, requires_grad=True) for k, v in inputs.items()}
    out = build(tensors)
    weights = rng.standard_normal(out.shape)
    ng.tsum(ng.mul(out, weights)).backward()
    analytic = {k: (np.zeros_like(t.data) if t.grad is None else t.grad) for k, t in tensors.items()}
    numeric = central_differences(loss_value, inputs)
    return relative_error(analytic, numeric)


def tiny_bank(seed: int):
    from lfs.protossl import BankArch, NetworkBank

    arch = BankArch(obs_shape=(9, 9, 3), conv_channels=(2, 2), conv_strides=(2, 1), latent_dim=8, hidden=8,
                    n_prototypes=4)
    return NetworkBank.create(arch, seed=seed)


def check_lfs_objective(seed: int) -> float:
    """Relative error of the clustering loss gradient over every online parameter (targets held fixed)."""
    from lfs.protossl import SslHyper, aux_objective

    rng = np.random.default_rng(seed)
    bank = tiny_bank(seed)
    # jitter both branches: nonzero biases keep tiny ReLU layers alive and the
    # target path then differs from the online one
    for graph in (bank.online, bank.target):
        for t in graph.params.values():
            t.data = t.data + 0.05 * rng.standard_normal(t.shape)
    prev = rng.random((4, 9, 9, 3))
    nxt = rng.random((4, 9, 9, 3))
    loss_fn, _ = aux_objective(bank, prev, nxt, SslHyper(sinkhorn_iters=3))
    _, analytic = ng.eval_with_gradients(bank.online, loss_fn)
    arrays = {n: t.data for n, t in bank.online.items()}

    def value() -> float:
        with ng.no_grad():
            return float(loss_fn(bank.online).data)

    numeric = central_differences(value, arrays)
    return relative_error(analytic, numeric)
