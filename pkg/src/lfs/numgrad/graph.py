from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from .tensor import ShapeError, Tensor


class ParamGraph:
    """Named parameter arrays with one gradient slot per parameter.

    Gradients are read back through :meth:`gradients`; a parameter that did not
    take part in the last backward pass reports an all-zero gradient.
    """

    def __init__(self, params: dict[str, np.ndarray] | None = None):
        self.params: dict[str, Tensor] = {}
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64, order="C", copy=True), requires_grad=True, op=name)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        return {n: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for n, t in self.params.items()}

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        for name, t in self.params.items():
            if name not in state:
                if strict:
                    raise KeyError(f"missing parameter {name!r}")
                continue
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ShapeError(f"{name}: stored shape {value.shape} does not match parameter shape {t.shape}")
            t.data = np.array(value, order="C", copy=True)

    def copy(self) -> "ParamGraph":
        return ParamGraph(self.state())

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))


def eval_with_gradients(graph: ParamGraph, loss_fn: Callable[[ParamGraph], Tensor]) -> tuple[float, dict[str, np.ndarray]]:
    """Evaluate ``loss_fn(graph)`` and return its value with exact gradients."""
    graph.zero_grad()
    loss = loss_fn(graph)
    if loss.data.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    if loss.requires_grad:
        loss.backward()
    return float(loss.data), graph.gradients()


def grad_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


# ---------------------------------------------------------------- initialization

def orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float = 1.0) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


def init_affine(graph: ParamGraph, prefix: str, n_in: int, n_out: int, rng: np.random.Generator,
                gain: float = 1.0) -> None:
    graph.add(f"{prefix}.w", orthogonal(rng, n_in, n_out, gain))
    graph.add(f"{prefix}.b", np.zeros(n_out))


def init_conv(graph: ParamGraph, prefix: str, c_in: int, c_out: int, size: int, rng: np.random.Generator,
              gain: float = np.sqrt(2.0)) -> None:
    w = orthogonal(rng, size * size * c_in, c_out, gain).reshape(size, size, c_in, c_out)
    graph.add(f"{prefix}.w", w)
    graph.add(f"{prefix}.b", np.zeros(c_out))


# ---------------------------------------------------------------- optimization

class Adam:
    def __init__(self, graph: ParamGraph, lr: float = 1e-4, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, names: list[str] | None = None):
        self.graph = graph
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.names = list(graph.params) if names is None else list(names)
        self.m = {n: np.zeros_like(graph[n].data) for n in self.names}
        self.v = {n: np.zeros_like(graph[n].data) for n in self.names}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for n in self.names:
            g = grads[n]
            m = self.m[n]
            v = self.v[n]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p = self.graph[n]
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
