"""Latent nearest-neighbour clip: keep synthetic pairs at a medium k-NN distance from real data."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_ROW_CHUNK = 64


@dataclass(frozen=True)
class LncConfig:
    k: int = 1
    c: float = 0.9
    r: float = 0.1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"LNC k must be >= 1, got {self.k}")
        if not (self.r >= 0 and self.c > self.r / 2):
            raise ValueError(f"LNC needs c > r/2 >= 0, got c={self.c}, r={self.r}")

    def band(self, scale: float) -> tuple[float, float]:
        return (self.c - self.r / 2) * scale, (self.c + self.r / 2) * scale


@dataclass
class LncResult:
    scale: float
    distances: np.ndarray
    selected: list[int] = field(default_factory=list)

    @property
    def n_selected(self) -> int:
        return len(self.selected)


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distances from every row of ``a`` to every row of ``b``.

    Computed from explicit differences, so coincident rows give exactly 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"embedding dimension mismatch: {a.shape} vs {b.shape}")
    out = np.empty((a.shape[0], b.shape[0]))
    for i in range(0, a.shape[0], _ROW_CHUNK):
        diff = a[i:i + _ROW_CHUNK, None, :] - b[None, :, :]
        out[i:i + _ROW_CHUNK] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


def _kth_smallest(d: np.ndarray, k: int) -> np.ndarray:
    # stable sort: equal distances keep index order
    order = np.argsort(d, axis=1, kind="stable")
    return np.take_along_axis(d, order[:, k - 1:k], axis=1)[:, 0]


def internal_knn_scale(real: np.ndarray, k: int = 1) -> float:
    """Mean distance from each real embedding to its k-th nearest other embedding."""
    real = np.asarray(real, dtype=np.float64)
    m = real.shape[0]
    if m <= k:
        raise ValueError(f"need more than k={k} real embeddings, got {m}")
    d = pairwise_distances(real, real)
    # top-(k+1) including self, then drop the self column
    nearest = np.sort(d, axis=1, kind="stable")[:, :k + 1]
    if not np.all(nearest[:, 0] == 0.0):
        raise AssertionError("self-distance is not the smallest entry of its row")
    return float(np.mean(nearest[:, k]))


def cross_knn_distance(syn: np.ndarray, real: np.ndarray, k: int = 1) -> np.ndarray:
    syn = np.asarray(syn, dtype=np.float64)
    real = np.asarray(real, dtype=np.float64)
    if len(syn) == 0 or len(real) == 0:
        raise ValueError("cross_knn_distance needs non-empty embedding sets")
    if len(real) < k:
        raise ValueError(f"need at least k={k} real embeddings, got {len(real)}")
    return _kth_smallest(pairwise_distances(syn, real), k)


def clip_select(distances: np.ndarray, scale: float, config: LncConfig) -> list[int]:
    if scale < 0:
        raise ValueError(f"distance scale must be non-negative, got {scale}")
    lo, hi = config.band(scale)
    return [j for j, d in enumerate(np.asarray(distances)) if lo < d < hi]


def lnc(syn: np.ndarray, real: np.ndarray, config: LncConfig) -> LncResult:
    scale = internal_knn_scale(real, config.k)
    dist = cross_knn_distance(syn, real, config.k)
    return LncResult(scale=scale, distances=dist, selected=clip_select(dist, scale, config))


@dataclass
class AuxBatch:
    prev: np.ndarray
    next: np.ndarray
    synthetic: np.ndarray

    def __len__(self) -> int:
        return len(self.synthetic)

    @property
    def n_synthetic(self) -> int:
        return int(self.synthetic.sum())


def assemble_aux_batch(syn_prev: np.ndarray, syn_next: np.ndarray, real_prev: np.ndarray,
                       real_next: np.ndarray, m: int, rng: np.random.Generator) -> AuxBatch:
    """N selected synthetic pairs plus M-N distinct real pairs from the RL batch, shuffled."""
    n = len(syn_prev)
    if n > m:
        raise ValueError(f"{n} synthetic pairs exceed the auxiliary batch size {m}")
    if len(real_prev) < m - n:
        raise ValueError(f"RL batch of {len(real_prev)} cannot supply {m - n} real pairs")
    real_idx = rng.choice(len(real_prev), size=m - n, replace=False)
    prev = np.concatenate([syn_prev, real_prev[real_idx]]) if n else real_prev[real_idx]
    nxt = np.concatenate([syn_next, real_next[real_idx]]) if n else real_next[real_idx]
    synthetic = np.concatenate([np.ones(n, dtype=bool), np.zeros(m - n, dtype=bool)])
    order = rng.permutation(m)
    return AuxBatch(prev=prev[order], next=nxt[order], synthetic=synthetic[order])
