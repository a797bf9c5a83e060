"""Stochastic Gelfand estimate of the spectral radius of the error propagation."""
import math
from dataclasses import dataclass

import numpy as np

from .network import apply_error_propagation

# Entries per evaluation chunk; larger batches are processed in pieces.
CHUNK_ENTRIES = 2 ** 22


@dataclass(frozen=True)
class LossConfig:
    power_k: int = 10
    n_batch: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.power_k < 1 or self.n_batch < 1:
            raise ValueError("power_k and n_batch must be positive")


def rademacher_vector(shape, seed, index):
    """The ``index``-th Rademacher vector of the stream for ``seed``."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return rng.integers(0, 2, size=shape, dtype=np.int8).astype(float) * 2.0 - 1.0


def sample_rademacher(shape, n, seed):
    """``n`` i.i.d. +-1 fields stacked along a new leading axis.

    Vector ``j`` depends only on ``(seed, j)``, so any chunking of the batch
    yields the same vectors.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.stack([rademacher_vector(shape, seed, j) for j in range(n)])


def _chunks(n_batch, shape):
    size = max(1, CHUNK_ENTRIES // max(1, shape[0] * shape[1]))
    for start in range(0, n_batch, size):
        yield range(start, min(n_batch, start + size))


def powers_sq_norms(apply_B, shape, cfg):
    """``||B^k z_j||^2`` for every batch member, in batch order."""
    out = np.empty(cfg.n_batch)
    for idx in _chunks(cfg.n_batch, shape):
        y = np.stack([rademacher_vector(shape, cfg.seed, j) for j in idx])
        for _ in range(cfg.power_k):
            y = apply_B(y)
        out[idx.start:idx.stop] = np.sum(y * y, axis=(-2, -1))
    return out


def rho1_from_sq_norms(sq_norms, power_k):
    s = float(np.mean(sq_norms))
    if not math.isfinite(s):
        return math.inf
    return s ** (1.0 / (2 * power_k))


def rho1_estimate(apply_B, shape, cfg=LossConfig()):
    """``(mean_j ||B^k z_j||_2^2) ** (1 / 2k)`` over Rademacher ``z_j``.

    Returns ``inf`` when an intermediate overflows, which marks a
    divergent operator.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return rho1_from_sq_norms(powers_sq_norms(apply_B, shape, cfg), cfg.power_k)


def loss(net, cfg=LossConfig()):
    """rho_1 of the network's error propagation on its fine grid."""
    return rho1_estimate(lambda z: apply_error_propagation(net, z), net.shape, cfg)
