"""Low-rank SVD reconstruction of flagged chunks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chunking import Chunk
from .errors import DimensionError, NumericError, ParameterError


@dataclass(frozen=True)
class RetentionPolicy:
    """Fraction of singular-value mass (first power) kept after truncation."""

    info: float = 0.875

    def __post_init__(self) -> None:
        if not 0.0 < self.info <= 1.0:
            raise ParameterError(f"info must be in (0, 1], got {self.info}")


def decompose(block: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``U, sigma, Vt`` with sigma descending."""
    a = np.asarray(block, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D block, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("block contains non-finite entries")
    return np.linalg.svd(a, full_matrices=False)


def retained_rank(sigma: np.ndarray, info: float) -> int:
    """Smallest ``r`` with ``sum(sigma[:r]) / sum(sigma) >= info``; 0 if sigma is all zero."""
    total = float(sigma.sum())
    if total == 0.0:
        return 0
    ratios = np.cumsum(sigma) / total
    hits = np.nonzero(ratios >= info)[0]
    # rounding can leave the full prefix a hair below 1.0
    return int(hits[0]) + 1 if hits.size else sigma.size


def svd_truncate(block: np.ndarray, policy: RetentionPolicy = RetentionPolicy()) -> tuple[np.ndarray, int]:
    """Rank-r reconstruction of ``block`` and the rank used."""
    u, s, vt = decompose(block)
    r = retained_rank(s, policy.info)
    if r == 0:
        return np.zeros((u.shape[0], vt.shape[1])), 0
    return (u[:, :r] * s[:r]) @ vt[:r], r


def svd_reduce(block: np.ndarray, policy: RetentionPolicy = RetentionPolicy()) -> np.ndarray:
    return svd_truncate(block, policy)[0]


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Clamp to [0, 255] then round half-up."""
    return np.floor(np.clip(values, 0.0, 255.0) + 0.5).astype(np.uint8)


def mitigate_block(pixels: np.ndarray, policy: RetentionPolicy = RetentionPolicy()) -> np.ndarray:
    """Apply :func:`svd_reduce` to each channel of a k x k x C block."""
    px = np.asarray(pixels)
    if px.ndim == 2:
        px = px[:, :, None]
    out = np.empty(px.shape, dtype=np.uint8)
    for c in range(px.shape[2]):
        out[:, :, c] = to_uint8(svd_reduce(px[:, :, c].astype(np.float64), policy))
    return out


def mitigate_chunk(chunk: Chunk, policy: RetentionPolicy = RetentionPolicy()) -> np.ndarray:
    return mitigate_block(chunk.pixels, policy)
