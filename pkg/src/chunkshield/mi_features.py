"""Histogram mutual information between chunks and per-chunk MI features.

MI is estimated from the joint histogram of co-located pixel pairs, with
intensities binned uniformly over [0, 255]. Each chunk is described by the
mean, min and max of its MI with every 8-connected grid neighbour, per channel.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chunking import ChunkGrid, neighbor_pairs, neighbors_of
from .errors import DegenerateGridError, DimensionError, ParameterError


@dataclass(frozen=True)
class HistogramConfig:
    bins: int = 32

    def __post_init__(self) -> None:
        if not 2 <= self.bins <= 256:
            raise ParameterError(f"bins must be in [2, 256], got {self.bins}")

    @property
    def max_bits(self) -> float:
        return math.log2(self.bins)


@dataclass(frozen=True)
class ChunkFeatures:
    index: int
    features: np.ndarray  # (3 * channels,) as [mean, min, max] per channel, bits


def bin_intensities(block: np.ndarray, bins: int) -> np.ndarray:
    """Map 8-bit intensities to bin ordinals ``0..bins-1`` (flattened, int64)."""
    return (np.asarray(block, dtype=np.int64).ravel() * bins) // 256


def _mi_from_joint(joint: np.ndarray, max_bits: float) -> float:
    total = joint.sum()
    if total == 0:
        return 0.0
    px = joint.sum(axis=1) / total
    py = joint.sum(axis=0) / total
    ii, jj = np.nonzero(joint)
    p = joint[ii, jj] / total
    # fsum is exact-rounded, so the result does not depend on term order;
    # this makes MI(a, b) == MI(b, a) bit-for-bit
    mi = math.fsum((p * np.log2(p / (px[ii] * py[jj]))).tolist())
    return min(max(mi, 0.0), max_bits)


def _mi_binned(a_bins: np.ndarray, b_bins: np.ndarray, bins: int, max_bits: float) -> float:
    joint = np.bincount(a_bins * bins + b_bins, minlength=bins * bins).reshape(bins, bins)
    return _mi_from_joint(joint, max_bits)


def mutual_information(a: np.ndarray, b: np.ndarray, cfg: HistogramConfig = HistogramConfig()) -> float:
    """MI in bits between two equally-shaped single-channel intensity blocks."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"block shapes differ: {a.shape} vs {b.shape}")
    return _mi_binned(bin_intensities(a, cfg.bins), bin_intensities(b, cfg.bins), cfg.bins, cfg.max_bits)


def binned_entropy(block: np.ndarray, cfg: HistogramConfig = HistogramConfig()) -> float:
    counts = np.bincount(bin_intensities(block, cfg.bins), minlength=cfg.bins)
    p = counts[counts > 0] / counts.sum()
    return -math.fsum((p * np.log2(p)).tolist())


def _binned_chunks(grid: ChunkGrid, cfg: HistogramConfig) -> list[list[np.ndarray]]:
    """Per chunk, per channel: flattened bin ordinals."""
    return [
        [bin_intensities(ch.pixels[:, :, c], cfg.bins) for c in range(ch.pixels.shape[2])]
        for ch in grid.chunks
    ]


def _pair_table(
    binned: Sequence[Sequence[np.ndarray]],
    pairs: Sequence[tuple[int, int]],
    cfg: HistogramConfig,
    workers: int,
) -> dict[tuple[int, int], tuple[float, ...]]:
    bins, max_bits = cfg.bins, cfg.max_bits
    n_ch = len(binned[0]) if binned else 0

    def run(batch: Sequence[tuple[int, int]]) -> list[tuple[float, ...]]:
        return [
            tuple(_mi_binned(binned[i][c], binned[j][c], bins, max_bits) for c in range(n_ch))
            for i, j in batch
        ]

    if workers <= 1 or len(pairs) < 2 * workers:
        values = run(pairs)
    else:
        size = math.ceil(len(pairs) / workers)
        batches = [pairs[k : k + size] for k in range(0, len(pairs), size)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = [v for part in pool.map(run, batches) for v in part]
    return dict(zip(pairs, values))


def _require_grid(grid: ChunkGrid) -> None:
    if len(grid) < 2:
        raise DegenerateGridError("localized MI needs a grid with at least 2 chunks")


def localized_mi(grid: ChunkGrid, index: int, cfg: HistogramConfig = HistogramConfig()) -> list[list[float]]:
    """MI between chunk ``index`` and each neighbour, one list per channel."""
    _require_grid(grid)
    nbrs = neighbors_of(grid, index)
    own = grid.chunks[index].pixels
    return [
        [mutual_information(own[:, :, c], grid.chunks[j].pixels[:, :, c], cfg) for j in nbrs]
        for c in range(own.shape[2])
    ]


def extract_features(
    grid: ChunkGrid,
    cfg: HistogramConfig = HistogramConfig(),
    workers: int = 1,
) -> list[ChunkFeatures]:
    """Localized-MI feature vector for every chunk of ``grid``.

    Each unordered neighbour pair is evaluated once per channel, so the work is
    linear in the number of chunks. ``workers`` only changes scheduling; the
    output is identical for any value.
    """
    _require_grid(grid)
    binned = _binned_chunks(grid, cfg)
    table = _pair_table(binned, neighbor_pairs(grid.rows, grid.cols), cfg, workers)
    n_ch = grid.channels
    out = []
    for i in range(len(grid)):
        nbrs = neighbors_of(grid, i)
        vals = [table[(min(i, j), max(i, j))] for j in nbrs]
        feats = np.empty(3 * n_ch, dtype=np.float64)
        for c in range(n_ch):
            col = [v[c] for v in vals]
            feats[3 * c] = math.fsum(col) / len(col)
            feats[3 * c + 1] = min(col)
            feats[3 * c + 2] = max(col)
        out.append(ChunkFeatures(i, feats))
    return out


def feature_matrix(features: Sequence[ChunkFeatures]) -> np.ndarray:
    return np.stack([f.features for f in features]) if features else np.empty((0, 0))


def all_pairs_mi(grid: ChunkGrid, cfg: HistogramConfig = HistogramConfig()) -> np.ndarray:
    """Dense n x n x C table of MI between every chunk pair (quadratic reference)."""
    binned = _binned_chunks(grid, cfg)
    n = len(grid)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    table = _pair_table(binned, pairs, cfg, workers=1)
    out = np.zeros((n, n, grid.channels))
    for (i, j), v in table.items():
        out[i, j] = v
        out[j, i] = v
    return out
