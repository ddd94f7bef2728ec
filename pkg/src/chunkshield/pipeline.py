"""End-to-end defence: chunk, score chunks, reconstruct the outliers."""

from __future__ import annotations

import hashlib
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chunking import chunk_image, superimpose
from .config import PipelineConfig
from .errors import ChunkShieldError, DegenerateGridError
from .iforest import build_forest
from .image_io import ImageTensor
from .mi_features import HistogramConfig, extract_features, feature_matrix
from .mitigation import RetentionPolicy, mitigate_chunk

log = logging.getLogger(__name__)

STAGES = ("chunking", "features", "forest", "scoring", "mitigation")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def flag_count(n_chunks: int, outlier_fraction: float) -> int:
    """Number of chunks to flag: ``(1 - c) * n`` rounded half-up, at least one."""
    return min(n_chunks, max(1, round_half_up(outlier_fraction * n_chunks)))


def forest_sample_size(n_chunks: int, fraction: float = 0.3) -> int:
    return min(n_chunks, max(2, round_half_up(fraction * n_chunks)))


@dataclass(frozen=True)
class FlaggedChunk:
    index: int
    top: int
    left: int
    score: float


@dataclass(frozen=True)
class DefenseResult:
    image: ImageTensor
    kernel: int
    flagged: tuple[FlaggedChunk, ...]
    scores: tuple[float, ...]
    positions: tuple[tuple[int, int], ...]
    timings: dict[str, float] = field(compare=False)
    total_runtime: float = field(compare=False)
    warning: str | None = None

    def anomaly_mask(self) -> ImageTensor:
        """255 wherever a flagged window covers the pixel, else 0."""
        mask = np.zeros((self.image.height, self.image.width), dtype=np.uint8)
        k = self.kernel
        for f in self.flagged:
            mask[f.top : f.top + k, f.left : f.left + k] = 255
        return ImageTensor(mask)

    def fingerprint(self) -> str:
        """SHA-256 over everything except timings."""
        h = hashlib.sha256()
        h.update(repr(self.image.data.shape).encode())
        h.update(self.image.data.tobytes())
        h.update(repr((self.kernel, self.positions, self.warning)).encode())
        for f in self.flagged:
            h.update(f"{f.index},{f.top},{f.left},{f.score.hex()};".encode())
        for s in self.scores:
            h.update(s.hex().encode())
        return h.hexdigest()

    def to_record(self) -> dict:
        return {
            "flagged": [{"index": f.index, "top": f.top, "left": f.left, "score": f.score} for f in self.flagged],
            "scores": list(self.scores),
            "timings": dict(self.timings),
            "total_runtime": self.total_runtime,
            "warning": self.warning,
        }


def rank_chunks(scores: Sequence[float]) -> list[int]:
    """Chunk indices by descending score; ties go to the lower index."""
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def defend(image: ImageTensor, config: PipelineConfig = PipelineConfig(), workers: int | None = None) -> DefenseResult:
    """Run the full defence on one image.

    The output differs from ``image`` only inside the windows of the flagged
    chunks. Results depend only on the image, ``config`` and its seed, never
    on ``workers``.
    """
    workers = config.workers if workers is None else workers
    timings = dict.fromkeys(STAGES, 0.0)
    start = time.perf_counter()

    t = time.perf_counter()
    grid = chunk_image(image, config.kernel, config.stride)
    positions = tuple((c.top, c.left) for c in grid.chunks)
    timings["chunking"] = time.perf_counter() - t

    if len(grid) < 2:
        if not config.passthrough_degenerate:
            raise DegenerateGridError("image yields a single chunk; nothing to compare against")
        msg = "single-chunk grid: image passed through unmodified"
        log.warning(msg)
        return DefenseResult(image, config.kernel, (), (), positions, timings, time.perf_counter() - start, msg)

    t = time.perf_counter()
    feats = feature_matrix(extract_features(grid, HistogramConfig(config.bins), workers=workers))
    timings["features"] = time.perf_counter() - t

    t = time.perf_counter()
    n = len(grid)
    k_attrs = None if config.k_attrs is None else min(config.k_attrs, feats.shape[1])
    forest = build_forest(
        feats, config.trees, forest_sample_size(n, config.sample_fraction), k_attrs, config.seed, workers
    )
    timings["forest"] = time.perf_counter() - t

    t = time.perf_counter()
    scores = tuple(float(s) for s in forest.score_samples(feats))
    order = rank_chunks(scores)
    picked = order[: flag_count(n, config.outlier_fraction)]
    flagged = tuple(FlaggedChunk(i, *positions[i], scores[i]) for i in picked)
    timings["scoring"] = time.perf_counter() - t

    t = time.perf_counter()
    policy = RetentionPolicy(config.info)
    blocks = [(positions[i], mitigate_chunk(grid.chunks[i], policy)) for i in picked]
    out = superimpose(image, blocks)
    timings["mitigation"] = time.perf_counter() - t

    total = time.perf_counter() - start
    log.debug("defended %dx%d image: %d/%d chunks flagged in %.3fs", image.height, image.width, len(picked), n, total)
    return DefenseResult(out, config.kernel, flagged, scores, positions, timings, total)


def _defend_slot(image: ImageTensor, config: PipelineConfig) -> DefenseResult | ChunkShieldError:
    try:
        return defend(image, config, workers=1)
    except ChunkShieldError as exc:
        return exc


def defend_batch(
    images: Sequence[ImageTensor],
    config: PipelineConfig = PipelineConfig(),
    workers: int | None = None,
) -> list[DefenseResult | ChunkShieldError]:
    """Defend several images; a failing slot holds its exception instead of a result.

    With ``workers > 1`` up to ``batch_size`` images run in separate processes.
    """
    if not images:
        raise ValueError("batch must contain at least one image")
    workers = config.workers if workers is None else workers
    if workers <= 1 or len(images) == 1:
        return [_defend_slot(im, config) for im in images]
    with ProcessPoolExecutor(max_workers=min(workers, config.batch_size, len(images))) as pool:
        return list(pool.map(_defend_slot, images, [config] * len(images)))
