"""Moving-window partition of an image and write-back of replacement blocks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import DimensionError, ParameterError
from .image_io import ImageTensor


@dataclass(frozen=True)
class Chunk:
    index: int
    top: int
    left: int
    pixels: np.ndarray  # k x k x C, owned copy


@dataclass(frozen=True)
class ChunkGrid:
    kernel: int
    stride: int
    rows: int
    cols: int
    chunks: tuple[Chunk, ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.chunks)

    @property
    def channels(self) -> int:
        return self.chunks[0].pixels.shape[2]

    def position(self, index: int) -> tuple[int, int]:
        """Grid (row, col) of chunk ``index``."""
        return divmod(index, self.cols)


def grid_shape(height: int, width: int, kernel: int, stride: int) -> tuple[int, int]:
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if kernel < 1:
        raise ParameterError(f"kernel must be >= 1, got {kernel}")
    if kernel > min(height, width):
        raise DimensionError(f"kernel {kernel} exceeds image size {height}x{width}")
    return (height - kernel) // stride + 1, (width - kernel) // stride + 1


def chunk_image(image: ImageTensor, kernel: int, stride: int) -> ChunkGrid:
    """Cut ``image`` into every valid ``kernel``-sized window, row-major.

    Windows that would cross the bottom or right border are dropped, so up to
    ``kernel - 1`` pixels of margin may stay uncovered.
    """
    rows, cols = grid_shape(image.height, image.width, kernel, stride)
    data = image.data
    chunks = []
    for r in range(rows):
        top = r * stride
        for c in range(cols):
            left = c * stride
            block = data[top : top + kernel, left : left + kernel, :].copy()
            chunks.append(Chunk(len(chunks), top, left, block))
    return ChunkGrid(kernel, stride, rows, cols, tuple(chunks))


def grid_neighbors(rows: int, cols: int, index: int) -> list[int]:
    if not 0 <= index < rows * cols:
        raise ParameterError(f"chunk index {index} out of range for {rows}x{cols} grid")
    r, c = divmod(index, cols)
    out = []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            rr, cc = r + dr, c + dc
            if 0 <= rr < rows and 0 <= cc < cols:
                out.append(rr * cols + cc)
    return out


def neighbors_of(grid: ChunkGrid, index: int) -> list[int]:
    """8-connected neighbours of chunk ``index`` in ascending (row-major) order."""
    return grid_neighbors(grid.rows, grid.cols, index)


def neighbor_pairs(rows: int, cols: int) -> list[tuple[int, int]]:
    """Every unordered 8-connected pair ``(i, j)`` with ``i < j``."""
    pairs = []
    for i in range(rows * cols):
        for j in grid_neighbors(rows, cols, i):
            if j > i:
                pairs.append((i, j))
    return pairs


def superimpose(
    image: ImageTensor,
    replacements: Iterable[tuple[tuple[int, int], np.ndarray]],
) -> ImageTensor:
    """Paste ``(top, left) -> block`` replacements onto a copy of ``image``.

    Where windows overlap, the pixel becomes the mean of the contributing
    blocks, rounded half-up. Pixels outside every window are untouched.
    """
    h, w, ch = image.data.shape
    acc = np.zeros((h, w, ch), dtype=np.float64)
    cnt = np.zeros((h, w, 1), dtype=np.int64)
    size = None
    for (top, left), block in replacements:
        block = np.asarray(block)
        if block.ndim == 2:
            block = block[:, :, None]
        kh, kw = block.shape[:2]
        if block.shape[2] != ch:
            raise DimensionError(f"replacement has {block.shape[2]} channels, image has {ch}")
        if kh != kw or (size is not None and kh != size):
            raise DimensionError(f"replacement blocks must share one square kernel size, got {kh}x{kw}")
        size = kh
        if top < 0 or left < 0 or top + kh > h or left + kw > w:
            raise DimensionError(f"replacement at ({top}, {left}) size {kh} leaves the {h}x{w} image")
        acc[top : top + kh, left : left + kw] += block
        cnt[top : top + kh, left : left + kw] += 1
    if size is None:
        return image
    out = image.data.copy()
    mask = cnt[:, :, 0] > 0
    mean = acc[mask] / cnt[mask]
    out[mask] = np.clip(np.floor(mean + 0.5), 0, 255).astype(np.uint8)
    return ImageTensor(out)

