"""Loading and saving 8-bit raster images.

Binary netpbm (P5/P6) is handled natively; PNG goes through Pillow.
JPEG can be read but is refused on write so that every output is lossless.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

_NETPBM_SUFFIXES = {".ppm", ".pgm", ".pnm"}
_WRITE_SUFFIXES = {".png", ".ppm", ".pgm", ".pnm"}


@dataclass(frozen=True)
class ImageTensor:
    """H x W x C uint8 image. ``data`` is always a 3-D array, C in {1, 3}."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise FormatError(f"expected HxWx1 or HxWx3 array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer):
                raise FormatError(f"pixel data must be integral, got {arr.dtype}")
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise FormatError("pixel intensities must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageTensor):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self) -> int:
        return hash((self.data.shape, self.data.tobytes()))


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos : pos + 1]
        if ch == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated netpbm header")
    return buf[start:pos], pos


def _decode_netpbm(buf: bytes) -> ImageTensor:
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported netpbm variant {magic!r} (only binary P5/P6)")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError as exc:
            raise FormatError(f"bad netpbm header field {tok!r}") from exc
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"only 8-bit images (maxval 255) are supported, got maxval {maxval}")
    if width < 1 or height < 1:
        raise FormatError("netpbm dimensions must be positive")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    raster = buf[pos : pos + expected]
    if len(raster) != expected:
        raise FormatError(f"netpbm raster truncated: {len(raster)} of {expected} bytes")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return ImageTensor(arr.copy())


def _decode_pillow(path: Path) -> ImageTensor:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("L", "RGB"):
                arr = np.asarray(im)
            elif mode == "P":
                arr = np.asarray(im.convert("RGB"))
            elif mode == "1":
                arr = np.asarray(im.convert("L"))
            elif mode in ("LA", "RGBA"):
                # alpha is dropped; colour data is kept as-is
                arr = np.asarray(im.convert(mode[:-1]))
            else:
                raise FormatError(f"unsupported image mode {mode!r} (only 8-bit gray/RGB)")
    except UnidentifiedImageError as exc:
        raise FormatError(f"cannot identify image format of {path}") from exc
    return ImageTensor(np.array(arr, dtype=np.uint8))


def load_image(path: str | os.PathLike) -> ImageTensor:
    """Read an 8-bit grayscale or RGB image.

    Raises:
        OSError: the file cannot be opened.
        FormatError: unsupported format, variant or bit depth.
    """
    p = Path(path)
    with open(p, "rb") as fh:
        head = fh.read(2)
        if head in (b"P5", b"P6") or (head[:1] == b"P" and p.suffix.lower() in _NETPBM_SUFFIXES):
            return _decode_netpbm(head + fh.read())
    return _decode_pillow(p)


def encode_image(image: ImageTensor, suffix: str) -> bytes:
    """Serialise ``image`` in the lossless format implied by ``suffix``."""
    suffix = suffix.lower()
    if suffix not in _WRITE_SUFFIXES:
        raise FormatError(f"cannot write {suffix or 'extension-less'} files; use .png, .ppm or .pgm")
    data = image.data
    if suffix in _NETPBM_SUFFIXES:
        if suffix == ".ppm" and image.channels != 3:
            raise FormatError("PPM output needs a 3-channel image; use .pgm for grayscale")
        if suffix == ".pgm" and image.channels != 1:
            raise FormatError("PGM output needs a 1-channel image; use .ppm for colour")
        magic = b"P6" if image.channels == 3 else b"P5"
        header = magic + f"\n{image.width} {image.height}\n255\n".encode("ascii")
        return header + data.tobytes()

    import io

    from PIL import Image

    im = Image.fromarray(data[:, :, 0] if image.channels == 1 else data, mode="L" if image.channels == 1 else "RGB")
    out = io.BytesIO()
    im.save(out, format="PNG")
    return out.getvalue()


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write via a temp file in the target directory, then rename."""
    p = Path(path)
    if p.is_dir():
        raise IsADirectoryError(f"output path is a directory: {p}")
    fd, tmp = tempfile.mkstemp(prefix=f".{p.name}.", dir=p.parent if str(p.parent) else ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, p)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def save_image(image: ImageTensor, path: str | os.PathLike) -> None:
    """Write ``image`` losslessly; the format follows the file extension."""
    payload = encode_image(image, Path(path).suffix)
    atomic_write_bytes(path, payload)
