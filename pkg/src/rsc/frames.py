"""Single-plane frames, the coding-unit grid, and binary PGM I/O.

A frame is one 8-bit luma plane. Coding units (CUs) tile the frame on a
fixed square grid; units on the right and bottom edges may be partial and
keep their true pixel extents in the grid description.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_CTU_SIZE = 64

# (x, y, width, height) in pixels, width/height clipped at frame edges.
Region = tuple[int, int, int, int]


@dataclass(frozen=True)
class Frame:
    """One luma plane plus its coding-grid geometry."""

    luma: np.ndarray
    ctu_size: int = DEFAULT_CTU_SIZE

    def __post_init__(self):
        luma = np.asarray(self.luma)
        if luma.ndim != 2 or luma.size == 0:
            raise ValueError("frame luma must be a non-empty 2-d array")
        if luma.dtype != np.uint8:
            if luma.min() < 0 or luma.max() > 255:
                raise ValueError("frame samples must lie in [0, 255]")
            luma = luma.astype(np.uint8)
        if self.ctu_size < 8 or self.ctu_size % 8 != 0:
            raise ValueError("ctu_size must be a positive multiple of 8")
        object.__setattr__(self, "luma", luma)

    @property
    def width(self) -> int:
        return self.luma.shape[1]

    @property
    def height(self) -> int:
        return self.luma.shape[0]

    @property
    def cu_count(self) -> int:
        return len(self.cu_rects())

    def cu_rects(self) -> list[Region]:
        """Coding-unit rectangles in raster order, clipped to the frame."""
        return cu_grid(self.width, self.height, self.ctu_size)


def cu_grid(width: int, height: int, ctu_size: int = DEFAULT_CTU_SIZE) -> list[Region]:
    """Raster-order list of (x, y, w, h) unit rectangles covering the frame."""
    rects: list[Region] = []
    for y in range(0, height, ctu_size):
        for x in range(0, width, ctu_size):
            rects.append((x, y, min(ctu_size, width - x), min(ctu_size, height - y)))
    return rects


def grid_shape(width: int, height: int, ctu_size: int = DEFAULT_CTU_SIZE) -> tuple[int, int]:
    """Number of (rows, cols) in the coding-unit grid."""
    return (-(-height // ctu_size), -(-width // ctu_size))


def _read_pgm_header(data: bytes, path) -> tuple[int, int, int, int]:
    """Parse a P5 header, returning (width, height, maxval, data offset)."""
    if data[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        if pos >= len(data):
            raise ValueError(f"{path}: truncated PGM header")
        ch = data[pos : pos + 1]
        if ch == b"#":
            pos = data.find(b"\n", pos)
            if pos < 0:
                raise ValueError(f"{path}: truncated PGM comment")
            pos += 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            token = data[pos:end]
            if not token.isdigit():
                raise ValueError(f"{path}: bad PGM header token {token!r}")
            fields.append(int(token))
            pos = end
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ValueError(f"{path}: missing raster separator")
    width, height, maxval = fields
    if width <= 0 or height <= 0 or maxval <= 0:
        raise ValueError(f"{path}: bad PGM dimensions")
    return width, height, maxval, pos + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM.

    Returns a uint8 array for maxval 255 and a uint16 array (big-endian
    samples on disk) for maxval 65535; other maxvals are rejected.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, maxval, offset = _read_pgm_header(data, path)
    if maxval == 255:
        dtype, itemsize = np.dtype(np.uint8), 1
    elif maxval == 65535:
        dtype, itemsize = np.dtype(">u2"), 2
    else:
        raise ValueError(f"{path}: unsupported PGM maxval {maxval}")
    raster = data[offset : offset + width * height * itemsize]
    if len(raster) != width * height * itemsize:
        raise ValueError(f"{path}: truncated PGM raster")
    arr = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return arr.astype(np.uint16) if itemsize == 2 else arr.copy()


def write_pgm(path, samples: np.ndarray, maxval: int = 255) -> None:
    """Write a binary PGM (big-endian samples when maxval is 65535)."""
    samples = np.asarray(samples)
    if samples.ndim != 2:
        raise ValueError("PGM samples must be a 2-d array")
    if maxval == 255:
        payload = samples.astype(np.uint8).tobytes()
    elif maxval == 65535:
        payload = samples.astype(">u2").tobytes()
    else:
        raise ValueError(f"unsupported PGM maxval {maxval}")
    height, width = samples.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n{maxval}\n".encode("ascii"))
        fh.write(payload)


def read_frame(path, ctu_size: int = DEFAULT_CTU_SIZE) -> Frame:
    arr = read_pgm(path)
    if arr.dtype != np.uint8:
        raise ValueError(f"{path}: frames must be 8-bit PGM")
    return Frame(arr, ctu_size)


def write_frame(path, frame: Frame) -> None:
    write_pgm(path, frame.luma, maxval=255)
