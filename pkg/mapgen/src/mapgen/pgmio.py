"""Binary PGM reading and writing, byte-compatible with the coding pipeline.

Maps are stored as 16-bit PGM with big-endian samples and values scaled by
65535; instance layouts as 8-bit PGM whose samples are the labels. The
header is exactly ``P5\\n<width> <height>\\n<maxval>\\n``.
"""

from __future__ import annotations

import numpy as np

MAP_SCALE = 65535


def write_pgm(path, samples: np.ndarray, maxval: int = 255) -> None:
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


def _header(data: bytes, path) -> tuple[int, int, int, int]:
    """Parse the P5 header; returns (width, height, maxval, raster offset)."""
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        fields.append(int(data[start:pos]))
    return fields[0], fields[1], fields[2], pos + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM; uint8 for maxval 255, uint16 for maxval 65535."""
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, maxval, offset = _header(data, path)
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


def write_map(path, values: np.ndarray) -> None:
    """Store per-pixel importances in [0, 1] as a 16-bit map file."""
    values = np.asarray(values, dtype=np.float64)
    if values.min() < 0.0 or values.max() > 1.0:
        raise ValueError("map values must lie in [0, 1]")
    write_pgm(path, np.rint(values * MAP_SCALE).astype(np.uint16), maxval=MAP_SCALE)


def write_layout(path, labels: np.ndarray) -> None:
    """Store instance labels (0 = background) as an 8-bit layout file."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("cannot store more than 255 instances in an 8-bit layout")
    write_pgm(path, labels.astype(np.uint8), maxval=255)
