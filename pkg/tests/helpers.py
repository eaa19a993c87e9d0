"""Shared builders for test frames and synthetic reward tables."""

from __future__ import annotations

import numpy as np

from rsc.dataset import DatasetCache, FrameMeta, RDSample
from rsc.frames import Frame, grid_shape


def flat_luma(size: int = 128, value: int = 128) -> np.ndarray:
    return np.full((size, size), value, dtype=np.uint8)


def textured_luma(size: int = 128, seed: int = 5) -> np.ndarray:
    """Deterministic mix of gradient, sinusoid, and noise; every CU busy."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    base = 96 + 0.3 * xx + 20 * np.sin(2 * np.pi * yy / 23) + 14 * np.sin(2 * np.pi * (xx + yy) / 31)
    base += rng.normal(0, 6, size=(size, size))
    return np.clip(np.rint(base), 0, 255).astype(np.uint8)


def object_luma(size: int = 128, seed: int = 9) -> np.ndarray:
    """Flat background with two bright textured rectangles (two instances)."""
    rng = np.random.default_rng(seed)
    img = np.full((size, size), 70.0)
    img += rng.normal(0, 2, size=(size, size))
    for x0, y0, w, h in ((12, 14, 36, 30), (72, 70, 40, 44)):
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        tex = 28 * np.sin(2 * np.pi * xx / 7) + 24 * np.sin(2 * np.pi * yy / 9)
        img[y0 : y0 + h, x0 : x0 + w] = 170 + tex
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def table_cache(
    specs: dict[str, tuple[int, int, str]],
    row_fn,
    qp_range: tuple[int, int] = (22, 51),
    anchor_qp: int = 22,
    seed: int = 0,
    ctu_size: int = 64,
) -> DatasetCache:
    """Cache with hand-designed rows instead of codec measurements.

    specs maps frame_id -> (width, height, split); row_fn(frame_id, cu, qp)
    returns (bpp, delta_m) for that cell. MSE is filled with zero; nothing
    in training reads it.
    """
    metas = []
    samples = []
    for fid, (width, height, split) in specs.items():
        metas.append(FrameMeta(fid, width, height, split))
        rows, cols = grid_shape(width, height, ctu_size)
        for cu in range(rows * cols):
            for qp in range(qp_range[0], qp_range[1] + 1):
                bpp, delta = row_fn(fid, cu, qp)
                samples.append(RDSample(fid, cu, qp, float(bpp), float(delta), 0.0))
    return DatasetCache(metas, samples, seed=seed, anchor_qp=anchor_qp,
                        qp_range=qp_range, ctu_size=ctu_size)


def distinct_patch_luma(size: int, ctu_size: int, seed: int = 3) -> np.ndarray:
    """Frame whose CUs carry visibly different textures (distinct stripes)."""
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size), dtype=np.float64)
    n = size // ctu_size
    for row in range(n):
        for col in range(n):
            period = 4 + 3 * (row * n + col)
            phase = rng.uniform(0, 2 * np.pi)
            yy, xx = np.mgrid[0:ctu_size, 0:ctu_size].astype(np.float64)
            angle = (row * n + col) * 0.7
            u = np.cos(angle) * xx + np.sin(angle) * yy
            tile = 128 + 60 * np.sin(2 * np.pi * u / period + phase)
            img[row * ctu_size : (row + 1) * ctu_size,
                col * ctu_size : (col + 1) * ctu_size] = tile
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def make_frame(luma: np.ndarray, ctu_size: int = 64) -> Frame:
    return Frame(luma, ctu_size)
