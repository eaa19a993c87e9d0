"""Semantic maps, instance layouts, and the oracles that produce them.

A semantic map assigns every pixel an importance in [0, 1]. An instance
layout labels pixels with the object instance they belong to (0 means
background). Two oracle implementations share one calling convention,
``oracle(frame, qp=None) -> (SemanticMap, InstanceLayout)``:

* proxy_oracle derives importance from local gradient energy. It needs no
  model weights, so the whole pipeline runs self-contained.
* file_oracle serves precomputed maps from disk, either one static pair of
  files or a directory of per-QP maps keyed by the uniform QP that produced
  the reconstruction being scored.

Maps travel as 16-bit binary PGM (values scaled by 65535, big-endian
samples) and layouts as 8-bit binary PGM whose maxval-255 labels bound the
instance count.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .frames import Frame, Region, read_pgm, write_pgm

MASK_THRESHOLD = 0.5
MIN_INSTANCE_AREA = 64
_MAP_SCALE = 65535


@dataclass(frozen=True)
class SemanticMap:
    """Per-pixel importance in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise ValueError("semantic map must be a non-empty 2-d array")
        if values.min() < 0.0 or values.max() > 1.0:
            raise ValueError("semantic map values must lie in [0, 1]")
        object.__setattr__(self, "values", values)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class InstanceLayout:
    """Instance labels per pixel; 0 is background, instances are 1..count."""

    labels: np.ndarray
    instance_count: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.size == 0:
            raise ValueError("instance layout must be a non-empty 2-d array")
        labels = labels.astype(np.int32)
        if labels.min() < 0 or labels.max() > self.instance_count:
            raise ValueError("labels must lie in [0, instance_count]")
        object.__setattr__(self, "labels", labels)


def _region_slice(shape: tuple[int, int], region: Region) -> tuple[slice, slice]:
    x, y, w, h = region
    if w <= 0 or h <= 0:
        raise ValueError(f"region {region} is empty")
    if x < 0 or y < 0 or x + w > shape[1] or y + h > shape[0]:
        raise ValueError(f"region {region} exceeds bounds {shape[1]}x{shape[0]}")
    return slice(y, y + h), slice(x, x + w)


def map_diff(before: SemanticMap, after: SemanticMap, region: Region | None = None) -> float:
    """Mean absolute per-pixel difference, over a region or the whole map."""
    if before.values.shape != after.values.shape:
        raise ValueError("semantic maps differ in shape")
    a, b = before.values, after.values
    if region is not None:
        ys, xs = _region_slice(a.shape, region)
        a, b = a[ys, xs], b[ys, xs]
    return float(np.mean(np.abs(a - b)))


def mask_ratio(smap: SemanticMap, region: Region | None = None, threshold: float = MASK_THRESHOLD) -> float:
    """Fraction of pixels at or above the importance threshold."""
    values = smap.values
    if region is not None:
        ys, xs = _region_slice(values.shape, region)
        values = values[ys, xs]
    return float(np.count_nonzero(values >= threshold) / values.size)


def instances_in(layout: InstanceLayout, region: Region | None = None) -> int:
    """Number of distinct instances with at least one pixel in the region."""
    labels = layout.labels
    if region is not None:
        ys, xs = _region_slice(labels.shape, region)
        labels = labels[ys, xs]
    present = np.unique(labels)
    return int(np.count_nonzero(present))


def _label_instances(mask: np.ndarray) -> InstanceLayout:
    """8-connected components of the mask, area-filtered, scanline order."""
    raw, found = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    labels = np.zeros(mask.shape, dtype=np.int32)
    if found == 0:
        return InstanceLayout(labels, 0)
    counts = np.bincount(raw.ravel(), minlength=found + 1)
    lut = np.zeros(found + 1, dtype=np.int32)
    next_label = 0
    for lab in range(1, found + 1):
        if counts[lab] >= MIN_INSTANCE_AREA:
            next_label += 1
            lut[lab] = next_label
    return InstanceLayout(lut[raw], next_label)


def proxy_oracle(frame: Frame, qp: int | None = None) -> tuple[SemanticMap, InstanceLayout]:
    """Gradient-energy importance map; no models, no weights.

    Pipeline: 3x3 Sobel gradient magnitude, 5x5 box blur, then division by
    the frame maximum (an all-zero response stays all zero). Instances are
    8-connected components of the thresholded map with at least
    MIN_INSTANCE_AREA pixels, labeled in scanline discovery order. The qp
    argument is accepted for calling-convention compatibility and ignored.
    """
    luma = frame.luma.astype(np.float64)
    gx = ndimage.sobel(luma, axis=1, mode="nearest")
    gy = ndimage.sobel(luma, axis=0, mode="nearest")
    energy = ndimage.uniform_filter(np.hypot(gx, gy), size=5, mode="nearest")
    # the running-sum box filter can leave tiny negative dust on flat regions
    np.clip(energy, 0.0, None, out=energy)
    peak = energy.max()
    values = energy / peak if peak > 0 else np.zeros_like(energy)
    smap = SemanticMap(values)
    return smap, _label_instances(values >= MASK_THRESHOLD)


def write_map(path, smap: SemanticMap) -> None:
    write_pgm(path, np.rint(smap.values * _MAP_SCALE).astype(np.uint16), maxval=_MAP_SCALE)


def read_map(path) -> SemanticMap:
    arr = read_pgm(path)
    if arr.dtype != np.uint16:
        raise ValueError(f"{path}: semantic maps must be 16-bit PGM")
    return SemanticMap(arr.astype(np.float64) / _MAP_SCALE)


def write_layout(path, layout: InstanceLayout) -> None:
    if layout.instance_count > 255:
        raise ValueError("cannot store more than 255 instances in an 8-bit layout")
    write_pgm(path, layout.labels.astype(np.uint8), maxval=255)


def read_layout(path) -> InstanceLayout:
    arr = read_pgm(path)
    if arr.dtype != np.uint8:
        raise ValueError(f"{path}: instance layouts must be 8-bit PGM")
    return InstanceLayout(arr.astype(np.int32), int(arr.max()))


class FileOracle:
    """Serves precomputed maps from disk.

    Static mode binds one map file and one layout file. Per-qp mode binds a
    directory holding ``orig.pgm`` (the pre-coding map, returned when no QP
    is given) plus ``q<QP>.pgm`` for each uniform QP of interest; the layout
    stays a single static file. Files load eagerly and are immutable after
    construction.
    """

    def __init__(self, map_path, layout_path, mode: str = "static"):
        if mode not in ("static", "per-qp"):
            raise ValueError(f"unknown file-oracle mode {mode!r}")
        self.mode = mode
        self.layout = read_layout(layout_path)
        self._maps: dict[int | None, SemanticMap] = {}
        if mode == "static":
            self._maps[None] = read_map(map_path)
        else:
            root = Path(map_path)
            if not root.is_dir():
                raise ValueError(f"{map_path}: per-qp oracle needs a directory")
            orig = root / "orig.pgm"
            if orig.exists():
                self._maps[None] = read_map(orig)
            for entry in sorted(root.glob("q*.pgm")):
                try:
                    qp = int(entry.stem[1:])
                except ValueError:
                    raise ValueError(f"{entry}: per-qp map names must look like q<QP>.pgm")
                self._maps[qp] = read_map(entry)
            if not self._maps:
                raise ValueError(f"{map_path}: no maps found")

    def __call__(self, frame: Frame, qp: int | None = None) -> tuple[SemanticMap, InstanceLayout]:
        key = None if self.mode == "static" else qp
        if key not in self._maps:
            raise KeyError(f"no stored map for qp={qp}")
        smap = self._maps[key]
        if (smap.height, smap.width) != (frame.height, frame.width):
            raise ValueError(
                f"stored map is {smap.width}x{smap.height}, frame is {frame.width}x{frame.height}"
            )
        return smap, self.layout


def file_oracle(map_path, layout_path, mode: str = "static") -> FileOracle:
    """Construct a FileOracle; see the class for the on-disk layout."""
    return FileOracle(map_path, layout_path, mode=mode)
