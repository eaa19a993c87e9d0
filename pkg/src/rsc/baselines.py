"""Handcrafted importance-to-QP mappings used as comparison points.

Importance of a coding unit is its mean semantic-map value normalized by
the largest such mean in the frame, so the most important unit always has
importance 1. A mapping curve turns importance into a QP: importance 1
gets qp_min, importance 0 gets qp_max, with either a linear or a power-law
(S**p) interpolation between them. Rounding is half-up so the mapping is
reproducible across platforms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .frames import Frame, Region, cu_grid
from .semantics import SemanticMap

CURVE_KINDS = ("linear", "nonlinear")


@dataclass(frozen=True)
class MappingCurve:
    """Importance-to-QP curve; nonlinear uses S**p, p=1 reduces to linear."""

    kind: str = "linear"
    qp_min: int = 22
    qp_max: int = 51
    p: float = 0.5

    def __post_init__(self):
        if self.kind not in CURVE_KINDS:
            raise ValueError(f"curve kind must be one of {CURVE_KINDS}")
        # curves compete against the agent, so stay inside its action window
        if not 22 <= self.qp_min <= self.qp_max <= 51:
            raise ValueError("need 22 <= qp_min <= qp_max <= 51")
        if not self.p > 0:
            raise ValueError("nonlinear exponent must be positive")


def cu_importances(smap: SemanticMap, ctu_size: int = 64) -> np.ndarray:
    """Normalized per-unit importance over the frame grid, raster order.

    Each unit's mean map value is divided by the largest unit mean in the
    frame; an all-zero map yields all-zero importance.
    """
    rects = cu_grid(smap.width, smap.height, ctu_size)
    means = np.array(
        [smap.values[y : y + h, x : x + w].mean() for x, y, w, h in rects],
        dtype=np.float64,
    )
    peak = means.max()
    return means / peak if peak > 0 else means


def cu_importance(smap: SemanticMap, region: Region, ctu_size: int = 64) -> float:
    """Importance of the unit at `region` under the frame-wide normalization."""
    rects = cu_grid(smap.width, smap.height, ctu_size)
    try:
        index = rects.index(tuple(region))
    except ValueError:
        raise ValueError(f"region {region} is not a grid unit of this map") from None
    return float(cu_importances(smap, ctu_size)[index])


def map_to_qp(importance: float, curve: MappingCurve) -> int:
    """QP for an importance in [0, 1]; importance 1 -> qp_min, 0 -> qp_max."""
    if not 0.0 <= importance <= 1.0:
        raise ValueError(f"importance {importance} outside [0, 1]")
    shaped = importance if curve.kind == "linear" else importance ** curve.p
    value = curve.qp_max - shaped * (curve.qp_max - curve.qp_min)
    return int(math.floor(value + 0.5))


def handcrafted_qpmap(frame: Frame, smap: SemanticMap, curve: MappingCurve) -> list[int]:
    """Per-unit QPs from the importance mapping, raster order."""
    if (smap.height, smap.width) != (frame.height, frame.width):
        raise ValueError("semantic map does not match frame dimensions")
    importances = cu_importances(smap, frame.ctu_size)
    return [map_to_qp(float(s), curve) for s in importances]
