"""Per-frame decision process for coding-unit QP selection.

One episode walks one frame's coding units in raster order. The state for
unit i is its luma patch scaled to [0, 1], its crop of the pre-coding
semantic map (both zero-padded at frame borders), and a 15-slot vector of
frame-global context. The action is a QP offset against the anchor, and
the reward trades the bits saved against the semantic-map damage:

    r = (bpp(anchor) - bpp(anchor + action)) - alpha_s * delta_m(action)

Both quantities come from the dataset cache tables (or, without a cache,
from an on-the-fly build over the same codec+oracle path), so rewards are
separable across units: no decision changes any other unit's reward.

Global feature slots:
    0   coding-unit count of the frame (unnormalized)
    1   current unit index / unit count
    2   mask ratio of the current unit
    3-6 mask ratios of the left/above/right/below neighbors
    7   mask ratio of the whole frame
    8   instance count of the current unit / 10, clamped to 1.0
    9-12 neighbor instance counts, same normalization
    13-14 chosen QPs of the left/above units, as (qp - 22) / 29
Missing neighbors and not-yet-chosen QPs encode as -1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import codec
from .dataset import DEFAULT_ANCHOR_QP, DEFAULT_QP_RANGE, DatasetCache, build_cache
from .frames import Frame, grid_shape
from .semantics import MASK_THRESHOLD, instances_in, mask_ratio

GLOBAL_DIM = 15
ACTION_COUNT = 30

_QP_NORM_OFFSET = 22
_QP_NORM_SCALE = 29
_INSTANCE_NORM = 10.0


@dataclass(frozen=True)
class EpisodeConfig:
    """Reward weighting and action-space geometry for one training setup."""

    alpha_s: float = 1.0
    anchor_qp: int = DEFAULT_ANCHOR_QP
    action_count: int = ACTION_COUNT
    mask_threshold: float = MASK_THRESHOLD

    def __post_init__(self):
        if not (self.alpha_s >= 0 and np.isfinite(self.alpha_s)):
            raise ValueError("alpha_s must be a finite non-negative real")
        if self.action_count < 1:
            raise ValueError("need at least one action")
        codec.check_qp(self.anchor_qp)
        codec.check_qp(self.anchor_qp + self.action_count - 1)

    def qp_of_action(self, action: int) -> int:
        if not 0 <= action < self.action_count:
            raise ValueError(f"action {action} outside [0, {self.action_count})")
        return self.anchor_qp + action


@dataclass(frozen=True)
class CuState:
    """Network input for one coding-unit decision.

    patches stacks the scaled luma crop and the semantic-map crop as two
    planes of one (2, size, size) array; states of the same unit share the
    array, so holding many states is cheap.
    """

    patches: np.ndarray
    globals: np.ndarray

    @property
    def luma_patch(self) -> np.ndarray:
        return self.patches[0]

    @property
    def map_patch(self) -> np.ndarray:
        return self.patches[1]


class FrameContext:
    """Everything state assembly needs for one frame, precomputed once."""

    def __init__(self, frame_id: str, frame: Frame, smap, layout, mask_threshold: float = MASK_THRESHOLD):
        if (smap.height, smap.width) != (frame.height, frame.width):
            raise ValueError("semantic map does not match frame dimensions")
        self.frame_id = frame_id
        self.frame = frame
        self.smap = smap
        self.layout = layout
        self.rects = frame.cu_rects()
        self.n_cus = len(self.rects)
        self.grid_rows, self.grid_cols = grid_shape(frame.width, frame.height, frame.ctu_size)
        size = frame.ctu_size
        self.patches: list[np.ndarray] = []
        for x, y, w, h in self.rects:
            patch = np.zeros((2, size, size), dtype=np.float64)
            patch[0, :h, :w] = frame.luma[y : y + h, x : x + w] / 255.0
            patch[1, :h, :w] = smap.values[y : y + h, x : x + w]
            self.patches.append(patch)
        self.mask_ratios = np.array(
            [mask_ratio(smap, r, mask_threshold) for r in self.rects], dtype=np.float64
        )
        self.frame_mask_ratio = mask_ratio(smap, None, mask_threshold)
        self.instance_counts = np.array(
            [instances_in(layout, r) for r in self.rects], dtype=np.float64
        )

    @classmethod
    def from_oracle(cls, frame_id: str, frame: Frame, oracle: Callable, mask_threshold: float = MASK_THRESHOLD) -> "FrameContext":
        smap, layout = oracle(frame, qp=None)
        return cls(frame_id, frame, smap, layout, mask_threshold)

    def neighbors(self, index: int) -> tuple[int, int, int, int]:
        """Indices of (left, above, right, below) units; -1 when absent."""
        row, col = divmod(index, self.grid_cols)
        left = index - 1 if col > 0 else -1
        above = index - self.grid_cols if row > 0 else -1
        right = index + 1 if col < self.grid_cols - 1 else -1
        below = index + self.grid_cols if row < self.grid_rows - 1 else -1
        return left, above, right, below

    def global_features(self, index: int, chosen_qps: Sequence[int | None]) -> np.ndarray:
        g = np.full(GLOBAL_DIM, -1.0, dtype=np.float64)
        left, above, right, below = self.neighbors(index)
        g[0] = self.n_cus
        g[1] = index / self.n_cus
        g[2] = self.mask_ratios[index]
        for slot, nb in zip((3, 4, 5, 6), (left, above, right, below)):
            if nb >= 0:
                g[slot] = self.mask_ratios[nb]
        g[7] = self.frame_mask_ratio
        g[8] = min(self.instance_counts[index] / _INSTANCE_NORM, 1.0)
        for slot, nb in zip((9, 10, 11, 12), (left, above, right, below)):
            if nb >= 0:
                g[slot] = min(self.instance_counts[nb] / _INSTANCE_NORM, 1.0)
        if left >= 0 and chosen_qps[left] is not None:
            g[13] = (chosen_qps[left] - _QP_NORM_OFFSET) / _QP_NORM_SCALE
        if above >= 0 and chosen_qps[above] is not None:
            g[14] = (chosen_qps[above] - _QP_NORM_OFFSET) / _QP_NORM_SCALE
        return g

    def state(self, index: int, chosen_qps: Sequence[int | None]) -> CuState:
        if not 0 <= index < self.n_cus:
            raise ValueError(f"unit index {index} outside [0, {self.n_cus})")
        return CuState(self.patches[index], self.global_features(index, chosen_qps))


def _live_tables(ctx: FrameContext, oracle: Callable, config: EpisodeConfig) -> tuple[np.ndarray, np.ndarray]:
    """Single-frame reward tables built through the dataset path."""
    qp_hi = config.anchor_qp + config.action_count - 1
    cache = build_cache(
        [(ctx.frame_id, ctx.frame)],
        oracle,
        qp_range=(config.anchor_qp, qp_hi),
        anchor_qp=config.anchor_qp,
        seed=0,
        train_fraction=1.0,
    )
    return cache.reward_tables(ctx.frame_id)


class CodingEnv:
    """Raster walk over one frame's units; rewards come from cached tables."""

    def __init__(
        self,
        ctx: FrameContext,
        config: EpisodeConfig,
        cache: DatasetCache | None = None,
        oracle: Callable | None = None,
    ):
        self.ctx = ctx
        self.config = config
        if cache is not None:
            if config.anchor_qp != cache.anchor_qp:
                raise ValueError(
                    f"config anchor {config.anchor_qp} != cache anchor {cache.anchor_qp}"
                )
            top_qp = config.anchor_qp + config.action_count - 1
            if top_qp > cache.qp_max or config.anchor_qp < cache.qp_min:
                raise ValueError("action space exceeds the cached QP range")
            bpp, delta = cache.reward_tables(ctx.frame_id)
            base = config.anchor_qp - cache.qp_min
            self._bpp = bpp[:, base : base + config.action_count]
            self._delta = delta[:, base : base + config.action_count]
        else:
            if oracle is None:
                raise ValueError("need a dataset cache or an oracle for live rewards")
            self._bpp, self._delta = _live_tables(ctx, oracle, config)
        if self._bpp.shape != (ctx.n_cus, config.action_count):
            raise ValueError("reward table shape does not match the frame grid")
        self._index: int | None = None
        self.chosen_qps: list[int | None] = [None] * ctx.n_cus

    def reset(self) -> CuState:
        self._index = 0
        self.chosen_qps = [None] * self.ctx.n_cus
        return self.ctx.state(0, self.chosen_qps)

    @property
    def done(self) -> bool:
        return self._index is not None and self._index >= self.ctx.n_cus

    def reward(self, cu_index: int, action: int) -> float:
        """Reward for taking `action` at a unit, independent of history."""
        if not 0 <= action < self.config.action_count:
            raise ValueError(f"action {action} outside [0, {self.config.action_count})")
        saved = self._bpp[cu_index, 0] - self._bpp[cu_index, action]
        return float(saved - self.config.alpha_s * self._delta[cu_index, action])

    def step(self, action: int) -> tuple[CuState | None, float]:
        """Apply the QP choice for the current unit; None marks the end."""
        if self._index is None:
            raise RuntimeError("call reset() before step()")
        if self.done:
            raise RuntimeError("episode already finished")
        i = self._index
        r = self.reward(i, int(action))
        self.chosen_qps[i] = self.config.qp_of_action(int(action))
        self._index = i + 1
        if self._index >= self.ctx.n_cus:
            return None, r
        return self.ctx.state(self._index, self.chosen_qps), r


def make_env(
    frame_id: str,
    frame: Frame,
    oracle: Callable,
    config: EpisodeConfig,
    cache: DatasetCache | None = None,
) -> CodingEnv:
    """Build the frame context through the oracle and wrap it in an env."""
    ctx = FrameContext.from_oracle(frame_id, frame, oracle, config.mask_threshold)
    return CodingEnv(ctx, config, cache=cache, oracle=oracle)


def episode_return(
    qpmap: Sequence[int],
    frame_id: str,
    cache: DatasetCache,
    config: EpisodeConfig,
) -> float:
    """Total reward of a full QP assignment, straight from the tables."""
    bpp, delta = cache.reward_tables(frame_id)
    base = config.anchor_qp - cache.qp_min
    if len(qpmap) != bpp.shape[0]:
        raise ValueError(f"qpmap has {len(qpmap)} entries for {bpp.shape[0]} units")
    total = 0.0
    for cu, qp in enumerate(qpmap):
        col = int(qp) - cache.qp_min
        if not base <= col < base + config.action_count:
            raise ValueError(f"qp {qp} outside the action range")
        saved = bpp[cu, base] - bpp[cu, col]
        total += saved - config.alpha_s * delta[cu, col]
    return float(total)


def optimal_qpmap(frame_id: str, cache: DatasetCache, config: EpisodeConfig) -> tuple[list[int], float]:
    """Per-unit argmax of the reward tables: the separable global optimum.

    Ties resolve to the lowest QP, matching greedy action selection.
    """
    bpp, delta = cache.reward_tables(frame_id)
    base = config.anchor_qp - cache.qp_min
    cols = slice(base, base + config.action_count)
    rewards = (bpp[:, base : base + 1] - bpp[:, cols]) - config.alpha_s * delta[:, cols]
    best = rewards.argmax(axis=1)
    qpmap = [config.anchor_qp + int(a) for a in best]
    return qpmap, float(rewards.max(axis=1).sum())
