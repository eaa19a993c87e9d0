"""Precomputed rate/semantic-distortion tables for training.

For every frame and every QP in the configured range, the frame is encoded
uniformly, the oracle is run on the reconstruction, and each coding unit
contributes one row: its bits per pixel, its mean semantic-map change
against the anchor-QP reconstruction's map, and its pixel MSE. Training
then never touches the codec or the oracle again; rewards come straight
from these tables.

Cache files are line-oriented text:

    rsc-cache v1
    seed=<int> anchor_qp=<int> qp_min=<int> qp_max=<int> ctu=<int>
    frame id=<str> width=<int> height=<int> split=<train|test>
    ...
    samples=<int>
    <frame_id> <cu_index> <qp> <bpp> <delta_m> <mse>
    ...

Reals are written with 17 significant digits, which round-trips doubles
exactly, so save -> load -> save is byte-identical.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import codec
from .frames import Frame
from .semantics import map_diff

CACHE_MAGIC = "rsc-cache v1"

DEFAULT_QP_RANGE = (22, 51)
DEFAULT_ANCHOR_QP = 22
TRAIN_FRACTION = 0.8


class CacheParseError(ValueError):
    """Raised for malformed cache files; carries the offending line number."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class RDSample:
    """One (frame, coding unit, qp) measurement."""

    frame_id: str
    cu_index: int
    qp: int
    bpp: float
    delta_m: float
    mse: float


@dataclass(frozen=True)
class FrameMeta:
    frame_id: str
    width: int
    height: int
    split: str


class DatasetCache:
    """In-memory table of RDSamples plus the frame list and build settings."""

    def __init__(
        self,
        frames: Sequence[FrameMeta],
        samples: Sequence[RDSample],
        seed: int,
        anchor_qp: int = DEFAULT_ANCHOR_QP,
        qp_range: tuple[int, int] = DEFAULT_QP_RANGE,
        ctu_size: int = 64,
    ):
        self.frames = list(frames)
        self.seed = int(seed)
        self.anchor_qp = int(anchor_qp)
        self.qp_min, self.qp_max = int(qp_range[0]), int(qp_range[1])
        self.ctu_size = int(ctu_size)
        if not self.qp_min <= self.anchor_qp <= self.qp_max:
            raise ValueError("anchor QP outside the cached QP range")
        self._by_key: dict[tuple[str, int, int], RDSample] = {}
        for s in samples:
            self._by_key[(s.frame_id, s.cu_index, s.qp)] = s
        self._tables: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    @property
    def samples(self) -> list[RDSample]:
        return [self._by_key[k] for k in sorted(self._by_key)]

    @property
    def qp_count(self) -> int:
        return self.qp_max - self.qp_min + 1

    def __len__(self) -> int:
        return len(self._by_key)

    def frame_meta(self, frame_id: str) -> FrameMeta:
        for meta in self.frames:
            if meta.frame_id == frame_id:
                return meta
        raise KeyError(f"frame {frame_id!r} not in cache")

    def frame_ids(self, split: str | None = None) -> list[str]:
        return [m.frame_id for m in self.frames if split is None or m.split == split]

    def cu_count(self, frame_id: str) -> int:
        meta = self.frame_meta(frame_id)
        rows = -(-meta.height // self.ctu_size)
        cols = -(-meta.width // self.ctu_size)
        return rows * cols

    def lookup(self, frame_id: str, cu_index: int, qp: int) -> RDSample:
        key = (frame_id, int(cu_index), int(qp))
        if key not in self._by_key:
            raise KeyError(f"no cached sample for frame={frame_id} cu={cu_index} qp={qp}")
        return self._by_key[key]

    def reward_tables(self, frame_id: str) -> tuple[np.ndarray, np.ndarray]:
        """Dense (cu, qp) arrays of bpp and delta_m for one frame."""
        if frame_id not in self._tables:
            n_cu = self.cu_count(frame_id)
            bpp = np.empty((n_cu, self.qp_count), dtype=np.float64)
            delta = np.empty_like(bpp)
            for cu in range(n_cu):
                for col, qp in enumerate(range(self.qp_min, self.qp_max + 1)):
                    s = self.lookup(frame_id, cu, qp)
                    bpp[cu, col] = s.bpp
                    delta[cu, col] = s.delta_m
            self._tables[frame_id] = (bpp, delta)
        return self._tables[frame_id]


def split_frames(frame_ids: Sequence[str], seed: int, train_fraction: float = TRAIN_FRACTION) -> dict[str, str]:
    """Seeded train/test assignment; at least one frame on each side when possible."""
    ids = list(frame_ids)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_train = int(round(train_fraction * len(ids)))
    if len(ids) >= 2:
        n_train = min(max(n_train, 1), len(ids) - 1)
    train = {ids[i] for i in order[:n_train]}
    return {fid: ("train" if fid in train else "test") for fid in ids}


def build_cache(
    frames: Sequence[tuple[str, Frame]],
    oracle: Callable,
    qp_range: tuple[int, int] = DEFAULT_QP_RANGE,
    anchor_qp: int = DEFAULT_ANCHOR_QP,
    seed: int = 0,
    train_fraction: float = TRAIN_FRACTION,
) -> DatasetCache:
    """Encode every frame at every QP in range and tabulate the results.

    Args:
        frames: (frame_id, Frame) pairs; ids must be unique, non-empty, and
            contain no whitespace (they key cache file records).
        oracle: callable (frame, qp=None) -> (SemanticMap, InstanceLayout);
            called once per reconstruction with the uniform QP that made it.
            A mapping of frame_id -> callable binds an oracle per frame,
            which file-backed oracles need.
        qp_range: inclusive QP span to sweep.
        anchor_qp: QP whose reconstruction map is the delta_m reference.
        seed: drives the train/test split and is recorded in the cache.

    Raises:
        ValueError: bad ids or an empty frame list.
        RuntimeError: oracle failure or shape mismatch, naming the frame.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("no frames given")
    ids = [fid for fid, _ in frames]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate frame ids")
    for fid in ids:
        if not fid or any(c.isspace() for c in fid):
            raise ValueError(f"bad frame id {fid!r}")
    qp_lo, qp_hi = int(qp_range[0]), int(qp_range[1])
    if not (codec.QP_MIN <= qp_lo <= anchor_qp <= qp_hi <= codec.QP_MAX):
        raise ValueError("need qp_min <= anchor_qp <= qp_max inside the legal QP range")

    split = split_frames(ids, seed, train_fraction)
    metas: list[FrameMeta] = []
    samples: list[RDSample] = []
    ctu_size = frames[0][1].ctu_size
    for fid, frame in frames:
        if frame.ctu_size != ctu_size:
            raise ValueError("all frames in one cache must share the unit size")
        metas.append(FrameMeta(fid, frame.width, frame.height, split[fid]))
        rects = frame.cu_rects()
        frame_oracle = oracle[fid] if isinstance(oracle, Mapping) else oracle
        try:
            anchor_results, anchor_recon = codec.encode_frame_uniform(frame, anchor_qp)
            anchor_map, _ = frame_oracle(anchor_recon, qp=anchor_qp)
            per_qp: dict[int, tuple[list, object]] = {anchor_qp: (anchor_results, anchor_map)}
            for qp in range(qp_lo, qp_hi + 1):
                if qp == anchor_qp:
                    continue
                results, recon = codec.encode_frame_uniform(frame, qp)
                smap, _ = frame_oracle(recon, qp=qp)
                per_qp[qp] = (results, smap)
            for qp in range(qp_lo, qp_hi + 1):
                results, smap = per_qp[qp]
                if (smap.height, smap.width) != (frame.height, frame.width):
                    raise ValueError(
                        f"oracle map is {smap.width}x{smap.height}, frame is {frame.width}x{frame.height}"
                    )
                for cu, (rect, res) in enumerate(zip(rects, results)):
                    samples.append(
                        RDSample(
                            frame_id=fid,
                            cu_index=cu,
                            qp=qp,
                            bpp=res.bpp,
                            delta_m=map_diff(smap, anchor_map, rect),
                            mse=res.mse,
                        )
                    )
        except Exception as exc:
            raise RuntimeError(f"dataset build failed at frame {fid!r}: {exc}") from exc
    return DatasetCache(metas, samples, seed=seed, anchor_qp=anchor_qp, qp_range=(qp_lo, qp_hi), ctu_size=ctu_size)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_cache(cache: DatasetCache, path) -> None:
    lines = [CACHE_MAGIC]
    lines.append(
        f"seed={cache.seed} anchor_qp={cache.anchor_qp} qp_min={cache.qp_min} "
        f"qp_max={cache.qp_max} ctu={cache.ctu_size}"
    )
    for m in cache.frames:
        lines.append(f"frame id={m.frame_id} width={m.width} height={m.height} split={m.split}")
    rows = cache.samples
    lines.append(f"samples={len(rows)}")
    for s in rows:
        lines.append(
            f"{s.frame_id} {s.cu_index} {s.qp} {_fmt(s.bpp)} {_fmt(s.delta_m)} {_fmt(s.mse)}"
        )
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_kv(pairs: Sequence[str], path, line_no: int) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise CacheParseError(path, line_no, f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key] = value
    return out


def load_cache(path) -> DatasetCache:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CACHE_MAGIC:
        raise CacheParseError(path, 1, f"expected header {CACHE_MAGIC!r}")
    if len(lines) < 2:
        raise CacheParseError(path, 2, "missing settings line")
    settings = _parse_kv(lines[1].split(), path, 2)
    try:
        seed = int(settings["seed"])
        anchor_qp = int(settings["anchor_qp"])
        qp_min = int(settings["qp_min"])
        qp_max = int(settings["qp_max"])
        ctu = int(settings["ctu"])
    except (KeyError, ValueError) as exc:
        raise CacheParseError(path, 2, f"bad settings line: {exc}") from exc

    metas: list[FrameMeta] = []
    idx = 2
    while idx < len(lines) and lines[idx].startswith("frame "):
        kv = _parse_kv(lines[idx].split()[1:], path, idx + 1)
        try:
            metas.append(
                FrameMeta(kv["id"], int(kv["width"]), int(kv["height"]), kv["split"])
            )
        except (KeyError, ValueError) as exc:
            raise CacheParseError(path, idx + 1, f"bad frame line: {exc}") from exc
        if metas[-1].split not in ("train", "test"):
            raise CacheParseError(path, idx + 1, f"bad split {metas[-1].split!r}")
        idx += 1
    if idx >= len(lines) or not lines[idx].startswith("samples="):
        raise CacheParseError(path, idx + 1, "expected samples=<count> line")
    try:
        expected = int(lines[idx].split("=", 1)[1])
    except ValueError as exc:
        raise CacheParseError(path, idx + 1, f"bad sample count: {exc}") from exc
    idx += 1

    samples: list[RDSample] = []
    for row in range(expected):
        line_no = idx + row + 1
        if idx + row >= len(lines):
            raise CacheParseError(path, line_no, f"truncated: expected {expected} records")
        parts = lines[idx + row].split()
        if len(parts) != 6:
            raise CacheParseError(path, line_no, f"expected 6 fields, got {len(parts)}")
        try:
            samples.append(
                RDSample(
                    frame_id=parts[0],
                    cu_index=int(parts[1]),
                    qp=int(parts[2]),
                    bpp=float(parts[3]),
                    delta_m=float(parts[4]),
                    mse=float(parts[5]),
                )
            )
        except ValueError as exc:
            raise CacheParseError(path, line_no, f"bad record: {exc}") from exc
    if idx + expected < len(lines) and any(l.strip() for l in lines[idx + expected :]):
        raise CacheParseError(path, idx + expected + 1, "trailing content after records")
    return DatasetCache(metas, samples, seed=seed, anchor_qp=anchor_qp, qp_range=(qp_min, qp_max), ctu_size=ctu)
