"""Rate-distortion curves, Bjontegaard deltas, and protocol runners.

The semantic fidelity metric is the IoU of the thresholded semantic masks
of the original frame's map and the reconstruction's map; two empty masks
count as perfect agreement. BD deltas follow the standard construction:
fit a cubic polynomial to each curve (log-rate against metric for BD-BR,
metric against log-rate for the metric delta), integrate both fits in
closed form over the overlapping range only, and difference the means.

Curves serialize as CSV with a ``# seed=<n>`` comment header and
``rate,metric,label`` rows; 17-significant-digit reals round-trip exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import codec
from .frames import Frame
from .semantics import MASK_THRESHOLD, SemanticMap, map_diff

DEFAULT_JITTER_CENTERS = (22, 27, 32, 37)
DEFAULT_JITTER = 5


class EvaluationError(ValueError):
    """Raised when a curve or protocol cannot be evaluated."""


@dataclass(frozen=True)
class RdCurve:
    """Operating points of one method; rates positive, metric finite."""

    points: tuple[tuple[float, float], ...]
    label: str = ""

    def __post_init__(self):
        pts = tuple((float(r), float(m)) for r, m in self.points)
        for r, m in pts:
            if not (r > 0 and math.isfinite(r) and math.isfinite(m)):
                raise EvaluationError(f"bad curve point ({r}, {m})")
        object.__setattr__(self, "points", pts)

    def sorted_points(self) -> list[tuple[float, float]]:
        return sorted(self.points)

    @property
    def rates(self) -> np.ndarray:
        return np.array([p[0] for p in self.sorted_points()])

    @property
    def metrics(self) -> np.ndarray:
        return np.array([p[1] for p in self.sorted_points()])


@dataclass(frozen=True)
class BdResult:
    """bd_br: mean rate change in percent; bd_metric: mean metric change."""

    bd_br: float
    bd_metric: float


def _check_curve(curve: RdCurve, name: str) -> None:
    rates = curve.rates
    if len(rates) < 4:
        raise EvaluationError(f"{name}: need at least 4 points, got {len(rates)}")
    if np.any(np.diff(rates) <= 0):
        raise EvaluationError(f"{name}: rates must be strictly increasing after sorting")


def _fit_and_mean(x: np.ndarray, y: np.ndarray, lo: float, hi: float) -> float:
    """Mean of the cubic fit y(x) over [lo, hi], via the closed-form integral."""
    if len(np.unique(x)) < 4:
        raise EvaluationError("curve needs 4 distinct abscissa values for a cubic fit")
    coeffs = np.polyfit(x, y, 3)
    integral = np.polyint(coeffs)
    return float((np.polyval(integral, hi) - np.polyval(integral, lo)) / (hi - lo))


def bd_rate(test: RdCurve, anchor: RdCurve) -> BdResult:
    """Bjontegaard deltas of `test` against `anchor`.

    bd_br is the mean log-rate difference over the overlapping metric
    range, mapped back to percent: (exp(mean diff) - 1) * 100. Negative
    means the test curve spends fewer bits for equal metric. bd_metric is
    the mean metric difference over the overlapping log-rate range.

    Raises EvaluationError when either curve has fewer than 4 points, the
    fits are degenerate, or the curves do not overlap.
    """
    _check_curve(test, "test")
    _check_curve(anchor, "anchor")
    log_rt, met_t = np.log(test.rates), test.metrics
    log_ra, met_a = np.log(anchor.rates), anchor.metrics

    m_lo = max(met_t.min(), met_a.min())
    m_hi = min(met_t.max(), met_a.max())
    if not m_hi > m_lo:
        raise EvaluationError("curves do not overlap in the metric")
    diff_log_rate = _fit_and_mean(met_t, log_rt, m_lo, m_hi) - _fit_and_mean(met_a, log_ra, m_lo, m_hi)
    bd_br = (math.exp(diff_log_rate) - 1.0) * 100.0

    r_lo = max(log_rt.min(), log_ra.min())
    r_hi = min(log_rt.max(), log_ra.max())
    if not r_hi > r_lo:
        raise EvaluationError("curves do not overlap in log-rate")
    bd_metric = _fit_and_mean(log_rt, met_t, r_lo, r_hi) - _fit_and_mean(log_ra, met_a, r_lo, r_hi)
    return BdResult(bd_br=bd_br, bd_metric=bd_metric)


def fidelity_proxy(
    original_map: SemanticMap,
    recon_map: SemanticMap,
    threshold: float = MASK_THRESHOLD,
) -> float:
    """IoU of the thresholded masks; 1.0 when both masks are empty."""
    if original_map.values.shape != recon_map.values.shape:
        raise EvaluationError("semantic maps differ in shape")
    a = original_map.values >= threshold
    b = recon_map.values >= threshold
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(a & b) / union)


def frame_fidelity(frame: Frame, recon: Frame, oracle: Callable,
                   threshold: float = MASK_THRESHOLD) -> float:
    """fidelity_proxy with both maps produced by the oracle."""
    orig_map, _ = oracle(frame, qp=None)
    rec_map, _ = oracle(recon, qp=None)
    return fidelity_proxy(orig_map, rec_map, threshold)


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if len(x) != len(y) or len(x) < 2:
        raise EvaluationError("need two same-length samples of length >= 2")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise EvaluationError("correlation undefined for a constant sample")
    return float(np.corrcoef(x, y)[0, 1])


def correlation_protocol(
    frames: Sequence[tuple[str, Frame]],
    oracle: Callable,
    centers: Sequence[int] = DEFAULT_JITTER_CENTERS,
    trials: int = 50,
    jitter: int = DEFAULT_JITTER,
    seed: int = 0,
) -> tuple[list[tuple[float, float]], float]:
    """Jittered-QP encodes probing how map change tracks fidelity.

    Each trial picks the next frame round-robin; for every center QP it
    draws one uniform offset in [-jitter, +jitter] per coding unit, clamps
    to [22, 51], encodes, and records (whole-frame map_diff against the
    original's map, fidelity_proxy). Sample count is len(centers) * trials.

    Returns the samples and their Pearson correlation.
    """
    if not frames:
        raise EvaluationError("no frames given")
    rng = np.random.default_rng(seed)
    orig_maps = {}
    for fid, frame in frames:
        smap, _ = oracle(frame, qp=None)
        orig_maps[fid] = smap
    samples: list[tuple[float, float]] = []
    for trial in range(trials):
        fid, frame = frames[trial % len(frames)]
        n_cus = frame.cu_count
        for center in centers:
            codec.check_qp(center)
            offsets = rng.integers(-jitter, jitter + 1, size=n_cus)
            qpmap = np.clip(center + offsets, 22, 51).tolist()
            _, recon = codec.encode_frame_with_qpmap(frame, qpmap)
            rec_map, _ = oracle(recon, qp=None)
            delta = map_diff(rec_map, orig_maps[fid])
            fid_val = fidelity_proxy(orig_maps[fid], rec_map)
            samples.append((delta, fid_val))
    xs = [s[0] for s in samples]
    ys = [s[1] for s in samples]
    # zero jitter on a lossless frame yields identical samples; correlation
    # is undefined there, not an error
    if len(samples) < 2 or np.ptp(xs) == 0 or np.ptp(ys) == 0:
        return samples, float("nan")
    return samples, pearson_r(xs, ys)


def mean_stable(values: Sequence[float]) -> float:
    """Order-stable mean via compensated summation."""
    values = list(values)
    if not values:
        raise EvaluationError("mean of nothing")
    return math.fsum(values) / len(values)


def sweep_points(
    runs: Sequence[tuple[float, Sequence[tuple[float, float]]]],
    label: str = "agent",
) -> tuple[RdCurve, list[tuple[float, float, float]]]:
    """Aggregate per-alpha frame results into one curve.

    Args:
        runs: (alpha_s, [(bpp, fidelity) per test frame]) pairs.

    Returns:
        The RdCurve over (mean bpp, mean fidelity) sorted by rate, plus
        (alpha_s, mean bpp, mean fidelity) rows for the sweep CSV.
    """
    if not runs:
        raise EvaluationError("empty sweep")
    rows = []
    for alpha, frame_stats in runs:
        if not frame_stats:
            raise EvaluationError(f"alpha_s={alpha}: no frame results")
        bpp = mean_stable([s[0] for s in frame_stats])
        fid = mean_stable([s[1] for s in frame_stats])
        rows.append((float(alpha), bpp, fid))
    rows.sort(key=lambda r: r[0])
    curve = RdCurve(tuple((bpp, fid) for _, bpp, fid in rows), label=label)
    return curve, rows


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_curve_csv(path, curves: Sequence[RdCurve], seed: int) -> None:
    """CSV of one or more curves: `rate,metric,label` rows."""
    lines = [f"# seed={seed}", "rate,metric,label"]
    for curve in curves:
        for rate, metric in curve.sorted_points():
            lines.append(f"{_fmt(rate)},{_fmt(metric)},{curve.label}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_curve_csv(path) -> list[RdCurve]:
    with open(path, "r", encoding="ascii") as fh:
        lines = [l for l in fh.read().splitlines() if l and not l.startswith("#")]
    if not lines or lines[0] != "rate,metric,label":
        raise EvaluationError(f"{path}: expected rate,metric,label header")
    by_label: dict[str, list[tuple[float, float]]] = {}
    order: list[str] = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 3:
            raise EvaluationError(f"{path}: bad row {line!r}")
        rate, metric, label = float(parts[0]), float(parts[1]), parts[2]
        if label not in by_label:
            by_label[label] = []
            order.append(label)
        by_label[label].append((rate, metric))
    return [RdCurve(tuple(by_label[label]), label=label) for label in order]


def write_sweep_csv(path, rows: Sequence[tuple[float, float, float]], seed: int) -> None:
    """CSV of the alpha sweep: `alpha_s,bpp,fidelity` rows."""
    lines = [f"# seed={seed}", "alpha_s,bpp,fidelity"]
    for alpha, bpp, fid in rows:
        lines.append(f"{_fmt(alpha)},{_fmt(bpp)},{_fmt(fid)}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_correlation_csv(path, samples: Sequence[tuple[float, float]], seed: int) -> None:
    """CSV of correlation samples: `delta_m,fidelity` rows."""
    lines = [f"# seed={seed}", "delta_m,fidelity"]
    for delta, fid in samples:
        lines.append(f"{_fmt(delta)},{_fmt(fid)}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
