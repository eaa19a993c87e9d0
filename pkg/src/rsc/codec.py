"""Block intra codec with an analytic bit estimate, plus rate-control formulas.

The codec is deliberately small: DC prediction from the reconstructed
left/top border, an 8x8 orthonormal DCT on the residual, uniform scalar
quantization with a dead-zone offset, and a bit estimate from a signed
exp-Golomb code model. No bitstream is produced; bits are whatever the
code model says they would cost. The estimate is exact enough to be
monotone: for a fixed block and prediction, raising QP never raises bits.

Rate control lives in lambda space. qp_to_lambda / lambda_to_qp are exact
inverses, and fit_hyperbolic_rd fits the D(R) = C * R**-K model whose
derivative gives lambda as a function of rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .frames import Frame

QP_MIN = 0
QP_MAX = 51

_LAMBDA_SCALE = 4.2005
_LAMBDA_OFFSET = 13.7122

# quantizer dead-zone rounding offset
_QUANT_OFFSET = 1.0 / 3.0

_BLOCK = 8


def _dct_matrix(n: int = _BLOCK) -> np.ndarray:
    """Orthonormal type-II DCT matrix."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    mat = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * math.sqrt(2.0 / n)
    mat[0] /= math.sqrt(2.0)
    return mat


_DCT8 = _dct_matrix()


def qstep(qp: float) -> float:
    """Quantization step size; doubles every 6 QP."""
    return 2.0 ** ((qp - 4.0) / 6.0)


def check_qp(qp: int) -> int:
    qp = int(qp)
    if not QP_MIN <= qp <= QP_MAX:
        raise ValueError(f"qp {qp} outside [{QP_MIN}, {QP_MAX}]")
    return qp


def qp_to_lambda(qp: float) -> float:
    """Lagrange multiplier matched to a QP (accepts real-valued QP)."""
    return math.exp((qp - _LAMBDA_OFFSET) / _LAMBDA_SCALE)


def lambda_to_qp(lam: float) -> float:
    """Inverse of qp_to_lambda; rejects non-positive lambda."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return _LAMBDA_SCALE * math.log(lam) + _LAMBDA_OFFSET


@dataclass(frozen=True)
class CuEncodeResult:
    """Outcome of encoding one coding unit."""

    bits: int
    bpp: float
    reconstruction: np.ndarray
    mse: float


def _exp_golomb_bits(levels: np.ndarray) -> np.ndarray:
    """Signed exp-Golomb (k=0) code length per quantized level."""
    code = np.where(levels > 0, 2 * levels - 1, -2 * levels)
    return 2 * np.floor(np.log2(code + 1.0)).astype(np.int64) + 1


def encode_cu(
    block: np.ndarray,
    qp: int,
    top: np.ndarray | None = None,
    left: np.ndarray | None = None,
    valid_w: int | None = None,
    valid_h: int | None = None,
) -> CuEncodeResult:
    """Encode one coding unit and estimate its bit cost.

    Args:
        block: square unit of samples, side a multiple of 8 (partial units
            arrive zero-padded to the full unit size).
        qp: quantization parameter in [0, 51].
        top: reconstructed samples directly above the unit, if any.
        left: reconstructed samples directly left of the unit, if any.
        valid_w, valid_h: true pixel extents for partial units; bits are
            normalized and distortion measured over this region only.

    Returns:
        CuEncodeResult with the estimated bits, bits per true pixel, the
        reconstructed unit (full padded size), and the mean squared error
        over the valid region.
    """
    block = np.asarray(block)
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        raise ValueError(f"coding unit must be square, got {block.shape}")
    n = block.shape[0]
    if n % _BLOCK != 0:
        raise ValueError(f"unit side {n} is not a multiple of {_BLOCK}")
    qp = check_qp(qp)
    vw = n if valid_w is None else int(valid_w)
    vh = n if valid_h is None else int(valid_h)
    if not (0 < vw <= n and 0 < vh <= n):
        raise ValueError("valid extents must lie in (0, unit size]")

    # DC prediction from whatever border is available; 128 when there is none.
    border: list[np.ndarray] = []
    if top is not None:
        border.append(np.asarray(top).ravel())
    if left is not None:
        border.append(np.asarray(left).ravel())
    if border:
        samples = np.concatenate(border).astype(np.int64)
        dc = int((samples.sum() + samples.size // 2) // samples.size)
    else:
        dc = 128

    residual = block.astype(np.float64) - dc
    b = n // _BLOCK
    tiles = residual.reshape(b, _BLOCK, b, _BLOCK).transpose(0, 2, 1, 3)
    coef = _DCT8 @ tiles @ _DCT8.T

    qs = qstep(qp)
    levels = (np.sign(coef) * np.floor(np.abs(coef) / qs + _QUANT_OFFSET)).astype(np.int64)

    significant = np.any(levels != 0, axis=(2, 3))
    coeff_bits = _exp_golomb_bits(levels).sum(axis=(2, 3))
    bits = int(np.where(significant, coeff_bits, 0).sum() + significant.size)

    rec_tiles = _DCT8.T @ (levels * qs) @ _DCT8
    rec_residual = rec_tiles.transpose(0, 2, 1, 3).reshape(n, n)
    recon = np.clip(np.rint(rec_residual + dc), 0, 255).astype(np.uint8)

    diff = block[:vh, :vw].astype(np.float64) - recon[:vh, :vw]
    mse = float(np.mean(diff * diff))
    return CuEncodeResult(bits=bits, bpp=bits / (vw * vh), reconstruction=recon, mse=mse)


def _encode_frame(frame: Frame, qps: Sequence[int]) -> tuple[list[CuEncodeResult], Frame]:
    luma = frame.luma
    size = frame.ctu_size
    recon = np.zeros_like(luma)
    results: list[CuEncodeResult] = []
    for (x, y, w, h), qp in zip(frame.cu_rects(), qps):
        block = np.zeros((size, size), dtype=np.uint8)
        block[:h, :w] = luma[y : y + h, x : x + w]
        top = recon[y - 1, x : x + w] if y > 0 else None
        left = recon[y : y + h, x - 1] if x > 0 else None
        res = encode_cu(block, qp, top=top, left=left, valid_w=w, valid_h=h)
        recon[y : y + h, x : x + w] = res.reconstruction[:h, :w]
        results.append(res)
    return results, Frame(recon, size)


def encode_frame_uniform(frame: Frame, qp: int) -> tuple[list[CuEncodeResult], Frame]:
    """Encode every coding unit at one QP; units in raster order."""
    qp = check_qp(qp)
    return _encode_frame(frame, [qp] * frame.cu_count)


def encode_frame_with_qpmap(frame: Frame, qpmap: Sequence[int]) -> tuple[list[CuEncodeResult], Frame]:
    """Encode with one QP per coding unit (raster order)."""
    qpmap = [check_qp(q) for q in qpmap]
    if len(qpmap) != frame.cu_count:
        raise ValueError(f"qpmap has {len(qpmap)} entries for {frame.cu_count} units")
    return _encode_frame(frame, qpmap)


def frame_bits(results: Sequence[CuEncodeResult]) -> int:
    return sum(r.bits for r in results)


def frame_bpp(results: Sequence[CuEncodeResult], frame: Frame) -> float:
    return frame_bits(results) / (frame.width * frame.height)


@dataclass(frozen=True)
class HyperbolicRdModel:
    """Distortion model D(R) = C * R**-K with C, K > 0.

    Its rate derivative gives the Lagrange multiplier
    lambda(R) = C * K * R**-(K+1), which rate_of_lambda inverts.
    """

    C: float
    K: float

    def __post_init__(self):
        if not (self.C > 0 and self.K > 0 and math.isfinite(self.C) and math.isfinite(self.K)):
            raise ValueError("hyperbolic model needs finite C > 0 and K > 0")

    def distortion(self, rate: float) -> float:
        if not rate > 0:
            raise ValueError("rate must be positive")
        return self.C * rate ** -self.K

    def lambda_of_rate(self, rate: float) -> float:
        if not rate > 0:
            raise ValueError("rate must be positive")
        return self.C * self.K * rate ** -(self.K + 1.0)

    def rate_of_lambda(self, lam: float) -> float:
        if not lam > 0:
            raise ValueError("lambda must be positive")
        return (lam / (self.C * self.K)) ** (-1.0 / (self.K + 1.0))


def fit_hyperbolic_rd(samples: Sequence[tuple[float, float]]) -> HyperbolicRdModel:
    """Fit D(R) = C * R**-K to (rate, distortion) samples.

    The fit is the least-squares line in (ln R, ln D) space; K is the
    negated slope and C the exponentiated intercept. Degenerate input
    (fewer than two samples, non-positive values, all rates equal, or a
    distortion that does not decrease with rate) raises ValueError.
    """
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise ValueError("need at least two (rate, distortion) samples")
    rates, dists = arr[:, 0], arr[:, 1]
    if np.any(rates <= 0) or np.any(dists <= 0):
        raise ValueError("rates and distortions must be positive")
    ln_r = np.log(rates)
    if np.ptp(ln_r) == 0:
        raise ValueError("all rates identical; slope is undefined")
    slope, intercept = np.polyfit(ln_r, np.log(dists), 1)
    if not slope < 0:
        raise ValueError("distortion does not decrease with rate")
    return HyperbolicRdModel(C=float(np.exp(intercept)), K=float(-slope))
