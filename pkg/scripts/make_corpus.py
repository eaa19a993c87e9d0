#!/usr/bin/env python3
"""Regenerate the bundled synthetic test frames under assets/frames/.

Five 576x576 frames, fully deterministic. Each mixes three ingredients
so the rate/importance tradeoff is non-trivial for the gradient-energy
oracle:

* a smooth low-frequency background (cheap bits, low importance),
* low-amplitude noise fields (expensive bits, low importance),
* objects filled with layered sinusoid texture strong enough to cross
  the mask threshold. Objects come in two styles: fine texture whose
  small transform coefficients fall into the quantizer dead zone at
  moderate QP, and coarse texture whose large coefficients survive to
  very coarse QP. Coarse texture reads as at least as important to a
  pooled-energy mapping, yet costs far less fidelity when quantized
  hard, so importance alone misorders the two styles.
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from rsc.frames import Frame, write_frame

SIZE = 576
FRAME_COUNT = 5
BASE_SEED = 20240915


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.full((size, size), 110.0)
    for _ in range(3):
        fx, fy = rng.uniform(0.5, 2.5, size=2)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        amp = rng.uniform(8, 20)
        img += amp * np.sin(2 * np.pi * fx * xx + phase[0]) * np.cos(2 * np.pi * fy * yy + phase[1])
    return img


def _add_noise_fields(img: np.ndarray, rng: np.random.Generator, count: int) -> None:
    size = img.shape[0]
    for _ in range(count):
        w, h = rng.integers(96, 160, size=2)
        x0 = int(rng.integers(0, size - w))
        y0 = int(rng.integers(0, size - h))
        amp = float(rng.uniform(7, 12))
        img[y0 : y0 + h, x0 : x0 + w] += rng.uniform(-amp, amp, size=(h, w))


def _object_texture(rng: np.random.Generator, h: int, w: int, coarse: bool) -> np.ndarray:
    # fine style: many weak short-wavelength layers whose coefficients die
    # one by one as qstep grows, so the mask fades over a range of QPs.
    # coarse style: few strong longer-wavelength layers whose coefficients
    # stay above the dead zone until nearly the coarsest QP; the region
    # reads the same or stronger to a pooled-energy importance measure
    # but costs far less fidelity when quantized hard.
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    tex = np.zeros((h, w))
    if coarse:
        bands = ((10.0, 12.5), (12.5, 15.0), (15.0, 18.0), (11.0, 16.0))
        amp_lo, amp_hi = 26.0, 38.0
    else:
        bands = ((4.5, 6.0), (5.5, 7.0), (6.5, 8.0), (7.5, 9.0), (8.5, 10.0), (9.5, 11.5))
        amp_lo, amp_hi = 12.0, 18.0
    for lam_lo, lam_hi in bands:
        lam = rng.uniform(lam_lo, lam_hi)
        theta = rng.uniform(0, np.pi)
        amp = rng.uniform(amp_lo, amp_hi)
        u = np.cos(theta) * xx + np.sin(theta) * yy
        tex += amp * np.sin(2 * np.pi * u / lam + rng.uniform(0, 2 * np.pi))
    return tex


def _add_object(img: np.ndarray, rng: np.random.Generator, coarse: bool) -> None:
    size = img.shape[0]
    w, h = rng.integers(96, 176, size=2)
    x0 = int(rng.integers(16, size - w - 16))
    y0 = int(rng.integers(16, size - h - 16))
    lift = float(rng.uniform(45, 70)) * (1 if rng.random() < 0.7 else -1)
    patch = img[y0 : y0 + h, x0 : x0 + w]
    if rng.random() < 0.5:
        yy, xx = np.mgrid[0:h, 0:w]
        cy, cx = h / 2, w / 2
        mask = ((yy - cy) / cy) ** 2 + ((xx - cx) / cx) ** 2 <= 1.0
    else:
        mask = np.ones((h, w), dtype=bool)
    tex = _object_texture(rng, h, w, coarse)
    patch[mask] += lift + tex[mask]


def synthetic_frame(index: int, size: int = SIZE, base_seed: int = BASE_SEED) -> Frame:
    rng = np.random.default_rng([base_seed, index])
    img = _background(rng, size)
    _add_noise_fields(img, rng, count=1 + index % 2)
    for k in range(2 + (index + 1) % 2):
        _add_object(img, rng, coarse=(k % 2 == 0))
    return Frame(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "assets" / "frames"))
    parser.add_argument("--count", type=int, default=FRAME_COUNT)
    parser.add_argument("--size", type=int, default=SIZE)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        path = out / f"f{i}.pgm"
        write_frame(path, synthetic_frame(i, args.size))
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
