"""Minimal layer kit with explicit backprop, used by the Q-network.

Everything is plain numpy. Each layer caches what its backward pass needs
during forward; backward accumulates parameter gradients and returns the
gradient with respect to the layer input. Central-difference checking of
every gradient in this file is part of the test suite, so the backward
code paths are written to be boringly literal.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

LEAKY_SLOPE = 0.25


def leaky_gain(slope: float = LEAKY_SLOPE) -> float:
    """Init gain that keeps forward variance flat under a leaky ReLU."""
    return math.sqrt(2.0 / (1.0 + slope * slope))


class Param:
    """One trainable tensor and its accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0


class Dense:
    """Affine layer y = x W + b; x is (batch, n_in)."""

    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator,
                 dtype=np.float32, gain: float | None = None):
        std = (leaky_gain() if gain is None else gain) / math.sqrt(n_in)
        w = rng.normal(0.0, std, size=(n_in, n_out)).astype(dtype)
        self.w = Param(f"{name}.w", w)
        self.b = Param(f"{name}.b", np.zeros(n_out, dtype=dtype))
        self._x: np.ndarray | None = None

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.w.grad += self._x.T @ dout
        self.b.grad += dout.sum(axis=0)
        return dout @ self.w.value.T


class LeakyReLU:
    """Elementwise max(x, slope * x); no parameters."""

    def __init__(self, slope: float = LEAKY_SLOPE):
        self.slope = slope
        self._x: np.ndarray | None = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return np.maximum(x * x.dtype.type(self.slope), x)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x = self._x
        return dout * np.where(x >= 0, x.dtype.type(1), x.dtype.type(self.slope))


class Conv2d:
    """Strided convolution on NHWC batches, via im2col.

    NHWC keeps the column gather and scatter as plain strided slicing (no
    transposes), which is what makes the from-scratch stack fast enough.
    Weights are stored (kernel, kernel, c_in, c_out).
    """

    def __init__(self, name: str, c_in: int, c_out: int, rng: np.random.Generator,
                 kernel: int = 3, stride: int = 2, pad: int = 1,
                 dtype=np.float32, gain: float | None = None):
        self.kernel, self.stride, self.pad = kernel, stride, pad
        self.c_in, self.c_out = c_in, c_out
        fan_in = c_in * kernel * kernel
        std = (leaky_gain() if gain is None else gain) / math.sqrt(fan_in)
        w = rng.normal(0.0, std, size=(kernel, kernel, c_in, c_out)).astype(dtype)
        self.w = Param(f"{name}.w", w)
        self.b = Param(f"{name}.b", np.zeros(c_out, dtype=dtype))
        self._cols: np.ndarray | None = None
        self._x_shape: tuple[int, ...] | None = None

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def out_size(self, size: int) -> int:
        return (size + 2 * self.pad - self.kernel) // self.stride + 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, h, w, c = x.shape
        if c != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {c}")
        k, s, p = self.kernel, self.stride, self.pad
        ho, wo = self.out_size(h), self.out_size(w)
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        cols = np.empty((n, ho, wo, k, k, c), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, :, :, i, j] = xp[:, i : i + s * ho : s, j : j + s * wo : s]
        cols2 = cols.reshape(n * ho * wo, k * k * c)
        self._cols = cols2
        self._x_shape = x.shape
        out = cols2 @ self.w.value.reshape(-1, self.c_out) + self.b.value
        return out.reshape(n, ho, wo, self.c_out)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        n, h, w, c = self._x_shape
        k, s, p = self.kernel, self.stride, self.pad
        ho, wo = dout.shape[1], dout.shape[2]
        d2 = dout.reshape(n * ho * wo, self.c_out)
        self.w.grad += (self._cols.T @ d2).reshape(self.w.value.shape)
        self.b.grad += d2.sum(axis=0)
        dcols = (d2 @ self.w.value.reshape(-1, self.c_out).T).reshape(n, ho, wo, k, k, c)
        dxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, :, i, j]
        return dxp[:, p : p + h, p : p + w]


class Adam:
    """Standard Adam with bias correction; holds per-parameter moments."""

    def __init__(self, params: Sequence[Param], learning_rate: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.value -= (self.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + self.eps)).astype(
                p.value.dtype, copy=False
            )


def numeric_grad(loss_fn: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar loss w.r.t. an array.

    Perturbs arr in place (restoring each entry), so loss_fn must read the
    live array. Use 64-bit arrays; the estimate is O(h**2).
    """
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        up = loss_fn()
        flat[i] = saved - h
        down = loss_fn()
        flat[i] = saved
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| scaled by max(|a|, |n|, 1e-6) elementwise."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
    return np.abs(a - n) / scale
