"""Dense float64 arithmetic helpers, seeded randomness and the finite-difference oracle.

Tensors are plain ``numpy.ndarray`` objects with ``dtype=float64``. Randomness
goes through a Philox counter-based generator so a seed reproduces the same
stream on every platform; the global numpy / ``random`` state is never used.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Shapes of the operands do not agree."""


class ConfigError(ValueError):
    """A configuration or specification is inconsistent."""


class NumericError(FloatingPointError):
    """A computation produced a non-finite value."""


class StateError(RuntimeError):
    """An object was used before it reached the required state."""


RngState = np.random.Generator


def make_rng(seed: int) -> np.random.Generator:
    """Return a Philox-backed generator for ``seed`` (a non-negative 64-bit int)."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.Philox(int(seed)))


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def matmul(a, b) -> np.ndarray:
    """Matrix product of two rank-2 tensors.

    Accumulates over the inner index in increasing order so the result is
    bit-identical to a naive triple loop regardless of the BLAS in use.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=DTYPE)
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, k, :]
    return out


def gauss_sample(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    """Zero-mean Gaussian samples with standard deviation ``sigma``."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    draws = rng.standard_normal(shape)
    if sigma == 0:
        return np.zeros(shape, dtype=DTYPE)
    return draws * sigma


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function ``f`` at ``x``.

    ``x`` is not modified; each coordinate is perturbed on a private copy.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    x = np.array(x, dtype=DTYPE)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value while differencing coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
