"""Tukey's biweight loss on MAD-scaled residuals, plus the L2 baseline.

The residual of output ``i`` for sample ``s`` is ``r = y - y_hat``. For the
Tukey objective each residual is divided by ``1.4826 * MAD_i`` (a consistent
estimate of the residual standard deviation under normality) before the
biweight ``rho`` is applied, so the tuning constant ``c = 4.6851`` keeps its
usual 95% efficiency meaning and the loss has no free scale parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from robustreg.numerics import DTYPE, DimensionError

TUKEY_C = 4.6851
MAD_TO_SIGMA = 1.4826

KINDS = ("l2", "tukey")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "tukey"
    c: float = TUKEY_C
    warmup_factor: float = 7.0
    warmup_iters: int = 50

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"loss kind must be one of {KINDS}, got {self.kind!r}")
        if not self.c > 0:
            raise ValueError(f"tuning constant c must be positive, got {self.c}")
        if not self.warmup_factor >= 1:
            raise ValueError(f"warmup_factor must be >= 1, got {self.warmup_factor}")
        if self.warmup_iters < 0:
            raise ValueError(f"warmup_iters must be >= 0, got {self.warmup_iters}")

    def warmup_weight(self, iteration: int) -> float:
        return self.warmup_factor if iteration < self.warmup_iters else 1.0


@dataclass
class MadScale:
    """Per-output MAD estimates and the training iteration they apply to."""

    mad: np.ndarray
    epsilon_floor: float = 1e-8
    iteration: int = 0

    def __post_init__(self):
        self.mad = np.asarray(self.mad, dtype=DTYPE).reshape(-1)
        if np.any(self.mad < 0):
            raise ValueError("MAD values must be non-negative")

    def floored(self) -> np.ndarray:
        return np.maximum(self.mad, self.epsilon_floor)

    def effective(self, spec: LossSpec) -> np.ndarray:
        """MAD after flooring and the warm-up inflation for the current iteration."""
        w = spec.warmup_weight(self.iteration)
        return w * self.floored()

    def at(self, iteration: int) -> "MadScale":
        return MadScale(self.mad, self.epsilon_floor, iteration)


def residuals(targets, predictions) -> np.ndarray:
    y = np.asarray(targets, dtype=DTYPE)
    y_hat = np.asarray(predictions, dtype=DTYPE)
    if y.shape != y_hat.shape:
        raise DimensionError(f"targets {y.shape} and predictions {y_hat.shape} differ")
    return y - y_hat


def tukey_rho(r, c: float = TUKEY_C):
    """Biweight loss; quadratic near zero and constant ``c**2 / 6`` beyond ``|r| = c``."""
    r = np.asarray(r, dtype=DTYPE)
    cap = c * c / 6.0
    u = 1.0 - (r / c) ** 2
    out = np.where(np.abs(r) <= c, cap * (1.0 - u**3), cap)
    return out if out.ndim else float(out)


def tukey_psi(r, c: float = TUKEY_C):
    """Derivative of :func:`tukey_rho`; exactly zero for ``|r| >= c``."""
    r = np.asarray(r, dtype=DTYPE)
    u = 1.0 - (r / c) ** 2
    out = np.where(np.abs(r) < c, r * u * u, 0.0)
    return out if out.ndim else float(out)


def _median(a: np.ndarray, axis=0) -> np.ndarray:
    # np.median averages the two middle order statistics for even counts.
    return np.median(a, axis=axis)


def compute_mad(res, epsilon_floor: float = 1e-8, iteration: int = 0) -> MadScale:
    """Median absolute deviation of each output column of an ``S x N`` residual batch."""
    res = np.asarray(res, dtype=DTYPE)
    if res.ndim == 1:
        res = res[:, None]
    if res.ndim != 2:
        raise DimensionError(f"residuals must be S x N, got shape {res.shape}")
    if res.shape[0] < 1:
        raise ValueError("cannot compute MAD of an empty batch")
    centre = _median(res, axis=0)
    mad = _median(np.abs(res - centre), axis=0)
    return MadScale(mad, epsilon_floor=epsilon_floor, iteration=iteration)


def scale_residual(r, mad_i, spec: LossSpec, iteration: int, epsilon_floor: float = 1e-8):
    if np.any(np.asarray(mad_i) < 0):
        raise ValueError("MAD must be non-negative")
    w = spec.warmup_weight(iteration)
    return np.asarray(r, dtype=DTYPE) / (MAD_TO_SIGMA * np.maximum(mad_i, epsilon_floor) * w)


def _check(targets, predictions, mad: MadScale | None, spec: LossSpec):
    r = residuals(targets, predictions)
    if r.ndim == 1:
        r = r[None, :]
    if r.ndim != 2:
        raise DimensionError(f"expected S x N batches, got shape {r.shape}")
    if spec.kind == "tukey":
        if mad is None:
            raise ValueError("Tukey objective needs a MadScale")
        if mad.mad.shape[0] != r.shape[1]:
            raise DimensionError(f"MAD has {mad.mad.shape[0]} entries, batch has {r.shape[1]} outputs")
    return r


def scaled_residuals(r: np.ndarray, mad: MadScale, spec: LossSpec) -> np.ndarray:
    return r / (MAD_TO_SIGMA * mad.effective(spec))


def objective(targets, predictions, mad: MadScale | None, spec: LossSpec) -> float:
    """Mean over samples of the per-sample loss summed over outputs."""
    r = _check(targets, predictions, mad, spec)
    S = r.shape[0]
    if spec.kind == "l2":
        return float(np.sum(0.5 * r * r) / S)
    return float(np.sum(tukey_rho(scaled_residuals(r, mad, spec), spec.c)) / S)


def objective_grad(targets, predictions, mad: MadScale | None, spec: LossSpec) -> np.ndarray:
    """Gradient of :func:`objective` with respect to the predictions (MAD held fixed)."""
    r = _check(targets, predictions, mad, spec)
    S = r.shape[0]
    if spec.kind == "l2":
        g = -r / S
    else:
        scale = MAD_TO_SIGMA * mad.effective(spec)
        g = -tukey_psi(r / scale, spec.c) / (scale * S)
    return g.reshape(np.shape(predictions))
