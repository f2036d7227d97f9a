"""Keypoint regression metrics: MPE, MAE, strict / loose PCP, and the convergence comparison.

Keypoint vectors are laid out as ``[x_0, y_0, x_1, y_1, ...]``. When a
``pixel_size = (width, height)`` is given the coordinates are treated as
normalized to ``[0, 1]`` and converted to pixels first.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from robustreg.numerics import DTYPE, DimensionError

STRICT = "strict"
LOOSE = "loose"


def _points(v, pixel_size) -> np.ndarray:
    v = np.asarray(v, dtype=DTYPE)
    if v.ndim == 1:
        v = v[None]
    if v.shape[-1] % 2:
        raise DimensionError(f"keypoint vectors need an even length, got {v.shape[-1]}")
    pts = v.reshape(v.shape[0], -1, 2)
    if pixel_size is not None:
        pts = pts * np.asarray(pixel_size, dtype=DTYPE)
    return pts


def joint_errors(pred, truth, pixel_size=None) -> np.ndarray:
    """Euclidean distance per (sample, joint)."""
    if np.shape(pred) != np.shape(truth):
        raise DimensionError(f"prediction {np.shape(pred)} and truth {np.shape(truth)} differ")
    d = _points(pred, pixel_size) - _points(truth, pixel_size)
    return np.hypot(d[..., 0], d[..., 1])


def mpe(pred, truth, pixel_size=None) -> float:
    """Mean pixel error over all samples and joints."""
    return float(np.mean(joint_errors(pred, truth, pixel_size)))


def mae(pred, truth) -> float:
    pred = np.asarray(pred, dtype=DTYPE)
    truth = np.asarray(truth, dtype=DTYPE)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} and truth {truth.shape} differ")
    return float(np.mean(np.abs(pred - truth)))


@dataclass(frozen=True)
class SkeletonDef:
    """Limbs as pairs of 0-based joint indices."""

    limbs: tuple

    def __post_init__(self):
        limbs = tuple((int(a), int(b)) for a, b in self.limbs)
        for a, b in limbs:
            if a == b:
                raise ValueError(f"limb ({a}, {b}) connects a joint to itself")
            if a < 0 or b < 0:
                raise ValueError(f"negative joint index in limb ({a}, {b})")
        object.__setattr__(self, "limbs", limbs)

    @classmethod
    def from_parents(cls, parents: Sequence[int]) -> "SkeletonDef":
        return cls(tuple((p, j) for j, p in enumerate(parents) if p >= 0))


def pcp(pred, truth, skeleton: SkeletonDef, variant: str = STRICT, threshold: float = 0.5,
        pixel_size=None) -> dict:
    """Percentage of correctly estimated parts.

    A limb counts as correct when both endpoint errors (strict) or their mean
    (loose) are at most ``threshold`` times the true limb length. Samples where
    the true limb has zero length are left out of that limb's rate and counted
    in ``excluded``.

    Returns ``{"per_limb": {"a-b": rate}, "full": mean rate, "excluded": n}``.
    """
    if variant not in (STRICT, LOOSE):
        raise ValueError(f"variant must be {STRICT!r} or {LOOSE!r}")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    err = joint_errors(pred, truth, pixel_size)
    tp = _points(truth, pixel_size)
    n_joints = tp.shape[1]
    per_limb = {}
    excluded = 0
    for a, b in skeleton.limbs:
        if a >= n_joints or b >= n_joints:
            raise ValueError(f"limb ({a}, {b}) indexes past {n_joints} joints")
        length = np.hypot(*(tp[:, a] - tp[:, b]).T)
        valid = length > 0
        excluded += int(np.sum(~valid))
        bound = threshold * length
        if variant == STRICT:
            ok = (err[:, a] <= bound) & (err[:, b] <= bound)
        else:
            ok = 0.5 * (err[:, a] + err[:, b]) <= bound
        ok = ok[valid]
        per_limb[f"{a}-{b}"] = float(ok.mean()) if ok.size else float("nan")
    rates = [r for r in per_limb.values() if not np.isnan(r)]
    full = float(np.mean(rates)) if rates else float("nan")
    return {"per_limb": per_limb, "full": full, "excluded": excluded}


@dataclass
class MetricReport:
    mpe: float
    mae: float
    pcp_strict: float = float("nan")
    pcp_loose: float = float("nan")
    pcp_per_limb: dict = field(default_factory=dict)
    excluded_limbs: int = 0

    def to_dict(self) -> dict:
        """Plain dict with NaN (metric not applicable) mapped to None."""
        return _nan_to_none(asdict(self))

    def to_json(self, **extra) -> str:
        return json.dumps({**extra, **self.to_dict()}, indent=2, sort_keys=True)


def _nan_to_none(obj):
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, float) and np.isnan(obj):
        return None
    return obj


def report(pred, truth, pixel_size=None, skeleton: SkeletonDef | None = None) -> MetricReport:
    rep = MetricReport(mpe=mpe(pred, truth, pixel_size), mae=mae(pred, truth))
    if skeleton is not None and skeleton.limbs:
        strict = pcp(pred, truth, skeleton, STRICT, pixel_size=pixel_size)
        loose = pcp(pred, truth, skeleton, LOOSE, pixel_size=pixel_size)
        rep.pcp_strict = strict["full"]
        rep.pcp_loose = loose["full"]
        rep.pcp_per_limb = {k: {"strict": strict["per_limb"][k], "loose": loose["per_limb"][k]}
                            for k in strict["per_limb"]}
        rep.excluded_limbs = strict["excluded"]
    return rep


@dataclass(frozen=True)
class ConvergenceComparison:
    reference_error: float
    epoch_a: int
    epoch_b: int
    reached: bool

    @property
    def speedup(self) -> float:
        return self.epoch_a / self.epoch_b if self.epoch_b > 0 else float("inf")


def epochs_to_reach(history_a: Sequence[float], history_b: Sequence[float],
                    epochs_a: Sequence[int] | None = None,
                    epochs_b: Sequence[int] | None = None) -> ConvergenceComparison:
    """Epochs each run needs to reach run A's best validation error.

    ``history_*`` are per-epoch validation errors; epochs are numbered from 1
    unless explicit epoch labels are passed. When run B never gets down to the
    reference, the epoch where it comes closest is returned with
    ``reached=False``.
    """
    a = np.asarray(history_a, dtype=DTYPE)
    b = np.asarray(history_b, dtype=DTYPE)
    if a.size == 0 or b.size == 0:
        raise ValueError("both histories must be non-empty")
    ea = np.arange(1, a.size + 1) if epochs_a is None else np.asarray(epochs_a)
    eb = np.arange(1, b.size + 1) if epochs_b is None else np.asarray(epochs_b)
    ia = int(np.argmin(a))
    ref = float(a[ia])
    hit = np.nonzero(b <= ref)[0]
    if hit.size:
        return ConvergenceComparison(ref, int(ea[ia]), int(eb[hit[0]]), True)
    return ConvergenceComparison(ref, int(ea[ia]), int(eb[int(np.argmin(b))]), False)
