"""Coarse-to-fine cascade: one full-output regressor refined by region-specific regressors.

Stage 1 sees the whole image at a coarse resolution and predicts every
keypoint. For each region ``c`` a box is cropped around the stage-1 keypoints
of that region's output subset ``l^c``, resampled to the refiner's input size,
and a refiner predicts the subset in the crop's local ``[0, 1]`` frame. The
local outputs are mapped back to image coordinates and averaged over the
regions that contain each output element (the ``diag(z)^-1`` merge).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from robustreg import loss as L
from robustreg import metrics
from robustreg.datagen import Dataset, resample_box
from robustreg.network import NetworkParams, NetworkSpec, predict
from robustreg.numerics import DTYPE, ConfigError, DimensionError, StateError
from robustreg.optim import SgdConfig, train

log = logging.getLogger(__name__)

CROP_BBOX = "bbox"
CROP_FULL = "full"


@dataclass(frozen=True)
class RegionSpec:
    """Output subsets (0-based element indices) and the crop geometry.

    ``crop_rule="bbox"`` takes the bounding box of the subset's stage-1
    keypoints, pads each side by ``margin`` times the box size (at least
    ``min_crop`` pixels overall) and clamps it to the image. ``"full"`` always
    uses the whole image.
    """

    subsets: tuple
    n_outputs: int
    margin: float = 0.25
    min_crop: float = 12.0
    input_size: tuple = (32, 32)
    crop_rule: str = CROP_BBOX

    def __post_init__(self):
        subsets = tuple(tuple(sorted(int(i) for i in s)) for s in self.subsets)
        object.__setattr__(self, "subsets", subsets)
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        if not subsets:
            raise ConfigError("a cascade needs at least one region")
        for c, s in enumerate(subsets):
            if not s:
                raise ConfigError(f"region {c} has an empty subset")
            if len(set(s)) != len(s):
                raise ConfigError(f"region {c} repeats an index")
            if s[0] < 0 or s[-1] >= self.n_outputs:
                raise ConfigError(f"region {c} indexes outside 0..{self.n_outputs - 1}")
        missing = sorted(set(range(self.n_outputs)) - {i for s in subsets for i in s})
        if missing:
            raise ConfigError(f"output elements {missing} are not covered by any region")
        if self.crop_rule not in (CROP_BBOX, CROP_FULL):
            raise ConfigError(f"unknown crop rule {self.crop_rule!r}")
        if self.margin < 0:
            raise ConfigError("margin must be non-negative")

    @property
    def C(self) -> int:
        return len(self.subsets)

    @property
    def z(self) -> np.ndarray:
        """How many subsets contain each output element."""
        z = np.zeros(self.n_outputs, dtype=int)
        for s in self.subsets:
            z[list(s)] += 1
        return z

    @classmethod
    def from_joint_groups(cls, groups: Sequence[Sequence[int]], n_joints: int, **kw) -> "RegionSpec":
        subsets = tuple(tuple(i for j in sorted(g) for i in (2 * j, 2 * j + 1)) for g in groups)
        return cls(subsets, 2 * n_joints, **kw)

    def joints(self, c: int) -> list[int]:
        s = self.subsets[c]
        if len(s) % 2 or any(s[k] % 2 or s[k + 1] != s[k] + 1 for k in range(0, len(s), 2)):
            raise ConfigError(f"region {c} must hold whole (x, y) keypoint pairs to define a crop")
        return [s[k] // 2 for k in range(0, len(s), 2)]


@dataclass(frozen=True)
class CropTransform:
    """Axis-aligned box in pixels of an ``img_w x img_h`` image."""

    x0: float
    y0: float
    w: float
    h: float
    img_w: float
    img_h: float
    fallback: bool = False

    @property
    def is_identity(self) -> bool:
        return self.x0 == 0 and self.y0 == 0 and self.w == self.img_w and self.h == self.img_h

    def to_local(self, kps) -> np.ndarray:
        """Image-normalized keypoints to crop-normalized keypoints."""
        p = np.asarray(kps, dtype=DTYPE)
        if self.is_identity:
            return p.copy()
        q = p.reshape(-1, 2)
        out = np.empty_like(q)
        out[:, 0] = (q[:, 0] * self.img_w - self.x0) / self.w
        out[:, 1] = (q[:, 1] * self.img_h - self.y0) / self.h
        return out.reshape(p.shape)

    def to_global(self, local) -> np.ndarray:
        p = np.asarray(local, dtype=DTYPE)
        if self.is_identity:
            return p.copy()
        q = p.reshape(-1, 2)
        out = np.empty_like(q)
        out[:, 0] = (q[:, 0] * self.w + self.x0) / self.img_w
        out[:, 1] = (q[:, 1] * self.h + self.y0) / self.img_h
        return out.reshape(p.shape)


def crop_box(y_hat, c: int, spec: RegionSpec, image_size: tuple) -> CropTransform:
    """Crop box of region ``c`` for one stage-1 output vector ``y_hat``; image_size is (H, W)."""
    H, W = image_size
    if spec.crop_rule == CROP_FULL:
        return CropTransform(0.0, 0.0, float(W), float(H), float(W), float(H))
    pts = np.asarray(y_hat, dtype=DTYPE).reshape(-1, 2)[spec.joints(c)] * [W, H]
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    size = hi - lo
    lo = lo - spec.margin * size
    hi = hi + spec.margin * size
    short = np.maximum(spec.min_crop - (hi - lo), 0.0)
    lo, hi = lo - short / 2, hi + short / 2
    lo = np.maximum(lo, 0.0)
    hi = np.minimum(hi, [W, H])
    if np.any(hi - lo <= 0) or not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
        return CropTransform(0.0, 0.0, float(W), float(H), float(W), float(H), fallback=True)
    return CropTransform(float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1]), float(W), float(H))


def extract_region(x: np.ndarray, y_hat, c: int, spec: RegionSpec):
    """Crop region ``c`` from image ``x`` (``(C, H, W)``) and resample it to ``spec.input_size``.

    Returns ``(crop, transform)``; ``transform.fallback`` marks a degenerate
    box that was replaced by the full image.
    """
    x = np.asarray(x, dtype=DTYPE)
    t = crop_box(y_hat, c, spec, x.shape[-2:])
    oh, ow = spec.input_size
    if t.is_identity and (oh, ow) == tuple(x.shape[-2:]):
        return x.copy(), t
    return resample_box(x, t.x0, t.y0, t.w, t.h, oh, ow), t


def extract_regions(images: np.ndarray, y_hat: np.ndarray, c: int, spec: RegionSpec):
    crops, transforms = [], []
    for s in range(images.shape[0]):
        crop, t = extract_region(images[s], y_hat[s], c, spec)
        crops.append(crop)
        transforms.append(t)
    return np.stack(crops), transforms


def merge(region_outputs: Sequence[np.ndarray], spec: RegionSpec) -> np.ndarray:
    """Average region outputs (``(S, |l^c|)`` each, image coordinates) into ``(S, N)``."""
    if len(region_outputs) != spec.C:
        raise DimensionError(f"{len(region_outputs)} region outputs for {spec.C} regions")
    S = np.shape(region_outputs[0])[0]
    acc = np.zeros((S, spec.n_outputs), dtype=DTYPE)
    for out, subset in zip(region_outputs, spec.subsets):
        out = np.asarray(out, dtype=DTYPE)
        if out.shape != (S, len(subset)):
            raise DimensionError(f"region output shape {out.shape}, expected {(S, len(subset))}")
        acc[:, list(subset)] += out
    return acc / spec.z


@dataclass
class Regressor:
    """A network plus the input preparation it was trained with."""

    spec: NetworkSpec
    params: NetworkParams | None = None
    mean: np.ndarray | None = None

    @property
    def input_size(self) -> tuple:
        return tuple(self.spec.input_shape[-2:])

    def prepare(self, images: np.ndarray) -> np.ndarray:
        """Resample full images to the network input size (if needed) and subtract the mean."""
        images = np.asarray(images, dtype=DTYPE)
        if len(self.spec.input_shape) == 3 and tuple(images.shape[-2:]) != self.input_size:
            H, W = images.shape[-2:]
            oh, ow = self.input_size
            images = np.stack([resample_box(im, 0.0, 0.0, W, H, oh, ow) for im in images])
        return images - self.mean if self.mean is not None else images

    def __call__(self, prepared: np.ndarray) -> np.ndarray:
        if self.params is None:
            raise StateError("regressor has not been trained")
        return predict(self.params, self.spec, prepared)


@dataclass
class CascadeModel:
    stage1: Regressor
    refiners: list
    regions: RegionSpec
    stage1_history: list = field(default_factory=list)
    refiner_histories: list = field(default_factory=list)


def refine(images: np.ndarray, model: CascadeModel, stage1_out: np.ndarray | None = None) -> np.ndarray:
    """Refined outputs for a batch of full-resolution images, ``(S, N)`` in image coordinates."""
    spec = model.regions
    if len(model.refiners) != spec.C:
        raise ConfigError(f"{len(model.refiners)} refiners for {spec.C} regions")
    for c, r in enumerate(model.refiners):
        if r.params is None:
            raise StateError(f"refiner {c} has not been trained")
    if stage1_out is None:
        stage1_out = model.stage1(model.stage1.prepare(images))
    outs = []
    for c, refiner in enumerate(model.refiners):
        crops, transforms = extract_regions(images, stage1_out, c, spec)
        local = refiner(crops - refiner.mean if refiner.mean is not None else crops)
        outs.append(np.stack([t.to_global(v) for t, v in zip(transforms, local)]))
    return merge(outs, spec)


def region_dataset(data: Dataset, y_hat: np.ndarray, c: int, spec: RegionSpec):
    """Crops of region ``c`` around ``y_hat`` with the subset targets in crop coordinates."""
    crops, transforms = extract_regions(data.inputs, y_hat, c, spec)
    subset = list(spec.subsets[c])
    local = np.stack([t.to_local(y[subset]) for t, y in zip(transforms, data.targets)])
    oh, ow = spec.input_size
    n_fallback = sum(t.fallback for t in transforms)
    if n_fallback:
        log.warning("region %d: %d degenerate crops replaced by the full image", c, n_fallback)
    return Dataset(crops, local, data.is_outlier, pixel_size=(ow, oh)), transforms


def train_cascade(train_data: Dataset, val_data: Dataset, stage1_spec: NetworkSpec,
                  refiner_specs: Sequence[NetworkSpec], regions: RegionSpec, loss: L.LossSpec,
                  cfg: SgdConfig, rng: np.random.Generator, refiner_cfg: SgdConfig | None = None) -> CascadeModel:
    """Train stage 1 on all outputs, then one refiner per region on crops from stage-1 predictions.

    Refiners are trained on the same training samples as stage 1, cropped
    around stage 1's own predictions for those samples.
    """
    if len(refiner_specs) != regions.C:
        raise ConfigError(f"{len(refiner_specs)} refiner networks for {regions.C} regions")
    refiner_cfg = refiner_cfg or cfg
    stage1 = Regressor(stage1_spec)
    x_train = stage1.prepare(train_data.inputs)
    stage1.mean = x_train.mean(axis=0)
    x_train = x_train - stage1.mean
    x_val = stage1.prepare(val_data.inputs)
    st, hist = train(train_data.replace(inputs=x_train), stage1_spec, loss, cfg, rng,
                     validation=val_data.replace(inputs=x_val))
    stage1.params = st.params
    pred_train = stage1(x_train)
    pred_val = stage1(x_val)
    log.info("stage 1: best validation MPE %.4g at epoch %d", st.best_val_error, st.best_epoch)

    model = CascadeModel(stage1, [], regions, stage1_history=hist)
    for c, spec in enumerate(refiner_specs):
        if spec.n_outputs != len(regions.subsets[c]):
            raise ConfigError(f"refiner {c} outputs {spec.n_outputs} values, region has {len(regions.subsets[c])}")
        rtrain, _ = region_dataset(train_data, pred_train, c, regions)
        rval, _ = region_dataset(val_data, pred_val, c, regions)
        mean = rtrain.inputs.mean(axis=0)
        rst, rhist = train(rtrain.replace(inputs=rtrain.inputs - mean), spec, loss, refiner_cfg, rng,
                           validation=rval.replace(inputs=rval.inputs - mean))
        model.refiners.append(Regressor(spec, rst.params, mean))
        model.refiner_histories.append(rhist)
        log.info("refiner %d: best local validation MPE %.4g at epoch %d", c, rst.best_val_error, rst.best_epoch)
    return model


def evaluate_cascade(model: CascadeModel, data: Dataset, skeleton: metrics.SkeletonDef | None = None):
    """Metric reports ``(stage1, refined)`` on ``data``."""
    y1 = model.stage1(model.stage1.prepare(data.inputs))
    yr = refine(data.inputs, model, stage1_out=y1)
    return (metrics.report(y1, data.targets, data.pixel_size, skeleton),
            metrics.report(yr, data.targets, data.pixel_size, skeleton))
