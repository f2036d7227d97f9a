"""Synthetic regression tasks with controllable outlier contamination.

Two task families stand in for real pose data:

* a noisy affine map from ``[-1, 1]^d`` to ``[0, 1]^N`` (vector inputs), and
* rendered stick figures whose joint positions are the regression targets
  (single-channel images, targets are normalized ``(x, y)`` per joint).

Image coordinates are continuous: pixel ``(row i, col j)`` covers
``[j, j+1) x [i, i+1)`` and its centre is ``(j + 0.5, i + 0.5)``. A normalized
keypoint ``(u, v)`` sits at pixel position ``(u * W, v * H)``.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from robustreg.numerics import DTYPE, ConfigError, DimensionError, make_rng

TARGET_CORRUPTION = "target_corruption"
ANNOTATION_JITTER = "annotation_jitter"


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    is_outlier: np.ndarray = None
    pixel_size: tuple = (64.0, 64.0)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=DTYPE)
        self.targets = np.asarray(self.targets, dtype=DTYPE)
        if self.targets.ndim != 2:
            raise DimensionError(f"targets must be S x N, got {self.targets.shape}")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DimensionError("inputs and targets disagree on sample count")
        if self.is_outlier is None:
            self.is_outlier = np.zeros(len(self.targets), dtype=bool)
        self.is_outlier = np.asarray(self.is_outlier, dtype=bool)
        self.pixel_size = tuple(float(v) for v in self.pixel_size)

    def __len__(self) -> int:
        return self.targets.shape[0]

    @property
    def is_image(self) -> bool:
        return self.inputs.ndim == 4

    @property
    def image_shape(self) -> tuple:
        return self.inputs.shape[2:]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.inputs[idx], self.targets[idx], self.is_outlier[idx], self.pixel_size)

    def replace(self, **kw) -> "Dataset":
        d = dict(inputs=self.inputs, targets=self.targets, is_outlier=self.is_outlier, pixel_size=self.pixel_size)
        d.update(kw)
        return Dataset(**d)


def concat(parts: Sequence[Dataset]) -> Dataset:
    return Dataset(
        np.concatenate([p.inputs for p in parts]),
        np.concatenate([p.targets for p in parts]),
        np.concatenate([p.is_outlier for p in parts]),
        parts[0].pixel_size,
    )


# ---- linear task -----------------------------------------------------------

@dataclass(frozen=True)
class AffineMap:
    """``targets = inputs @ A + b`` before noise."""

    A: np.ndarray
    b: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.A + self.b


def gen_linear_task(S: int, input_dim: int, N: int, noise_sigma: float, rng: np.random.Generator,
                    pixel_size=(64.0, 64.0)):
    """Uniform inputs on ``[-1, 1]^d`` mapped affinely into ``[0.1, 0.9]^N`` plus Gaussian noise.

    Returns ``(dataset, affine_map)``. Noisy targets are clipped to ``[0, 1]``.
    """
    if S < 1:
        raise ValueError("S must be at least 1")
    W = rng.standard_normal((input_dim, N))
    # |x @ W| <= sum|W| on the cube, so this keeps clean targets inside [0.1, 0.9]
    A = 0.4 * W / np.abs(W).sum(axis=0)
    fmap = AffineMap(A, np.full(N, 0.5))
    x = rng.uniform(-1.0, 1.0, size=(S, input_dim))
    y = fmap(x)
    if noise_sigma > 0:
        y = np.clip(y + noise_sigma * rng.standard_normal(y.shape), 0.0, 1.0)
    return Dataset(x, y, pixel_size=pixel_size), fmap


# ---- articulated figures ---------------------------------------------------

@dataclass(frozen=True)
class ArticulatedFigureSpec:
    """Stick figure as a joint tree.

    ``parents[j]`` is the parent of joint ``j`` (``-1`` for the root). Bone ``j``
    joins ``parents[j]`` to ``j``; its length is a fraction of the render size
    drawn from ``bone_lengths[j]`` and its absolute direction in degrees (image
    axes, y down) from ``bone_angles[j]``. Entries for the root are ignored.
    """

    parents: tuple = (-1, 0, 1, 1, 0, 0)
    bone_lengths: tuple = ((0, 0), (0.18, 0.25), (0.08, 0.12), (0.15, 0.25), (0.20, 0.28), (0.20, 0.28))
    bone_angles: tuple = ((0, 0), (-110, -70), (-120, -60), (-45, 60), (100, 150), (30, 80))
    root_range: tuple = ((0.35, 0.65), (0.45, 0.6))
    size: int = 64
    thickness: float = 2.0
    intensities: tuple = (1.0, 0.9, 0.75, 0.6, 0.5, 0.4)

    def __post_init__(self):
        J = len(self.parents)
        if J < 1 or self.parents[0] != -1:
            raise ConfigError("joint 0 must be the root (parent -1)")
        for j, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < j:
                raise ConfigError(f"joint {j} has parent {p}; parents must precede children")
        if len(self.bone_lengths) != J or len(self.bone_angles) != J or len(self.intensities) != J:
            raise ConfigError("bone_lengths, bone_angles and intensities need one entry per joint")
        if self.thickness < 1.5:
            raise ConfigError("thickness below 1.5 px can leave keypoints on unlit pixels")

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def limbs(self) -> tuple:
        return tuple((p, j) for j, p in enumerate(self.parents) if p >= 0)

    @classmethod
    def chain(cls, n_joints: int, size: int = 64, length=(0.1, 0.15)) -> "ArticulatedFigureSpec":
        """A simple zig-zag chain, useful for J other than the default six."""
        parents = tuple(range(-1, n_joints - 1))
        angles = tuple((0, 0) if j == 0 else ((-60, 0) if j % 2 else (0, 60)) for j in range(n_joints))
        lengths = tuple((0, 0) if j == 0 else tuple(length) for j in range(n_joints))
        inten = tuple(np.linspace(1.0, 0.4, n_joints).round(3))
        return cls(parents, lengths, angles, ((0.1, 0.3), (0.3, 0.7)), size, 2.0, inten)


def sample_skeleton(spec: ArticulatedFigureSpec, rng: np.random.Generator, max_tries: int = 100) -> np.ndarray:
    """Joint positions in pixels, shape ``(J, 2)``, all at least one stroke from the border."""
    margin = spec.thickness
    lo, hi = margin, spec.size - margin
    for _ in range(max_tries):
        pts = np.zeros((spec.n_joints, 2))
        pts[0] = [rng.uniform(*spec.root_range[0]) * spec.size, rng.uniform(*spec.root_range[1]) * spec.size]
        for j in range(1, spec.n_joints):
            L = rng.uniform(*spec.bone_lengths[j]) * spec.size
            a = np.deg2rad(rng.uniform(*spec.bone_angles[j]))
            pts[j] = pts[spec.parents[j]] + L * np.array([np.cos(a), np.sin(a)])
        if np.all((pts >= lo) & (pts <= hi)):
            return pts
    raise ConfigError("could not place a skeleton inside the image; shrink bone lengths or root range")


def _segment_distance(px: np.ndarray, py: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    dd = float(d @ d)
    if dd == 0.0:
        t = np.zeros_like(px)
    else:
        t = np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / dd, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * d[0]), py - (a[1] + t * d[1]))


def render_skeleton(points: np.ndarray, spec: ArticulatedFigureSpec) -> np.ndarray:
    """Rasterize joints (pixel coordinates) to an ``(H, W)`` image in ``[0, 1]``.

    Each bone is a stroke of width ``thickness`` with its own intensity; joints
    are drawn on top as discs of full intensity.
    """
    n = spec.size
    c = np.arange(n) + 0.5
    px, py = np.meshgrid(c, c)
    img = np.zeros((n, n))
    half = spec.thickness / 2.0
    for p, j in spec.limbs:
        d = _segment_distance(px, py, points[p], points[j])
        img = np.where(d <= half, np.maximum(img, spec.intensities[j]), img)
    for j in range(spec.n_joints):
        d = np.hypot(px - points[j, 0], py - points[j, 1])
        img = np.where(d <= half + 0.5, 1.0, img)
    return img


def gen_figure_task(spec: ArticulatedFigureSpec, S: int, rng: np.random.Generator) -> Dataset:
    """Rendered stick figures; targets are joint coordinates divided by the image size."""
    images = np.zeros((S, 1, spec.size, spec.size))
    targets = np.zeros((S, 2 * spec.n_joints))
    for s in range(S):
        pts = sample_skeleton(spec, rng)
        images[s, 0] = render_skeleton(pts, spec)
        targets[s] = (pts / spec.size).reshape(-1)
    return Dataset(images, np.clip(targets, 0.0, 1.0), pixel_size=(spec.size, spec.size))


# ---- outliers --------------------------------------------------------------

@dataclass(frozen=True)
class OutlierConfig:
    fraction: float = 0.0
    mechanism: str = TARGET_CORRUPTION
    seed: int = 0
    jitter_scale: float = 0.1

    def __post_init__(self):
        if not 0 <= self.fraction < 1:
            raise ConfigError(f"outlier fraction must lie in [0, 1), got {self.fraction}")
        if self.mechanism not in (TARGET_CORRUPTION, ANNOTATION_JITTER):
            raise ConfigError(f"unknown outlier mechanism {self.mechanism!r}")

    def count(self, S: int) -> int:
        # round half up, independent of Python's banker's rounding
        return int(np.floor(self.fraction * S + 0.5))


def inject_outliers(dataset: Dataset, cfg: OutlierConfig) -> Dataset:
    """Corrupt exactly ``round(fraction * S)`` samples and tag them.

    ``target_corruption`` replaces the whole target vector with uniform draws on
    ``[0, 1]``; ``annotation_jitter`` adds Cauchy noise (scale ``jitter_scale``)
    and clips.
    """
    rng = make_rng(cfg.seed)
    S = len(dataset)
    k = cfg.count(S)
    idx = np.sort(rng.permutation(S)[:k])
    targets = dataset.targets.copy()
    tags = dataset.is_outlier.copy()
    if k:
        shape = (k, targets.shape[1])
        if cfg.mechanism == TARGET_CORRUPTION:
            targets[idx] = rng.uniform(0.0, 1.0, size=shape)
        else:
            targets[idx] = np.clip(targets[idx] + cfg.jitter_scale * rng.standard_cauchy(shape), 0.0, 1.0)
        tags[idx] = True
    return dataset.replace(targets=targets, is_outlier=tags)


# ---- resampling and augmentation ---------------------------------------------

def sample_bilinear(img: np.ndarray, sx: np.ndarray, sy: np.ndarray, fill: float | None = None) -> np.ndarray:
    """Bilinear samples of ``img`` (``(..., H, W)``) at continuous pixel positions.

    Positions use the pixel-centre convention. Outside the image the edge value
    is repeated, or ``fill`` is used when given.
    """
    H, W = img.shape[-2:]
    fx = sx - 0.5
    fy = sy - 0.5
    x0 = np.floor(fx).astype(int)
    y0 = np.floor(fy).astype(int)
    ax = fx - x0
    ay = fy - y0

    def tap(yi, xi):
        v = img[..., np.clip(yi, 0, H - 1), np.clip(xi, 0, W - 1)]
        if fill is not None:
            inside = (yi >= 0) & (yi < H) & (xi >= 0) & (xi < W)
            v = np.where(inside, v, fill)
        return v

    return ((1 - ay) * (1 - ax) * tap(y0, x0) + (1 - ay) * ax * tap(y0, x0 + 1)
            + ay * (1 - ax) * tap(y0 + 1, x0) + ay * ax * tap(y0 + 1, x0 + 1))


def resample_box(img: np.ndarray, x0: float, y0: float, w: float, h: float, out_h: int, out_w: int) -> np.ndarray:
    """Resample the box ``[x0, x0 + w] x [y0, y0 + h]`` of ``img`` to ``out_h x out_w``."""
    cx = x0 + (np.arange(out_w) + 0.5) * (w / out_w)
    cy = y0 + (np.arange(out_h) + 0.5) * (h / out_h)
    sx, sy = np.meshgrid(cx, cy)
    return sample_bilinear(img, sx, sy)


def rotate_keypoints(kps: np.ndarray, angle_deg: float, pixel_size) -> np.ndarray:
    """Rotate normalized keypoints about the image centre by ``angle_deg`` (counter-clockwise on screen)."""
    W, H = pixel_size
    pts = np.asarray(kps, dtype=DTYPE).reshape(-1, 2) * [W, H]
    c = np.array([W / 2.0, H / 2.0])
    a = np.deg2rad(angle_deg)
    # y points down, so a visually counter-clockwise turn is clockwise in (x, y)
    R = np.array([[np.cos(a), np.sin(a)], [-np.sin(a), np.cos(a)]])
    out = (pts - c) @ R.T + c
    return (out / [W, H]).reshape(np.shape(kps))


def rotate_image(img: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate ``(..., H, W)`` about its centre to match :func:`rotate_keypoints`; uncovered pixels are 0."""
    H, W = img.shape[-2:]
    c = np.array([W / 2.0, H / 2.0])
    a = np.deg2rad(angle_deg)
    R = np.array([[np.cos(a), np.sin(a)], [-np.sin(a), np.cos(a)]])
    qx, qy = np.meshgrid(np.arange(W) + 0.5, np.arange(H) + 0.5)
    q = np.stack([qx - c[0], qy - c[1]], axis=-1)
    src = q @ R + c  # R^-1 = R^T
    return sample_bilinear(img, src[..., 0], src[..., 1], fill=0.0)


def flip_keypoints(kps: np.ndarray) -> np.ndarray:
    out = np.array(kps, dtype=DTYPE).reshape(-1, 2)
    out[:, 0] = 1.0 - out[:, 0]
    return out.reshape(np.shape(kps))


def flip_image(img: np.ndarray) -> np.ndarray:
    return img[..., ::-1].copy()


def augment(dataset: Dataset, copies: int, noise_sigma: float, rng: np.random.Generator,
            max_angle: float = 30.0, flip_prob: float = 0.5) -> Dataset:
    """Append ``copies`` randomly transformed variants of every sample.

    Each variant is rotated by a uniform angle in ``[-max_angle, max_angle]``,
    flipped horizontally with probability ``flip_prob`` and gets Gaussian noise
    of ``noise_sigma`` on its targets. Keypoint targets follow the image
    transform and are clipped to ``[0, 1]``.
    """
    if copies < 0:
        raise ValueError("copies must be non-negative")
    if copies == 0:
        return dataset
    geometric = max_angle > 0 or flip_prob > 0
    if geometric and not dataset.is_image:
        raise ConfigError("rotation/flip augmentation needs image inputs; set max_angle=0 and flip_prob=0")
    S = len(dataset)
    inputs = [dataset.inputs]
    targets = [dataset.targets]
    for _ in range(copies):
        xs = dataset.inputs.copy()
        ys = dataset.targets.copy()
        for s in range(S):
            if geometric:
                angle = rng.uniform(-max_angle, max_angle)
                flip = rng.random() < flip_prob
                xs[s] = rotate_image(xs[s], angle)
                ys[s] = rotate_keypoints(ys[s], angle, dataset.pixel_size)
                if flip:
                    xs[s] = flip_image(xs[s])
                    ys[s] = flip_keypoints(ys[s])
        if noise_sigma > 0:
            ys = ys + noise_sigma * rng.standard_normal(ys.shape)
        inputs.append(xs)
        targets.append(np.clip(ys, 0.0, 1.0))
    return Dataset(np.concatenate(inputs), np.concatenate(targets),
                   np.tile(dataset.is_outlier, copies + 1), dataset.pixel_size)


def normalize_inputs(dataset: Dataset):
    """Subtract the mean training input; returns ``(normalized, mean)``."""
    if len(dataset) == 0:
        raise ValueError("cannot normalize an empty dataset")
    mean = dataset.inputs.mean(axis=0)
    return apply_mean(dataset, mean), mean


def apply_mean(dataset: Dataset, mean: np.ndarray) -> Dataset:
    return dataset.replace(inputs=dataset.inputs - mean)


# ---- files -------------------------------------------------------------------
#
# CSV layout: an optional "# pixel_size=W,H" comment line, then a header
#   sample_id, is_outlier, x0..x{d-1} | image, t0..t{N-1}
# Image inputs are single-channel 16-bit binary PGM files; the "image" column
# holds their path relative to the CSV file.

def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=DTYPE)
    if img.ndim == 3:
        if img.shape[0] != 1:
            raise DimensionError("PGM holds a single channel")
        img = img[0]
    h, w = img.shape
    data = np.round(np.clip(img, 0.0, 1.0) * 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode())
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: only binary PGM (P5) is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    dt = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(raw, dtype=dt, count=w * h, offset=pos)
    return data.reshape(h, w).astype(DTYPE) / maxval


def write_dataset(path, dataset: Dataset, image_dir: str | None = None) -> None:
    path = os.fspath(path)
    base = os.path.dirname(os.path.abspath(path))
    N = dataset.targets.shape[1]
    if dataset.is_image:
        image_dir = image_dir or os.path.splitext(os.path.basename(path))[0] + "_images"
        os.makedirs(os.path.join(base, image_dir), exist_ok=True)
        input_cols = ["image"]
    else:
        input_cols = [f"x{k}" for k in range(dataset.inputs.shape[1])]
    with open(path, "w", newline="") as fh:
        fh.write(f"# pixel_size={dataset.pixel_size[0]!r},{dataset.pixel_size[1]!r}\n")
        w = csv.writer(fh)
        w.writerow(["sample_id", "is_outlier", *input_cols, *(f"t{k}" for k in range(N))])
        for s in range(len(dataset)):
            if dataset.is_image:
                rel = os.path.join(image_dir, f"{s:06d}.pgm")
                write_pgm(os.path.join(base, rel), dataset.inputs[s])
                inp = [rel]
            else:
                inp = [repr(float(v)) for v in dataset.inputs[s]]
            w.writerow([s, int(dataset.is_outlier[s]), *inp, *(repr(float(v)) for v in dataset.targets[s])])


def read_dataset(path) -> Dataset:
    path = os.fspath(path)
    base = os.path.dirname(os.path.abspath(path))
    pixel_size = (64.0, 64.0)
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# pixel_size="):
            pixel_size = tuple(float(v) for v in line.split("=", 1)[1].split(","))
        elif line and not line.startswith("#"):
            body.append(line)
    rows = list(csv.reader(body))
    header, rows = rows[0], rows[1:]
    if header[:2] != ["sample_id", "is_outlier"]:
        raise ValueError(f"{path}: header must start with sample_id,is_outlier")
    tcols = [k for k, h in enumerate(header) if h.startswith("t") and h[1:].isdigit()]
    image = "image" in header
    tags = np.array([int(r[1]) for r in rows], dtype=bool)
    targets = np.array([[float(r[k]) for k in tcols] for r in rows])
    if image:
        k = header.index("image")
        inputs = np.stack([read_pgm(os.path.join(base, r[k]))[None] for r in rows])
    else:
        xcols = [k for k, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()]
        inputs = np.array([[float(r[k]) for k in xcols] for r in rows])
    return Dataset(inputs, targets, tags, pixel_size)
