"""Experiment configuration: JSON files mapped onto nested dataclasses.

A config fully determines a run. Unknown keys and bad values raise
:class:`ConfigError` with the line of the offending key when the source text
is known. ``--override a.b=value`` style edits are applied to the raw
dictionary before validation; values are parsed as JSON when possible.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass
from typing import Any

from robustreg.datagen import TARGET_CORRUPTION, ArticulatedFigureSpec, OutlierConfig
from robustreg.loss import LossSpec
from robustreg.network import Conv2D, Dense, Dropout, LinearOutput, MaxPool, NetworkSpec, ReLU
from robustreg.numerics import ConfigError
from robustreg.optim import SgdConfig

LINEAR = "linear"
FIGURE = "figure"


@dataclass(frozen=True)
class TaskConfig:
    kind: str = LINEAR
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 1000
    input_dim: int = 8
    n_outputs: int = 2
    noise_sigma: float = 0.02
    pixel_size: tuple = (64.0, 64.0)
    n_joints: int = 6
    render_size: int = 64
    thickness: float = 2.0

    def __post_init__(self):
        if self.kind not in (LINEAR, FIGURE):
            raise ConfigError(f"task.kind must be {LINEAR!r} or {FIGURE!r}")
        if self.n_train < 1 or self.n_val < 0 or self.n_test < 0:
            raise ConfigError("task sizes must be n_train >= 1, n_val >= 0, n_test >= 0")

    def figure_spec(self) -> ArticulatedFigureSpec:
        if self.n_joints == 6:
            return dataclasses.replace(ArticulatedFigureSpec(), size=self.render_size, thickness=self.thickness)
        return dataclasses.replace(ArticulatedFigureSpec.chain(self.n_joints, self.render_size),
                                   thickness=self.thickness)


@dataclass(frozen=True)
class AugmentConfig:
    copies: int = 0
    noise_sigma: float = 0.01
    max_angle: float = 30.0
    flip_prob: float = 0.5


@dataclass(frozen=True)
class NetworkConfig:
    """Either a named preset or an explicit layer list.

    Presets: ``linear`` (one affine layer), ``mlp`` (``hidden`` ReLU units) and
    ``conv`` (two conv/ReLU/pool blocks with ``channels``, then a hidden dense
    layer). ``input_size`` resizes image inputs before the network.
    """

    preset: str = "linear"
    hidden: int = 64
    channels: tuple = (8, 8)
    dropout: float = 0.0
    input_size: tuple | None = None
    layers: tuple | None = None

    def build(self, input_shape: tuple, n_outputs: int) -> NetworkSpec:
        input_shape = tuple(input_shape)
        if self.layers is not None:
            return NetworkSpec.from_dict({"input_shape": list(input_shape), "layers": list(self.layers)})
        if self.preset == "linear":
            d = _prod(input_shape)
            return NetworkSpec(input_shape, (LinearOutput(d, n_outputs),))
        if self.preset == "mlp":
            d = _prod(input_shape)
            mid = (Dropout(self.dropout),) if self.dropout > 0 else ()
            return NetworkSpec(input_shape, (Dense(d, self.hidden), ReLU(), *mid, LinearOutput(self.hidden, n_outputs)))
        if self.preset == "conv":
            return conv_network(input_shape, n_outputs, self.channels, self.hidden, self.dropout)
        raise ConfigError(f"unknown network preset {self.preset!r}")


def _prod(shape) -> int:
    n = 1
    for d in shape:
        n *= int(d)
    return n


def conv_network(input_shape: tuple, n_outputs: int, channels=(8, 8), hidden: int = 64,
                 dropout: float = 0.0) -> NetworkSpec:
    """conv5x5 -> ReLU -> pool2 -> conv3x3 -> ReLU -> pool2 -> dense -> ReLU [-> dropout] -> linear."""
    c_in, h, w = input_shape
    c1, c2 = channels
    h, w = (h - 4) // 2, (w - 4) // 2
    h, w = (h - 2) // 2, (w - 2) // 2
    if h <= 0 or w <= 0:
        raise ConfigError(f"input {input_shape} too small for the conv preset")
    mid = (Dropout(dropout),) if dropout > 0 else ()
    return NetworkSpec(input_shape, (
        Conv2D(c_in, c1, 5, 5), ReLU(), MaxPool(2, 2),
        Conv2D(c1, c2, 3, 3), ReLU(), MaxPool(2, 2),
        Dense(c2 * h * w, hidden), ReLU(), *mid,
        LinearOutput(hidden, n_outputs),
    ))


@dataclass(frozen=True)
class CascadeConfig:
    """Joint groups per region plus crop geometry; refiners use ``network`` with ``input_size`` crops."""

    groups: tuple = ((1, 2), (0, 1, 3), (0, 4, 5))
    margin: float = 0.25
    min_crop: float = 12.0
    input_size: tuple = (24, 24)
    crop_rule: str = "bbox"
    network: NetworkConfig = NetworkConfig(preset="conv")
    sgd: SgdConfig | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskConfig = TaskConfig()
    outliers: OutlierConfig = OutlierConfig()
    augment: AugmentConfig = AugmentConfig()
    network: NetworkConfig = NetworkConfig()
    loss: LossSpec = LossSpec()
    sgd: SgdConfig = SgdConfig()
    cascade: CascadeConfig | None = None
    seed: int = 0
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return _to_plain(self)

    def canonical_json(self) -> str:
        d = self.to_dict()
        d.pop("output_dir", None)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    return obj


# ---- parsing -----------------------------------------------------------------

_NESTED = {
    ("task",): TaskConfig,
    ("outliers",): OutlierConfig,
    ("augment",): AugmentConfig,
    ("network",): NetworkConfig,
    ("loss",): LossSpec,
    ("sgd",): SgdConfig,
    ("cascade",): CascadeConfig,
    ("cascade", "network"): NetworkConfig,
    ("cascade", "sgd"): SgdConfig,
}


def _tupleize(v):
    if isinstance(v, list):
        return tuple(_tupleize(x) if not isinstance(x, dict) else x for x in v)
    return v


def _build(cls, data: Any, path: tuple, text: str | None):
    where = ".".join(path) or "<root>"
    if not isinstance(data, dict):
        raise ConfigError(_anchor(f"{where}: expected an object", path, text))
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        sub = path + (key,)
        if key not in names:
            raise ConfigError(_anchor(f"unknown key {'.'.join(sub)!r}", sub, text))
        if sub in _NESTED and value is not None:
            value = _build(_NESTED[sub], value, sub, text)
        elif key == "layers" and value is not None:
            value = tuple(dict(v) for v in value)
        else:
            value = _tupleize(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(_anchor(f"{where}: {exc}", path, text)) from None


def _anchor(msg: str, path: tuple, text: str | None) -> str:
    """Prefix ``msg`` with the line of the last key of ``path`` in ``text``."""
    if text and path:
        pat = re.compile(r'"' + re.escape(str(path[-1])) + r'"\s*:')
        for lineno, line in enumerate(text.splitlines(), start=1):
            if pat.search(line):
                return f"line {lineno}: {msg}"
    return msg


def set_dotted(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        nxt = cur.get(k)
        if nxt is None:
            nxt = cur[k] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {dotted!r}: {k!r} is not a section")
        cur = nxt
    cur[keys[-1]] = value


def parse_override(item: str) -> tuple[str, Any]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def from_dict(data: dict, text: str | None = None) -> ExperimentConfig:
    return _build(ExperimentConfig, data, (), text)


def load_config(path, overrides: list[str] | None = None, seed: int | None = None,
                output_dir: str | None = None) -> ExperimentConfig:
    """Read a JSON config, apply overrides and flags, and validate it."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}: invalid JSON: {exc.msg}") from None
    data = copy.deepcopy(data)
    for item in overrides or []:
        key, value = parse_override(item)
        set_dotted(data, key, value)
    if seed is not None:
        data["seed"] = seed
    if output_dir is not None:
        data["output_dir"] = output_dir
    return from_dict(data, text)


__all__ = [
    "AugmentConfig", "CascadeConfig", "ExperimentConfig", "NetworkConfig", "TaskConfig",
    "conv_network", "from_dict", "load_config", "TARGET_CORRUPTION",
]
