"""Feed-forward regression networks with hand-written forward and backward passes.

Inputs are batched: ``(B, d)`` for vector data or ``(B, C, H, W)`` for images.
Convolutions use valid padding and stride 1; max-pooling uses non-overlapping
windows and breaks ties by the first position in row-major order. Dropout is
inverted (scaled at train time) so inference needs no rescaling.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from robustreg.numerics import DTYPE, ConfigError, DimensionError, StateError, gauss_sample


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int


@dataclass(frozen=True)
class LinearOutput:
    n_in: int
    n_out: int


@dataclass(frozen=True)
class Conv2D:
    in_ch: int
    out_ch: int
    kh: int
    kw: int


@dataclass(frozen=True)
class MaxPool:
    kh: int
    kw: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Dropout:
    rate: float


LayerSpec = Union[Dense, LinearOutput, Conv2D, MaxPool, ReLU, Dropout]

LAYER_KINDS = {cls.__name__: cls for cls in (Dense, LinearOutput, Conv2D, MaxPool, ReLU, Dropout)}


@dataclass(frozen=True)
class NetworkSpec:
    """Input shape of a single sample plus the layer chain."""

    input_shape: tuple
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def n_outputs(self) -> int:
        return self.shapes()[-1][0]

    def shapes(self) -> list[tuple]:
        """Per-sample activation shape after each layer (index 0 is the input).

        Raises ConfigError when the chain is inconsistent.
        """
        shape = self.input_shape
        out = [shape]
        if not shape or any(d <= 0 for d in shape):
            raise ConfigError(f"invalid input shape {shape}")
        for k, layer in enumerate(self.layers):
            where = f"layer {k} ({type(layer).__name__})"
            if isinstance(layer, (Dense, LinearOutput)):
                n = int(np.prod(shape))
                if n != layer.n_in:
                    raise ConfigError(f"{where}: expects {layer.n_in} inputs, gets {n} from shape {shape}")
                if layer.n_out <= 0:
                    raise ConfigError(f"{where}: n_out must be positive")
                if isinstance(layer, LinearOutput) and k != len(self.layers) - 1:
                    raise ConfigError(f"{where}: LinearOutput must be the last layer")
                shape = (layer.n_out,)
            elif isinstance(layer, Conv2D):
                if len(shape) != 3 or shape[0] != layer.in_ch:
                    raise ConfigError(f"{where}: expects ({layer.in_ch}, H, W) input, gets {shape}")
                ho, wo = shape[1] - layer.kh + 1, shape[2] - layer.kw + 1
                if ho <= 0 or wo <= 0 or layer.out_ch <= 0:
                    raise ConfigError(f"{where}: kernel larger than input {shape}")
                shape = (layer.out_ch, ho, wo)
            elif isinstance(layer, MaxPool):
                if len(shape) != 3:
                    raise ConfigError(f"{where}: needs an image-shaped input, gets {shape}")
                ho, wo = shape[1] // layer.kh, shape[2] // layer.kw
                if ho <= 0 or wo <= 0:
                    raise ConfigError(f"{where}: window larger than input {shape}")
                shape = (shape[0], ho, wo)
            elif isinstance(layer, Dropout):
                if not 0 <= layer.rate < 1:
                    raise ConfigError(f"{where}: rate must lie in [0, 1), got {layer.rate}")
            elif isinstance(layer, ReLU):
                pass
            else:
                raise ConfigError(f"{where}: unknown layer kind")
            out.append(shape)
        if len(out[-1]) != 1:
            raise ConfigError(f"network output must be a vector, final shape is {out[-1]}")
        return out

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [{"kind": type(l).__name__, **asdict(l)} for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        layers = []
        for item in d["layers"]:
            item = dict(item)
            kind = item.pop("kind")
            if kind not in LAYER_KINDS:
                raise ConfigError(f"unknown layer kind {kind!r}")
            try:
                layers.append(LAYER_KINDS[kind](**item))
            except TypeError as exc:
                raise ConfigError(f"bad fields for {kind}: {exc}") from None
        spec = cls(tuple(d["input_shape"]), tuple(layers))
        spec.shapes()
        return spec


# Parameters are a list with one entry per layer: a dict {"W": ..., "b": ...}
# for layers that own weights, an empty dict otherwise.
NetworkParams = list


def init_params(spec: NetworkSpec, rng: np.random.Generator, init_std: float = 0.01) -> NetworkParams:
    """Gaussian weights with standard deviation ``init_std`` and zero biases."""
    spec.shapes()
    params = []
    for layer in spec.layers:
        if isinstance(layer, (Dense, LinearOutput)):
            params.append({
                "W": gauss_sample(rng, (layer.n_in, layer.n_out), init_std),
                "b": np.zeros(layer.n_out, dtype=DTYPE),
            })
        elif isinstance(layer, Conv2D):
            params.append({
                "W": gauss_sample(rng, (layer.out_ch, layer.in_ch, layer.kh, layer.kw), init_std),
                "b": np.zeros(layer.out_ch, dtype=DTYPE),
            })
        else:
            params.append({})
    return params


def zeros_like_params(params: NetworkParams) -> NetworkParams:
    return [{k: np.zeros_like(v) for k, v in p.items()} for p in params]


def copy_params(params: NetworkParams) -> NetworkParams:
    return [{k: v.copy() for k, v in p.items()} for p in params]


def flatten_params(params: NetworkParams) -> np.ndarray:
    parts = [p[k].reshape(-1) for p in params for k in sorted(p)]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=DTYPE)


def unflatten_params(flat: np.ndarray, like: NetworkParams) -> NetworkParams:
    out, pos = [], 0
    for p in like:
        q = {}
        for k in sorted(p):
            n = p[k].size
            q[k] = np.asarray(flat[pos:pos + n], dtype=DTYPE).reshape(p[k].shape)
            pos += n
        out.append(q)
    if pos != flat.size:
        raise DimensionError(f"flat vector has {flat.size} entries, parameters need {pos}")
    return out


# ---- layer kernels -------------------------------------------------------

def conv2d_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    """Valid, stride-1 convolution via im2col; returns ``(out, cols)``."""
    B, C, H, Wd = x.shape
    O, _, kh, kw = W.shape
    ho, wo = H - kh + 1, Wd - kw + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # B, C, ho, wo, kh, kw
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * ho * wo, C * kh * kw)
    out = cols @ W.reshape(O, -1).T + b
    return np.ascontiguousarray(out.reshape(B, ho, wo, O).transpose(0, 3, 1, 2)), cols


def conv2d_backward(dout: np.ndarray, cols: np.ndarray, in_shape: tuple, W: np.ndarray, need_dx: bool = True):
    """Gradients ``(dx, dW, db)``; ``dx`` is None when ``need_dx`` is false."""
    B, C, H, Wd = in_shape
    O, _, kh, kw = W.shape
    ho, wo = dout.shape[2:]
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, O)
    dW = (dmat.T @ cols).reshape(W.shape)
    db = dmat.sum(axis=0)
    if not need_dx:
        return None, dW, db
    dcols = (dmat @ W.reshape(O, -1)).reshape(B, ho, wo, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    dx = np.zeros(in_shape, dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + ho, j:j + wo] += dcols[:, :, i, j]
    return dx, dW, db


def maxpool_forward(x: np.ndarray, kh: int, kw: int):
    B, C, H, W = x.shape
    ho, wo = H // kh, W // kw
    blocks = x[:, :, :ho * kh, :wo * kw].reshape(B, C, ho, kh, wo, kw)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, ho, wo, kh * kw)
    # argmax returns the first maximal index, i.e. row-major tie-breaking
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_backward(dout: np.ndarray, arg: np.ndarray, in_shape: tuple, kh: int, kw: int) -> np.ndarray:
    B, C, H, W = in_shape
    ho, wo = dout.shape[2:]
    onehot = np.zeros((B, C, ho, wo, kh * kw), dtype=DTYPE)
    np.put_along_axis(onehot, arg[..., None], dout[..., None], axis=-1)
    onehot = onehot.reshape(B, C, ho, wo, kh, kw).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, ho * kh, wo * kw)
    dx = np.zeros(in_shape, dtype=DTYPE)
    dx[:, :, :ho * kh, :wo * kw] = onehot
    return dx


# ---- whole-network passes --------------------------------------------------

TRAIN = "train"
INFER = "infer"


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)
    shapes: list = field(default_factory=list)
    aux: list = field(default_factory=list)


def _batched(spec: NetworkSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.shape == spec.input_shape:
        x = x[None]
    if x.shape[1:] != spec.input_shape:
        raise DimensionError(f"input batch shape {x.shape} does not match network input {spec.input_shape}")
    return x


def forward(params: NetworkParams, spec: NetworkSpec, x, mode: str = INFER, rng: np.random.Generator | None = None):
    """Run the network on a batch; returns ``(y_hat, cache)``.

    The cache is only built in train mode, where dropout is active and needs
    ``rng``.
    """
    if mode not in (TRAIN, INFER):
        raise ValueError(f"mode must be {TRAIN!r} or {INFER!r}")
    h = _batched(spec, x)
    train = mode == TRAIN
    cache = ForwardCache() if train else None
    for layer, p in zip(spec.layers, params):
        aux = None
        inp = h
        if isinstance(layer, (Dense, LinearOutput)):
            flat = h.reshape(h.shape[0], -1)
            inp = flat
            h = flat @ p["W"] + p["b"]
        elif isinstance(layer, Conv2D):
            h, aux = conv2d_forward(h, p["W"], p["b"])
        elif isinstance(layer, MaxPool):
            h, aux = maxpool_forward(h, layer.kh, layer.kw)
        elif isinstance(layer, ReLU):
            h = np.maximum(h, 0.0)
        elif isinstance(layer, Dropout):
            if train and layer.rate > 0:
                if rng is None:
                    raise ValueError("train-mode dropout needs an rng")
                aux = (rng.random(h.shape) >= layer.rate) / (1.0 - layer.rate)
                h = h * aux
        if train:
            cache.inputs.append(None if isinstance(layer, Conv2D) else inp)
            cache.shapes.append(inp.shape)
            cache.aux.append(aux)
    return h, cache


def backward(params: NetworkParams, spec: NetworkSpec, cache: ForwardCache | None, dy) -> NetworkParams:
    """Parameter gradients given ``dy``, the gradient of the objective w.r.t. the output."""
    if cache is None or len(cache.inputs) != len(spec.layers):
        raise StateError("backward needs the cache of a train-mode forward pass")
    g = np.asarray(dy, dtype=DTYPE)
    grads: NetworkParams = [{} for _ in spec.layers]
    shapes = spec.shapes()
    for k in range(len(spec.layers) - 1, -1, -1):
        layer, p, inp, aux = spec.layers[k], params[k], cache.inputs[k], cache.aux[k]
        if isinstance(layer, (Dense, LinearOutput)):
            grads[k] = {"W": inp.T @ g, "b": g.sum(axis=0)}
            g = g @ p["W"].T
            g = g.reshape((g.shape[0],) + shapes[k])
        elif isinstance(layer, Conv2D):
            # the input gradient of the first layer is never used
            g, dW, db = conv2d_backward(g, aux, cache.shapes[k], p["W"], need_dx=k > 0)
            grads[k] = {"W": dW, "b": db}
        elif isinstance(layer, MaxPool):
            g = maxpool_backward(g, aux, inp.shape, layer.kh, layer.kw)
        elif isinstance(layer, ReLU):
            g = g * (inp > 0)
        elif isinstance(layer, Dropout):
            if aux is not None:
                g = g * aux
    return grads


def predict(params: NetworkParams, spec: NetworkSpec, x, batch_size: int = 512) -> np.ndarray:
    """Inference-mode outputs for a possibly large batch, evaluated in chunks."""
    x = _batched(spec, x)
    outs = [forward(params, spec, x[i:i + batch_size], INFER)[0] for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, spec.n_outputs))


# ---- serialization ---------------------------------------------------------
#
# File layout (version 1):
#   line 1: b"ROBUSTREG-PARAMS 1\n"
#   line 2: UTF-8 JSON header terminated by b"\n":
#           {"network": NetworkSpec.to_dict(), "tensors": [{"layer": k, "name": "W", "shape": [...]}, ...],
#            "meta": {...}}
#           Extra named arrays (e.g. the input mean) use "layer": null.
#   rest:   the tensors in header order, little-endian float64, C order.

MAGIC = b"ROBUSTREG-PARAMS 1\n"


def save_params(path, params: NetworkParams, spec: NetworkSpec, meta: dict | None = None,
                extras: dict | None = None) -> None:
    extras = extras or {}
    arrays = [(k, name, p[name]) for k, p in enumerate(params) for name in sorted(p)]
    arrays += [(None, name, np.asarray(extras[name], dtype=DTYPE)) for name in sorted(extras)]
    tensors = [{"layer": k, "name": name, "shape": list(a.shape)} for k, name, a in arrays]
    header = {"network": spec.to_dict(), "tensors": tensors, "meta": meta or {}}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for _, _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_params(path, with_extras: bool = False):
    """Return ``(params, spec, meta)`` (plus ``extras`` if asked) from a :func:`save_params` file."""
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path}: not a parameter file (bad magic or version)")
        header = json.loads(fh.readline())
        blob = fh.read()
    spec = NetworkSpec.from_dict(header["network"])
    params: NetworkParams = [{} for _ in spec.layers]
    extras = {}
    pos = 0
    for t in header["tensors"]:
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).astype(DTYPE).reshape(t["shape"])
        if t["layer"] is None:
            extras[t["name"]] = arr
        else:
            params[t["layer"]][t["name"]] = arr
        pos += 8 * n
    if pos != len(blob):
        raise ValueError(f"{path}: {len(blob) - pos} trailing bytes")
    if with_extras:
        return params, spec, header["meta"], extras
    return params, spec, header["meta"]
