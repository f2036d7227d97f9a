"""Shared oracles for the test suite."""

from pathlib import Path

import numpy as np

from robustreg import loss as L
from robustreg.network import (INFER, TRAIN, Conv2D, Dense, LinearOutput, MaxPool, NetworkSpec, ReLU, backward,
                               flatten_params, forward, unflatten_params)
from robustreg.numerics import finite_diff_grad


def tiny_conv_spec(in_hw=(8, 8), n_out=4):
    h, w = in_hw
    hh, ww = (h - 2) // 2, (w - 2) // 2
    return NetworkSpec((1, h, w), (
        Conv2D(1, 2, 3, 3), ReLU(), MaxPool(2, 2),
        Dense(2 * hh * ww, 5), ReLU(),
        LinearOutput(5, n_out),
    ))


def param_gradients(params, spec, x, y, mad, loss):
    """Analytic and central-difference gradients of the objective w.r.t. all parameters."""
    y_hat, cache = forward(params, spec, x, TRAIN)
    grads = backward(params, spec, cache, L.objective_grad(y, y_hat, mad, loss))

    def f(flat):
        out, _ = forward(unflatten_params(flat, params), spec, x, INFER)
        return L.objective(y, out, mad, loss)

    return flatten_params(grads), finite_diff_grad(f, flatten_params(params))


def grad_rel_err(analytic, numeric, atol=1e-8):
    """Element-wise relative error, with ``atol`` guarding entries that are both tiny."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol)


CONFIGS = Path(__file__).resolve().parent.parent / "configs"
