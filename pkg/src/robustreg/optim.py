"""Mini-batch SGD with momentum, MAD refresh, warm-up and early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from robustreg import loss as L
from robustreg import metrics
from robustreg.datagen import Dataset
from robustreg.network import (
    TRAIN,
    NetworkParams,
    NetworkSpec,
    backward,
    copy_params,
    forward,
    init_params,
    predict,
    zeros_like_params,
)
from robustreg.numerics import DimensionError, NumericError

log = logging.getLogger(__name__)

MAD_PER_EPOCH = "epoch"
MAD_PER_BATCH = "batch"


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 230
    max_epochs: int = 100
    early_stop_patience: int = 10
    init_std: float = 0.01
    mad_cadence: str = MAD_PER_EPOCH

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("batch_size, max_epochs and early_stop_patience must be positive")
        if self.mad_cadence not in (MAD_PER_EPOCH, MAD_PER_BATCH):
            raise ValueError(f"mad_cadence must be {MAD_PER_EPOCH!r} or {MAD_PER_BATCH!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mpe: float
    effective_mad_median: float
    mad_median: float
    extra: dict = field(default_factory=dict)


@dataclass
class TrainState:
    params: NetworkParams
    velocity: NetworkParams
    global_iteration: int = 0
    epoch: int = 0
    mad: L.MadScale | None = None
    best_val_error: float = float("inf")
    best_epoch: int = 0
    history: list = field(default_factory=list)
    # (global iteration, computed MAD, effective MAD) for every Tukey step
    mad_log: list = field(default_factory=list)


def sgd_step(state: TrainState, grads: NetworkParams, cfg: SgdConfig) -> TrainState:
    """``v <- momentum * v - lr * g``; ``theta <- theta + v``. Updates ``state`` in place."""
    if len(grads) != len(state.params):
        raise DimensionError("gradient and parameter lists differ in length")
    for p, v, g in zip(state.params, state.velocity, grads):
        if p.keys() != g.keys():
            raise DimensionError("gradient and parameter entries differ")
        for k in p:
            if g[k].shape != p[k].shape:
                raise DimensionError(f"gradient shape {g[k].shape} != parameter shape {p[k].shape}")
            v[k] *= cfg.momentum
            v[k] -= cfg.learning_rate * g[k]
            p[k] += v[k]
    state.global_iteration += 1
    return state


def evaluate_mpe(params: NetworkParams, spec: NetworkSpec, data: Dataset) -> float:
    return metrics.mpe(predict(params, spec, data.inputs), data.targets, data.pixel_size)


def kfold_split(n: int, k: int, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """Random ``k``-fold partition of ``range(n)`` into (train, validation) index pairs.

    Fold sizes differ by at most one; the first ``n % k`` folds get the extra sample.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    perm = rng.permutation(n)
    sizes = [n // k + (1 if f < n % k else 0) for f in range(k)]
    bounds = np.cumsum([0] + sizes)
    folds = [np.sort(perm[bounds[f]:bounds[f + 1]]) for f in range(k)]
    return [(np.sort(np.concatenate([folds[g] for g in range(k) if g != f])), folds[f]) for f in range(k)]


def train(dataset: Dataset, spec: NetworkSpec, loss: L.LossSpec, cfg: SgdConfig, rng: np.random.Generator,
          validation: Dataset | None = None, monitors: dict | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None):
    """Minimize the chosen objective over ``dataset``.

    Every epoch shuffles the data and walks it in mini-batches (the last one
    may be short). For the Tukey loss the MAD is recomputed from the
    residuals of the whole training set at the start of each epoch (or from
    each mini-batch with ``mad_cadence="batch"``) and inflated by the warm-up
    factor while the global iteration count is below ``warmup_iters``.

    Model selection uses the validation MPE (training MPE if no validation
    set is given). Training stops after ``max_epochs`` or once the validation
    MPE has not improved for ``early_stop_patience`` epochs; the returned
    state holds the best parameters. ``monitors`` maps names to extra datasets
    whose MPE is logged per epoch.

    Returns ``(state, history)``.
    """
    S = len(dataset)
    if S == 0:
        raise ValueError("training set is empty")
    if dataset.targets.shape[1] != spec.n_outputs:
        raise DimensionError(f"targets have {dataset.targets.shape[1]} columns, network outputs {spec.n_outputs}")
    validation = validation if validation is not None else dataset
    monitors = monitors or {}

    params = init_params(spec, rng, cfg.init_std)
    state = TrainState(params=params, velocity=zeros_like_params(params))
    best = copy_params(params)
    stale = 0
    tukey = loss.kind == "tukey"

    for epoch in range(1, cfg.max_epochs + 1):
        state.epoch = epoch
        if tukey and (cfg.mad_cadence == MAD_PER_EPOCH or state.mad is None):
            res = L.residuals(dataset.targets, predict(state.params, spec, dataset.inputs))
            state.mad = L.compute_mad(res, iteration=state.global_iteration)
        epoch_eff = None
        epoch_mad = None
        order = rng.permutation(S)
        total, count = 0.0, 0
        for start in range(0, S, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, y = dataset.inputs[idx], dataset.targets[idx]
            y_hat, cache = forward(state.params, spec, x, TRAIN, rng)
            mad = None
            if tukey:
                if cfg.mad_cadence == MAD_PER_BATCH:
                    state.mad = L.compute_mad(L.residuals(y, y_hat))
                mad = state.mad.at(state.global_iteration)
                eff = mad.effective(loss)
                state.mad_log.append((state.global_iteration, mad.mad.copy(), eff))
                if epoch_eff is None:
                    epoch_eff, epoch_mad = eff, mad.mad
            with np.errstate(over="ignore", invalid="ignore"):
                # a diverging run is reported below rather than warned about
                value = L.objective(y, y_hat, mad, loss)
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, iteration {state.global_iteration}; "
                    f"last good epoch {state.best_epoch} with validation MPE {state.best_val_error:.6g}")
            grads = backward(state.params, spec, cache, L.objective_grad(y, y_hat, mad, loss))
            sgd_step(state, grads, cfg)
            total += value * len(idx)
            count += len(idx)

        val = evaluate_mpe(state.params, spec, validation)
        if not np.isfinite(val):
            raise NumericError(f"non-finite validation MPE at epoch {epoch}; last good epoch {state.best_epoch}")
        rec = EpochRecord(
            epoch=epoch,
            train_loss=total / count,
            val_mpe=val,
            effective_mad_median=float(np.median(epoch_eff)) if epoch_eff is not None else float("nan"),
            mad_median=float(np.median(epoch_mad)) if epoch_mad is not None else float("nan"),
            extra={f"{name}_mpe": evaluate_mpe(state.params, spec, data) for name, data in monitors.items()},
        )
        state.history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        log.debug("epoch %d loss %.6g val_mpe %.6g", epoch, rec.train_loss, val)
        if val < state.best_val_error:
            state.best_val_error = val
            state.best_epoch = epoch
            best = copy_params(state.params)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break

    state.params = best
    return state, state.history
