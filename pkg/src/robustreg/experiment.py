"""Run drivers behind the CLI: data assembly, training runs and their output files.

Output files (all written under the run's output directory):

``history*.csv``
    ``# robustreg config_hash=<hash> seed=<seed>`` then the columns
    ``epoch,train_loss,val_mpe,effective_mad_median,mad_median`` followed by
    one ``<name>_mpe`` column per monitored dataset.
``iterations*.csv``
    Per mini-batch MAD log for Tukey runs:
    ``iteration,mad_median,effective_mad_median,warmup_factor``.
``report.json`` / ``compare.json`` / ``cascade.json``
    Metric reports with ``config_hash`` and ``seed`` keys.
``*.bin``
    Network parameters, see :func:`robustreg.network.save_params`.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from robustreg import cascade as C
from robustreg import datagen as D
from robustreg import metrics
from robustreg.config import LINEAR, ExperimentConfig
from robustreg.loss import LossSpec
from robustreg.network import load_params, save_params
from robustreg.numerics import ConfigError, make_rng
from robustreg.optim import EpochRecord, TrainState, train

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "val_mpe", "effective_mad_median", "mad_median")


@dataclass
class ExperimentData:
    train: D.Dataset
    val: D.Dataset
    test: D.Dataset
    skeleton: metrics.SkeletonDef | None = None


def build_data(cfg: ExperimentConfig) -> ExperimentData:
    """Generate, split, contaminate and augment the task data for ``cfg``.

    Outliers and augmentation touch only the training split; validation and
    test samples stay clean (annotation noise included, no outliers).
    """
    task = cfg.task
    rng = make_rng(cfg.seed)
    total = task.n_train + task.n_val + task.n_test
    skeleton = None
    if task.kind == LINEAR:
        data, _ = D.gen_linear_task(total, task.input_dim, task.n_outputs, task.noise_sigma, rng,
                                    pixel_size=task.pixel_size)
    else:
        fig = task.figure_spec()
        data = D.gen_figure_task(fig, total, rng)
        skeleton = metrics.SkeletonDef(fig.limbs)
    idx = np.arange(total)
    train_set = data.subset(idx[:task.n_train])
    val = data.subset(idx[task.n_train:task.n_train + task.n_val])
    test = data.subset(idx[task.n_train + task.n_val:])
    outliers = dataclasses.replace(cfg.outliers, seed=cfg.outliers.seed + cfg.seed)
    train_set = D.inject_outliers(train_set, outliers)
    aug = cfg.augment
    if aug.copies:
        train_set = D.augment(train_set, aug.copies, aug.noise_sigma, rng, aug.max_angle, aug.flip_prob)
    if task.n_val == 0:
        val = train_set
    return ExperimentData(train_set, val, test, skeleton)


def provenance(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.hash(), "seed": cfg.seed}


def _fmt(v: float) -> str:
    return repr(float(v))


def write_history(path, history: list[EpochRecord], cfg: ExperimentConfig) -> None:
    extra = list(history[0].extra) if history else []
    with open(path, "w") as fh:
        fh.write(f"# robustreg config_hash={cfg.hash()} seed={cfg.seed}\n")
        fh.write(",".join(HISTORY_COLUMNS + tuple(extra)) + "\n")
        for r in history:
            row = [str(r.epoch), _fmt(r.train_loss), _fmt(r.val_mpe), _fmt(r.effective_mad_median),
                   _fmt(r.mad_median)] + [_fmt(r.extra[k]) for k in extra]
            fh.write(",".join(row) + "\n")


def write_iterations(path, state: TrainState, loss: LossSpec, cfg: ExperimentConfig) -> None:
    with open(path, "w") as fh:
        fh.write(f"# robustreg config_hash={cfg.hash()} seed={cfg.seed}\n")
        fh.write("iteration,mad_median,effective_mad_median,warmup_factor\n")
        for it, mad, eff in state.mad_log:
            fh.write(f"{it},{_fmt(np.median(mad))},{_fmt(np.median(eff))},{_fmt(loss.warmup_weight(it))}\n")


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _eval_set(data: ExperimentData) -> D.Dataset:
    return data.test if len(data.test) else data.val


@dataclass
class SingleRun:
    regressor: C.Regressor
    state: TrainState
    history: list
    test_report: metrics.MetricReport


def train_single(cfg: ExperimentConfig, data: ExperimentData, loss: LossSpec | None = None) -> SingleRun:
    """Train one network (stage-1 style) on ``data`` with the config's SGD settings."""
    loss = loss or cfg.loss
    net_cfg = cfg.network
    sample_shape = data.train.inputs.shape[1:]
    if data.train.is_image and net_cfg.input_size is not None:
        sample_shape = (sample_shape[0], *net_cfg.input_size)
    spec = net_cfg.build(sample_shape, data.train.targets.shape[1])
    reg = C.Regressor(spec)
    x_train = reg.prepare(data.train.inputs)
    reg.mean = x_train.mean(axis=0)
    prep = lambda d: d.replace(inputs=reg.prepare(d.inputs))
    monitors = {"test": prep(data.test)} if len(data.test) else {}
    state, hist = train(data.train.replace(inputs=x_train - reg.mean), spec, loss, cfg.sgd,
                        make_rng(cfg.seed + 1), validation=prep(data.val), monitors=monitors)
    reg.params = state.params
    ev = _eval_set(data)
    rep = metrics.report(reg(reg.prepare(ev.inputs)), ev.targets, ev.pixel_size, data.skeleton)
    return SingleRun(reg, state, hist, rep)


def _save_regressor(path, reg: C.Regressor, cfg: ExperimentConfig,
                    skeleton: metrics.SkeletonDef | None = None) -> None:
    extras = {"input_mean": reg.mean} if reg.mean is not None else {}
    meta = provenance(cfg)
    if skeleton is not None:
        meta["limbs"] = [list(l) for l in skeleton.limbs]
    save_params(path, reg.params, reg.spec, meta=meta, extras=extras)


def run_train(cfg: ExperimentConfig, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    data = build_data(cfg)
    run = train_single(cfg, data)
    write_history(os.path.join(out_dir, "history.csv"), run.history, cfg)
    if cfg.loss.kind == "tukey":
        write_iterations(os.path.join(out_dir, "iterations.csv"), run.state, cfg.loss, cfg)
    _save_regressor(os.path.join(out_dir, "params.bin"), run.regressor, cfg, data.skeleton)
    payload = {**provenance(cfg), "loss": cfg.loss.kind, "best_epoch": run.state.best_epoch,
               "best_val_mpe": run.state.best_val_error, **run.test_report.to_dict()}
    write_json(os.path.join(out_dir, "report.json"), payload)
    return payload


def run_compare(cfg: ExperimentConfig, out_dir: str) -> dict:
    """Twin L2 / Tukey runs on identical data and seeds, plus the convergence comparison."""
    os.makedirs(out_dir, exist_ok=True)
    data = build_data(cfg)
    runs = {}
    for kind in ("l2", "tukey"):
        loss = dataclasses.replace(cfg.loss, kind=kind)
        run = train_single(cfg, data, loss)
        runs[kind] = run
        write_history(os.path.join(out_dir, f"history_{kind}.csv"), run.history, cfg)
        if kind == "tukey":
            write_iterations(os.path.join(out_dir, "iterations_tukey.csv"), run.state, loss, cfg)
        _save_regressor(os.path.join(out_dir, f"params_{kind}.bin"), run.regressor, cfg, data.skeleton)
    l2, tk = runs["l2"], runs["tukey"]
    conv = metrics.epochs_to_reach([r.val_mpe for r in l2.history], [r.val_mpe for r in tk.history],
                                   [r.epoch for r in l2.history], [r.epoch for r in tk.history])
    n = max(len(l2.history), len(tk.history))
    with open(os.path.join(out_dir, "curves.csv"), "w") as fh:
        fh.write(f"# robustreg config_hash={cfg.hash()} seed={cfg.seed}\n")
        fh.write("epoch,l2_val_mpe,tukey_val_mpe\n")
        for e in range(n):
            a = _fmt(l2.history[e].val_mpe) if e < len(l2.history) else ""
            b = _fmt(tk.history[e].val_mpe) if e < len(tk.history) else ""
            fh.write(f"{e + 1},{a},{b}\n")
    payload = {
        **provenance(cfg),
        "l2_best": l2.state.best_val_error,
        "tukey_best": tk.state.best_val_error,
        "l2_test_mpe": l2.test_report.mpe,
        "tukey_test_mpe": tk.test_report.mpe,
        "reference_error": conv.reference_error,
        "epochs_l2": conv.epoch_a,
        "epochs_tukey": conv.epoch_b,
        "reached": conv.reached,
        "speedup": conv.speedup,
        "mpe_ratio": l2.test_report.mpe / tk.test_report.mpe,
        "l2_report": l2.test_report.to_dict(),
        "tukey_report": tk.test_report.to_dict(),
    }
    write_json(os.path.join(out_dir, "compare.json"), payload)
    return payload


def cascade_parts(cfg: ExperimentConfig, data: ExperimentData):
    """Network specs and region spec for a cascade run."""
    if cfg.cascade is None:
        raise ConfigError("config has no cascade section")
    cc = cfg.cascade
    if not data.train.is_image:
        raise ConfigError("cascade runs need the figure task")
    n_joints = data.train.targets.shape[1] // 2
    regions = C.RegionSpec.from_joint_groups(cc.groups, n_joints, margin=cc.margin, min_crop=cc.min_crop,
                                             input_size=cc.input_size, crop_rule=cc.crop_rule)
    channels = data.train.inputs.shape[1]
    stage1_hw = cfg.network.input_size or data.train.inputs.shape[2:]
    stage1 = cfg.network.build((channels, *stage1_hw), regions.n_outputs)
    refiners = [cc.network.build((channels, *regions.input_size), len(s)) for s in regions.subsets]
    return stage1, refiners, regions


def run_cascade(cfg: ExperimentConfig, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    data = build_data(cfg)
    stage1, refiners, regions = cascade_parts(cfg, data)
    model = C.train_cascade(data.train, data.val, stage1, refiners, regions, cfg.loss, cfg.sgd,
                            make_rng(cfg.seed + 1), refiner_cfg=cfg.cascade.sgd)
    write_history(os.path.join(out_dir, "history_stage1.csv"), model.stage1_history, cfg)
    _save_regressor(os.path.join(out_dir, "stage1.bin"), model.stage1, cfg, data.skeleton)
    for c, (reg, hist) in enumerate(zip(model.refiners, model.refiner_histories)):
        write_history(os.path.join(out_dir, f"history_refiner{c}.csv"), hist, cfg)
        _save_regressor(os.path.join(out_dir, f"refiner{c}.bin"), reg, cfg)
    ev = _eval_set(data)
    r1, r2 = C.evaluate_cascade(model, ev, data.skeleton)
    vr1, vr2 = C.evaluate_cascade(model, data.val, data.skeleton)
    payload = {
        **provenance(cfg),
        "regions": [list(s) for s in regions.subsets],
        "z": regions.z.tolist(),
        "stage1": r1.to_dict(),
        "refined": r2.to_dict(),
        "val_stage1_mpe": vr1.mpe,
        "val_refined_mpe": vr2.mpe,
    }
    write_json(os.path.join(out_dir, "cascade.json"), payload)
    return payload


def run_eval(params_path, dataset_path) -> dict:
    params, spec, meta, extras = load_params(params_path, with_extras=True)
    reg = C.Regressor(spec, params, extras.get("input_mean"))
    data = D.read_dataset(dataset_path)
    pred = reg(reg.prepare(data.inputs))
    skeleton = metrics.SkeletonDef(meta["limbs"]) if meta.get("limbs") else None
    rep = metrics.report(pred, data.targets, data.pixel_size, skeleton)
    return {**{k: meta[k] for k in ("config_hash", "seed") if k in meta}, **rep.to_dict()}
