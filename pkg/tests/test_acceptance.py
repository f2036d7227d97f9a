"""Acceptance criteria 1-11, one test each.

Every test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line (visible even
with output capture on) before asserting, so ``pytest tests/test_acceptance.py``
doubles as the acceptance report.
"""

import time

import numpy as np
import pytest

from helpers import CONFIGS, grad_rel_err, param_gradients, tiny_conv_spec
from robustreg import cascade as C
from robustreg import experiment
from robustreg import loss as L
from robustreg.cli import main
from robustreg.config import load_config
from robustreg.datagen import gen_linear_task
from robustreg.metrics import LOOSE, STRICT, SkeletonDef, mpe, pcp
from robustreg.network import TRAIN, Dense, LinearOutput, NetworkSpec, ReLU, backward, forward, init_params
from robustreg.numerics import finite_diff_grad, make_rng
from robustreg.optim import SgdConfig, TrainState, sgd_step, train

SEEDS_LINEAR = (0, 1, 2, 3, 4)
SEEDS_CASCADE = (0, 1, 2)


@pytest.fixture
def verdict(capsys):
    def say(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return say


def test_01_psi_matches_fd_of_rho(verdict):
    t0 = time.perf_counter()
    c = L.TUKEY_C
    r = make_rng(101).uniform(-2 * c, 2 * c, 100)
    fd = finite_diff_grad(lambda v: float(np.sum(L.tukey_rho(v))), r, h=1e-5)
    psi = L.tukey_psi(r)
    err = np.abs(fd - psi)
    ok_each = (err <= 1e-6 * np.abs(psi)) | (err <= 1e-9)
    dt = time.perf_counter() - t0
    verdict(1, bool(ok_each.all()) and dt < 1.0,
            f"max rel err {np.max(err / np.maximum(np.abs(psi), 1e-300)):.2e} over non-zero psi, "
            f"{ok_each.sum()}/100 within tolerance, {dt:.3f} s")


def test_02_end_to_end_gradient_check(verdict):
    t0 = time.perf_counter()
    r = make_rng(202)
    spec = tiny_conv_spec((8, 8), 4)
    params = init_params(spec, r, 0.3)
    loss = L.LossSpec()
    mad = L.MadScale(np.full(4, 0.05), iteration=1000)
    worst = 0.0
    for _ in range(3):
        x = r.standard_normal((1, 1, 8, 8))
        y_hat, _ = forward(params, spec, x)
        # targets inside the biweight's active region so every gradient is non-trivial
        u = r.uniform(-3.0, 3.0, y_hat.shape)
        y = y_hat + u * L.MAD_TO_SIGMA * mad.mad
        a, n = param_gradients(params, spec, x, y, mad, loss)
        worst = max(worst, float(np.max(grad_rel_err(a, n, atol=1e-10))))
    dt = time.perf_counter() - t0
    verdict(2, worst <= 1e-5 and dt < 30, f"worst parameter rel err {worst:.2e} on 3 pairs, {dt:.2f} s")


def test_03_mad_consistency_and_equivariance(verdict):
    res = make_rng(303).standard_normal(100_000)
    sigma = L.MAD_TO_SIGMA * L.compute_mad(res).mad[0]
    base = L.compute_mad(res).mad[0]
    exact = all(L.compute_mad(k * res).mad[0] == k * base for k in (0.25, 2.0, 8.0, 2.0**-10))
    close = all(abs(L.compute_mad(k * res).mad[0] - k * base) <= 4 * np.spacing(k * base)
                for k in (0.3, 1.7, 123.4))
    verdict(3, 0.98 <= sigma <= 1.02 and exact and close,
            f"1.4826*MAD = {sigma:.4f}; equivariance exact for power-of-two scales: {exact}, "
            f"within 4 ulp for others: {close}")


def test_04_saturated_sample_gives_zero_update(verdict):
    r = make_rng(404)
    spec = NetworkSpec((3,), (Dense(3, 4), ReLU(), LinearOutput(4, 2)))
    params = init_params(spec, r, 0.5)
    x = r.standard_normal((1, 3))
    y_hat, cache = forward(params, spec, x, TRAIN)
    mad = L.MadScale(np.array([0.01, 0.02]), iteration=100)
    y = y_hat + np.array([[1.0, -2.0]])  # scaled residuals ~ 67 and ~ -67, both beyond c
    scaled = L.scaled_residuals(y - y_hat, mad, L.LossSpec())
    grads = backward(params, spec, cache, L.objective_grad(y, y_hat, mad, L.LossSpec()))
    state = TrainState([{k: v.copy() for k, v in p.items()} for p in params],
                       [{k: np.zeros_like(v) for k, v in p.items()} for p in params])
    sgd_step(state, grads, SgdConfig())
    unchanged = all(np.array_equal(a[k], b[k]) for a, b in zip(state.params, params) for k in a)
    zero = all(not np.any(g[k]) for g in grads for k in g)
    verdict(4, bool(np.all(np.abs(scaled) > L.TUKEY_C)) and zero and unchanged,
            f"|scaled residuals| {np.abs(scaled).min():.1f}+ > c; gradients all zero: {zero}; "
            f"parameters bit-identical after the step: {unchanged}")


def test_05_warmup_schedule(verdict):
    data, _ = gen_linear_task(400, 3, 2, 0.05, make_rng(505))
    spec = NetworkSpec((3,), (LinearOutput(3, 2),))
    cfg = SgdConfig(learning_rate=1e-4, batch_size=20, max_epochs=4, early_stop_patience=10)
    state, _ = train(data, spec, L.LossSpec(), cfg, make_rng(1))
    its = [it for it, _, _ in state.mad_log]
    bad = [it for it, mad, eff in state.mad_log
           if not np.array_equal(eff, (7.0 if it < 50 else 1.0) * np.maximum(mad, 1e-8))]
    verdict(5, its == list(range(80)) and not bad,
            f"{len(its)} logged iterations, {sum(i < 50 for i in its)} at 7x, "
            f"{sum(i >= 50 for i in its)} at 1x, mismatches: {len(bad)}")


def _compare(tmp_path, fraction, seed):
    cfg = load_config(str(CONFIGS / "linear_compare.json"), [f"outliers.fraction={fraction}"], seed=seed)
    return experiment.run_compare(cfg, str(tmp_path / f"f{fraction}_s{seed}"))


def test_06_robustness_experiment(verdict, tmp_path):
    t0 = time.perf_counter()
    runs = [_compare(tmp_path, 0.3, s) for s in SEEDS_LINEAR]
    dt = time.perf_counter() - t0
    better = all(r["tukey_test_mpe"] < r["l2_test_mpe"] for r in runs)
    ratios = [r["l2_test_mpe"] / r["tukey_test_mpe"] for r in runs]
    faster = all(r["reached"] and r["epochs_tukey"] <= r["epochs_l2"] for r in runs)
    med = float(np.median(ratios))
    for s, r in zip(SEEDS_LINEAR, runs):
        print(f"seed {s}: test MPE L2 {r['l2_test_mpe']:.3f} Tukey {r['tukey_test_mpe']:.3f} px; "
              f"epochs L2 {r['epochs_l2']} Tukey {r['epochs_tukey']} (speedup {r['speedup']:.1f}x)")
    verdict(6, better and med >= 1.5 and faster and dt < 120,
            f"Tukey better on all seeds: {better}; median L2/Tukey MPE {med:.2f}; "
            f"Tukey reaches L2's best no later: {faster}; {dt:.1f} s")


def test_07_efficiency_regime(verdict, tmp_path):
    runs = [_compare(tmp_path, 0.0, s) for s in SEEDS_LINEAR]
    rel = [abs(r["tukey_test_mpe"] - r["l2_test_mpe"]) / r["l2_test_mpe"] for r in runs]
    verdict(7, max(rel) <= 0.10,
            f"Tukey vs L2 clean-test MPE gap per seed: {', '.join(f'{100 * v:.1f}%' for v in rel)}")


def test_08_cascade_merge_oracle(verdict):
    from test_cascade import brute_merge, random_region_spec

    r = make_rng(808)
    exact, overlapping = True, 0
    for _ in range(50):
        spec = random_region_spec(r)
        overlapping += bool(np.any(spec.z > 1))
        outs = [r.random((4, len(s))) for s in spec.subsets]
        exact &= np.array_equal(C.merge(outs, spec), brute_merge(outs, spec))
    full = C.RegionSpec((tuple(range(8)),), 8)
    y = r.random((5, 8))
    verbatim = np.array_equal(C.merge([y], full), y)
    worst = 0.0
    for _ in range(1000):
        x0, y0 = r.uniform(0, 50, 2)
        w, h = r.uniform(1, 14, 2)
        t = C.CropTransform(x0, y0, w, h, 64.0, 64.0)
        p = np.array([x0 + r.random() * w, y0 + r.random() * h]) / 64
        worst = max(worst, float(np.max(np.abs(t.to_global(t.to_local(p)) - p))))
    verdict(8, exact and overlapping > 0 and verbatim and worst <= 1e-12,
            f"50 specs ({overlapping} overlapping) merge exactly: {exact}; C=1 verbatim: {verbatim}; "
            f"worst round-trip error {worst:.1e}")


def test_09_cascade_benchmark(verdict, tmp_path):
    t0 = time.perf_counter()
    rows = []
    for s in SEEDS_CASCADE:
        cfg = load_config(str(CONFIGS / "figure_cascade.json"), seed=s)
        rep = experiment.run_cascade(cfg, str(tmp_path / f"s{s}"))
        rows.append((rep["val_stage1_mpe"], rep["val_refined_mpe"]))
        print(f"seed {s}: validation MPE stage-1 {rows[-1][0]:.3f} px, refined {rows[-1][1]:.3f} px")
    dt = time.perf_counter() - t0
    ok = all(b <= 1.05 * a for a, b in rows)
    verdict(9, ok and dt < 600,
            "refined/stage-1 validation MPE " + ", ".join(f"{b / a:.3f}" for a, b in rows) + f"; {dt:.0f} s")


def test_10_metric_oracles(verdict):
    limb = SkeletonDef(((0, 1),))
    truth = np.array([[0.0, 0.0, 10.0, 0.0]])
    six_zero = np.array([[6.0, 0.0, 10.0, 0.0]])
    boundary = np.array([[0.0, 5.0, 10.0, -5.0]])
    hand = (pcp(six_zero, truth, limb, STRICT)["full"] == 0.0
            and pcp(six_zero, truth, limb, LOOSE)["full"] == 1.0
            and pcp(boundary, truth, limb, STRICT)["full"] == 1.0
            and pcp(boundary, truth, limb, LOOSE)["full"] == 1.0
            and pcp(truth, truth, limb, STRICT)["full"] == 1.0)
    r = make_rng(1010)
    sk = SkeletonDef.from_parents([-1, 0, 1, 1, 0, 0])
    dominated = True
    for _ in range(1000):
        t = r.random((8, 12))
        p = t + r.normal(0, r.uniform(0.01, 0.3), t.shape)
        s, lo = pcp(p, t, sk, STRICT), pcp(p, t, sk, LOOSE)
        dominated &= all(s["per_limb"][k] <= lo["per_limb"][k] for k in s["per_limb"])
    tri = mpe(np.array([[3.0, 4.0]]), np.array([[0.0, 0.0]])) == 5.0
    verdict(10, hand and dominated and tri,
            f"hand PCP cases: {hand}; strict <= loose on 1000 batches: {dominated}; 3-4-5 MPE: {tri}")


def test_11_compare_determinism(verdict, tmp_path):
    for d in ("a", "b"):
        assert main(["compare", str(CONFIGS / "linear_compare.json"), "--out", str(tmp_path / d)]) == 0
    names = ("history_l2.csv", "history_tukey.csv", "curves.csv", "iterations_tukey.csv")
    same = {n: (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names}
    verdict(11, all(same.values()), ", ".join(f"{n} identical: {v}" for n, v in same.items()))
