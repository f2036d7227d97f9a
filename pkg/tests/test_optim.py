import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustreg import loss as L
from robustreg.datagen import Dataset, gen_linear_task
from robustreg.network import Dense, LinearOutput, NetworkSpec, ReLU, TRAIN, backward, forward, init_params
from robustreg.numerics import make_rng
from robustreg.optim import SgdConfig, TrainState, kfold_split, sgd_step, train


def _state(theta):
    p = [{"W": np.array(theta, dtype=float)}]
    return TrainState(params=p, velocity=[{"W": np.zeros_like(p[0]["W"])}])


def test_sgd_plain_step():
    s = sgd_step(_state([3.0]), [{"W": np.array([1.0])}], SgdConfig(learning_rate=1.0, momentum=0.0))
    assert s.params[0]["W"].tolist() == [2.0]
    assert s.global_iteration == 1


def test_sgd_zero_gradient():
    s = sgd_step(_state([3.0, -1.0]), [{"W": np.zeros(2)}], SgdConfig())
    assert s.params[0]["W"].tolist() == [3.0, -1.0]


def test_sgd_momentum_unrolled():
    lr, m, g = 0.1, 0.9, 2.0
    s = _state([0.0])
    cfg = SgdConfig(learning_rate=lr, momentum=m)
    for _ in range(2):
        sgd_step(s, [{"W": np.array([g])}], cfg)
    v1 = -lr * g
    v2 = m * v1 - lr * g
    assert s.params[0]["W"][0] == pytest.approx(v1 + v2, rel=1e-15)


def test_kfold_examples():
    folds = kfold_split(10, 5, make_rng(0))
    assert [len(v) for _, v in folds] == [2] * 5
    folds = kfold_split(11, 5, make_rng(0))
    assert sorted(len(v) for _, v in folds) == [2, 2, 2, 2, 3]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.integers(2, 10), st.integers(0, 2**32))
def test_kfold_partition(n, k, seed):
    if k > n:
        with pytest.raises(ValueError):
            kfold_split(n, k, make_rng(seed))
        return
    folds = kfold_split(n, k, make_rng(seed))
    vals = np.concatenate([v for _, v in folds])
    assert sorted(vals.tolist()) == list(range(n))
    for tr, v in folds:
        assert not set(tr) & set(v)
        assert len(tr) + len(v) == n
    sizes = [len(v) for _, v in folds]
    assert max(sizes) - min(sizes) <= 1


def test_train_noiseless_linear_converges():
    data, _ = gen_linear_task(200, 3, 2, 0.0, make_rng(0))
    spec = NetworkSpec((3,), (LinearOutput(3, 2),))
    cfg = SgdConfig(learning_rate=0.1, batch_size=20, max_epochs=200, early_stop_patience=200)
    state, hist = train(data, spec, L.LossSpec("l2"), cfg, make_rng(1))
    assert len(hist) <= 200
    assert state.best_val_error < 1e-3


def test_train_deterministic():
    data, _ = gen_linear_task(120, 4, 2, 0.05, make_rng(0))
    spec = NetworkSpec((4,), (Dense(4, 5), ReLU(), LinearOutput(5, 2)))
    cfg = SgdConfig(learning_rate=0.001, max_epochs=5, batch_size=32)
    h1 = train(data, spec, L.LossSpec(), cfg, make_rng(3))[1]
    h2 = train(data, spec, L.LossSpec(), cfg, make_rng(3))[1]
    assert h1 == h2


@pytest.mark.parametrize("cadence", ["epoch", "batch"])
def test_warmup_logged_exactly(cadence):
    data, _ = gen_linear_task(300, 3, 2, 0.05, make_rng(0))
    spec = NetworkSpec((3,), (LinearOutput(3, 2),))
    cfg = SgdConfig(learning_rate=1e-4, batch_size=10, max_epochs=3, mad_cadence=cadence)
    state, _ = train(data, spec, L.LossSpec(), cfg, make_rng(1))
    log = state.mad_log
    assert [it for it, _, _ in log] == list(range(90))
    for it, mad, eff in log:
        factor = 7.0 if it < 50 else 1.0
        assert np.array_equal(eff, factor * np.maximum(mad, 1e-8))


def test_outlier_sample_contributes_nothing():
    r = make_rng(2)
    spec = NetworkSpec((3,), (Dense(3, 4), ReLU(), LinearOutput(4, 2)))
    p = init_params(spec, r, 0.5)
    x = r.standard_normal((6, 3))
    y_hat, _ = forward(p, spec, x)
    y = y_hat + 0.01 * r.standard_normal(y_hat.shape)
    mad = L.compute_mad(y - y_hat, iteration=100)
    y[0] = y_hat[0] + 1e3  # every output of sample 0 far beyond c
    loss = L.LossSpec()

    def grads(inputs):
        out, cache = forward(p, spec, inputs, TRAIN)
        dy = L.objective_grad(y, out, mad, loss)
        return dy, backward(p, spec, cache, dy)

    dy, g = grads(x)
    assert not np.any(dy[0])
    x2 = x.copy()
    x2[0] = r.standard_normal(3) * 100  # the outlier's input no longer matters
    _, g2 = grads(x2)
    for a, b in zip(g, g2):
        for k in a:
            assert np.array_equal(a[k], b[k])
    # a batch made only of such samples leaves the parameters untouched
    only, cache = forward(p, spec, x[:1], TRAIN)
    dy1 = L.objective_grad(y[:1], only, mad, loss)
    state = TrainState(params=[{k: v.copy() for k, v in q.items()} for q in p],
                       velocity=[{k: np.zeros_like(v) for k, v in q.items()} for q in p])
    sgd_step(state, backward(p, spec, cache, dy1), SgdConfig())
    for a, b in zip(state.params, p):
        for k in a:
            assert np.array_equal(a[k], b[k])


def test_early_stopping_returns_best():
    data, _ = gen_linear_task(100, 3, 2, 0.05, make_rng(0))
    val, _ = gen_linear_task(50, 3, 2, 0.05, make_rng(0))
    spec = NetworkSpec((3,), (LinearOutput(3, 2),))
    cfg = SgdConfig(learning_rate=0.05, max_epochs=100, early_stop_patience=3)
    state, hist = train(data, spec, L.LossSpec("l2"), cfg, make_rng(1), validation=val)
    best = min(h.val_mpe for h in hist)
    assert state.best_val_error == best
    assert hist[state.best_epoch - 1].val_mpe == best
    assert len(hist) - state.best_epoch <= 3
