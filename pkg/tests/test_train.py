import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from snnbptt.autograd import Tape
from snnbptt.data import Dataset, encode, load_dataset
from snnbptt.model import ModelParams, NetworkSpec, build, forward_unrolled
from snnbptt.tensor import Tensor
from snnbptt.train import (AdamWConfig, AdamWState, NonFiniteGradientError, PopulationReadout,
                           adamw_step, class_scores, evaluate, fit, loss, predict, train_epoch,
                           train_step)


def record_leaf(arr, precision="double"):
    tape = Tape()
    return tape.leaf(Tensor(arr, precision), requires_grad=True), tape


# readout


def test_population_scores_example():
    rec, _ = record_leaf(np.array([[[3, 1, 0, 2]]], dtype=float))
    scores = class_scores(rec, PopulationReadout(2, 2)).value.data
    assert list(scores[0]) == [4, 2]
    assert predict(rec.value.data, PopulationReadout(2, 2))[0] == 0


def test_plain_rate_code():
    counts = np.random.default_rng(0).integers(0, 2, (5, 3, 10)).astype(float)
    rec, _ = record_leaf(counts)
    np.testing.assert_array_equal(class_scores(rec, PopulationReadout(10, 1)).value.data,
                                  counts.sum(axis=0))


@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_within_class_permutation_invariance(seed, k):
    rng = np.random.default_rng(seed)
    rec = rng.integers(0, 2, (4, 3, 10 * k)).astype(float)
    perm = np.arange(10 * k)
    c = rng.integers(0, 10)
    block = perm[c * k:(c + 1) * k]
    perm[c * k:(c + 1) * k] = rng.permutation(block)
    ro = PopulationReadout(10, k)
    a, _ = record_leaf(rec)
    b, _ = record_leaf(rec[..., perm])
    np.testing.assert_array_equal(class_scores(a, ro).value.data, class_scores(b, ro).value.data)
    np.testing.assert_array_equal(predict(rec, ro), predict(rec[..., perm], ro))


def test_readout_population_mismatch():
    rec, _ = record_leaf(np.zeros((2, 1, 20)))
    with pytest.raises(ValueError):
        class_scores(rec, PopulationReadout(10, 1))


def test_loss_examples():
    rec, _ = record_leaf(np.ones((3, 2, 20)))
    assert loss(rec, [0, 5], PopulationReadout(10, 2)).value.item() == pytest.approx(math.log(10))
    rec, _ = record_leaf(np.array([[[2.0, 0.0]]]))
    assert loss(rec, [0], PopulationReadout(2, 1)).value.item() == pytest.approx(0.1269, abs=5e-5)
    big, _ = record_leaf(np.array([[[60.0, 0.0]]]))
    assert loss(big, [0], PopulationReadout(2, 1)).value.item() < 1e-20


# AdamW


def reference_adamw(w, grads, lr, b1, b2, eps, wd):
    """Scalar-by-scalar decoupled AdamW, one gradient per step."""
    w = np.array(w, dtype=np.float64)
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    for t, g in enumerate(grads, 1):
        g = np.asarray(g, dtype=np.float64)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        w = w - lr * mh / (np.sqrt(vh) + eps) - lr * wd * w
    return w


def params_of(**arrays):
    return ModelParams({k: Tensor(v, "double") for k, v in arrays.items()})


def grads_of(**arrays):
    return {k: Tensor(v, "double") for k, v in arrays.items()}


def test_adamw_pure_decay():
    state = AdamWState(AdamWConfig(lr=0.1, weight_decay=0.01))
    w = np.array([1.0, -2.0, 0.5])
    out = adamw_step(params_of(w=w), grads_of(w=np.zeros(3)), state)
    np.testing.assert_array_equal(out["w"].data, w - 0.1 * 0.01 * w)
    np.testing.assert_allclose(out["w"].data, w * (1 - 0.001), rtol=1e-15)


def test_adamw_first_step_value():
    state = AdamWState(AdamWConfig(lr=0.1, weight_decay=0.01))
    out = adamw_step(params_of(w=np.array([1.0])), grads_of(w=np.array([1.0])), state)
    assert out["w"].item() == pytest.approx(0.899, abs=1e-6)


def test_adamw_identical_parameters_update_identically():
    state = AdamWState(AdamWConfig(lr=0.05))
    p = params_of(a=np.array([0.3]), b=np.array([0.3]))
    for g in (0.5, -1.0, 2.0):
        p = adamw_step(p, grads_of(a=np.array([g]), b=np.array([g])), state)
    assert p["a"] == p["b"]


@given(st.integers(0, 2**31 - 1), st.integers(1, 20), st.sampled_from([0.0, 0.01, 0.1]))
def test_adamw_matches_reference(seed, steps, wd):
    rng = np.random.default_rng(seed)
    w0 = rng.standard_normal(5)
    grads = rng.standard_normal((steps, 5))
    cfg = AdamWConfig(lr=1e-2, weight_decay=wd)
    state = AdamWState(cfg)
    p = params_of(w=w0)
    for g in grads:
        p = adamw_step(p, grads_of(w=g), state)
    ref = reference_adamw(w0, grads, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, wd)
    np.testing.assert_allclose(p["w"].data, ref, rtol=1e-7, atol=1e-12)
    assert state.t == steps


def test_adamw_nonfinite_gradient_aborts():
    state = AdamWState()
    p = params_of(w=np.array([1.0, 2.0]))
    # Tensor refuses NaN, so hand the optimiser a bare array holder
    bad = {"w": SimpleNamespace(data=np.array([1.0, np.nan]))}
    with pytest.raises(NonFiniteGradientError):
        adamw_step(p, bad, state)
    assert state.t == 0 and not state.m


# training loop


def toy_dataset(n=64, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, n)
    x = rng.random((n, 20)).astype(np.float32) * 0.2
    x[np.arange(n), labels * 2] = 1.0
    return Dataset(x, labels)


def toy_spec(**kw):
    return NetworkSpec.dsnn(hidden=32, input_shape=(20,), time_steps=4, **kw)


def test_gradient_flows_through_spikes():
    spec = toy_spec()
    ds = toy_dataset(16)
    params = build(spec, 0)
    record, tape = forward_unrolled(params, spec, encode(ds.images, 4))
    assert set(np.unique(record.value.data)) <= {0.0, 1.0}
    grads = tape.backward(loss(record, ds.labels, PopulationReadout.for_spec(spec))).named()
    assert set(grads) == set(params)
    assert np.abs(grads["0.w"].data).sum() > 0 and np.abs(grads["1.w"].data).sum() > 0


def test_lr_zero_leaves_parameters_unchanged():
    spec = toy_spec()
    params = build(spec, 0)
    out, m = train_epoch(params, toy_dataset(), spec, AdamWState(AdamWConfig(lr=0.0)), 16)
    assert all(out[k] == params[k] for k in params)
    assert m.batches == 4 and len(m.batch_wallclocks) == 4


def test_epoch_deterministic():
    spec = toy_spec(neuron_model="cuba")
    runs = []
    for _ in range(2):
        _, m = train_epoch(build(spec, 5), toy_dataset(), spec, AdamWState(), 16, seed=2)
        runs.append(m.loss)
    assert runs[0] == runs[1]


def test_fit_learns_toy_problem():
    spec = toy_spec()
    ds = toy_dataset(256)
    _, history = fit(spec, ds, epochs=4, batch_size=32, adamw=AdamWConfig(lr=5e-3), test=ds)
    assert history[-1]["loss"] < history[0]["loss"]
    assert history[-1]["test_accuracy"] > 0.5


def test_train_epoch_rejects_shape_mismatch():
    spec = toy_spec()
    with pytest.raises(ValueError):
        train_epoch(build(spec, 0), Dataset(np.zeros((4, 21), np.float32), np.zeros(4, int)), spec,
                    AdamWState())


def test_evaluate_counts_every_sample():
    spec = toy_spec()
    acc, lval = evaluate(build(spec, 0), spec, toy_dataset(37), batch_size=8)
    assert 0 <= acc <= 1 and lval > 0
    assert acc * 37 == round(acc * 37)


def test_single_batch_overfit(mnist_root):
    ds = load_dataset("mnist", "train", mnist_root, limit=32)
    spec = NetworkSpec.dsnn(time_steps=5)
    params = build(spec, 0)
    state = AdamWState()
    first = None
    acc = 0.0
    for step in range(200):
        res = train_step(params, spec, Tensor(ds.images), ds.labels, state)
        params = res.params
        first = res.loss if first is None else first
        acc = res.correct / len(ds)
        if step >= 20 and acc == 1.0 and res.loss <= 0.1 * first:
            break
    assert acc == 1.0
    assert res.loss <= 0.1 * first
