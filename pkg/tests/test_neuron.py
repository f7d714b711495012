import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from snnbptt import autograd as ag
from snnbptt.autograd import Tag, Tape
from snnbptt.neuron import (STEP, NeuronModel, NeuronParams, NeuronState, cuba_step,
                            initial_state, lif_step, rlif_step)
from snnbptt.surrogate import SurrogateKind, smooth_spike, surrogate_grad
from snnbptt.tensor import Precision, Tensor


def run_trace(model, wx_seq, precision="double", u0=0.0, i0=0.0, v=None, **kw):
    """Drive one layer with a [T, ...] input sequence; returns (u trace, z trace, i trace)."""
    p = Precision.parse(precision)
    tape = Tape()
    wx_seq = np.asarray(wx_seq, dtype=float)
    if wx_seq.ndim == 1:
        wx_seq = wx_seq[:, None]
    shape = (1,) + wx_seq.shape[1:]
    state = initial_state(tape, shape, p, model)
    state = NeuronState(u=tape.leaf(Tensor(np.full(shape, u0), p)), z_prev=state.z_prev,
                        i=tape.leaf(Tensor(np.full(shape, i0), p)) if state.i is not None else None)
    if v is not None:
        kw["v"] = tape.leaf(Tensor(v, p))
    params = NeuronParams(**kw)
    us, zs, is_ = [], [], []
    for wx in wx_seq:
        z, state = STEP[NeuronModel(model)](state, tape.leaf(Tensor(np.reshape(wx, shape), p)), params)
        us.append(state.u.value.data[0].copy())
        zs.append(z.value.data[0].copy())
        if state.i is not None:
            is_.append(state.i.value.data[0].copy())
    return np.array(us), np.array(zs), np.array(is_)


# LIF


def test_lif_pure_decay():
    u, z, _ = run_trace("lif", [0, 0, 0], u0=1.0, beta=0.5, u_thr=10.0)
    assert u[-1, 0] == 0.125 and not z.any()


def test_lif_hand_trace_with_spike_and_reset():
    u, z, _ = run_trace("lif", [0.6] * 4, beta=0.5, u_thr=1.0)
    # same recurrence evaluated in python doubles
    ref, zprev = [], 0.0
    un = 0.0
    for _ in range(4):
        un = 0.5 * un + 0.6 - zprev * 1.0
        zprev = float(un > 1.0)
        ref.append(un)
    assert list(u[:, 0]) == ref
    assert list(z[:, 0]) == [0, 0, 1, 0]
    np.testing.assert_allclose(u[:, 0], [0.6, 0.9, 1.05, 0.125], rtol=0, atol=1e-15)


def test_lif_silent_neuron():
    _, z, _ = run_trace("lif", [0.0] * 20)
    assert not z.any()


@given(st.floats(0.05, 1.0), st.floats(-0.5, 0.5), st.integers(1, 50), st.integers(0, 2**31 - 1))
def test_lif_closed_form_without_spikes(beta, u0, steps, seed):
    rng = np.random.default_rng(seed)
    wx = rng.uniform(-0.02, 0.02, steps)
    u, z, _ = run_trace("lif", wx, precision="single", u0=u0, beta=beta, u_thr=1.0)
    assert not z.any()
    k = np.arange(1, steps + 1)
    closed = beta ** steps * u0 + np.sum(beta ** (steps - k) * wx)
    assert abs(float(u[-1, 0]) - closed) <= 1e-6


@given(st.integers(0, 2**31 - 1), st.sampled_from(list(NeuronModel)))
def test_spikes_are_binary(seed, model):
    rng = np.random.default_rng(seed)
    wx = rng.normal(0.5, 1.0, (12, 4))
    v = rng.normal(0, 0.5, (4, 4)) if model is NeuronModel.RLIF else None
    _, z, _ = run_trace(model, wx, precision="single", v=v)
    assert set(np.unique(z)) <= {0.0, 1.0}


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 1.0), st.floats(0.2, 2.0))
def test_lif_reset_subtracts_threshold(seed, beta, thr):
    rng = np.random.default_rng(seed)
    wx = rng.uniform(0, 2 * thr, (15, 3))
    u, z, _ = run_trace("lif", wx, beta=beta, u_thr=thr)
    for t in range(1, len(wx)):
        unreset = beta * u[t - 1] + wx[t]
        np.testing.assert_array_equal(u[t], unreset - z[t - 1] * thr)


# CuBa


def test_cuba_impulse_response():
    u, z, i = run_trace("cuba", [1, 0, 0], alpha=0.5, beta=0.5, u_thr=2.0)
    assert list(i[:, 0]) == [1, 0.5, 0.25]
    assert list(u[:, 0]) == [1, 1.0, 0.75]
    assert not z.any()


def test_cuba_zero_input_is_pure_decay():
    u, _, _ = run_trace("cuba", [0] * 5, u0=0.8, alpha=0.7, beta=0.6, u_thr=5.0)
    np.testing.assert_array_equal(u[:, 0], 0.8 * 0.6 ** np.arange(1, 6))


def test_cuba_needs_current_state():
    tape = Tape()
    st_ = initial_state(tape, (1,), model="lif")
    with pytest.raises(ValueError):
        cuba_step(st_, tape.leaf(Tensor([1.0])), NeuronParams())


# RLIF


def test_rlif_scalar_hand_value():
    tape = Tape()
    p = Precision.DOUBLE
    state = NeuronState(u=tape.leaf(Tensor([[1.05]], p)), z_prev=tape.leaf(Tensor([[1.0]], p)))
    params = NeuronParams(beta=0.5, u_thr=1.0, v=tape.leaf(Tensor([[0.5]], p)))
    _, new = rlif_step(state, tape.leaf(Tensor([[0.0]], p)), params)
    assert new.u.value.item() == pytest.approx(0.025, abs=1e-15)
    assert new.u.value.item() == 0.525 + (0.5 - 1)


def test_rlif_without_prior_spikes_equals_lif(rng):
    wx = rng.uniform(0, 0.3, (6, 5))
    v = rng.normal(0, 1, (5, 5))
    u_r, z_r, _ = run_trace("rlif", wx, v=v, beta=0.8, u_thr=10.0)
    u_l, z_l, _ = run_trace("lif", wx, beta=0.8, u_thr=10.0)
    np.testing.assert_array_equal(u_r, u_l)
    assert not z_r.any()


def test_rlif_identity_recurrence_cancels_reset(rng):
    wx = rng.uniform(0, 1.5, (10, 3))
    thr = 0.7
    u, z, _ = run_trace("rlif", wx, v=thr * np.eye(3), beta=0.9, u_thr=thr)
    for t in range(1, len(wx)):
        np.testing.assert_allclose(u[t], 0.9 * u[t - 1] + wx[t], rtol=0, atol=1e-15)
    assert z.any()


def test_rlif_requires_v():
    tape = Tape()
    st_ = initial_state(tape, (1, 2))
    with pytest.raises(ValueError):
        rlif_step(st_, tape.leaf(Tensor([[1.0, 1.0]])), NeuronParams())


# reductions


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 1.0))
def test_cuba_alpha_zero_is_lif(seed, beta):
    wx = np.random.default_rng(seed).normal(0.4, 0.8, (10, 2, 3))
    u_c, z_c, i_c = run_trace("cuba", wx, alpha=0.0, beta=beta)
    u_l, z_l, _ = run_trace("lif", wx, beta=beta)
    np.testing.assert_array_equal(i_c, wx)
    np.testing.assert_array_equal(u_c, u_l)
    np.testing.assert_array_equal(z_c, z_l)


@given(st.integers(0, 2**31 - 1))
def test_rlif_v_zero_is_lif(seed):
    wx = np.random.default_rng(seed).normal(0.4, 0.8, (10, 4))
    u_r, z_r, _ = run_trace("rlif", wx, v=np.zeros((4, 4)))
    u_l, z_l, _ = run_trace("lif", wx)
    np.testing.assert_array_equal(u_r, u_l)
    np.testing.assert_array_equal(z_r, z_l)


def test_params_validation():
    with pytest.raises(ValueError):
        NeuronParams(beta=0.0)
    with pytest.raises(ValueError):
        NeuronParams(alpha=1.5)
    with pytest.raises(ValueError):
        NeuronParams(u_thr=0.0)
    assert NeuronParams(alpha=0.0).alpha == 0.0


def test_neuronal_ops_are_tagged():
    tape = Tape()
    st_ = initial_state(tape, (2, 3), model="cuba")
    lif = lif_step(st_, tape.leaf(Tensor(np.ones((2, 3)))), NeuronParams())
    assert lif
    assert {n.tag for n in tape.nodes} == {Tag.NEURONAL}


def test_reset_detach_flag_controls_gradient():
    def grad_wrt_input(detach):
        tape = Tape()
        p = Precision.DOUBLE
        x = tape.leaf(Tensor([[1.2]], p), requires_grad=True, name="x")
        params = NeuronParams(beta=0.5, u_thr=1.0, detach_reset=detach)
        state = initial_state(tape, (1, 1), p)
        _, state = lif_step(state, x, params)
        zero = tape.leaf(Tensor([[0.0]], p))
        _, state = lif_step(state, zero, params)
        return tape.backward(state.u, seed=Tensor([[1.0]], p))["x"].item()

    # u2 = 0.5*u1 - z1*thr; the reset path adds -thr * surrogate'(u1) = -1/(1+0.2)^2
    assert grad_wrt_input(True) == 0.5
    assert grad_wrt_input(False) == pytest.approx(0.5 - 1 / 1.2 ** 2, abs=1e-14)


# surrogate


def test_surrogate_grad_values():
    u = Tensor([1.0, 2.0, 0.0, 4.0, -2.0], "double")
    assert list(surrogate_grad(u, 1.0).data) == [1.0, 0.25, 0.25, 0.0625, 0.0625]
    assert np.array_equal(surrogate_grad(u, 1.0, "ste").data, np.ones(5))


@given(st.integers(-50 * 1024, 50 * 1024), st.integers(0, 100 * 1024))
def test_surrogate_symmetric_and_bounded(thr_k, d_k):
    # dyadic values keep thr +- d exact, so symmetry must hold bit for bit
    thr, d = thr_k / 1024, d_k / 1024
    up = surrogate_grad(Tensor([thr + d], "double"), thr).item()
    down = surrogate_grad(Tensor([thr - d], "double"), thr).item()
    assert up == down
    assert 0 < up <= 1
    assert surrogate_grad(Tensor([thr], "double"), thr).item() == 1.0


def test_half_input_gives_single_surrogate():
    g = surrogate_grad(Tensor([1.0], "half"), 1.0)
    assert g.precision is Precision.SINGLE


def test_smooth_spike_values():
    assert smooth_spike(Tensor([1.0], "double"), 1.0).item() == 0
    assert smooth_spike(Tensor([2.0], "double"), 1.0).item() == 0.5


@given(st.floats(-20, 20))
def test_smooth_spike_derivative_is_surrogate(u):
    h = 1e-6
    f = lambda x: smooth_spike(Tensor([x], "double"), 1.0).item()
    if abs(u - 1.0) < 2 * h:
        return
    numeric = (f(u + h) - f(u - h)) / (2 * h)
    assert numeric == pytest.approx(surrogate_grad(Tensor([u], "double"), 1.0).item(), rel=1e-6)


def test_surrogate_kind_parse():
    assert SurrogateKind.parse("fast-sigmoid") is SurrogateKind.FAST_SIGMOID
    assert SurrogateKind.parse("ste") is SurrogateKind.STRAIGHT_THROUGH
    assert SurrogateKind.parse("smooth") is SurrogateKind.SMOOTH_TEST_MODE


def test_smooth_mode_spike_op_forward():
    tape = Tape()
    u = tape.leaf(Tensor([0.0, 1.0, 3.0], "double"))
    z = ag.spike(u, 1.0, "smooth")
    np.testing.assert_array_equal(z.value.data, [-0.5, 0.0, 2 / 3])
