import numpy as np
import pytest
from hypothesis import given, strategies as st

from rtrrl import oracles
from rtrrl.cells import CtRnnParams, init_lru
from rtrrl.errors import ConfigError, NumericFault
from rtrrl.online_grad import (apply_feedback, count_ops, lru_rtrl_step, rflo_step, rtrl_step,
                               zero_trace)

from conftest import small_ctrnn


def _run(step_fn, params, xs, mode):
    h = np.zeros(params.n_hidden)
    J = zero_trace(params, mode)
    for x in xs:
        h, J = step_fn(params, h, x, J)
    return h, J


@given(st.integers(0, 10_000), st.sampled_from([1.0, 0.5]))
def test_rtrl_matches_unrolled_reverse(seed, dt):
    rng = np.random.default_rng(seed)
    p = small_ctrnn(rng, 3, 2, dt)
    xs = rng.normal(size=(6, 2))
    g = rng.normal(size=3)
    h, J = _run(rtrl_step, p, xs, "rtrl")
    got = apply_feedback(J, g)
    ref = oracles.unrolled_grad("ctrnn", {"W": p.W, "tau": p.tau, "dt": dt}, xs, g)
    assert oracles.rel_err(got["W"], ref["W"]) < 1e-10
    assert oracles.rel_err(got["tau"], ref["tau"]) < 1e-10


def test_rtrl_matches_finite_differences(rng):
    p = small_ctrnn(rng, 2, 1)
    xs = rng.normal(size=(5, 1))
    _, J = _run(rtrl_step, p, xs, "rtrl")
    fd = oracles.fd_jacobian(lambda q: oracles.ctrnn_rollout(q["W"], q["tau"], 1.0, xs),
                             {"W": p.W.copy(), "tau": p.tau.copy()})
    # full Jacobian, not just a contraction
    assert oracles.rel_err(J.W, fd["W"]) < 1e-6
    assert oracles.rel_err(J.tau, fd["tau"]) < 1e-6


def test_rtrl_and_rflo_agree_on_hidden_state(rng):
    p = small_ctrnn(rng, 4, 2)
    xs = rng.normal(size=(7, 2))
    ha, _ = _run(rtrl_step, p, xs, "rtrl")
    hb, _ = _run(rflo_step, p, xs, "rflo")
    assert np.array_equal(ha, hb)


@given(st.integers(0, 10_000))
def test_rflo_equals_rtrl_diagonal_without_recurrence(seed):
    rng = np.random.default_rng(seed)
    p = small_ctrnn(rng, 3, 2)
    p.W[:, 2:5] = 0.0
    xs = rng.normal(size=(8, 2))
    _, Ja = _run(rflo_step, p, xs, "rflo")
    _, Jb = _run(rtrl_step, p, xs, "rtrl")
    idx = np.arange(3)
    assert np.allclose(Ja.W, Jb.W[idx, idx], atol=1e-12)
    assert np.allclose(Ja.tau, Jb.tau[idx, idx], atol=1e-12)


def test_rflo_tau_trace_matches_scalar_recursion(rng):
    p = small_ctrnn(rng, 3, 2)
    xs = rng.normal(size=(30, 2))
    ref = oracles.rflo_tau_trace_loops(p.W, p.tau, xs)
    h = np.zeros(3)
    J = zero_trace(p, "rflo")
    for x, expected in zip(xs, ref):
        h, J = rflo_step(p, h, x, J)
        assert np.allclose(J.tau, expected, atol=1e-12)


def test_rflo_tau_trace_frozen():
    W = np.array([[0.5, -0.3, 0.2, 0.1], [0.1, 0.4, -0.6, -0.2]])
    p = CtRnnParams(W, np.array([2.0, 4.0]))
    h = np.array([0.1, -0.2])
    J = zero_trace(p, "rflo")
    for x in ([1.0], [-1.0], [2.0]):
        h, J = rflo_step(p, h, np.array(x), J)
    assert np.allclose(J.tau, [-0.15120149, -0.02110801], atol=1e-8)


@given(st.integers(0, 10_000))
def test_diag_rtrl_matches_unrolled(seed):
    rng = np.random.default_rng(seed)
    p = init_lru(rng, 2, 3)
    xs = rng.normal(size=(7, 2))
    c = rng.normal(size=3) + 1j * rng.normal(size=3)
    h = np.zeros(3, dtype=complex)
    J = zero_trace(p, "diag_rtrl")
    for x in xs:
        h, J = lru_rtrl_step(p, h, x, J)
    got = apply_feedback(J, c)
    ref = oracles.unrolled_grad("lru", {"lam": p.lam, "B_in": p.B_in}, xs, c)
    assert oracles.rel_err(got["lam"], ref["lam"]) < 1e-10
    assert oracles.rel_err(got["B_in"], ref["B_in"]) < 1e-10


def _count(step_fn, params, mode, x):
    h = np.zeros(params.n_hidden, dtype=complex if mode == "diag_rtrl" else float)
    J = zero_trace(params, mode)
    with count_ops() as c:
        step_fn(params, h, x, J)
    return c.count


def test_operation_counts_scale_as_stated(rng):
    # RFLO ~ N*Z, RTRL ~ N^2*Z per trace entry update (times N for the W_rec product), LRU ~ N*I
    for n in (4, 8):
        p = small_ctrnn(rng, n, 2)
        z = n + 3
        assert _count(rflo_step, p, "rflo", np.zeros(2)) == n * z + n
        assert _count(rtrl_step, p, "rtrl", np.zeros(2)) == n * (n * n * z) + n * (n * n)
        q = init_lru(rng, 2, n)
        assert _count(lru_rtrl_step, q, "diag_rtrl", np.zeros(2)) == n + n * 2
    small = _count(rtrl_step, small_ctrnn(rng, 4, 2), "rtrl", np.zeros(2))
    big = _count(rtrl_step, small_ctrnn(rng, 8, 2), "rtrl", np.zeros(2))
    assert big / small > 8  # at least cubic growth in N at fixed I


def test_bad_trace_shape_rejected(rng):
    p = small_ctrnn(rng, 3, 2)
    with pytest.raises(ConfigError):
        rflo_step(p, np.zeros(3), np.zeros(2), zero_trace(small_ctrnn(rng, 4, 2), "rflo"))
    with pytest.raises(ConfigError):
        zero_trace(p, "bptt")


def test_nonfinite_trace_raises(rng):
    p = small_ctrnn(rng, 2, 1)
    J = zero_trace(p, "rflo")
    J.W[0, 0] = np.inf
    with pytest.raises(NumericFault):
        rflo_step(p, np.zeros(2), np.zeros(1), J, step=3)


def test_feedback_shape_checked(rng):
    p = small_ctrnn(rng, 3, 2)
    with pytest.raises(ConfigError):
        apply_feedback(zero_trace(p, "rflo"), np.zeros(4))
