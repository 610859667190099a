import numpy as np
import pytest
from hypothesis import given, strategies as st

from rtrrl import oracles
from rtrrl.cells import (CtRnnParams, LruParams, ctrnn_step, init_ctrnn, init_lru, lru_output,
                         lru_step, rho_from_tau, tau_from_rho)
from rtrrl.errors import ConfigError, NumericFault

from conftest import small_ctrnn

W_FIXED = np.array([[0.5, -0.3, 0.2, 0.1], [0.1, 0.4, -0.6, -0.2]])
TAU_FIXED = np.array([2.0, 4.0])


def test_ctrnn_step_matches_hand_computation():
    # tanh(0.53) and tanh(0.06) worked through by hand
    h, _ = ctrnn_step(CtRnnParams(W_FIXED, TAU_FIXED, 1.0), np.array([0.1, -0.2]), np.array([1.0]))
    assert np.allclose(h, [0.29269055, -0.13501797], atol=1e-8)


def test_ctrnn_substeps_frozen():
    h, _ = ctrnn_step(CtRnnParams(W_FIXED, TAU_FIXED, 0.5), np.array([0.1, -0.2]), np.array([1.0]))
    assert np.allclose(h, [0.26427619, -0.13671045], atol=1e-8)


def test_ctrnn_matches_loop_oracle(rng):
    for dt in (1.0, 0.5, 0.25):
        p = small_ctrnn(rng, 4, 2, dt)
        h = rng.normal(size=4)
        x = rng.normal(size=2)
        got, trace = ctrnn_step(p, h, x)
        assert np.allclose(got, oracles.ctrnn_step_loops(p.W, p.tau, dt, h, x), atol=1e-12)
        assert np.allclose(trace.act_deriv, 1 - np.tanh(trace.preact) ** 2)


def test_zero_input_zero_weights_keeps_state_at_zero():
    p = CtRnnParams(np.zeros((3, 6)), np.full(3, 2.0))
    h, _ = ctrnn_step(p, np.zeros(3), np.zeros(2))
    assert np.array_equal(h, np.zeros(3))


@given(st.integers(0, 10_000))
def test_ctrnn_state_stays_bounded(seed):
    # convex combination of h and tanh(.) keeps |h| <= max(|h0|, 1)
    rng = np.random.default_rng(seed)
    p = small_ctrnn(rng, 3, 2, w_scale=5.0)
    h = rng.uniform(-1, 1, size=3)
    for _ in range(20):
        h, _ = ctrnn_step(p, h, 10 * rng.normal(size=2))
        assert np.all(np.abs(h) <= 1.0 + 1e-12)


def test_invalid_dt_rejected():
    with pytest.raises(ConfigError):
        CtRnnParams(np.zeros((2, 4)), np.ones(2), dt=0.3)
    with pytest.raises(ConfigError):
        CtRnnParams(np.zeros((2, 4)), np.ones(2), dt=0.0)


def test_shape_mismatch_rejected():
    with pytest.raises(ConfigError):
        CtRnnParams(np.zeros((3, 4)), np.ones(2))
    p = CtRnnParams(np.zeros((2, 4)), np.ones(2) * 2)
    with pytest.raises(ConfigError):
        ctrnn_step(p, np.zeros(3), np.zeros(1))


def test_nonfinite_input_raises_numeric_fault():
    p = CtRnnParams(np.ones((2, 4)), np.ones(2) * 2)
    with pytest.raises(NumericFault) as info:
        ctrnn_step(p, np.zeros(2), np.array([np.nan]), step=17)
    assert info.value.step == 17


@given(st.floats(-20, 20))
def test_tau_reparametrisation_round_trip(rho):
    tau = tau_from_rho(np.array([rho]))
    assert tau[0] > 1.0 or rho < -30
    if tau[0] > 1.0 + 1e-9:
        assert np.allclose(rho_from_tau(tau), rho, atol=1e-6)


def test_init_ctrnn_ranges(rng):
    p = init_ctrnn(rng, 3, 16, 1.0, (1.0, 10.0))
    assert p.W.shape == (16, 20)
    assert np.all(p.tau > 1.0) and np.all(p.tau <= 10.0)
    assert np.all(np.abs(p.W) <= 1 / np.sqrt(20))


def test_lru_closed_form_frozen():
    lam = np.array([0.9 * np.exp(0.1j), 0.5j])
    B = np.array([[1.0 + 0.5j], [0.2 - 1j]])
    p = LruParams(lam, B, np.eye(2, dtype=complex), np.zeros((2, 1)))
    h = np.zeros(2, dtype=complex)
    for x in ([1.0], [-1.0], [2.0]):
        h = lru_step(p, h, np.array(x))
    # second unit worked by hand: -0.15 - 1.85j
    assert np.allclose(h, [1.86281414 + 1.02024717j, -0.15 - 1.85j], atol=1e-8)


def test_lru_matches_closed_form_oracle(rng):
    p = init_lru(rng, 2, 5)
    xs = rng.normal(size=(9, 2))
    h = np.zeros(5, dtype=complex)
    for x in xs:
        h = lru_step(p, h, x)
    assert np.allclose(h, oracles.lru_closed_form(p.lam, p.B_in, xs), atol=1e-12)


def test_lru_init_stable_ring(rng):
    p = init_lru(rng, 3, 64, r_min=0.5, r_max=0.99)
    mod = np.abs(p.lam)
    assert np.all(mod >= 0.5 - 1e-12) and np.all(mod <= 0.99 + 1e-12)


def test_lru_output_is_real(rng):
    p = init_lru(rng, 2, 4)
    y = lru_output(p, rng.normal(size=4) + 1j * rng.normal(size=4), rng.normal(size=2))
    assert y.dtype == float and y.shape == (4,)
