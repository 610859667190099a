import numpy as np
import pytest

from rtrrl import oracles
from rtrrl.verify import slip_ring_mrp, td_lambda_critic


def test_rel_err_definition():
    assert oracles.rel_err([1.0, 2.0], [1.0, 2.2]) == pytest.approx(0.2 / 2.2)
    assert oracles.rel_err([0.0], [0.0]) == 0.0


def test_fd_jacobian_on_known_function():
    jac = oracles.fd_jacobian(lambda p: np.array([p["a"][0] ** 2, p["a"][0] * p["a"][1]]),
                              {"a": np.array([3.0, -2.0])})
    assert np.allclose(jac["a"], [[6.0, 0.0], [-2.0, 3.0]], atol=1e-8)


def test_fd_jacobian_complex_parts():
    jac = oracles.fd_jacobian(lambda p: np.real(p["z"] ** 2), {"z": np.array([1.0 + 2.0j])})
    d_re, d_im = jac["z"]
    # Re(z^2) = x^2 - y^2
    assert np.allclose(d_re, [[2.0]]) and np.allclose(d_im, [[-4.0]])


def test_unrolled_and_fd_agree(rng):
    n, i, T = 3, 2, 6
    W = rng.normal(size=(n, n + i + 1)) / 2
    tau = rng.uniform(1.5, 3.0, size=n)
    xs = rng.normal(size=(T, i))
    g = rng.normal(size=n)
    un = oracles.unrolled_grad("ctrnn", {"W": W, "tau": tau}, xs, g)
    fd = oracles.fd_jacobian(lambda p: g @ oracles.ctrnn_rollout(p["W"], p["tau"], 1.0, xs),
                             {"W": W.copy(), "tau": tau.copy()})
    assert oracles.rel_err(un["W"], fd["W"]) < 1e-7
    assert oracles.rel_err(un["tau"], fd["tau"]) < 1e-7


def test_two_state_mrp_value_by_hand():
    # v1 = 1 + .45 v1 + .45 v2, v2 = .18 v1 + .72 v2
    v = oracles.mrp_value_solver(np.array([[0.5, 0.5], [0.2, 0.8]]), np.array([1.0, 0.0]), 0.9)
    v1 = 1.0 / (1 - 0.45 - 0.45 * 0.18 / 0.28)
    assert np.allclose(v, [v1, 0.18 / 0.28 * v1])


def test_mrp_solver_rejects_bad_input():
    with pytest.raises(ValueError):
        oracles.mrp_value_solver(np.eye(2), np.zeros(2), 1.0)
    with pytest.raises(ValueError):
        oracles.mrp_value_solver(np.array([[0.5, 0.6], [0.5, 0.5]]), np.zeros(2), 0.5)


def test_geometric_trace():
    assert np.allclose(oracles.geometric_trace([np.ones(2), 2 * np.ones(2)], 0.5), [2.5, 2.5])


def test_td_lambda_on_two_state_chain():
    P = np.array([[0.9, 0.1], [0.2, 0.8]])
    r = np.array([1.0, -1.0])
    v = oracles.mrp_value_solver(P, r, 0.5)
    _, avg = td_lambda_critic(P, r, 0.5, 0.5, 1e-2, 60_000, seed=0)
    assert np.max(np.abs(avg - v)) < 0.05


def test_slip_ring_frozen_values():
    P, r = slip_ring_mrp()
    assert np.allclose(P.sum(axis=1), 1.0)
    v = oracles.mrp_value_solver(P, r, 0.9)
    assert np.allclose(v, [3.56564197, 3.21947223, 3.28386792, 3.63869912, 4.06751675], atol=1e-8)
