import numpy as np
import pytest
from hypothesis import given, strategies as st

from rtrrl import oracles
from rtrrl.errors import ConfigError
from rtrrl.optim import Adam, SGD, clip_by_norm, make_optimizer


def test_adam_matches_scalar_reference(rng):
    x0 = rng.normal(size=(2, 3))
    grads = [rng.normal(size=(2, 3)) for _ in range(30)]
    opt = Adam()
    x = x0.copy()
    for g in grads:
        x = opt.step("w", x, g, 3e-3)
    assert np.allclose(x, oracles.adam_reference(x0, grads, 3e-3), atol=1e-14)


def test_adam_first_step_is_sign_times_lr():
    x = Adam().step("w", np.zeros(3), np.array([2.0, -0.5, 1e-3]), 0.1)
    assert np.allclose(x, [-0.1, 0.1, -0.1], atol=1e-5)


def test_adam_complex_treats_parts_independently(rng):
    z0 = rng.normal(size=3) + 1j * rng.normal(size=3)
    grads = [rng.normal(size=3) + 1j * rng.normal(size=3) for _ in range(5)]
    opt = Adam()
    z = z0.copy()
    for g in grads:
        z = opt.step("lam", z, g, 1e-2)
    re = oracles.adam_reference(z0.real, [g.real for g in grads], 1e-2)
    im = oracles.adam_reference(z0.imag, [g.imag for g in grads], 1e-2)
    assert np.allclose(z, re + 1j * im, atol=1e-14)


def test_adam_state_round_trip(rng):
    opt = Adam()
    x = opt.step("w", np.zeros(2), np.ones(2), 0.1)
    other = Adam()
    other.load_state_dict(opt.state_dict())
    g = rng.normal(size=2)
    assert np.array_equal(opt.step("w", x, g, 0.1), other.step("w", x, g, 0.1))


def test_sgd():
    assert np.allclose(SGD().step("w", np.ones(2), np.array([1.0, -1.0]), 0.5), [0.5, 1.5])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8), st.floats(0.1, 10))
def test_clip_bounds_norm(values, max_norm):
    g = np.array(values)
    clipped, norm = clip_by_norm(g, max_norm)
    assert norm == pytest.approx(np.linalg.norm(g))
    assert np.linalg.norm(clipped) <= max_norm * (1 + 1e-12) or np.allclose(clipped, g)


def test_clip_disabled():
    g = np.array([30.0, 40.0])
    assert clip_by_norm(g, None)[0] is g and clip_by_norm(g, 0)[0] is g


def test_make_optimizer():
    assert isinstance(make_optimizer("adam"), Adam)
    with pytest.raises(ConfigError):
        make_optimizer("rmsprop")
