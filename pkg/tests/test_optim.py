import numpy as np
import pytest

from conftest import central_diff
from marketrec.nn import AdamState, adam_step, init_params, l2_grad


def test_adam_first_step_is_minus_lr_sign():
    p = {"w": np.array([0.0])}
    adam_step(p, {"w": np.array([2.0])}, AdamState(), lr=0.01)
    assert p["w"][0] == pytest.approx(-0.01, abs=1e-9)


def test_adam_zero_gradient_is_a_no_op():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    before = p["w"].copy()
    state = AdamState()
    adam_step(p, {"w": np.zeros(3)}, state, lr=0.1)
    np.testing.assert_array_equal(p["w"], before)
    assert state.t == 1


def test_adam_step_sizes_do_not_grow_under_constant_gradient():
    p = {"w": np.array([0.0])}
    state = AdamState()
    deltas = []
    for _ in range(5):
        old = p["w"].copy()
        adam_step(p, {"w": np.array([0.7])}, state, lr=0.01)
        deltas.append(abs(p["w"][0] - old[0]))
    for a, b in zip(deltas, deltas[1:]):
        assert b <= a + 1e-9


def test_adam_against_handwritten_recurrence():
    rng = np.random.default_rng(1)
    grads = rng.normal(size=(6, 4))
    p = {"w": np.zeros(4)}
    state = AdamState()
    m = v = np.zeros(4)
    w = np.zeros(4)
    for t, g in enumerate(grads, start=1):
        adam_step(p, {"w": g}, state, lr=0.05)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p["w"], w, rtol=1e-12)
    assert state.t == 6
    assert state.m["w"].shape == state.v["w"].shape == (4,)


def test_adam_only_moves_parameters_with_gradients():
    p = {"a": np.ones(2), "b": np.ones(2)}
    adam_step(p, {"a": np.ones(2)}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(p["b"], np.ones(2))
    assert not np.array_equal(p["a"], np.ones(2))


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"a": np.ones(2)}, {"a": np.ones(3)}, AdamState(), lr=0.1)


def test_l2_grad_examples():
    assert l2_grad({"w": np.array([5.0])}, 0.0)["w"][0] == 0.0
    assert l2_grad({"w": np.array([1000.0])}, 1e-7)["w"][0] == pytest.approx(1e-4)
    with pytest.raises(ValueError):
        l2_grad({"w": np.ones(1)}, -1.0)


def test_l2_grad_matches_finite_difference_of_penalty():
    theta = np.random.default_rng(0).normal(size=7)
    lam = 0.3
    fd = central_diff(lambda: 0.5 * lam * float(theta @ theta), theta)
    np.testing.assert_allclose(l2_grad({"t": theta}, lam)["t"], fd, rtol=1e-6)


def test_init_is_deterministic_and_validated():
    a = init_params((4, 3), "glorot_uniform", 5)
    np.testing.assert_array_equal(a, init_params((4, 3), "glorot_uniform", 5))
    np.testing.assert_array_equal(init_params((2, 2), "zeros", 0), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        init_params((2,), "he_normal", 0)


def test_gaussian_init_mean():
    x = init_params((100_000,), "gaussian", 0, std=0.01)
    assert abs(x.mean()) < 3 * 0.01 / np.sqrt(1e5)
    assert x.std() == pytest.approx(0.01, rel=0.02)


def test_glorot_bounds():
    w = init_params((64, 16), "glorot_uniform", 0)
    assert np.abs(w).max() <= np.sqrt(6 / 80)
