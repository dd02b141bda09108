import numpy as np
import pytest

from ovclass.autodiff import ParamSet
from ovclass.errors import ShapeError
from ovclass.optim import AdamWConfig, AdamWState, adamw_step


def _single_param(value):
    params = ParamSet()
    params.add("p", np.array([value], dtype=np.float64))
    return params


def test_zero_gradient_no_decay_leaves_parameters_unchanged():
    params = _single_param(1.5)
    state = AdamWState.for_params(params, AdamWConfig(lr=0.1, weight_decay=0.0))
    adamw_step(params, state, {"p": np.zeros(1)})
    np.testing.assert_array_equal(params["p"].data, [1.5])
    assert state.step == 1


def test_first_step_matches_hand_computed_update():
    # m = 0.1, v = 0.001; bias-corrected m_hat = 1, v_hat = 1
    # p <- 1 - 0.1 * 1/(1 + eps) ~= 0.9
    params = _single_param(1.0)
    state = AdamWState.for_params(params, AdamWConfig(lr=0.1, weight_decay=0.0))
    adamw_step(params, state, {"p": np.ones(1)})
    assert abs(params["p"].data[0] - 0.9) < 1e-6


def test_decoupled_decay_exact_with_zero_gradient():
    params = _single_param(2.0)
    cfg = AdamWConfig(lr=0.1, weight_decay=0.5)
    state = AdamWState.for_params(params, cfg)
    adamw_step(params, state, {"p": np.zeros(1)})
    # m_hat = v_hat = 0 so the update is exactly -lr * wd * p
    assert params["p"].data[0] == 2.0 - 0.1 * 0.5 * 2.0


def test_step_counter_strictly_increases():
    params = _single_param(1.0)
    state = AdamWState.for_params(params)
    for expected in (1, 2, 3):
        adamw_step(params, state, {"p": np.ones(1)})
        assert state.step == expected


def test_missing_gradient_is_structural_error():
    params = _single_param(1.0)
    state = AdamWState.for_params(params)
    with pytest.raises(ShapeError):
        adamw_step(params, state, {})
    params.zero_grad()
    with pytest.raises(ShapeError):
        adamw_step(params, state)


def test_moment_shapes_track_parameters():
    params = ParamSet()
    params.add("w", np.zeros((3, 4)))
    state = AdamWState.for_params(params)
    assert state.m["w"].shape == (3, 4)
    assert state.v["w"].shape == (3, 4)


def test_matches_reference_trajectory():
    """Several steps against an independently coded reference update."""
    rng = np.random.Generator(np.random.PCG64(5))
    theta = rng.uniform(-1, 1, size=7)
    params = ParamSet()
    params.add("p", theta.copy())
    cfg = AdamWConfig(lr=0.01, weight_decay=0.04)
    state = AdamWState.for_params(params, cfg)

    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t in range(1, 6):
        g = rng.uniform(-1, 1, size=7)
        adamw_step(params, state, {"p": g.copy()})
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1 ** t)
        v_hat = v / (1 - cfg.beta2 ** t)
        theta = theta - cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta)
        np.testing.assert_allclose(params["p"].data, theta, rtol=1e-12)
