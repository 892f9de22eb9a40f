from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from physmo.diffusion import DiffusionSchedule, forward_diffuse, linear_schedule
from physmo.errors import ContractViolation


def test_default_schedule_shape_and_range():
    sched = linear_schedule()
    assert sched.steps == 100
    assert sched.betas[0] == pytest.approx(1e-4)
    assert sched.betas[-1] == pytest.approx(0.02)
    assert np.all(np.diff(sched.betas) >= 0)
    assert np.all((sched.betas > 0) & (sched.betas < 1))


def test_alpha_bar_strictly_decreasing():
    sched = linear_schedule()
    assert np.all(np.diff(sched.alpha_bars) < 0)
    assert sched.alpha_bars[0] == pytest.approx(1 - sched.betas[0])


@given(st.integers(2, 50))
def test_any_linear_schedule_is_consistent(steps):
    sched = linear_schedule(steps)
    assert np.allclose(sched.alpha_bars, np.cumprod(1.0 - sched.betas))


def test_schedule_rejects_bad_betas():
    with pytest.raises(ContractViolation):
        DiffusionSchedule(np.array([0.1, 0.05]))      # decreasing
    with pytest.raises(ContractViolation):
        DiffusionSchedule(np.array([0.0, 0.1]))       # not in (0, 1)
    with pytest.raises(ContractViolation):
        DiffusionSchedule(np.array([[0.1]]))          # not 1-D


def test_forward_diffuse_zero_noise_scales_input():
    sched = linear_schedule()
    x0 = np.ones((3, 8))
    for t in (0, 10, 99):
        out = forward_diffuse(x0, t, np.zeros_like(x0), sched)
        np.testing.assert_allclose(out, np.sqrt(sched.alpha_bars[t]) * x0,
                                   rtol=0, atol=0)


def test_forward_diffuse_unit_noise_coefficients():
    sched = linear_schedule()
    x0 = np.zeros((2, 4))
    noise = np.ones_like(x0)
    for t in (5, 50):
        out = forward_diffuse(x0, t, noise, sched)
        np.testing.assert_allclose(out, np.sqrt(1.0 - sched.alpha_bars[t])
                                   * noise)


def test_forward_diffuse_rejects_out_of_range_t():
    sched = linear_schedule()
    x0 = np.zeros((1, 4))
    with pytest.raises(ContractViolation):
        forward_diffuse(x0, 100, np.zeros_like(x0), sched)
    with pytest.raises(ContractViolation):
        forward_diffuse(x0, -1, np.zeros_like(x0), sched)
