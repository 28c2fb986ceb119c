import math

import numpy as np
import pytest

from rbblocks.solver import NewtonError, NewtonResult
from rbblocks.timeloop import (StepFailure, TimeSchedule, half_sine_pulse, ramped_flow, run_time_loop,
                               sampled_waveform)


class Scalar:
    """Explicit decay y' = -y stepped with backward Euler."""

    def __init__(self, dt):
        self.dt = dt
        self.history = []

    def zeros(self):
        return np.zeros(1)

    def reset(self, Y=None):
        self.history = [] if Y is None else [Y]

    def push(self, Y):
        self.history.insert(0, Y)


def test_schedule_grid():
    s = TimeSchedule(dt=0.01, t0=0.0, T=0.1, ramp_start=-0.03)
    assert s.n_ramp == 3 and s.n_steps == 10
    assert np.allclose(s.ramp_times(), [-0.02, -0.01, 0.0])
    assert np.allclose(s.times()[[0, -1]], [0.0, 0.1])
    for bad in (dict(dt=0), dict(T=-1.0), dict(ramp_start=0.5)):
        with pytest.raises(ValueError):
            TimeSchedule(**bad)


def test_ramp_shape():
    s = TimeSchedule(dt=1e-3, t0=0.0, T=0.3, ramp_start=-0.02)
    q = ramped_flow(lambda t: 2.0 + t, s)
    assert abs(q(-0.02)) < 1e-15
    assert abs(q(-0.01) - 1.0) < 1e-12
    assert q(0.0) == 2.0 and q(0.1) == 2.1
    ts = np.linspace(-0.02, 0.0, 50)
    assert np.all(np.diff([q(t) for t in ts]) >= 0)


def test_waveforms():
    w = half_sine_pulse(0.5, 1.0, 0.3)
    assert w(0.0) == 0.5 and abs(w(0.15) - 1.5) < 1e-15 and w(0.4) == 0.5
    s = sampled_waveform([(0, 1), (1, 3)])
    assert s(0.5) == 2.0
    with pytest.raises(ValueError):
        sampled_waveform([(0, 1), (0, 2)])
    with pytest.raises(ValueError):
        sampled_waveform([(0, 1)])


def test_run_time_loop_records_from_t0():
    dt = 0.01
    sys_ = Scalar(dt)
    sched = TimeSchedule(dt=dt, t0=0.0, T=0.05, ramp_start=-0.02)

    def step(Y, t):
        return NewtonResult(sys_.history[0] / (1 + dt) + 0 * Y, 1, [1.0, 0.0])

    traj = run_time_loop(sys_, sched, step, np.ones(1))
    assert np.allclose(traj.times, np.arange(6) * dt)
    assert len(traj.step_labels) == 7
    n_ramp = 2
    expect = [(1 + dt) ** -(n_ramp + k) for k in range(6)]
    assert np.allclose([y[0] for y in traj.states], expect)


def test_step_failure_reports_step():
    sys_ = Scalar(0.1)
    sched = TimeSchedule(dt=0.1, t0=0.0, T=0.5, ramp_start=0.0)
    calls = []

    def step(Y, t):
        calls.append(t)
        if len(calls) == 3:
            raise NewtonError("boom", [1.0, 2.0])
        return NewtonResult(Y, 1, [1.0])

    with pytest.raises(StepFailure) as info:
        run_time_loop(sys_, sched, step)
    assert info.value.step == 2 and math.isclose(info.value.t, 0.3) and info.value.residuals == [1.0, 2.0]
