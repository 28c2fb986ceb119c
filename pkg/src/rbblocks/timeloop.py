"""Time schedule with inflow ramp and the time loop shared by the FOM and the ROM."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .solver.newton import NewtonConfig, NewtonError, NewtonResult


@dataclass(frozen=True)
class TimeSchedule:
    """Time grid: a ramp on ``[ramp_start, t0]`` followed by the recorded interval ``[t0, T]``."""

    dt: float = 2.5e-3
    t0: float = 0.0
    T: float = 0.3
    ramp_start: float = -2e-2

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("time step must be positive")
        if not self.t0 < self.T:
            raise ValueError("need t0 < T")
        if self.ramp_start > self.t0:
            raise ValueError("the ramp must start before t0")

    @property
    def n_ramp(self) -> int:
        return int(round((self.t0 - self.ramp_start) / self.dt))

    @property
    def n_steps(self) -> int:
        return int(round((self.T - self.t0) / self.dt))

    def ramp_times(self) -> np.ndarray:
        return self.t0 - self.dt * np.arange(self.n_ramp - 1, -1, -1)

    def times(self) -> np.ndarray:
        """Recorded times ``t0, t0 + dt, ..., T``."""
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


def ramped_flow(waveform: Callable[[float], float], schedule: TimeSchedule) -> Callable[[float], float]:
    """Flow rate that rises smoothly from 0 to ``waveform(t0)`` over the ramp, then follows the waveform.

    ``Q(t) = Q0 [1 - cos((t - t0r) pi / (t0 - t0r))] / 2`` on the ramp.
    """
    t0, t0r = schedule.t0, schedule.ramp_start
    q0 = waveform(t0)

    def flow(t: float) -> float:
        if t < t0 - 1e-12 and t0 > t0r:
            return q0 * (1.0 - math.cos((t - t0r) * math.pi / (t0 - t0r))) / 2.0
        return waveform(t)

    return flow


def half_sine_pulse(base: float = 0.5, peak: float = 1.0, period: float = 0.3) -> Callable[[float], float]:
    """Synthetic inflow ``base + peak sin(pi t / period)`` on ``[0, period]``, ``base`` elsewhere."""

    def q(t: float) -> float:
        if 0.0 <= t <= period:
            return base + peak * math.sin(math.pi * t / period)
        return base

    return q


def sampled_waveform(samples) -> Callable[[float], float]:
    """Piecewise linear flow rate through ``(t, Q)`` samples."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 2:
        raise ValueError("waveform samples must be (t, Q) pairs")
    if np.any(np.diff(arr[:, 0]) <= 0):
        raise ValueError("waveform sample times must increase")
    return lambda t: float(np.interp(t, arr[:, 0], arr[:, 1]))


@dataclass
class Trajectory:
    """States at the recorded times plus per-step solver statistics."""

    times: list[float] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    newton_iterations: list[int] = field(default_factory=list)
    krylov_iterations: list[int] = field(default_factory=list)
    step_times: list[float] = field(default_factory=list)
    step_labels: list[float] = field(default_factory=list)
    solve_time: float = 0.0


class StepFailure(RuntimeError):
    def __init__(self, step: int, t: float, cause: NewtonError):
        super().__init__(f"step {step} (t = {t:.6g}) failed: {cause}")
        self.step = step
        self.t = t
        self.residuals = cause.residuals


def run_time_loop(system, schedule: TimeSchedule, step_solve: Callable[[np.ndarray, float], NewtonResult],
                  Y0: np.ndarray | None = None, record_ramp: bool = False) -> Trajectory:
    """March ``system`` from ``ramp_start`` to ``T``.

    ``system`` provides ``zeros()``, ``reset(Y)``, ``push(Y)``; ``step_solve``
    returns the converged state of one step from an initial guess and time.
    """
    Y = system.zeros() if Y0 is None else np.array(Y0, dtype=float)
    system.reset(Y)
    traj = Trajectory()
    steps = [(t, record_ramp) for t in schedule.ramp_times()]
    if schedule.n_ramp == 0:
        traj.times.append(schedule.t0)
        traj.states.append(Y.copy())
    else:
        steps[-1] = (steps[-1][0], True)
    steps += [(t, True) for t in schedule.times()[1:]]
    start = time.perf_counter()
    for k, (t, record) in enumerate(steps):
        tic = time.perf_counter()
        try:
            res = step_solve(Y, float(t))
        except NewtonError as exc:
            raise StepFailure(k, float(t), exc) from exc
        Y = res.state
        system.push(Y)
        traj.newton_iterations.append(res.iterations)
        traj.krylov_iterations.append(int(sum(res.krylov_iterations)))
        traj.step_times.append(time.perf_counter() - tic)
        traj.step_labels.append(float(t))
        if record:
            traj.times.append(float(t))
            traj.states.append(Y.copy())
    traj.solve_time = time.perf_counter() - start
    return traj


def fom_time_loop(system, schedule: TimeSchedule, newton: NewtonConfig | None = None, linear_solver=None,
                  Y0: np.ndarray | None = None) -> Trajectory:
    """Full-order time loop on a :class:`~rbblocks.assembly.GlobalSystem`."""
    from .solver.newton import LinearSolver, newton_solve

    newton = newton or NewtonConfig()
    solver = linear_solver if linear_solver is not None else LinearSolver()
    return run_time_loop(system, schedule, lambda Y, t: newton_solve(system, Y, t, newton, solver), Y0)
