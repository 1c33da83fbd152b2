"""Adaptive Runge-Kutta driver with dense sampling and per-step hooks.

Wraps scipy's Dormand-Prince 8(5,3) stepper.  The driver adds fixed-interval
sampling from the dense output, rejection counting, graceful halting on a
collision and a hook that sees every accepted step (used for section
crossings).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import DOP853

from .errors import CollisionError, StepUnderflow

__all__ = ["IntegratorStats", "OdeRun", "run_adaptive", "check_tolerances"]

MIN_STEP = 1e-12
_EVALS_PER_ATTEMPT = 12

StepHook = Callable[[float, float, Callable[[float], NDArray[np.float64]]], bool]


@dataclass(frozen=True)
class IntegratorStats:
    """Counters of one adaptive run."""

    steps: int
    rejections: int
    evaluations: int
    rel_tol: float
    abs_tol: float


@dataclass(frozen=True)
class OdeRun:
    """Samples of an adaptive run; ``halt_reason`` is ``None`` on success."""

    times: NDArray[np.float64]
    states: NDArray[np.float64]
    stats: IntegratorStats
    halt_reason: str | None = None


def check_tolerances(rel_tol: float, abs_tol: float, t_end: float) -> None:
    for name, v in (("rel_tol", rel_tol), ("abs_tol", abs_tol)):
        if not (1e-14 < v < 1e-2):
            raise ValueError(f"{name} must lie in (1e-14, 1e-2), got {v!r}")
    if not (t_end > 0 and math.isfinite(t_end)):
        raise ValueError("t_end must be positive and finite")


def run_adaptive(
    fun: Callable[[float, NDArray[np.float64]], NDArray[np.float64]],
    y0: NDArray[np.float64],
    t_end: float,
    rel_tol: float,
    abs_tol: float,
    sample_dt: float | None = None,
    max_step: float = math.inf,
    on_step: StepHook | None = None,
    t0: float = 0.0,
) -> OdeRun:
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``t_end``.

    Parameters
    ----------
    sample_dt : float, optional
        Spacing of the recorded samples; ``None`` records accepted steps.
    on_step : callable, optional
        ``on_step(t_old, t_new, dense)`` is called after every accepted step
        with the step's dense interpolant.  Returning ``True`` stops the run.

    Returns
    -------
    OdeRun
        The run always contains the initial sample.  A
        :class:`CollisionError` raised by ``fun`` ends the run early with the
        error message as ``halt_reason``.
    """
    nfev = 0

    def counted(t: float, y: NDArray[np.float64]) -> NDArray[np.float64]:
        nonlocal nfev
        nfev += 1
        return fun(t, y)

    y0 = np.array(y0, dtype=float)
    times = [t0]
    states = [y0.copy()]
    steps = rejections = 0
    halt: str | None = None
    try:
        solver = DOP853(counted, t0, y0, t_end, rtol=rel_tol, atol=abs_tol, max_step=max_step)
    except CollisionError as exc:
        stats = IntegratorStats(0, 0, nfev, rel_tol, abs_tol)
        return OdeRun(np.array(times), np.array(states), stats, str(exc))
    next_sample = t0 + sample_dt if sample_dt else None
    while solver.status == "running":
        before = nfev
        try:
            message = solver.step()
        except CollisionError as exc:
            halt = str(exc)
            break
        if solver.status == "failed":
            raise StepUnderflow(f"integration failed at t={solver.t:.6g}: {message}")
        attempts = (nfev - before) // _EVALS_PER_ATTEMPT
        rejections += max(attempts - 1, 0)
        steps += 1
        if solver.step_size is not None and solver.step_size < MIN_STEP and solver.t < t_end:
            raise StepUnderflow(f"step size {solver.step_size:.3e} below {MIN_STEP:g} at t={solver.t:.6g}")
        t_old, t_new = solver.t_old, solver.t
        dense = None
        if sample_dt:
            while next_sample is not None and next_sample <= t_new + 1e-12 * max(1.0, abs(t_new)):
                if dense is None:
                    dense = solver.dense_output()
                ts = min(next_sample, t_new)
                times.append(ts)
                states.append(dense(ts) if ts < t_new else solver.y.copy())
                steps_taken = len(times) - 1
                next_sample = t0 + (steps_taken + 1) * sample_dt
                if next_sample > t_end + 1e-12 * max(1.0, t_end):
                    next_sample = None
        else:
            times.append(t_new)
            states.append(solver.y.copy())
        if on_step is not None:
            if dense is None:
                dense = solver.dense_output()
            if on_step(t_old, t_new, dense):
                halt = "stopped by step hook"
                break
    if halt is None and sample_dt and times[-1] < solver.t - 1e-12 * max(1.0, abs(solver.t)):
        times.append(solver.t)
        states.append(solver.y.copy())
    stats = IntegratorStats(steps, rejections, nfev, rel_tol, abs_tol)
    return OdeRun(np.array(times), np.array(states), stats, halt)
