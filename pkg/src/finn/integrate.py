"""Time integration.

Two paths with different jobs:

* :func:`integrate_fixed` — fixed-step Euler/RK4 over a prescribed time grid.
  The arithmetic is generic, so a right-hand side that records onto an
  autodiff tape yields a trajectory that is differentiable end to end
  (backpropagation through the whole unrolled rollout).
* :func:`integrate_adaptive` — embedded Dormand-Prince 4(5) pair with
  per-component error control, used for data generation and inference where
  differentiability is not needed.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DivergenceError, StiffnessError
from .tape import Var, value_of

# Dormand-Prince 4(5): stage nodes, coupling coefficients, 5th-order weights,
# and the (5th - 4th) difference row used for the local error estimate.
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_ERR = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

_SAFETY = 0.9
_GROWTH_MIN, _GROWTH_MAX = 0.2, 5.0


def _check_time_grid(t_grid: np.ndarray) -> np.ndarray:
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if t_grid.ndim != 1 or t_grid.size < 1:
        raise ConfigError("time grid must be a non-empty 1-d array")
    if t_grid.size > 1 and not np.all(np.diff(t_grid) > 0):
        raise ConfigError("time grid must be strictly increasing")
    return t_grid


def _euler_step(rhs, t, u, h):
    return u + h * rhs(t, u)


def _rk4_step(rhs, t, u, h):
    k1 = rhs(t, u)
    k2 = rhs(t + 0.5 * h, u + (0.5 * h) * k1)
    k3 = rhs(t + 0.5 * h, u + (0.5 * h) * k2)
    k4 = rhs(t + h, u + h * k3)
    return u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_fixed(rhs: Callable, u0, t_grid: Sequence[float],
                    method: str = "rk4", max_abs: float | None = None):
    """March ``u' = rhs(t, u)`` across ``t_grid``; row 0 is ``u0``.

    Returns a (T, n) array for a plain-numpy state, or the list of per-time
    states when ``u0`` is a tape Var (so gradients can flow through every
    step). Raises :class:`DivergenceError` with the step index if the state
    leaves the finite (or ``max_abs``) range.
    """
    t_grid = _check_time_grid(t_grid)
    if method == "euler":
        step = _euler_step
    elif method == "rk4":
        step = _rk4_step
    else:
        raise ConfigError(f"unknown fixed-step method {method!r}")

    states = [u0]
    u = u0
    for i in range(len(t_grid) - 1):
        h = float(t_grid[i + 1] - t_grid[i])
        with np.errstate(over="ignore", invalid="ignore"):
            u = step(rhs, float(t_grid[i]), u, h)
        uv = value_of(u)
        if not np.all(np.isfinite(uv)):
            raise DivergenceError(
                f"non-finite state after step {i + 1} (t={t_grid[i + 1]:g})",
                step_index=i + 1)
        if max_abs is not None and np.max(np.abs(uv)) > max_abs:
            raise DivergenceError(
                f"state magnitude exceeded {max_abs:g} after step {i + 1} "
                f"(t={t_grid[i + 1]:g})", step_index=i + 1)
        states.append(u)
    if isinstance(u0, Var):
        return states
    return np.stack([np.asarray(s, dtype=np.float64) for s in states])


def integrate_adaptive(rhs: Callable, u0: np.ndarray, t_eval: Sequence[float],
                       rtol: float = 1e-6, atol: float = 1e-8,
                       max_steps: int = 10_000_000) -> np.ndarray:
    """Dormand-Prince 4(5) with standard elementary step control.

    Accepted steps are shortened to land exactly on each requested output
    time, so rows of the returned (T, n) trajectory carry full integrator
    accuracy at the ``t_eval`` points.
    """
    t_eval = _check_time_grid(t_eval)
    u = np.array(u0, dtype=np.float64)
    out = np.empty((len(t_eval), u.size))
    out[0] = u
    if len(t_eval) == 1:
        return out

    t = float(t_eval[0])
    t_end = float(t_eval[-1])
    h = (t_eval[1] - t_eval[0]) * 1e-2
    next_out = 1
    k = [None] * 7

    for _ in range(max_steps):
        if h < 1e-14 * max(1.0, abs(t)):
            raise StiffnessError(f"step size underflow at t={t:g}", t=t)
        h = min(h, float(t_eval[next_out]) - t)

        # rejected trial steps may overflow; the error control catches that
        with np.errstate(over="ignore", invalid="ignore"):
            k[0] = rhs(t, u)
            for s in range(1, 7):
                incr = sum(a * k[j] for j, a in enumerate(_DP_A[s]) if a != 0.0)
                k[s] = rhs(t + _DP_C[s] * h, u + h * incr)
            u5 = u + h * sum(b * k[j] for j, b in enumerate(_DP_B5) if b != 0.0)
            err = h * sum(e * k[j] for j, e in enumerate(_DP_ERR) if e != 0.0)
            scale = atol + rtol * np.maximum(np.abs(u), np.abs(u5))
            err_norm = float(np.max(np.abs(err) / scale))
        if not np.isfinite(err_norm):
            err_norm = np.inf

        if err_norm <= 1.0:  # accept
            t = t + h
            u = u5
            while next_out < len(t_eval) and t >= float(t_eval[next_out]) - 1e-12 * max(1.0, abs(t)):
                out[next_out] = u
                next_out += 1
            if next_out >= len(t_eval) or t >= t_end:
                return out

        factor = _SAFETY * (1.0 / err_norm) ** 0.2 if err_norm > 0 else _GROWTH_MAX
        h = h * float(np.clip(factor, _GROWTH_MIN, _GROWTH_MAX))

    raise StiffnessError(f"exceeded {max_steps} steps at t={t:g}", t=t)
