"""Adaptive embedded Runge-Kutta integration (Dormand-Prince 8(5,3)).

The stepping, step-size control and dense output are implemented here.
Only the tableau constants come from scipy, which ships them as plain arrays.

States may be arrays of any shape (real or complex). The local error is
controlled in the max norm over *all* entries, so a batch of independent
systems integrated together gets per-member error control at least as strict
as integrating each member alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop

__all__ = ["IntegrationError", "DenseSolution", "OdeResult", "integrate"]

N_STAGES = _dop.N_STAGES
_A = _dop.A[:N_STAGES, :N_STAGES]
_B = _dop.B
_C = _dop.C[:N_STAGES]
_E3 = _dop.E3
_E5 = _dop.E5
_D = _dop.D
_A_EXTRA = _dop.A[N_STAGES + 1:]
_C_EXTRA = _dop.C[N_STAGES + 1:]

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERROR_EXPONENT = -1.0 / 8.0


class IntegrationError(RuntimeError):
    """Raised when the integrator cannot advance (step underflow, NaN, guard)."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t = {time!r}")
        self.time = time


@dataclass
class DenseSolution:
    """Piecewise 7th-order interpolant over the accepted steps."""

    breaks: np.ndarray
    y_old: list = field(default_factory=list)
    coeffs: list = field(default_factory=list)
    shape: tuple = ()

    def _eval_segment(self, i: int, t: float) -> np.ndarray:
        t0, t1 = self.breaks[i], self.breaks[i + 1]
        y = _interpolate(self.coeffs[i], self.y_old[i], (t - t0) / (t1 - t0))
        return y.reshape(self.shape)

    def __call__(self, t: float) -> np.ndarray:
        t = float(t)
        lo, hi = self.breaks[0], self.breaks[-1]
        span = hi - lo
        if t < lo - 1e-12 * max(1.0, abs(span)) or t > hi + 1e-12 * max(1.0, abs(span)):
            raise ValueError(f"t = {t} outside dense-output range [{lo}, {hi}]")
        i = int(np.searchsorted(self.breaks, t, side="right")) - 1
        i = min(max(i, 0), len(self.coeffs) - 1)
        return self._eval_segment(i, t)

    @property
    def t_min(self) -> float:
        return float(self.breaks[0])

    @property
    def t_max(self) -> float:
        return float(self.breaks[-1])


@dataclass
class OdeResult:
    t: np.ndarray
    y: np.ndarray
    dense: Optional[DenseSolution]
    nfev: int
    nsteps: int


def _error_norm(K: np.ndarray, h: float, scale: np.ndarray) -> float:
    err5 = np.abs(_E5 @ K) / scale
    err3 = np.abs(_E3 @ K) / scale
    denom = np.hypot(err5, 0.1 * err3)
    ratio = np.divide(err5 * err5, denom, out=np.zeros_like(err5), where=denom > 0)
    return abs(h) * float(ratio.max())


def _initial_step(fun, t0, y0, f0, direction, rtol, atol, interval):
    scale = atol + np.abs(y0) * rtol
    d0 = float(np.max(np.abs(y0) / scale))
    d1 = float(np.max(np.abs(f0) / scale))
    if not (np.isfinite(d0) and np.isfinite(d1)) or d1 == 0.0 and d0 == 0.0:
        return 1e-6 * interval
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = max(min(h0, interval), 1e-300)
    f1 = fun(t0 + direction * h0, y0 + direction * h0 * f0)
    d2 = float(np.max(np.abs(f1 - f0) / scale)) / h0
    if not np.isfinite(d2):
        return max(1e-6 * interval, h0 * 1e-3)
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    return min(100 * h0, h1, interval)


def _interpolate(F: np.ndarray, y_old: np.ndarray, x: float) -> np.ndarray:
    y = np.zeros_like(y_old)
    for j, f in enumerate(F[::-1]):
        y = (y + f) * (x if j % 2 == 0 else 1.0 - x)
    return y + y_old


def integrate(
    fun: Callable[[float, np.ndarray], np.ndarray],
    t_span: tuple[float, float],
    y0,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    t_eval=None,
    dense: bool = False,
    max_step: float = np.inf,
    max_steps: int = 10_000_000,
    on_step: Optional[Callable[[float, np.ndarray], None]] = None,
) -> OdeResult:
    """Integrate ``y' = fun(t, y)`` over ``t_span``.

    Parameters
    ----------
    fun : callable
        Right-hand side; must accept and return arrays shaped like ``y0``.
    t_span : (t0, t1)
        Integration interval; ``t1 < t0`` integrates backwards.
    y0 : array_like
        Initial state of any shape; complex states are supported.
    rtol, atol : float
        Local error is kept below ``atol + rtol * |y|`` entrywise.
    t_eval : array_like, optional
        Output times (monotone in the integration direction). When omitted,
        the accepted step points are returned.
    dense : bool
        Also return a :class:`DenseSolution` covering the whole interval
        (forward integration only).
    on_step : callable, optional
        Called as ``on_step(t, y)`` after every accepted step; may raise to
        abort the integration.
    """
    if rtol <= 0 or atol < 0:
        raise ValueError("tolerances must be positive")
    t0, t1 = float(t_span[0]), float(t_span[1])
    y0 = np.asarray(y0)
    shape = y0.shape
    y = np.array(y0, dtype=np.result_type(y0.dtype, float)).ravel()
    direction = 1.0 if t1 >= t0 else -1.0
    interval = abs(t1 - t0)
    if dense and direction < 0:
        raise ValueError("dense output is only supported for forward integration")

    def rhs(t, yflat):
        return np.asarray(fun(t, yflat.reshape(shape))).ravel()

    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        if np.any(direction * np.diff(t_eval) < 0):
            raise ValueError("t_eval must be monotone in the integration direction")
        outputs = np.empty((len(t_eval), y.size), dtype=y.dtype)
        n_out = 0
        while n_out < len(t_eval) and t_eval[n_out] == t0:
            outputs[n_out] = y
            n_out += 1
    else:
        ts_out, ys_out = [t0], [y.copy()]

    dense_sol = DenseSolution(breaks=np.array([t0])) if dense else None
    breaks = [t0]

    def finish(nfev, nsteps):
        if dense_sol is not None:
            dense_sol.breaks = np.array(breaks)
            dense_sol.shape = shape
        if t_eval is not None:
            return OdeResult(t_eval, outputs.reshape((len(t_eval),) + shape), dense_sol, nfev, nsteps)
        return OdeResult(np.array(ts_out), np.array(ys_out).reshape((-1,) + shape), dense_sol, nfev, nsteps)

    if interval == 0.0:
        return finish(0, 0)

    f = rhs(t0, y)
    h_abs = min(_initial_step(rhs, t0, y, f, direction, rtol, atol, interval), max_step)
    nfev = 2

    K = np.empty((_dop.N_STAGES_EXTENDED, y.size), dtype=y.dtype)
    t = t0
    nsteps = 0
    while direction * (t - t1) < 0:
        if nsteps >= max_steps:
            raise IntegrationError("maximum number of steps exceeded", t)
        min_step = 10 * abs(np.nextafter(t, direction * np.inf) - t)
        h_abs = min(h_abs, max_step)
        rejected = False
        while True:
            if h_abs < min_step:
                raise IntegrationError("step size underflow", t)
            t_new = t + h_abs * direction
            if direction * (t_new - t1) > 0:
                t_new = t1
            h = t_new - t
            h_abs = abs(h)

            K[0] = f
            for s in range(1, N_STAGES):
                K[s] = rhs(t + _C[s] * h, y + h * (_A[s, :s] @ K[:s]))
            y_new = y + h * (_B @ K[:N_STAGES])
            f_new = rhs(t_new, y_new)
            K[N_STAGES] = f_new
            nfev += N_STAGES

            if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(f_new))):
                err = np.inf
            else:
                scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
                err = _error_norm(K[: N_STAGES + 1], h, scale)

            if err < 1.0:
                factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err**ERROR_EXPONENT)
                if rejected:
                    factor = min(1.0, factor)
                h_next = h_abs * factor
                break
            if not np.isfinite(err):
                h_abs *= MIN_FACTOR
            else:
                h_abs *= max(MIN_FACTOR, SAFETY * err**ERROR_EXPONENT)
            rejected = True

        want_samples = t_eval is not None and n_out < len(t_eval) and direction * (t_eval[n_out] - t_new) <= 0
        if dense_sol is not None or want_samples:
            for s, (a, c) in enumerate(zip(_A_EXTRA, _C_EXTRA), start=N_STAGES + 1):
                K[s] = rhs(t + c * h, y + h * (a[:s] @ K[:s]))
            nfev += len(_C_EXTRA)
            delta = y_new - y
            F = np.empty((_dop.INTERPOLATOR_POWER, y.size), dtype=y.dtype)
            F[0] = delta
            F[1] = h * f - delta
            F[2] = 2 * delta - h * (f_new + f)
            F[3:] = h * (_D @ K)
            if dense_sol is not None:
                dense_sol.y_old.append(y.copy())
                dense_sol.coeffs.append(F)
            if want_samples:
                while n_out < len(t_eval) and direction * (t_eval[n_out] - t_new) <= 0:
                    if t_eval[n_out] == t_new:
                        outputs[n_out] = y_new
                    else:
                        outputs[n_out] = _interpolate(F, y, (t_eval[n_out] - t) / h)
                    n_out += 1

        t, y, f = t_new, y_new, f_new
        h_abs = h_next
        nsteps += 1
        breaks.append(t)
        if t_eval is None:
            ts_out.append(t)
            ys_out.append(y.copy())
        if on_step is not None:
            on_step(t, y.reshape(shape))

    return finish(nfev, nsteps)
