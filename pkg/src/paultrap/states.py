"""Quasienergy wavefunctions of a single ion in a Paul trap.

States are built from the complex Hill solution ``u`` (``u(0) = 1``,
``u'(0) = i omega``):

    phi_0(x, t) = (m omega / pi hbar)^(1/4) u^(-1/2) exp(i m u' x^2 / (2 hbar u))
    phi_n(x, t) = (n!)^(-1/2) (u* / 2u)^(n/2) H_n(sqrt(m omega / hbar) x / |u|) phi_0(x, t)

``u^(1/2)`` and ``(u*/u)^(n/2)`` use the continuously unwound phase of ``u``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .hill import (
    DEFAULT_TOL,
    FloquetResult,
    HillParameters,
    SolutionTrace,
    Stability,
    floquet_omega,
    integrate_hill,
    monodromy,
)

__all__ = [
    "DimensionError",
    "NoPseudopotentialError",
    "NodeCollapseError",
    "OscillatorContext",
    "PseudoStates",
    "ResolutionError",
    "WavefunctionSample",
    "annihilation_action",
    "default_grid",
    "hermite_1d",
    "hermite_functions",
    "inner",
    "number_expectation",
    "overlap_fn",
    "phi0",
    "phin",
    "pseudopotential_states",
    "sample_state",
    "static_eigenfunction",
]


class NodeCollapseError(ValueError):
    """``u(t) = 0``: the state width diverges."""


class ResolutionError(ValueError):
    """Grid too coarse for spectral differentiation."""


class NoPseudopotentialError(ValueError):
    """Pseudopotential states requested at a point without a real secular frequency."""


class DimensionError(ValueError):
    """Samples live on different grids."""


def hermite_1d(n: int, x):
    """Physicists' Hermite polynomial ``H_n(x)`` by the three-term recurrence.

    The recurrence runs on rescaled values and the scale is reapplied at the
    end, so intermediate terms never overflow (the final value may still be
    ``inf`` when ``H_n(x)`` itself exceeds the float range).
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    x = np.asarray(x, dtype=float)
    if n == 0:
        return np.ones_like(x)[()]
    h_prev = np.ones_like(x)
    h = 2.0 * x
    log_scale = np.zeros_like(x)
    for k in range(1, n):
        h_prev, h = h, 2.0 * x * h - 2.0 * k * h_prev
        big = np.maximum(np.abs(h), np.abs(h_prev))
        rescale = big > 1e100
        if np.any(rescale):
            f = np.where(rescale, big, 1.0)
            h = h / f
            h_prev = h_prev / f
            log_scale = log_scale + np.log(f)
    with np.errstate(over="ignore"):
        return (h * np.exp(log_scale))[()]


def hermite_functions(n_max: int, y) -> np.ndarray:
    """Normalized Hermite functions ``H_n(y) exp(-y^2/2) / sqrt(2^n n! sqrt(pi))`` for ``n <= n_max``.

    Stable for large ``n`` and ``|y|``; shape ``(n_max + 1,) + y.shape``.
    """
    y = np.asarray(y, dtype=float)
    out = np.empty((n_max + 1,) + y.shape)
    out[0] = math.pi ** -0.25 * np.exp(-0.5 * y * y)
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * y * out[0]
    for k in range(2, n_max + 1):
        out[k] = math.sqrt(2.0 / k) * y * out[k - 1] - math.sqrt((k - 1) / k) * out[k - 2]
    return out


def static_eigenfunction(n: int, x, m: float, hbar: float, omega: float) -> np.ndarray:
    """Eigenfunction ``psi_n`` of the static oscillator of frequency ``omega`` (real, positive leading sign)."""
    scale = math.sqrt(m * omega / hbar)
    return scale**0.5 * hermite_functions(n, scale * np.asarray(x, dtype=float))[n]


@dataclass
class OscillatorContext:
    """Physical constants plus the Hill solution the states are built from."""

    m: float
    hbar: float
    omega: float
    trace: SolutionTrace

    def __post_init__(self):
        if not (self.m > 0 and self.hbar > 0 and self.omega > 0):
            raise ValueError("m, hbar and omega must be positive")
        if self.trace.dense is None:
            raise ValueError("the context needs a trace with dense output")
        if not math.isclose(self.trace.omega, self.omega, rel_tol=1e-14, abs_tol=0.0):
            raise ValueError("trace was integrated with a different omega")

    @classmethod
    def build(
        cls,
        params: HillParameters,
        t_end: float,
        omega: Optional[float] = None,
        m: float = 1.0,
        hbar: float = 1.0,
        tol: float = DEFAULT_TOL,
    ) -> "OscillatorContext":
        """Integrate ``u`` up to ``t_end``; ``omega`` defaults to the Floquet-matched value."""
        if omega is None:
            omega = floquet_omega(monodromy(params, tol))
        trace = integrate_hill(params, omega, t_end, tol=tol, dense=True)
        return cls(m, hbar, omega, trace)

    def u(self, t: float) -> tuple[complex, complex, float]:
        """``(u, u', unwound arg u)`` at time ``t``."""
        u, ud = self.trace.at(t)
        if abs(u) == 0.0:
            raise NodeCollapseError(f"u(t) = 0 at t = {t}")
        return u, ud, self.trace.phase(t)

    def width(self, t: float) -> float:
        """Length scale ``sqrt(hbar |u|^2 / (m omega))`` of the states at ``t``."""
        u = self.trace.at(t)[0]
        return math.sqrt(self.hbar / (self.m * self.omega)) * abs(u)

    def max_width(self) -> float:
        return math.sqrt(self.hbar / (self.m * self.omega)) * float(np.max(np.abs(self.trace.u)))


@dataclass
class WavefunctionSample:
    grid: np.ndarray
    values: np.ndarray
    time: float
    n: int

    def norm(self) -> float:
        return float(np.trapezoid(np.abs(self.values) ** 2, self.grid))

    def to_csv(self) -> str:
        lines = ["x,re,im"]
        for x, v in zip(self.grid, self.values):
            lines.append(f"{float(x)!r},{float(v.real)!r},{float(v.imag)!r}")
        return "\n".join(lines) + "\n"

    def to_record(self) -> dict:
        return {
            "n": int(self.n),
            "t": float(self.time),
            "x": [float(v) for v in self.grid],
            "re": [float(v) for v in self.values.real],
            "im": [float(v) for v in self.values.imag],
        }


def default_grid(ctx: OscillatorContext, n_points: int = 1024, widths: float = 12.0) -> np.ndarray:
    """Uniform grid spanning ``+-widths`` times the largest state width on the trace."""
    L = widths * ctx.max_width()
    return np.linspace(-L, L, n_points, endpoint=False)


def inner(grid: np.ndarray, f: np.ndarray, g: np.ndarray) -> complex:
    """Trapezoid-rule ``<f|g>``."""
    return complex(np.trapezoid(np.conj(f) * g, grid))


def _phi_parts(x, t, ctx):
    u, ud, theta = ctx.u(t)
    x = np.asarray(x, dtype=float)
    a_u = abs(u)
    y = math.sqrt(ctx.m * ctx.omega / ctx.hbar) * x / a_u
    # |exp(i m u' x^2 / 2 hbar u)| = exp(-y^2/2); the remaining factor is a pure chirp
    chirp = np.exp(1j * ctx.m * (ud / u).real * x * x / (2.0 * ctx.hbar))
    amp = (ctx.m * ctx.omega / ctx.hbar) ** 0.25 / math.sqrt(a_u)
    return x, y, chirp, amp, theta


def phi0(x, t: float, ctx: OscillatorContext):
    """Ground quasienergy wavefunction at positions ``x`` and time ``t``."""
    u, ud, theta = ctx.u(t)
    x = np.asarray(x, dtype=float)
    pref = (ctx.m * ctx.omega / (math.pi * ctx.hbar)) ** 0.25
    root = math.sqrt(abs(u)) * complex(math.cos(theta / 2), math.sin(theta / 2))
    return (pref / root) * np.exp(1j * ctx.m * (ud / u) * x * x / (2.0 * ctx.hbar))


def phin(n: int, x, t: float, ctx: OscillatorContext, printed_pi: bool = False):
    """Excited quasienergy wavefunction ``phi_n``.

    ``printed_pi=True`` puts ``pi`` inside the Hermite-argument square root,
    ``sqrt(m omega / (pi hbar |u|^2))``. That family is not orthonormal; it is
    kept only so the orthonormality test can show it.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if not printed_pi:
        x, y, chirp, amp, theta = _phi_parts(x, t, ctx)
        herm = hermite_functions(n, y)[n]
        return amp * np.exp(-1j * (n + 0.5) * theta) * herm * chirp
    u, ud, theta = ctx.u(t)
    x = np.asarray(x, dtype=float)
    arg = math.sqrt(ctx.m * ctx.omega / (math.pi * ctx.hbar)) * x / abs(u)
    pref = np.exp(-1j * n * theta) / math.sqrt(2.0**n * math.factorial(n))
    return pref * hermite_1d(n, arg) * phi0(x, t, ctx)


def sample_state(n: int, t: float, ctx: OscillatorContext, grid=None) -> WavefunctionSample:
    grid = default_grid(ctx) if grid is None else np.asarray(grid, dtype=float)
    return WavefunctionSample(grid, phin(n, grid, t, ctx), float(t), n)


def _spectral_derivative(grid: np.ndarray, f: np.ndarray, resolution_tol: float) -> np.ndarray:
    N = grid.size
    dx = grid[1] - grid[0]
    if not np.allclose(np.diff(grid), dx, rtol=1e-9, atol=0):
        raise ResolutionError("spectral differentiation needs a uniform grid")
    F = np.fft.fft(f)
    k = 2 * math.pi * np.fft.fftfreq(N, d=dx)
    # content in the top tenth of wavenumbers signals under-resolution
    top = np.abs(k) > 0.9 * np.abs(k).max()
    peak = np.max(np.abs(F))
    if peak > 0 and np.max(np.abs(F[top])) > resolution_tol * peak:
        raise ResolutionError("state has significant content near the grid's Nyquist wavenumber")
    edge = max(1, N // 100)
    fmax = np.max(np.abs(f))
    if fmax > 0 and max(np.max(np.abs(f[:edge])), np.max(np.abs(f[-edge:]))) > resolution_tol * fmax:
        raise ResolutionError("state does not decay before the grid edge")
    return np.fft.ifft(1j * k * F)


def annihilation_action(
    n: int,
    t: float,
    ctx: OscillatorContext,
    grid=None,
    resolution_tol: float = 1e-10,
) -> WavefunctionSample:
    """Apply ``C(t) = i (u p - m u' q) / sqrt(2 m hbar omega)`` to ``phi_n`` on a grid.

    The momentum operator acts by FFT differentiation. The result should equal
    ``sqrt(n) phi_{n-1}`` (zero for ``n = 0``).
    """
    grid = default_grid(ctx) if grid is None else np.asarray(grid, dtype=float)
    u, ud, _ = ctx.u(t)
    f = phin(n, grid, t, ctx)
    df = _spectral_derivative(grid, f, resolution_tol)
    p_f = -1j * ctx.hbar * df
    values = 1j * (u * p_f - ctx.m * ud * grid * f) / math.sqrt(2 * ctx.m * ctx.hbar * ctx.omega)
    return WavefunctionSample(grid, values, float(t), n - 1)


def number_expectation(n: int, t: float, ctx: OscillatorContext, grid=None) -> float:
    """``<phi_n| C^dagger C |phi_n> = ||C phi_n||^2``."""
    s = annihilation_action(n, t, ctx, grid)
    return s.norm()


@dataclass
class PseudoStates:
    omega_p: float
    grid: np.ndarray
    values: np.ndarray  # (n_max + 1, len(grid))
    m: float
    hbar: float

    @property
    def n_max(self) -> int:
        return self.values.shape[0] - 1

    def ground_width(self) -> float:
        return math.sqrt(self.hbar / (self.m * self.omega_p))


def pseudopotential_states(
    n_max: int,
    ctx: OscillatorContext,
    mu: Union[float, FloquetResult],
    grid=None,
) -> PseudoStates:
    """Static oscillator eigenstates at the secular frequency ``omega_p = mu``."""
    if isinstance(mu, FloquetResult):
        if mu.stability is not Stability.STABLE:
            raise NoPseudopotentialError(f"{mu.stability.value} operating point has no secular frequency")
        mu = mu.mu
    if not (math.isfinite(mu) and mu > 0):
        raise NoPseudopotentialError(f"secular frequency must be positive, got {mu}")
    grid = default_grid(ctx) if grid is None else np.asarray(grid, dtype=float)
    scale = math.sqrt(ctx.m * mu / ctx.hbar)
    values = scale**0.5 * hermite_functions(n_max, scale * grid)
    return PseudoStates(float(mu), grid, values, ctx.m, ctx.hbar)


def overlap_fn(
    n: int,
    t: float,
    ctx: OscillatorContext,
    pseudo: PseudoStates,
    sample: Optional[WavefunctionSample] = None,
) -> complex:
    """``f_n = <phi_pn | phi_n(t)>`` by trapezoid quadrature on the pseudo-state grid."""
    if n > pseudo.n_max:
        raise ValueError(f"pseudo states only go up to n = {pseudo.n_max}")
    if sample is None:
        values = phin(n, pseudo.grid, t, ctx)
    else:
        if sample.grid.shape != pseudo.grid.shape or not np.array_equal(sample.grid, pseudo.grid):
            raise DimensionError("wavefunction sample and pseudo states use different grids")
        values = sample.values
    return inner(pseudo.grid, pseudo.values[n], values)
