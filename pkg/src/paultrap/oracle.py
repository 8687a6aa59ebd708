"""Split-step Fourier solver for ``i hbar psi_t = -(hbar^2/2m) Lap psi + V(t, x) psi``.

This is the independent reference the analytic states and the semiclassical
packets are checked against. Strang splitting: half kinetic step, full
potential step evaluated at the step midpoint, half kinetic step. Every factor
is a unit-modulus multiplier, so the discrete norm is conserved to round-off.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = ["BoxTooSmallError", "EvolvedState", "GridSpec", "evolve_to", "l2_distance", "overlap", "split_step_evolve"]


class BoxTooSmallError(RuntimeError):
    """Probability reached the outer shell of the box."""


@dataclass(frozen=True)
class GridSpec:
    n_points: tuple
    half_width: tuple

    def __post_init__(self):
        n = tuple(int(v) for v in np.atleast_1d(self.n_points))
        L = tuple(float(v) for v in np.atleast_1d(self.half_width))
        if len(n) != len(L) or not 1 <= len(n) <= 2:
            raise ValueError("grids have one or two dimensions")
        for v in n:
            if v < 2 or v & (v - 1):
                raise ValueError(f"points per dimension must be a power of two, got {v}")
        if any(h <= 0 for h in L):
            raise ValueError("half widths must be positive")
        object.__setattr__(self, "n_points", n)
        object.__setattr__(self, "half_width", L)

    @property
    def dim(self) -> int:
        return len(self.n_points)

    def axes(self) -> list:
        return [np.linspace(-L, L, n, endpoint=False) for n, L in zip(self.n_points, self.half_width)]

    @property
    def spacing(self) -> tuple:
        return tuple(2 * L / n for n, L in zip(self.n_points, self.half_width))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def points(self) -> np.ndarray:
        """Coordinates with shape ``n_points + (dim,)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def wavenumbers_squared(self) -> np.ndarray:
        ks = [2 * math.pi * np.fft.fftfreq(n, d=d) for n, d in zip(self.n_points, self.spacing)]
        mesh = np.meshgrid(*ks, indexing="ij")
        return sum(k * k for k in mesh)

    def outer_shell(self, fraction: float = 0.05) -> np.ndarray:
        mask = np.zeros(self.n_points, dtype=bool)
        for d, (ax, L) in enumerate(zip(self.axes(), self.half_width)):
            sel = np.abs(ax) >= (1.0 - fraction) * L
            shape = [1] * self.dim
            shape[d] = -1
            mask |= sel.reshape(shape)
        return mask


@dataclass
class EvolvedState:
    grid: GridSpec
    psi: np.ndarray
    time: float = 0.0

    @property
    def boundary_mass(self) -> float:
        mask = self.grid.outer_shell()
        return float(np.sum(np.abs(self.psi[mask]) ** 2) * self.grid.cell_volume)

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.psi) ** 2) * self.grid.cell_volume)

    @classmethod
    def from_function(cls, grid: GridSpec, f: Callable, time: float = 0.0) -> "EvolvedState":
        """Sample ``f(points)`` where ``points`` has shape ``n_points + (dim,)``."""
        return cls(grid, np.asarray(f(grid.points()), dtype=complex), float(time))

    def to_csv(self) -> str:
        if self.grid.dim != 1:
            raise ValueError("CSV layout is defined for 1-D states")
        lines = ["x,re,im"]
        for x, v in zip(self.grid.axes()[0], self.psi):
            lines.append(f"{float(x)!r},{float(v.real)!r},{float(v.imag)!r}")
        return "\n".join(lines) + "\n"


def overlap(a: EvolvedState, b: EvolvedState) -> complex:
    """Discrete ``<a|b>`` with the grid cell measure."""
    if a.grid != b.grid:
        raise ValueError("states live on different grids")
    return complex(np.vdot(a.psi, b.psi) * a.grid.cell_volume)


def l2_distance(a: EvolvedState, b: EvolvedState) -> float:
    if a.grid != b.grid:
        raise ValueError("states live on different grids")
    return math.sqrt(float(np.sum(np.abs(a.psi - b.psi) ** 2) * a.grid.cell_volume))


def split_step_evolve(
    V: Callable,
    psi0: EvolvedState,
    dt: float,
    steps: int,
    m: float = 1.0,
    hbar: float = 1.0,
    boundary_tol: float = 1e-8,
    check_halving: bool = False,
    halving_tol: float = 1e-8,
) -> EvolvedState:
    """Advance ``psi0`` by ``steps`` Strang steps of size ``dt``.

    ``V(t, points)`` receives coordinates of shape ``n_points + (dim,)`` and
    returns potential values of shape ``n_points``. With ``check_halving`` the
    run is repeated at ``dt / 2`` and a ValueError is raised when the two
    final states differ by more than ``halving_tol`` in L2.
    """
    if steps < 0 or dt <= 0:
        raise ValueError("need dt > 0 and steps >= 0")
    grid = psi0.grid
    pts = grid.points()
    half_kin = np.exp(-1j * hbar * grid.wavenumbers_squared() * dt / (4.0 * m))
    axes = tuple(range(grid.dim))
    psi = np.array(psi0.psi, dtype=complex)
    t = psi0.time
    if steps:
        psi = np.fft.fftn(psi, axes=axes) * half_kin
        for s in range(steps):
            psi = np.fft.ifftn(psi, axes=axes)
            tm = t + (s + 0.5) * dt
            psi *= np.exp(-1j * np.asarray(V(tm, pts)) * dt / hbar)
            psi = np.fft.fftn(psi, axes=axes)
            # merge consecutive half kinetic steps into one full step
            psi *= half_kin if s == steps - 1 else half_kin * half_kin
        psi = np.fft.ifftn(psi, axes=axes)
        t = psi0.time + steps * dt
    out = EvolvedState(grid, psi, t)
    if out.boundary_mass > boundary_tol:
        raise BoxTooSmallError(
            f"boundary mass {out.boundary_mass:.3e} exceeds {boundary_tol:.1e} at t = {t}"
        )
    if check_halving:
        fine = split_step_evolve(V, psi0, dt / 2, 2 * steps, m, hbar, boundary_tol)
        diff = l2_distance(out, fine)
        if diff > halving_tol:
            raise ValueError(f"time step too large: halving dt changes the state by {diff:.3e}")
    return out


def evolve_to(
    V: Callable,
    psi0: EvolvedState,
    times: Sequence[float],
    dt_max: float,
    m: float = 1.0,
    hbar: float = 1.0,
    boundary_tol: float = 1e-8,
) -> list:
    """States at each of ``times`` (ascending), stepping with at most ``dt_max``."""
    out = []
    state = psi0
    for t in times:
        span = t - state.time
        if span < -1e-14:
            raise ValueError("times must be ascending")
        steps = max(0, int(math.ceil(span / dt_max - 1e-9)))
        if steps:
            state = split_step_evolve(V, state, span / steps, steps, m, hbar, boundary_tol)
        out.append(state)
    return out
