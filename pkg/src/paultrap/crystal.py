"""Equilibrium configurations of small trapped-ion crystals.

The potential family is

    W = b s / 2 + 2 a_c sum_{mu,nu} C_{mu nu} V_{mu nu} + a_c g sum_{a != b} (x_a - x_b)^-2,
    V_{mu nu} = s^-mu sum_{a != b} |x_a - x_b|^{2 (nu - 1)},

with ``s`` the sum of squared relative coordinates. Pair sums run over ordered
pairs. The last term (Calogero, 1D only) is active when ``g`` is set.
Equilibria solve ``grad W = 0`` and are found by damped Newton descent.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal

__all__ = [
    "CalogeroResult",
    "ConvergenceError",
    "CrystalConfiguration",
    "CrystalParameters",
    "SingularityError",
    "calogero_equilibrium",
    "calogero_parameters",
    "calogero_scale",
    "collective_coordinates",
    "coulomb_parameters",
    "equilibrium_residual",
    "hermite_zeros",
    "multistart",
    "potential_terms",
    "solve_equilibrium",
]

HERMITE_MAX_N = 200


class SingularityError(ValueError):
    """Two ions coincide while a singular pair term is active."""

    def __init__(self, pair: tuple):
        super().__init__(f"ions {pair[0]} and {pair[1]} coincide")
        self.pair = pair


class ConvergenceError(RuntimeError):
    """Iteration limit reached; ``best`` holds the lowest-residual configuration seen."""

    def __init__(self, message: str, best: "CrystalConfiguration"):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class CrystalParameters:
    """Ion count, dimension and potential coefficients.

    ``terms`` holds ``(mu, nu, C)`` triples. ``g`` switches on the inverse-square
    Calogero pair term; ``calogero_printed`` replaces it by ``g sum (x_a - x_b)^2``.
    """

    N: int
    d: int = 1
    b: float = 1.0
    a_c: float = 1.0
    terms: tuple = ((0.0, 0.5, 1.0),)
    g: Optional[float] = None
    hbar: float = 1.0
    m: float = 1.0
    calogero_printed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(tuple(float(v) for v in t) for t in self.terms))
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.d not in (1, 2, 3):
            raise ValueError("d must be 1, 2 or 3")
        for mu, nu, C in self.terms:
            if mu == nu and C != 0.0:
                raise ValueError(f"term (mu={mu}, nu={nu}) must have C = 0 when mu = nu")
        if self.g is not None:
            if self.d != 1:
                raise ValueError("the Calogero pair term is one-dimensional")
            if self.g <= -self.hbar**2 / (4 * self.m):
                raise ValueError("Calogero coupling must satisfy g > -hbar^2 / 4m")

    def to_dict(self) -> dict:
        return {
            "N": self.N, "d": self.d, "b": self.b, "a_c": self.a_c,
            "terms": [list(t) for t in self.terms], "g": self.g,
            "hbar": self.hbar, "m": self.m, "calogero_printed": self.calogero_printed,
        }


def coulomb_parameters(N: int, d: int = 1, b: float = 1.0, a_c: float = 1.0) -> CrystalParameters:
    return CrystalParameters(N, d, b, a_c, ((0.0, 0.5, 1.0),))


def calogero_parameters(N: int, b: float = 1.0, a_c: float = 1.0, g: float = 1.0, printed: bool = False):
    return CrystalParameters(N, 1, b, a_c, (), g, calogero_printed=printed)


@dataclass
class CrystalConfiguration:
    positions: np.ndarray
    relative: np.ndarray
    s: float
    residual: float
    energy: float
    seed: Optional[int] = None
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "positions": self.positions.tolist(),
            "s": self.s,
            "residual": self.residual,
            "energy": self.energy,
            "seed": self.seed,
            "iterations": self.iterations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_csv(self) -> str:
        if self.positions.shape[1] != 1:
            raise ValueError("CSV layout is defined for 1-D chains")
        return ",".join(repr(float(v)) for v in np.sort(self.positions[:, 0])) + "\n"


def _as_positions(positions, d: Optional[int] = None) -> np.ndarray:
    x = np.asarray(positions, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if d is not None and x.shape[1] != d:
        raise ValueError(f"positions have dimension {x.shape[1]}, expected {d}")
    if not np.all(np.isfinite(x)):
        raise ValueError("positions must be finite")
    return x


def collective_coordinates(positions) -> tuple[np.ndarray, float]:
    """Relative coordinates ``y = x - centroid`` and ``s = sum y^2``."""
    x = _as_positions(positions)
    y = x - x.mean(axis=0)
    return y, float(np.sum(y * y))


def _pair_data(x: np.ndarray):
    diff = x[:, None, :] - x[None, :, :]
    r2 = np.sum(diff * diff, axis=-1)
    off = ~np.eye(len(x), dtype=bool)
    return diff, r2, off


def _check_coincident(r2: np.ndarray, off: np.ndarray):
    bad = np.argwhere(off & (r2 == 0.0))
    if bad.size:
        raise SingularityError(tuple(int(v) for v in bad[0]))


def _singular(params: CrystalParameters) -> bool:
    return params.g is not None and not params.calogero_printed or any(nu < 1 and C != 0 for _, nu, C in params.terms)


def potential_terms(positions, params: CrystalParameters) -> tuple[float, dict]:
    """Total ``W`` and the per-term pair sums ``V_{mu nu}`` keyed by ``(mu, nu)``.

    The Calogero contribution (when ``g`` is set) is reported under ``"calogero"``.
    """
    x = _as_positions(positions, params.d)
    y, s = collective_coordinates(x)
    W = 0.5 * params.b * s
    parts = {}
    if len(x) < 2:
        return W, {(mu, nu): 0.0 for mu, nu, _ in params.terms}
    _, r2, off = _pair_data(x)
    if _singular(params):
        _check_coincident(r2, off)
    for mu, nu, C in params.terms:
        V = s ** (-mu) * float(np.sum(r2[off] ** (nu - 1)))
        parts[(mu, nu)] = V
        W += 2 * params.a_c * C * V
    if params.g is not None:
        expo = 1.0 if params.calogero_printed else -1.0
        Vc = params.g * float(np.sum(r2[off] ** expo))
        parts["calogero"] = Vc
        W += params.a_c * Vc
    return float(W), parts


def equilibrium_residual(positions, params: CrystalParameters) -> np.ndarray:
    """``grad W`` at ``positions`` as an ``N x d`` matrix (zero at equilibrium)."""
    x = _as_positions(positions, params.d)
    y, s = collective_coordinates(x)
    grad = params.b * y
    if len(x) < 2:
        return grad
    diff, r2, off = _pair_data(x)
    if _singular(params):
        _check_coincident(r2, off)
    safe = np.where(off, r2, 1.0)
    a = params.a_c
    for mu, nu, C in params.terms:
        if C == 0.0:
            continue
        pairsum = float(np.sum(r2[off] ** (nu - 1)))
        if mu != 0:
            grad = grad - 4 * a * C * mu * s ** (-mu - 1) * pairsum * y
        if nu != 1:
            w = np.where(off, safe ** (nu - 2), 0.0)
            grad = grad + 8 * a * C * (nu - 1) * s ** (-mu) * np.einsum("ab,abj->aj", w, diff)
    if params.g is not None:
        expo = 1.0 if params.calogero_printed else -1.0
        w = np.where(off, safe ** (expo - 1), 0.0)
        grad = grad + 4 * a * params.g * expo * np.einsum("ab,abj->aj", w, diff)
    return grad


def _fd_hessian(x: np.ndarray, params: CrystalParameters, h: float = 1e-6) -> np.ndarray:
    n = x.size
    H = np.empty((n, n))
    scale = max(1.0, float(np.max(np.abs(x))))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h * scale
        gp = equilibrium_residual((x.ravel() + e).reshape(x.shape), params).ravel()
        gm = equilibrium_residual((x.ravel() - e).reshape(x.shape), params).ravel()
        H[:, i] = (gp - gm) / (2 * h * scale)
    return 0.5 * (H + H.T)


def _configuration(x: np.ndarray, params: CrystalParameters, seed=None, iterations=0) -> CrystalConfiguration:
    y, s = collective_coordinates(x)
    W, _ = potential_terms(y, params)
    res = float(np.max(np.abs(equilibrium_residual(y, params))))
    return CrystalConfiguration(y.copy(), y.copy(), s, res, W, seed, iterations)


def solve_equilibrium(
    params: CrystalParameters,
    init,
    tol: float = 1e-10,
    max_iter: int = 500,
    seed: Optional[int] = None,
) -> CrystalConfiguration:
    """Damped Newton descent on ``W`` in relative coordinates.

    The finite-difference Hessian of the analytic gradient is diagonalized and
    near-zero modes (translations, rotations) are dropped. Where the Hessian
    has negative curvature the step falls back to steepest descent. Every step
    is accepted by Armijo backtracking on ``W``. The returned positions are the
    relative coordinates (centroid at the origin).
    """
    x = _as_positions(init, params.d).copy()
    if x.shape[0] != params.N:
        raise ValueError(f"init has {x.shape[0]} ions, expected {params.N}")
    x -= x.mean(axis=0)
    if params.N == 1:
        return _configuration(x, params, seed)
    W, _ = potential_terms(x, params)
    best = _configuration(x, params, seed)
    for it in range(1, max_iter + 1):
        g = equilibrium_residual(x, params)
        gnorm = float(np.max(np.abs(g)))
        if gnorm < tol:
            return _configuration(x, params, seed, it - 1)
        gf = g.ravel()
        H = _fd_hessian(x, params)
        lam, Q = np.linalg.eigh(H)
        cut = 1e-8 * max(1.0, float(np.max(np.abs(lam))))
        keep = np.abs(lam) > cut
        if np.all(lam[keep] > 0):
            coef = Q[:, keep].T @ gf
            step = -(Q[:, keep] @ (coef / lam[keep]))
        else:
            step = -gf / max(1.0, float(np.max(np.abs(lam))))
        step = step.reshape(x.shape)
        step -= step.mean(axis=0)
        slope = float(gf @ step.ravel())
        if slope >= 0:
            step = -g + g.mean(axis=0)
            slope = float(gf @ step.ravel())
        alpha = 1.0
        while True:
            trial = x + alpha * step
            try:
                W_new, _ = potential_terms(trial, params)
            except SingularityError:
                W_new = math.inf
            if np.isfinite(W_new) and W_new <= W + 1e-4 * alpha * slope:
                break
            # near convergence the decrease drops below the roundoff of W;
            # accept then if the gradient shrinks instead
            if np.isfinite(W_new) and abs(W_new - W) <= 1e-13 * max(1.0, abs(W)):
                if np.max(np.abs(equilibrium_residual(trial, params))) < gnorm:
                    break
            alpha *= 0.5
            if alpha < 1e-14:
                break
        if alpha < 1e-14:
            # no descent possible in floating point: accept if already converged
            break
        x, W = trial, W_new
        cfg = _configuration(x, params, seed, it)
        if cfg.residual < best.residual:
            best = cfg
    final = _configuration(x, params, seed, max_iter)
    if final.residual < tol:
        return final
    raise ConvergenceError(f"no equilibrium within {max_iter} iterations (residual {best.residual:.2e})", best)


def multistart(
    params: CrystalParameters,
    n_starts: int,
    seed: int = 0,
    scale: float = 2.0,
    tol: float = 1e-10,
    workers: int = 1,
) -> list:
    """Solve from ``n_starts`` uniform random initial configurations in ``[-scale, scale]^d``.

    Initial configurations are drawn up front from one seeded generator, so
    results are ordered by start index and independent of ``workers``.
    """
    rng = np.random.default_rng(seed)
    inits = [rng.uniform(-scale, scale, size=(params.N, params.d)) for _ in range(n_starts)]

    def run(x0):
        return solve_equilibrium(params, x0, tol=tol, seed=seed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, inits))
    return [run(x0) for x0 in inits]


def hermite_zeros(N: int) -> np.ndarray:
    """Zeros of the physicists' Hermite polynomial ``H_N``, ascending.

    Eigenvalues of the symmetric Jacobi matrix with off-diagonal ``sqrt(k/2)``.
    """
    N = int(N)
    if N < 1:
        raise ValueError("N must be at least 1")
    if N > HERMITE_MAX_N:
        raise ValueError(f"N = {N} exceeds the supported maximum {HERMITE_MAX_N}")
    if N == 1:
        return np.zeros(1)
    off = np.sqrt(np.arange(1, N) / 2.0)
    z = eigh_tridiagonal(np.zeros(N), off, eigvals_only=True)
    z = np.sort(z)
    # enforce exact parity symmetry
    z = 0.5 * (z - z[::-1])
    return z


def calogero_scale(params: CrystalParameters) -> float:
    """``kappa`` with ``xi = kappa x``; equilibria need ``kappa^4 = b / (2 a_c g)``."""
    if params.g is None or params.g <= 0:
        raise ValueError("a positive Calogero coupling g is required")
    return (params.b / (2.0 * params.a_c * params.g)) ** 0.25


@dataclass
class CalogeroResult:
    configuration: CrystalConfiguration
    xi: np.ndarray
    kappa: float
    consistent: bool
    message: str = ""

    def to_dict(self) -> dict:
        out = self.configuration.to_dict()
        out.update(xi=self.xi.tolist(), kappa=self.kappa, consistent=self.consistent, message=self.message)
        return out


def calogero_equilibrium(
    params: CrystalParameters,
    kappa: Optional[float] = None,
    tol: float = 1e-8,
) -> CalogeroResult:
    """Place ions at ``x = xi / kappa`` with ``xi`` the zeros of ``H_N`` and check the residual.

    A residual above ``tol`` (wrong ``kappa`` or the printed ``+2`` exponent)
    is reported through ``consistent = False`` rather than raised.
    """
    if params.d != 1 or params.g is None:
        raise ValueError("Calogero equilibria need d = 1 and a coupling g")
    xi = hermite_zeros(params.N)
    if kappa is None:
        kappa = calogero_scale(params)
    x = (xi / kappa)[:, None]
    y, s = collective_coordinates(x)
    res = float(np.max(np.abs(equilibrium_residual(x, params)))) if params.N > 1 else 0.0
    W, _ = potential_terms(x, params)
    cfg = CrystalConfiguration(x, y, s, res, W)
    ok = res < tol
    msg = "" if ok else f"Hermite-zero configuration is not an equilibrium (residual {res:.3e})"
    return CalogeroResult(cfg, xi, float(kappa), ok, msg)
