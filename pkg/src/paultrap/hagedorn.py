"""Semiclassical Gaussian-Hermite wave packets.

A packet ``Phi_k(A, B, q, p; x)`` is a complex Gaussian with width matrices
``A``, ``B`` centred at phase-space point ``(q, p)``, multiplied by a
multivariate Hermite polynomial of multi-index ``k``. Propagation moves
``(q, p)`` on the classical trajectory, integrates the action ``S`` and evolves

    A' = (i/m) B,    B' = i V_H(t, q(t)) A.

For potentials of degree at most two, ``exp(i S / hbar) Phi_k`` is then an exact
solution of the Schrodinger equation; otherwise the error is ``O(t sqrt(hbar))``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .rk import IntegrationError, integrate

__all__ = [
    "AccuracyError",
    "DecompositionError",
    "EscapeError",
    "InvariantError",
    "PacketState",
    "PacketTrace",
    "PotentialModel",
    "Trajectory",
    "anharmonic_potential",
    "check_potential",
    "classical_trajectory",
    "evaluate_packet",
    "free_potential",
    "harmonic_potential",
    "invariant_residuals",
    "multivariate_hermite",
    "packet_wavefunction",
    "paul_potential",
    "polar_abs",
    "propagate_AB",
    "propagate_packet",
    "quadratic_potential",
    "raising_ladder",
]

HAGEDORN_RTOL = 1e-10
HAGEDORN_ATOL = 1e-12
EIGEN_FLOOR = 1e-14


class DecompositionError(ValueError):
    """``A`` is singular, so ``|A| = sqrt(A^dagger A)`` has no positive inverse."""


class InvariantError(ValueError):
    """Packet matrices violate ``B A^-1`` symmetry or ``A^dagger B + B^dagger A = 2 I``."""


class AccuracyError(RuntimeError):
    """Matrix invariants drifted during propagation; retry with a smaller tolerance."""


class EscapeError(IntegrationError):
    """Classical trajectory left the configured bounding region."""


# --------------------------------------------------------------------------- potentials


@dataclass
class PotentialModel:
    """Potential ``V(t, x)`` with gradient and Hessian.

    ``V`` is vectorized over leading axes of ``x`` (shape ``(..., n)``);
    ``gradient`` and ``hessian`` take a single point of shape ``(n,)``.
    """

    n: int
    V: Callable
    gradient: Callable
    hessian: Callable
    quadratic: bool = False
    name: str = "custom"


def quadratic_potential(K, m: float = 1.0, name: str = "quadratic") -> PotentialModel:
    """``V = (1/2) x^T K x`` for a constant symmetric matrix ``K`` (already mass-weighted)."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n = K.shape[0]
    return PotentialModel(
        n,
        lambda t, x: 0.5 * np.einsum("...i,ij,...j->...", x, K, x),
        lambda t, x: K @ np.asarray(x, dtype=float),
        lambda t, x: K.copy(),
        quadratic=True,
        name=name,
    )


def harmonic_potential(omega: float, m: float = 1.0, n: int = 1) -> PotentialModel:
    """Isotropic ``V = (1/2) m omega^2 |x|^2``."""
    return quadratic_potential(m * omega**2 * np.eye(n), m, name="harmonic")


def free_potential(n: int = 1) -> PotentialModel:
    return quadratic_potential(np.zeros((n, n)), name="free")


def paul_potential(params, m: float = 1.0, n: int = 1) -> PotentialModel:
    """Time-dependent quadratic Paul-trap potential ``V = (1/2) m W(t) |x|^2``."""
    from .hill import hill_coefficient

    eye = np.eye(n)
    return PotentialModel(
        n,
        lambda t, x: 0.5 * m * float(hill_coefficient(t, params)) * np.sum(np.asarray(x) ** 2, axis=-1),
        lambda t, x: m * float(hill_coefficient(t, params)) * np.asarray(x, dtype=float),
        lambda t, x: m * float(hill_coefficient(t, params)) * eye,
        quadratic=True,
        name="paul",
    )


def anharmonic_potential(omega: float = 1.0, quartic: float = 0.1, m: float = 1.0) -> PotentialModel:
    """One-dimensional ``V = (1/2) m omega^2 x^2 + quartic x^4``."""
    k = m * omega**2
    return PotentialModel(
        1,
        lambda t, x: 0.5 * k * np.asarray(x)[..., 0] ** 2 + quartic * np.asarray(x)[..., 0] ** 4,
        lambda t, x: np.array([k * x[0] + 4 * quartic * x[0] ** 3]),
        lambda t, x: np.array([[k + 12 * quartic * x[0] ** 2]]),
        quadratic=quartic == 0,
        name="anharmonic",
    )


def check_potential(
    model: PotentialModel,
    n_probes: int = 20,
    seed: int = 0,
    scale: float = 1.0,
    t_range: tuple = (0.0, 1.0),
    rel_tol: float = 1e-6,
) -> None:
    """Verify gradient and Hessian against central differences at random probes.

    Raises ValueError naming the first inconsistent probe.
    """
    rng = np.random.default_rng(seed)
    n = model.n
    for _ in range(n_probes):
        t = rng.uniform(*t_range)
        x = rng.normal(scale=scale, size=n)
        H = np.asarray(model.hessian(t, x), dtype=float)
        if np.max(np.abs(H - H.T)) > 1e-12 * max(1.0, np.max(np.abs(H))):
            raise ValueError(f"{model.name}: Hessian not symmetric at x = {x}")
        g = np.asarray(model.gradient(t, x), dtype=float)
        h = 1e-5 * max(1.0, float(np.max(np.abs(x))))
        g_fd = np.empty(n)
        H_fd = np.empty((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            g_fd[i] = (model.V(t, x + e) - model.V(t, x - e)) / (2 * h)
            H_fd[:, i] = (np.asarray(model.gradient(t, x + e)) - np.asarray(model.gradient(t, x - e))) / (2 * h)
        gs = max(1.0, float(np.max(np.abs(g))))
        if np.max(np.abs(g - g_fd)) > rel_tol * gs:
            raise ValueError(f"{model.name}: gradient disagrees with finite differences at x = {x}")
        Hs = max(1.0, float(np.max(np.abs(H))))
        if np.max(np.abs(H - H_fd)) > rel_tol * Hs:
            raise ValueError(f"{model.name}: Hessian disagrees with finite differences at x = {x}")


# --------------------------------------------------------------------------- packet data


def polar_abs(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(|A|, |A|^-1)`` with ``|A| = sqrt(A^dagger A)`` on the positive branch."""
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    evals, evecs = np.linalg.eigh(A.conj().T @ A)
    if np.min(evals) < EIGEN_FLOOR:
        raise DecompositionError(f"A^dagger A has eigenvalue {np.min(evals):.3e}; A is (numerically) singular")
    root = np.sqrt(evals)
    absA = (evecs * root) @ evecs.conj().T
    inv = (evecs / root) @ evecs.conj().T
    return absA, inv


def invariant_residuals(A: np.ndarray, B: np.ndarray) -> tuple[float, float]:
    """Max-abs residuals of ``B A^-1 = (B A^-1)^T`` and ``A^dagger B + B^dagger A = 2 I``."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    BAinv = B @ np.linalg.inv(A)
    sym = float(np.max(np.abs(BAinv - BAinv.T)))
    norm = float(np.max(np.abs(A.conj().T @ B + B.conj().T @ A - 2 * np.eye(A.shape[0]))))
    return sym, norm


@dataclass
class PacketState:
    """Packet parameters; ``log_det_A`` carries the continuous branch of ``log det A``."""

    A: np.ndarray
    B: np.ndarray
    q: np.ndarray
    p: np.ndarray
    S: float = 0.0
    hbar: float = 1.0
    k: tuple = ()
    m: float = 1.0
    t: float = 0.0
    log_det_A: Optional[complex] = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=complex))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=complex))
        self.q = np.atleast_1d(np.asarray(self.q, dtype=float))
        self.p = np.atleast_1d(np.asarray(self.p, dtype=float))
        n = self.q.size
        if not self.k:
            self.k = (0,) * n
        self.k = tuple(int(v) for v in self.k)
        if self.A.shape != (n, n) or self.B.shape != (n, n) or self.p.size != n or len(self.k) != n:
            raise ValueError("inconsistent packet dimensions")
        if any(v < 0 for v in self.k):
            raise ValueError("multi-index entries must be non-negative")
        if self.hbar <= 0 or self.m <= 0:
            raise ValueError("hbar and m must be positive")
        if self.log_det_A is None:
            self.log_det_A = complex(np.log(complex(np.linalg.det(self.A))))

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def order(self) -> int:
        return sum(self.k)

    @classmethod
    def standard(cls, q, p, hbar: float = 1.0, k=(), m: float = 1.0, width: float = 1.0, t: float = 0.0):
        """Isotropic packet ``A = width I``, ``B = I / width`` (real Gaussian)."""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        n = q.size
        return cls(width * np.eye(n), np.eye(n) / width, q, p, 0.0, hbar, tuple(k), m, t)

    def residuals(self) -> tuple[float, float]:
        return invariant_residuals(self.A, self.B)

    def validate(self, tol: float = 1e-10) -> None:
        sym, norm = self.residuals()
        if sym > tol or norm > tol:
            raise InvariantError(f"packet invariants violated: symmetry {sym:.2e}, normalization {norm:.2e}")

    def with_k(self, k) -> "PacketState":
        return replace(self, k=tuple(k))

    def to_record(self) -> dict:
        sym, norm = self.residuals()
        return {
            "t": float(self.t),
            "q": [float(v) for v in self.q],
            "p": [float(v) for v in self.p],
            "S": float(self.S),
            "A_re": [float(v) for v in self.A.real.ravel()],
            "A_im": [float(v) for v in self.A.imag.ravel()],
            "B_re": [float(v) for v in self.B.real.ravel()],
            "B_im": [float(v) for v in self.B.imag.ravel()],
            "log_det_A": [float(self.log_det_A.real), float(self.log_det_A.imag)],
            "symmetry_residual": sym,
            "normalization_residual": norm,
        }


# --------------------------------------------------------------------------- Hermite factor


def _direction_vectors(A: np.ndarray, k: Sequence[int]) -> list:
    """``v_s = A (A^dagger A)^(-1/2) e_j``, direction ``j`` repeated ``k_j`` times in coordinate order."""
    _, inv_abs = polar_abs(A)
    U = np.atleast_2d(A) @ inv_abs
    vs = []
    for j, kj in enumerate(k):
        vs.extend([U[:, j]] * kj)
    return vs


def multivariate_hermite(A, k, x, conjugate_pairing: bool = True):
    """Matrix-parameterized Hermite polynomial ``H_k(A; x)``.

    Built by the rank recursion

        H_m(v_1..v_m; x) = 2 <v_m, x> H_{m-1}(v_1..v_{m-1}; x)
                           - 2 sum_i (v_m, v_i) H_{m-2}(v_1..v_{m-1} without v_i; x)

    with ``<v, x> = v^dagger x``. The pairing ``(v_m, v_i)`` is
    ``<v_m, conj(v_i)>`` by default, which makes the packets orthonormal for
    complex ``A``; ``conjugate_pairing=False`` uses ``<v_m, v_i>`` instead
    (orthonormal only when ``A`` is real up to a unitary column rotation).

    ``x`` has shape ``(..., n)``; the result has shape ``x.shape[:-1]``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    k = tuple(int(v) for v in k)
    x = np.asarray(x)
    if x.shape[-1] != A.shape[0] or len(k) != A.shape[0]:
        raise ValueError("dimension mismatch between A, k and x")
    vs = _direction_vectors(A, k)
    m = len(vs)
    if m == 0:
        return np.ones(x.shape[:-1], dtype=complex)[()]
    proj = [np.tensordot(x, v.conj(), axes=([-1], [0])) for v in vs]
    pair = np.empty((m, m), dtype=complex)
    for a in range(m):
        for b in range(m):
            other = vs[b].conj() if conjugate_pairing else vs[b]
            pair[a, b] = np.vdot(vs[a], other)

    @lru_cache(maxsize=None)
    def H(idx: tuple):
        if not idx:
            return 1.0
        last = idx[-1]
        rest = idx[:-1]
        out = 2.0 * proj[last] * H(rest)
        for pos, i in enumerate(rest):
            out = out - 2.0 * pair[last, i] * H(rest[:pos] + rest[pos + 1:])
        return out

    return np.asarray(H(tuple(range(m))))[()]


def evaluate_packet(state: PacketState, x, check: bool = True, conjugate_pairing: bool = True):
    """``Phi_k(A, B, q, p; x)`` at points ``x`` of shape ``(..., n)`` (the action phase is not included)."""
    if check:
        state.validate()
    x = np.asarray(x, dtype=float)
    n = state.n
    if x.ndim == 0 or x.shape[-1] != n:
        x = x[..., None] if n == 1 else x
    y = x - state.q
    hbar = state.hbar
    kfact = math.prod(math.factorial(v) for v in state.k)
    pref = 2.0 ** (-state.order / 2) * (math.pi * hbar) ** (-n / 4) / math.sqrt(kfact)
    pref = pref * np.exp(-0.5 * state.log_det_A)
    _, inv_abs = polar_abs(state.A)
    arg = np.tensordot(y, inv_abs.T, axes=([-1], [0])) / math.sqrt(hbar)
    herm = multivariate_hermite(state.A, state.k, arg, conjugate_pairing)
    BAinv = state.B @ np.linalg.inv(state.A)
    quad = np.einsum("...i,ij,...j->...", y, BAinv, y)
    lin = np.tensordot(y, state.p, axes=([-1], [0]))
    return pref * herm * np.exp(-quad / (2 * hbar) + 1j * lin / hbar)


def packet_wavefunction(state: PacketState, x, check: bool = True):
    """``exp(i S / hbar) Phi_k``: the semiclassical approximation of the evolved wavefunction."""
    return np.exp(1j * state.S / state.hbar) * evaluate_packet(state, x, check)


def raising_ladder(state: PacketState, x, k_max) -> dict:
    """All packets with ``k <= k_max`` (entrywise) via the raising-operator recursion.

    ``Phi_{k+e_j} = (k_j + 1)^(-1/2) [ sqrt(2/hbar) (A^-1 (x - q))_j Phi_k
                     - sum_l sqrt(k_l) (A^-1 conj(A))_{jl} Phi_{k-e_l} ]``

    Independent of the rank recursion in :func:`multivariate_hermite`; used as
    a cross-check.
    """
    x = np.asarray(x, dtype=float)
    n = state.n
    if x.shape[-1] != n:
        x = x[..., None]
    y = x - state.q
    Ainv = np.linalg.inv(state.A)
    z = np.tensordot(y, Ainv.T, axes=([-1], [0])) * math.sqrt(2.0 / state.hbar)
    M = Ainv @ state.A.conj()
    ground = replace(state, k=(0,) * n)
    out = {(0,) * n: evaluate_packet(ground, x, check=False)}
    k_max = tuple(k_max)
    for total in range(1, sum(k_max) + 1):
        for idx in np.ndindex(*(v + 1 for v in k_max)):
            if sum(idx) != total:
                continue
            j = next(i for i, v in enumerate(idx) if v > 0)
            base = list(idx)
            base[j] -= 1
            base = tuple(base)
            val = z[..., j] * out[base]
            for l in range(n):
                if base[l] > 0:
                    lower = list(base)
                    lower[l] -= 1
                    val = val - math.sqrt(base[l]) * M[j, l] * out[tuple(lower)]
            out[idx] = val / math.sqrt(base[j] + 1)
    return out


# --------------------------------------------------------------------------- propagation


@dataclass
class Trajectory:
    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    S: np.ndarray
    dense: object = field(default=None, repr=False)

    def at(self, t: float) -> tuple:
        y = self.dense(t)
        n = (y.size - 1) // 2
        return y[:n], y[n:2 * n], float(y[-1])


def _escape_guard(n: int, bound: float):
    def guard(t, y):
        if not np.all(np.isfinite(y)) or np.max(np.abs(np.real(y[:n]))) > bound:
            raise EscapeError(f"trajectory left |q| <= {bound}", t)

    return guard


def classical_trajectory(
    V: PotentialModel,
    q0,
    p0,
    t_end: float,
    tol: float = HAGEDORN_RTOL,
    m: float = 1.0,
    t0: float = 0.0,
    t_eval=None,
    escape_bound: float = 1e6,
) -> Trajectory:
    """``q' = p/m``, ``p' = -grad V(t, q)`` with the action integrated alongside.

    The action integrand is the Lagrangian ``|p|^2 / 2m - V(t, q)``.
    """
    q0 = np.atleast_1d(np.asarray(q0, dtype=float))
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    n = q0.size

    def rhs(t, y):
        q, p = y[:n], y[n:2 * n]
        out = np.empty_like(y)
        out[:n] = p / m
        out[n:2 * n] = -np.asarray(V.gradient(t, q))
        out[-1] = p @ p / (2 * m) - float(V.V(t, q))
        return out

    y0 = np.concatenate([q0, p0, [0.0]])
    res = integrate(rhs, (t0, t_end), y0, rtol=tol, atol=tol / 100, t_eval=t_eval,
                    dense=t_end >= t0, on_step=_escape_guard(n, escape_bound))
    return Trajectory(res.t, res.y[:, :n], res.y[:, n:2 * n], res.y[:, -1], res.dense)


def propagate_AB(
    V: PotentialModel,
    traj: Trajectory,
    A0,
    B0,
    tol: float = HAGEDORN_RTOL,
    m: float = 1.0,
    t_eval=None,
    drift_tol: float = 1e-7,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integrate ``A' = (i/m) B``, ``B' = i V_H(t, q(t)) A`` along a computed trajectory.

    Returns ``(times, A(t), B(t))``; raises AccuracyError when the matrix
    invariants drift by more than ``drift_tol``.
    """
    A0 = np.atleast_2d(np.asarray(A0, dtype=complex))
    B0 = np.atleast_2d(np.asarray(B0, dtype=complex))
    sym, norm = invariant_residuals(A0, B0)
    if max(sym, norm) > 1e-10:
        raise InvariantError("initial A, B violate the packet invariants")
    n = A0.shape[0]

    def rhs(t, y):
        A, B = y[0], y[1]
        q = traj.at(t)[0]
        out = np.empty_like(y)
        out[0] = 1j * B / m
        out[1] = 1j * np.asarray(V.hessian(t, q)) @ A
        return out

    t0, t1 = float(traj.t[0]), float(traj.t[-1])
    res = integrate(rhs, (t0, t1), np.stack([A0, B0]), rtol=tol, atol=tol / 100, t_eval=t_eval)
    As, Bs = res.y[:, 0], res.y[:, 1]
    worst = max(max(invariant_residuals(A, B)) for A, B in zip(As, Bs))
    if worst > drift_tol:
        raise AccuracyError(f"A/B invariants drifted by {worst:.2e}; use a smaller tolerance")
    return res.t, As, Bs


@dataclass
class PacketTrace:
    states: list

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def final(self) -> PacketState:
        return self.states[-1]

    def max_residuals(self) -> tuple[float, float]:
        res = np.array([s.residuals() for s in self.states])
        return float(res[:, 0].max()), float(res[:, 1].max())

    def phases(self) -> np.ndarray:
        """Semiclassical phase factors ``exp(i S / hbar)``."""
        return np.array([np.exp(1j * s.S / s.hbar) for s in self.states])

    def to_jsonl(self) -> str:
        return "".join(json.dumps(s.to_record()) + "\n" for s in self.states)


def _pack(state: PacketState) -> np.ndarray:
    n = state.n
    return np.concatenate([
        state.q.astype(complex), state.p.astype(complex), [complex(state.S)],
        state.A.ravel(), state.B.ravel(), [complex(state.log_det_A)],
    ])


def _unpack(y: np.ndarray, n: int):
    q = y[:n].real
    p = y[n:2 * n].real
    S = y[2 * n].real
    A = y[2 * n + 1:2 * n + 1 + n * n].reshape(n, n)
    B = y[2 * n + 1 + n * n:2 * n + 1 + 2 * n * n].reshape(n, n)
    return q, p, S, A, B, y[-1]


def propagate_packet(
    V: PotentialModel,
    state0: PacketState,
    t_end: float,
    tol: float = HAGEDORN_RTOL,
    t_eval=None,
    escape_bound: float = 1e6,
    invariant_tol: float = 1e-7,
) -> PacketTrace:
    """Propagate a packet from ``state0.t`` to ``t_end`` as one coupled ODE system.

    The state vector holds ``q, p, S, A, B`` and ``log det A``; the latter
    follows ``d/dt log det A = tr(A^-1 A')`` so ``(det A)^(-1/2)`` stays on a
    continuous branch. Returns the packet at each of ``t_eval`` (default: the
    start and end times).
    """
    state0.validate()
    n = state0.n
    m = state0.m

    def rhs(t, y):
        q, p, S, A, B, _ = _unpack(y, n)
        out = np.empty_like(y)
        out[:n] = p / m
        out[n:2 * n] = -np.asarray(V.gradient(t, q))
        out[2 * n] = p @ p / (2 * m) - float(V.V(t, q))
        Adot = 1j * B / m
        Bdot = 1j * np.asarray(V.hessian(t, q)) @ A
        out[2 * n + 1:2 * n + 1 + n * n] = Adot.ravel()
        out[2 * n + 1 + n * n:2 * n + 1 + 2 * n * n] = Bdot.ravel()
        out[-1] = np.trace(np.linalg.solve(A, Adot))
        return out

    if t_eval is None:
        t_eval = [state0.t, t_end]
    res = integrate(rhs, (state0.t, t_end), _pack(state0), rtol=tol, atol=tol / 100,
                    t_eval=t_eval, on_step=_escape_guard(n, escape_bound))
    states = []
    for t, y in zip(res.t, res.y):
        q, p, S, A, B, ld = _unpack(y, n)
        st = PacketState(A, B, q, p, float(S), state0.hbar, state0.k, m, float(t), complex(ld))
        states.append(st)
    trace = PacketTrace(states)
    worst = max(trace.max_residuals())
    if worst > invariant_tol:
        raise AccuracyError(f"packet invariants drifted by {worst:.2e}; use a smaller tolerance")
    return trace
