"""Hill equation, monodromy matrices and Floquet exponents.

The coordinate equation is ``u'' + W(t) u = 0`` with a T-periodic coefficient
``W``. Two coefficient modes are supported:

* quadrupole: ``W(t) = (Omega**2 / 4) * (a + 2 q_m cos(Omega t))`` (Mathieu form)
* generalized: ``W(t) = lam(t) - 2 c'(t) - 4 c(t)**2`` with ``lam`` and ``c``
  given as uniform samples over one period and trigonometrically interpolated.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .rk import DenseSolution, IntegrationError, integrate

__all__ = [
    "DEFAULT_TOL",
    "MARGINAL_BAND",
    "BranchError",
    "FloquetResult",
    "HillParameters",
    "IntegrationError",
    "QuasienergySpectrum",
    "ScalingTrace",
    "SolutionTrace",
    "Stability",
    "StabilityGrid",
    "bisect_stability_edge",
    "fit_ground_coefficient",
    "floquet_omega",
    "hill_coefficient",
    "integrate_hill",
    "integrate_hill_many",
    "monodromy",
    "quasienergy_spectrum",
    "scaling_parameters",
    "spectral_mu",
    "stability_scan",
]

# rtol for the Hill integrations; atol is DEFAULT_TOL / 100
DEFAULT_TOL = 1e-11
MARGINAL_BAND = 1e-8


class BranchError(ValueError):
    """The complex solution passes through zero, so its phase is undefined."""

    def __init__(self, time: float):
        super().__init__(f"solution crosses zero near t = {time!r}; phase branch undefined")
        self.time = time


class _TrigSeries:
    """Trigonometric interpolant of uniform samples on one period."""

    def __init__(self, samples, Omega: float):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("periodic samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("periodic samples must be finite")
        n = samples.size
        coef = np.fft.rfft(samples) / n
        weights = np.full(coef.size, 2.0)
        weights[0] = 1.0
        if n % 2 == 0 and coef.size > 1:
            weights[-1] = 1.0
        self.coef = coef * weights
        self.k = np.arange(coef.size) * Omega

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        phase = np.exp(1j * np.multiply.outer(t, self.k))
        return np.real(phase @ self.coef)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        phase = np.exp(1j * np.multiply.outer(t, self.k))
        return np.real(phase @ (1j * self.k * self.coef))


@dataclass(frozen=True, eq=False)
class HillParameters:
    """Drive description for the Hill equation.

    ``lam`` and ``c`` switch on the generalized mode; they are samples at
    ``t_k = k T / len(samples)`` over one period ``T = 2 pi / Omega``. ``c``
    may be omitted in generalized mode (treated as zero).
    """

    a: float = 0.0
    q_m: float = 0.0
    Omega: float = 2.0
    lam: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None
    _lam_series: Optional[_TrigSeries] = field(default=None, init=False, repr=False)
    _c_series: Optional[_TrigSeries] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not (math.isfinite(self.Omega) and self.Omega > 0):
            raise ValueError(f"Omega must be positive and finite, got {self.Omega}")
        if not (math.isfinite(self.a) and math.isfinite(self.q_m)):
            raise ValueError("a and q_m must be finite")
        if self.lam is None and self.c is not None:
            raise ValueError("c samples require lam samples (generalized mode)")
        if self.lam is not None:
            object.__setattr__(self, "_lam_series", _TrigSeries(self.lam, self.Omega))
            c = np.zeros(1) if self.c is None else self.c
            object.__setattr__(self, "_c_series", _TrigSeries(c, self.Omega))

    @property
    def mode(self) -> str:
        return "quadrupole" if self.lam is None else "generalized"

    @property
    def period(self) -> float:
        return 2 * math.pi / self.Omega

    def c_function(self) -> Callable:
        """The control function ``c(t)`` (identically zero in quadrupole mode)."""
        if self._c_series is None:
            return lambda t: np.zeros_like(np.asarray(t, dtype=float))
        return self._c_series

    def to_dict(self) -> dict:
        d = {"mode": self.mode, "a": self.a, "q_m": self.q_m, "Omega": self.Omega}
        if self.lam is not None:
            d["lam"] = [float(v) for v in np.asarray(self.lam)]
            d["c"] = None if self.c is None else [float(v) for v in np.asarray(self.c)]
        return d


def hill_coefficient(t, params: HillParameters):
    """Coefficient ``W(t)`` of the Hill equation (scalar or array ``t``)."""
    if params.mode == "quadrupole":
        Om = params.Omega
        return (Om * Om / 4.0) * (params.a + 2.0 * params.q_m * np.cos(Om * np.asarray(t, dtype=float)))
    c = params._c_series
    return params._lam_series(t) - 2.0 * c.derivative(t) - 4.0 * c(t) ** 2


def _coefficient_fn(params: HillParameters):
    """Fast scalar-t evaluator; in quadrupole mode a and q_m may be arrays."""
    if params.mode == "quadrupole":
        Om = params.Omega
        pref = Om * Om / 4.0
        a, q2 = params.a, 2.0 * params.q_m

        def W(t):
            return pref * (a + q2 * math.cos(Om * t))

        return W
    return lambda t: float(hill_coefficient(t, params))


def _batch_coefficient_fn(Omega: float, a: np.ndarray, q: np.ndarray):
    pref = Omega * Omega / 4.0
    a = np.asarray(a, dtype=float)
    q2 = 2.0 * np.asarray(q, dtype=float)

    def W(t):
        return pref * (a + q2 * math.cos(Omega * t))

    return W


def _hill_rhs(W):
    def rhs(t, y):
        w = W(t)
        if not np.all(np.isfinite(w)):
            raise IntegrationError("Hill coefficient is not finite", t)
        out = np.empty_like(y)
        out[0] = y[1]
        out[1] = -w * y[0]
        return out

    return rhs


@dataclass
class SolutionTrace:
    """Sampled complex solution ``u`` with ``u(t0) = 1``, ``u'(t0) = i omega``."""

    times: np.ndarray
    u: np.ndarray
    u_dot: np.ndarray
    omega: float
    wronskian_drift: float
    dense: Optional[DenseSolution] = None
    params: Optional[HillParameters] = None
    _phase: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def at(self, t: float) -> tuple[complex, complex]:
        """``(u(t), u'(t))`` from the integrator's dense output."""
        if self.dense is None:
            raise ValueError("trace was integrated without dense output")
        y = self.dense(t)
        return complex(y[0]), complex(y[1])

    def _break_phases(self) -> np.ndarray:
        if self._phase is None:
            ub = np.array([self.dense(tb)[0] for tb in self.dense.breaks])
            mags = np.abs(ub)
            if np.any(mags == 0):
                raise BranchError(float(self.dense.breaks[int(np.argmin(mags))]))
            self._phase = np.unwrap(np.angle(ub))
        return self._phase

    def phase(self, t: float) -> float:
        """Continuously unwound ``arg u(t)`` with ``arg u(t0) = 0``."""
        if self.dense is None:
            raise ValueError("trace was integrated without dense output")
        breaks = self.dense.breaks
        i = int(np.clip(np.searchsorted(breaks, t, side="right") - 1, 0, len(breaks) - 1))
        ph = self._break_phases()
        ub = self.dense(breaks[i])[0]
        ut = self.at(t)[0]
        if ut == 0:
            raise BranchError(float(t))
        return float(ph[i] + np.angle(ut / ub))

    @property
    def t_end(self) -> float:
        return float(self.times[-1])


def _wronskian_drift(u, ud, omega):
    w = np.conj(u) * ud - np.conj(ud) * u
    return float(np.max(np.abs(w - 2j * omega))) if len(u) else 0.0


def integrate_hill(
    params: HillParameters,
    omega: float,
    t_end: float,
    tol: float = DEFAULT_TOL,
    t_eval=None,
    dense: bool = True,
    t0: float = 0.0,
) -> SolutionTrace:
    """Integrate ``u'' + W(t) u = 0`` from ``u = 1``, ``u' = i omega``.

    ``tol`` is the relative local-error tolerance (absolute is ``tol / 100``).
    Without ``t_eval`` the trace holds the accepted step points.
    """
    if not math.isfinite(omega):
        raise ValueError("omega must be real and finite")
    if tol <= 0:
        raise ValueError("tol must be positive")
    rhs = _hill_rhs(_coefficient_fn(params))
    res = integrate(rhs, (t0, t_end), np.array([1.0, 1j * omega]), rtol=tol, atol=tol / 100,
                    t_eval=t_eval, dense=dense)
    u, ud = res.y[:, 0], res.y[:, 1]
    return SolutionTrace(np.asarray(res.t), u, ud, float(omega), _wronskian_drift(u, ud, omega),
                         dense=res.dense, params=params)


def integrate_hill_many(
    a: Sequence[float],
    q_m: Sequence[float],
    Omega: float,
    omegas: Sequence[float],
    t_end: float,
    tol: float = DEFAULT_TOL,
) -> list[SolutionTrace]:
    """Quadrupole-mode integrations of several drives on one shared step sequence.

    The error control is the max over all members, so every member is held
    to at least the tolerance it would get alone. Traces hold step points only.
    """
    a = np.asarray(a, dtype=float)
    q_m = np.asarray(q_m, dtype=float)
    omegas = np.asarray(omegas, dtype=float)
    y0 = np.array([np.ones(len(a)), 1j * omegas])
    rhs = _hill_rhs(_batch_coefficient_fn(Omega, a, q_m))
    res = integrate(rhs, (0.0, t_end), y0, rtol=tol, atol=tol / 100)
    traces = []
    for i in range(len(a)):
        u, ud = res.y[:, 0, i], res.y[:, 1, i]
        p = HillParameters(float(a[i]), float(q_m[i]), Omega)
        traces.append(SolutionTrace(np.asarray(res.t), u, ud, float(omegas[i]),
                                    _wronskian_drift(u, ud, omegas[i]), params=p))
    return traces


class Stability(str, enum.Enum):
    STABLE = "stable"
    MARGINAL = "marginal"
    UNSTABLE = "unstable"
    FAILED = "failed"


@dataclass
class FloquetResult:
    monodromy: np.ndarray
    trace: float
    stability: Stability
    mu: float
    period: float

    @property
    def determinant(self) -> float:
        return float(np.linalg.det(self.monodromy))

    def to_dict(self) -> dict:
        return {
            "monodromy": [[float(v) for v in row] for row in self.monodromy],
            "trace": float(self.trace),
            "determinant": self.determinant,
            "mu": float(self.mu),
            "class": self.stability.value,
            "period": float(self.period),
        }


def _winding(Ys: np.ndarray, v: np.ndarray) -> float:
    """Unwound phase change of the complex solution ``Y(t) v`` over the samples."""
    y = Ys[:, 0, :] @ v
    if np.any(y == 0):
        return float("nan")
    steps = np.angle(y[1:] / y[:-1])
    if np.any(np.abs(steps) > 0.5 * math.pi):
        return float("nan")
    return float(np.sum(steps))


def _classify(M: np.ndarray, T: float, Ys: Optional[np.ndarray] = None) -> FloquetResult:
    """Classify a monodromy matrix; ``Ys`` are fundamental matrices sampled over the period.

    For stable and marginal points ``mu T`` is the phase advance per period of
    the positively winding Floquet solution. The multiplier fixes it modulo
    2 pi and the sampled winding picks the branch, which reduces to the
    principal arccos inside the first stability zone.
    """
    tr = float(M[0, 0] + M[1, 1])
    excess = abs(tr) - 2.0
    if excess > MARGINAL_BAND:
        lam_max = abs(tr) / 2.0 + math.sqrt(tr * tr / 4.0 - 1.0)
        return FloquetResult(np.array(M, dtype=float), tr, Stability.UNSTABLE, math.log(lam_max) / T, T)
    if abs(excess) <= MARGINAL_BAND:
        cls = Stability.MARGINAL
        base = 0.0 if tr > 0 else math.pi
        v = np.array([1.0, 1j * math.sqrt(abs(M[1, 0] / M[0, 1]))]) if M[0, 1] != 0 and M[1, 0] != 0 else np.array([1.0, 1j])
        period_of_branch = math.pi
    else:
        cls = Stability.STABLE
        phi = math.acos(tr / 2.0)
        # the eigenvector for exp(+i phi) winds positively iff M[0, 1] > 0
        sign = -1.0 if M[0, 1] < 0 else 1.0
        base = sign * phi
        lam = complex(math.cos(base), math.sin(base))
        if M[0, 1] != 0:
            v = np.array([M[0, 1], lam - M[0, 0]], dtype=complex)
        else:
            v = np.array([lam - M[1, 1], M[1, 0]], dtype=complex)
        period_of_branch = 2 * math.pi
    mu_T = base
    if Ys is not None:
        theta = _winding(Ys, v)
        if math.isfinite(theta):
            if cls is Stability.MARGINAL:
                mu_T = math.pi * round(theta / math.pi)
            else:
                mu_T = base + period_of_branch * round((theta - base) / period_of_branch)
    return FloquetResult(np.array(M, dtype=float), tr, cls, mu_T / T, T)


def monodromy(params: HillParameters, tol: float = DEFAULT_TOL, max_steps: int = 10_000_000) -> FloquetResult:
    """Monodromy matrix over one period and its Floquet classification.

    Columns are the period maps of the solutions starting at ``(1, 0)`` and
    ``(0, 1)``.
    """
    T = params.period
    rhs = _hill_rhs(_coefficient_fn(params))
    res = integrate(rhs, (0.0, T), np.eye(2), rtol=tol, atol=tol / 100, max_steps=max_steps)
    return _classify(res.y[-1], T, res.y)


def _monodromy_row(Omega: float, a: float, q_values: np.ndarray, tol: float, max_steps: int) -> list:
    T = 2 * math.pi / Omega
    B = len(q_values)
    y0 = np.zeros((2, 2, B))
    y0[0, 0] = 1.0
    y0[1, 1] = 1.0
    rhs = _hill_rhs(_batch_coefficient_fn(Omega, np.full(B, a), q_values))
    res = integrate(rhs, (0.0, T), y0, rtol=tol, atol=tol / 100, max_steps=max_steps)
    return [_classify(res.y[-1, :, :, j], T, res.y[:, :, :, j]) for j in range(B)]


def floquet_omega(result: FloquetResult, symmetry_tol: float = 1e-7) -> float:
    """Reference frequency ``omega`` that makes ``u`` a Floquet solution.

    With ``u(0) = 1`` and ``u'(0) = i omega`` the vector ``(1, i omega)`` must be
    an eigenvector of the monodromy, which needs ``M00 = M11`` (drive symmetric
    about ``t = 0``) and gives ``omega**2 = -M10 / M01``.
    """
    if result.stability is not Stability.STABLE:
        raise ValueError(f"no Floquet reference frequency at a {result.stability.value} point")
    M = result.monodromy
    if abs(M[0, 0] - M[1, 1]) > symmetry_tol * max(1.0, abs(M[0, 0])):
        raise ValueError("drive is not time-symmetric about t = 0; no real omega gives a Floquet solution")
    ratio = -M[1, 0] / M[0, 1]
    if ratio <= 0:
        raise ValueError("monodromy off-diagonal signs do not admit a Floquet frequency")
    return math.sqrt(ratio)


@dataclass
class StabilityGrid:
    a_values: np.ndarray
    q_values: np.ndarray
    Omega: float
    trace: np.ndarray
    mu: np.ndarray
    determinant: np.ndarray
    classes: np.ndarray  # object array of Stability

    def class_codes(self) -> np.ndarray:
        codes = {Stability.UNSTABLE: 0, Stability.STABLE: 255, Stability.MARGINAL: 255, Stability.FAILED: 128}
        return np.vectorize(lambda c: codes[c], otypes=[np.uint8])(self.classes)

    def cell(self, i: int, j: int) -> Stability:
        return self.classes[i, j]


def _scan_row(Omega, a, q_values, tol, max_steps):
    n = len(q_values)
    trace = np.full(n, np.nan)
    mu = np.full(n, np.nan)
    det = np.full(n, np.nan)
    classes = np.empty(n, dtype=object)
    try:
        results = _monodromy_row(Omega, a, q_values, tol, max_steps)
    except IntegrationError:
        # isolate the failing cells by integrating each one alone
        results = []
        for q in q_values:
            try:
                results.append(monodromy(HillParameters(a, float(q), Omega), tol, max_steps))
            except IntegrationError:
                results.append(None)
    for j, r in enumerate(results):
        if r is None:
            classes[j] = Stability.FAILED
            continue
        trace[j], mu[j], det[j], classes[j] = r.trace, r.mu, r.determinant, r.stability
    return trace, mu, det, classes


def stability_scan(
    a_min: float,
    a_max: float,
    q_min: float,
    q_max: float,
    n_a: int,
    n_q: int,
    params: HillParameters = HillParameters(),
    tol: float = DEFAULT_TOL,
    workers: int = 1,
    max_steps: int = 200_000,
) -> StabilityGrid:
    """Rasterize the Floquet classification over the ``(a, q_m)`` plane.

    Each ``a`` row is integrated as one batch; rows are independent, so the
    grid does not depend on ``workers``. Cells whose integration fails or
    needs more than ``max_steps`` steps per period are marked ``Stability.FAILED``.
    """
    if n_a < 1 or n_q < 1:
        raise ValueError("n_a and n_q must be at least 1")
    for v in (a_min, a_max, q_min, q_max):
        if not math.isfinite(v):
            raise ValueError("scan ranges must be finite")
    a_values = np.linspace(a_min, a_max, n_a)
    q_values = np.linspace(q_min, q_max, n_q)
    Om = params.Omega

    def run(i):
        return _scan_row(Om, float(a_values[i]), q_values, tol, max_steps)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(run, range(n_a)))
    else:
        rows = [run(i) for i in range(n_a)]
    trace = np.array([r[0] for r in rows])
    mu = np.array([r[1] for r in rows])
    det = np.array([r[2] for r in rows])
    classes = np.empty((n_a, n_q), dtype=object)
    for i, r in enumerate(rows):
        classes[i] = r[3]
    return StabilityGrid(a_values, q_values, Om, trace, mu, det, classes)


def bisect_stability_edge(
    a: float,
    q_lo: float,
    q_hi: float,
    Omega: float = 2.0,
    tol: float = DEFAULT_TOL,
    xtol: float = 1e-8,
) -> float:
    """Locate ``|trace M| = 2`` between ``q_lo`` and ``q_hi`` by bisection."""

    def excess(q):
        return abs(monodromy(HillParameters(a, q, Omega), tol).trace) - 2.0

    f_lo, f_hi = excess(q_lo), excess(q_hi)
    if f_lo * f_hi > 0:
        raise ValueError("stability edge is not bracketed")
    while q_hi - q_lo > xtol:
        mid = 0.5 * (q_lo + q_hi)
        f_mid = excess(mid)
        if f_mid == 0:
            return mid
        if (f_mid < 0) == (f_lo < 0):
            q_lo, f_lo = mid, f_mid
        else:
            q_hi = mid
    return 0.5 * (q_lo + q_hi)


@dataclass
class ScalingTrace:
    times: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    tau: np.ndarray
    zeta: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return np.exp(self.alpha + 1j * self.tau)


def scaling_parameters(zeta_trace: SolutionTrace, c=None) -> ScalingTrace:
    """``alpha``, ``beta``, ``tau`` with ``zeta = exp(alpha + i tau)``, ``2 beta = alpha' - 4c``.

    ``alpha'`` is taken from the integrated derivative (``Re(zeta'/zeta)``).
    ``c`` is a callable of ``t``, a constant, or None (zero).
    """
    t = np.asarray(zeta_trace.times, dtype=float)
    z = np.asarray(zeta_trace.u)
    zd = np.asarray(zeta_trace.u_dot)
    mag = np.abs(z)
    scale = max(1.0, float(np.max(mag)))
    bad = np.nonzero(mag <= 1e-14 * scale)[0]
    if bad.size:
        raise BranchError(float(t[bad[0]]))
    ratio = zd / z
    # the unwinding needs each sample-to-sample phase change below pi
    dphase = np.angle(z[1:] / z[:-1])
    rate = np.imag(ratio)
    predicted = 0.5 * (rate[1:] + rate[:-1]) * np.diff(t)
    if np.any(np.abs(predicted) > 0.75 * math.pi) or np.any(np.abs(dphase - predicted) > 0.5 * math.pi):
        i = int(np.argmax(np.abs(dphase - predicted)))
        raise BranchError(float(t[i]))
    tau = np.angle(z[0]) + np.concatenate([[0.0], np.cumsum(dphase)])
    alpha = np.log(mag)
    if c is None:
        cv = np.zeros_like(t)
    elif callable(c):
        cv = np.asarray(c(t), dtype=float) * np.ones_like(t)
    else:
        cv = np.full_like(t, float(c))
    beta = 0.5 * (np.real(ratio) - 4.0 * cv)
    return ScalingTrace(t, alpha, beta, tau, z)


@dataclass
class QuasienergySpectrum:
    mu: float
    E0: float
    levels: np.ndarray


def quasienergy_spectrum(mu: float, E0: float, j_max: int) -> QuasienergySpectrum:
    """Levels ``eps_j = mu (2 j + E0)`` for ``j = 0..j_max``."""
    if j_max < 0:
        raise ValueError("j_max must be non-negative")
    j = np.arange(j_max + 1)
    return QuasienergySpectrum(float(mu), float(E0), mu * (2 * j + E0))


def spectral_mu(floquet_mu: float, hbar: float = 1.0) -> float:
    """Rate entering ``eps_j = mu (2 j + E0)``: level spacing ``2 mu`` equals ``hbar`` times the secular frequency."""
    return 0.5 * hbar * floquet_mu


def fit_ground_coefficient(
    overlaps: Sequence[complex],
    n_values: Sequence[int],
    floquet_mu: float,
    period: float,
    hbar: float = 1.0,
) -> tuple[float, np.ndarray]:
    """Fit ``E0`` from one-period overlaps ``<phi_n(0)|phi_n(T)> = exp(-i eps_n T / hbar)``.

    The phases are unwound along increasing ``n`` (consecutive levels differ by
    less than pi per period for first-zone drives). Returns ``(E0, per_n)``
    where ``per_n`` holds the individual estimates.
    """
    n_values = np.asarray(n_values)
    order = np.argsort(n_values)
    phases = -np.angle(np.asarray(overlaps, dtype=complex)[order])
    phases = np.unwrap(phases)
    mu_s = spectral_mu(floquet_mu, hbar)
    if mu_s == 0:
        raise ValueError("zero Floquet exponent")
    per_n = phases * hbar / (mu_s * period) - 2 * n_values[order]
    return float(np.mean(per_n)), per_n
