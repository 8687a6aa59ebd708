import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from paultrap.hill import HillParameters, integrate_hill, monodromy
from paultrap.states import (
    DimensionError,
    NoPseudopotentialError,
    NodeCollapseError,
    OscillatorContext,
    ResolutionError,
    WavefunctionSample,
    annihilation_action,
    default_grid,
    hermite_1d,
    hermite_functions,
    inner,
    number_expectation,
    overlap_fn,
    phi0,
    phin,
    pseudopotential_states,
    sample_state,
    static_eigenfunction,
)

PARAMS = HillParameters(0.0, 0.4, 2.0)
T = PARAMS.period
# |f_n| = |<phi_pn|phi_n(0)>| at PARAMS; unchanged to 1e-15 from 1024 to 4096 grid points
REFERENCE_ABS_OVERLAP = [0.9867035897353835, 0.9606388020513765, 0.9095420188472092]


@pytest.fixture(scope="module")
def ctx():
    return OscillatorContext.build(PARAMS, 2 * T)


@pytest.fixture(scope="module")
def grid(ctx):
    return default_grid(ctx)


def test_hermite_examples():
    assert hermite_1d(0, 3.3) == 1.0
    assert hermite_1d(1, 0.7) == pytest.approx(1.4)
    assert hermite_1d(2, 1.0) == pytest.approx(2.0)


@given(st.integers(0, 30), st.floats(-6, 6))
def test_hermite_matches_numpy(n, x):
    ref = np.polynomial.hermite.hermval(x, [0] * n + [1])
    assert hermite_1d(n, x) == pytest.approx(ref, rel=1e-9, abs=1e-9)


def test_hermite_functions_do_not_overflow():
    vals = hermite_functions(300, np.array([0.0, 20.0, 40.0]))
    assert np.all(np.isfinite(vals))


def test_context_validation(ctx):
    with pytest.raises(ValueError):
        OscillatorContext(-1.0, 1.0, ctx.omega, ctx.trace)
    with pytest.raises(ValueError):
        OscillatorContext(1.0, 1.0, ctx.omega * 2, ctx.trace)


def test_phi0_at_zero_is_static_ground_state(ctx, grid):
    ref = static_eigenfunction(0, grid, ctx.m, ctx.hbar, ctx.omega)
    assert np.max(np.abs(phi0(grid, 0.0, ctx) - ref)) < 1e-12


@pytest.mark.parametrize("n", range(5))
def test_phin_at_zero_is_static_eigenfunction(ctx, grid, n):
    ref = static_eigenfunction(n, grid, ctx.m, ctx.hbar, ctx.omega)
    assert np.max(np.abs(phin(n, grid, 0.0, ctx) - ref)) < 1e-10


@pytest.mark.parametrize("t", [0.3, 1.1, 2.9, 5.0])
def test_phin_zero_equals_phi0(ctx, grid, t):
    assert np.max(np.abs(phin(0, grid, t, ctx) - phi0(grid, t, ctx))) < 1e-12


@pytest.mark.parametrize("t", [0.0, 0.4 * T, 1.3 * T])
def test_gram_matrix_is_identity(ctx, grid, t):
    F = np.array([phin(n, grid, t, ctx) for n in range(7)])
    G = np.array([[inner(grid, a, b) for b in F] for a in F])
    assert np.max(np.abs(G - np.eye(7))) < 1e-8


def test_printed_normalization_is_not_orthonormal(ctx, grid):
    F = np.array([phin(n, grid, 0.7, ctx, printed_pi=True) for n in range(4)])
    G = np.array([[inner(grid, a, b) for b in F] for a in F])
    assert np.max(np.abs(G - np.eye(4))) > 1e-2


@given(st.floats(0.0, 2 * T))
def test_norm_preserved(t):
    ctx = _shared_ctx()
    s = sample_state(3, t, ctx)
    assert s.norm() == pytest.approx(1.0, abs=1e-8)


_CTX = {}


def _shared_ctx():
    if "c" not in _CTX:
        _CTX["c"] = OscillatorContext.build(PARAMS, 2 * T)
    return _CTX["c"]


def test_constant_drive_density_is_stationary():
    w = 0.8
    p = HillParameters(w * w, 0.0, 2.0)
    c = OscillatorContext(1.0, 1.0, w, integrate_hill(p, w, 5.0))
    x = np.linspace(-6, 6, 101)
    ref = np.abs(phi0(x, 0.0, c))
    for t in (1.0, 2.5, 4.9):
        assert np.max(np.abs(np.abs(phi0(x, t, c)) - ref)) < 1e-9


def test_micromotion_density_is_periodic(ctx, grid):
    for t in np.linspace(0, T, 7):
        a = np.abs(phi0(grid, t, ctx)) ** 2
        b = np.abs(phi0(grid, t + T, ctx)) ** 2
        assert np.max(np.abs(a - b)) < 1e-8


def test_quasi_periodicity_has_unit_modulus(ctx, grid):
    for n in range(4):
        ov = inner(grid, phin(n, grid, 0.0, ctx), phin(n, grid, T, ctx))
        assert abs(ov) == pytest.approx(1.0, abs=1e-6)


def test_annihilation_of_ground_state(ctx):
    s = annihilation_action(0, 0.37 * T, ctx)
    assert np.max(np.abs(s.values)) < 1e-8


def test_annihilation_at_zero_lowers_level(ctx, grid):
    s = annihilation_action(1, 0.0, ctx)
    diff = s.values - phin(0, grid, 0.0, ctx)
    assert math.sqrt(np.trapezoid(np.abs(diff) ** 2, grid)) < 1e-8


@pytest.mark.parametrize("n", [1, 3, 5])
def test_annihilation_mid_period(ctx, grid, n):
    t = 0.5 * T
    s = annihilation_action(n, t, ctx)
    diff = s.values - math.sqrt(n) * phin(n - 1, grid, t, ctx)
    assert math.sqrt(np.trapezoid(np.abs(diff) ** 2, grid)) < 1e-6


@pytest.mark.parametrize("n", [0, 2, 4])
def test_number_expectation(ctx, n):
    assert number_expectation(n, 0.8, ctx) == pytest.approx(n, abs=1e-6)


def test_coarse_grid_is_rejected(ctx):
    with pytest.raises(ResolutionError):
        annihilation_action(4, 0.5, ctx, grid=np.linspace(-40, 40, 64, endpoint=False))
    with pytest.raises(ResolutionError):
        annihilation_action(2, 0.5, ctx, grid=np.linspace(-2, 2, 512, endpoint=False))


def test_node_collapse_guard():
    from paultrap.hill import SolutionTrace
    from paultrap.rk import integrate

    # u = 1 + i w t never vanishes; force a trace whose u is identically zero
    res = integrate(lambda t, y: np.zeros_like(y), (0.0, 1.0), np.array([0.0, 0.0], dtype=complex), dense=True)
    tr = SolutionTrace(res.t, res.y[:, 0], res.y[:, 1], 1.0, 0.0, dense=res.dense)
    c = OscillatorContext(1.0, 1.0, 1.0, tr)
    with pytest.raises(NodeCollapseError):
        phi0(np.zeros(3), 0.5, c)


def test_pseudo_states(ctx, grid):
    res = monodromy(PARAMS)
    ps = pseudopotential_states(6, ctx, res, grid)
    assert ps.omega_p == pytest.approx(res.mu)
    assert ps.ground_width() == pytest.approx(math.sqrt(1.0 / res.mu))
    G = np.array([[inner(grid, a, b) for b in ps.values] for a in ps.values])
    assert np.max(np.abs(G - np.eye(7))) < 1e-8


def test_pseudo_states_need_stable_point(ctx):
    with pytest.raises(NoPseudopotentialError):
        pseudopotential_states(2, ctx, monodromy(HillParameters(-0.05, 0.3, 2.0)))
    with pytest.raises(NoPseudopotentialError):
        pseudopotential_states(2, ctx, -0.1)


def test_secular_frequency_limit():
    a = 0.5
    res = monodromy(HillParameters(a, 1e-4, 2.0))
    assert res.mu == pytest.approx(2.0 * math.sqrt(a) / 2, abs=1e-4)


@pytest.mark.parametrize("n", range(3))
def test_overlap_matches_reference(ctx, grid, n):
    ps = pseudopotential_states(2, ctx, monodromy(PARAMS), grid)
    assert abs(overlap_fn(n, 0.0, ctx, ps)) == pytest.approx(REFERENCE_ABS_OVERLAP[n], abs=1e-6)


def test_overlap_bounded_and_grid_checked(ctx, grid):
    ps = pseudopotential_states(3, ctx, monodromy(PARAMS), grid)
    for t in np.linspace(0, T, 5):
        for n in range(4):
            assert abs(overlap_fn(n, t, ctx, ps)) <= 1 + 1e-9
    bad = WavefunctionSample(grid[::2], np.zeros(grid.size // 2, complex), 0.0, 0)
    with pytest.raises(DimensionError):
        overlap_fn(0, 0.0, ctx, ps, sample=bad)


def test_overlap_tends_to_one_without_drive():
    a = 0.5
    p = HillParameters(a, 1e-4, 2.0)
    c = OscillatorContext.build(p, p.period)
    ps = pseudopotential_states(0, c, monodromy(p), default_grid(c))
    assert abs(overlap_fn(0, 0.0, c, ps)) == pytest.approx(1.0, abs=1e-4)


def test_sample_serialization(ctx):
    s = sample_state(1, 0.2, ctx, grid=np.linspace(-1, 1, 4))
    lines = s.to_csv().splitlines()
    assert lines[0] == "x,re,im" and len(lines) == 5
    assert "np." not in s.to_csv()
    rec = s.to_record()
    assert rec["n"] == 1 and len(rec["re"]) == 4
