import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from paultrap.hagedorn import (
    AccuracyError,
    DecompositionError,
    EscapeError,
    InvariantError,
    PacketState,
    PotentialModel,
    anharmonic_potential,
    check_potential,
    classical_trajectory,
    evaluate_packet,
    free_potential,
    harmonic_potential,
    invariant_residuals,
    multivariate_hermite,
    packet_wavefunction,
    paul_potential,
    polar_abs,
    propagate_AB,
    propagate_packet,
    quadratic_potential,
    raising_ladder,
)
from paultrap.hill import HillParameters

K2 = np.array([[1.3, 0.4], [0.4, 0.7]])
# anharmonic V = x^2/2 + 0.1 x^4 from (q, p) = (1, 0): scipy Radau at rtol 1e-13
REFERENCE_Q1, REFERENCE_P1 = 0.40532378282468834, -1.0150441188239745


@pytest.fixture(scope="module")
def complex_2d_state():
    """A 2-D packet with genuinely complex, non-diagonal A (evolved under a coupled quadratic)."""
    st0 = PacketState.standard([0.2, -0.1], [0.3, 0.5], hbar=0.7)
    return propagate_packet(quadratic_potential(K2), st0, 1.7).final


@pytest.fixture(scope="module")
def grid_2d():
    x = np.linspace(-9, 9, 256)
    return np.stack(np.meshgrid(x, x, indexing="ij"), -1), (x[1] - x[0]) ** 2


def test_hermite_examples():
    x = np.array([[0.3], [-1.2]])
    assert np.allclose(multivariate_hermite(np.eye(1), (0,), x), 1.0)
    assert np.allclose(multivariate_hermite(np.eye(1), (1,), x), 2 * x[:, 0])
    assert np.allclose(multivariate_hermite(np.eye(1), (2,), x), 4 * x[:, 0] ** 2 - 2)


@given(st.integers(0, 8), st.floats(-3, 3))
def test_hermite_1d_identity_matrix_is_physicists(n, x):
    ref = np.polynomial.hermite.hermval(x, [0] * n + [1])
    got = multivariate_hermite(np.eye(1), (n,), np.array([x]))
    assert got == pytest.approx(ref, rel=1e-9, abs=1e-9)


def test_hermite_separates_for_diagonal_unitary_directions():
    x = np.array([0.4, -0.9])
    got = multivariate_hermite(np.diag([2.0, 0.5]), (2, 1), x)
    assert got == pytest.approx((4 * 0.16 - 2) * (2 * -0.9))


def test_singular_matrix_rejected():
    with pytest.raises(DecompositionError):
        multivariate_hermite(np.zeros((2, 2)), (1, 0), np.zeros(2))
    with pytest.raises(DecompositionError):
        polar_abs(np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_polar_abs_is_positive_root():
    A = np.array([[1.0, 0.5j], [0.2, 2.0 - 1j]])
    absA, inv = polar_abs(A)
    assert np.allclose(absA @ absA, A.conj().T @ A)
    assert np.all(np.linalg.eigvalsh(absA) > 0)
    assert np.allclose(absA @ inv, np.eye(2))


def test_ground_packet_formula():
    st0 = PacketState.standard(0.0, 0.0, hbar=0.3)
    x = np.linspace(-2, 2, 9)
    got = evaluate_packet(st0, x[:, None])
    assert np.allclose(got, (math.pi * 0.3) ** -0.25 * np.exp(-x * x / 0.6))


def test_invalid_state_refused():
    bad = PacketState(np.eye(1), 2 * np.eye(1), [0.0], [0.0])
    with pytest.raises(InvariantError):
        evaluate_packet(bad, np.zeros((1, 1)))
    with pytest.raises(ValueError):
        PacketState(np.eye(2), np.eye(2), [0.0], [0.0])
    with pytest.raises(ValueError):
        PacketState(np.eye(1), np.eye(1), [0.0], [0.0], k=(-1,))


def test_ladder_recursion_agrees(complex_2d_state, grid_2d):
    X, _ = grid_2d
    ladder = raising_ladder(complex_2d_state, X, (3, 3))
    for k in itertools.product(range(4), repeat=2):
        if sum(k) <= 4:
            got = evaluate_packet(complex_2d_state.with_k(k), X)
            assert np.max(np.abs(got - ladder[k])) < 1e-10


def test_2d_norm_and_gram(complex_2d_state, grid_2d):
    X, dv = grid_2d
    ks = [k for k in itertools.product(range(4), repeat=2) if sum(k) <= 3]
    F = [evaluate_packet(complex_2d_state.with_k(k), X).ravel() for k in ks]
    G = np.array([[np.vdot(a, b) * dv for b in F] for a in F])
    assert abs(G[ks.index((1, 1)), ks.index((1, 1))] - 1) < 1e-8
    assert np.max(np.abs(G - np.eye(len(ks)))) < 1e-7


def test_unconjugated_pairing_loses_orthonormality(complex_2d_state, grid_2d):
    X, dv = grid_2d
    ks = [(0, 0), (2, 0), (1, 1), (0, 2)]
    F = [evaluate_packet(complex_2d_state.with_k(k), X, conjugate_pairing=False).ravel() for k in ks]
    G = np.array([[np.vdot(a, b) * dv for b in F] for a in F])
    assert np.max(np.abs(G - np.eye(len(ks)))) > 1e-2


def test_1d_norms_and_gram():
    st0 = propagate_packet(harmonic_potential(1.3), PacketState.standard(0.1, 0.2, hbar=0.5, width=0.6), 0.9).final
    x = np.linspace(-10, 10, 4096)
    F = [evaluate_packet(st0.with_k((k,)), x[:, None]) for k in range(5)]
    G = np.array([[np.vdot(a, b) * (x[1] - x[0]) for b in F] for a in F])
    assert np.max(np.abs(np.diag(G) - 1)) < 1e-8
    assert np.max(np.abs(G - np.eye(5))) < 1e-7


def test_free_trajectory():
    tr = classical_trajectory(free_potential(), [0.5], [2.0], 3.0, m=2.0)
    q, p, S = tr.at(3.0)
    assert q[0] == pytest.approx(0.5 + 3.0, abs=1e-10)
    assert S == pytest.approx(4.0 * 3.0 / 4.0, abs=1e-10)


def test_harmonic_trajectory_closed_form():
    w, m = 1.7, 0.8
    tr = classical_trajectory(harmonic_potential(w, m), [0.4], [0.9], 5.0, m=m)
    for t in (0.5, 2.0, 5.0):
        q = tr.at(t)[0][0]
        assert q == pytest.approx(0.4 * math.cos(w * t) + 0.9 / (m * w) * math.sin(w * t), abs=1e-9)


def test_anharmonic_trajectory_reference_and_energy():
    V = anharmonic_potential(1.0, 0.1)
    tr = classical_trajectory(V, [1.0], [0.0], 1.0)
    q, p, _ = tr.at(1.0)
    assert q[0] == pytest.approx(REFERENCE_Q1, abs=1e-9)
    assert p[0] == pytest.approx(REFERENCE_P1, abs=1e-9)
    long = classical_trajectory(V, [1.0], [0.0], 50.0)
    E = 0.5 * long.p[:, 0] ** 2 + V.V(0, long.q)
    assert np.max(np.abs(E - E[0])) < 1e-9 * E[0]


def test_escape_detected():
    inverted = quadratic_potential(-np.eye(1))
    with pytest.raises(EscapeError) as info:
        classical_trajectory(inverted, [1.0], [0.0], 50.0, escape_bound=100.0)
    assert 4.0 < info.value.time < 7.0


def test_free_AB_closed_form():
    V = free_potential()
    tr = classical_trajectory(V, [0.0], [1.0], 2.0)
    st0 = PacketState(np.eye(1) * 0.8, np.eye(1) / 0.8, [0.0], [1.0])
    ts, As, Bs = propagate_AB(V, tr, st0.A, st0.B, t_eval=[0.0, 1.0, 2.0])
    for t, A, B in zip(ts, As, Bs):
        assert np.allclose(A, st0.A + 1j * st0.B * t, atol=1e-10)
        assert np.allclose(B, st0.B, atol=1e-12)


def test_harmonic_AB_invariants_over_100_periods():
    V = harmonic_potential(1.0)
    T = 2 * math.pi
    tr = classical_trajectory(V, [0.5], [0.3], 100 * T)
    st0 = PacketState.standard(0.5, 0.3, width=0.7)
    ts, As, Bs = propagate_AB(V, tr, st0.A, st0.B, tol=1e-12, t_eval=np.linspace(0, 100 * T, 201))
    assert max(max(invariant_residuals(A, B)) for A, B in zip(As, Bs)) < 1e-10


def test_constant_hessian_matches_matrix_exponential():
    m = 1.5
    V = quadratic_potential(K2)
    st0 = PacketState.standard([0.1, 0.2], [0.0, 0.0], width=0.9, m=m)
    t = 3.3
    tr = classical_trajectory(V, st0.q, st0.p, t, m=m)
    _, As, Bs = propagate_AB(V, tr, st0.A, st0.B, m=m, t_eval=[t])
    L = np.block([[np.zeros((2, 2)), 1j / m * np.eye(2)], [1j * K2, np.zeros((2, 2))]])
    exact = expm(L * t) @ np.vstack([st0.A, st0.B])
    assert np.max(np.abs(As[0] - exact[:2])) < 1e-8
    assert np.max(np.abs(Bs[0] - exact[2:])) < 1e-8


def test_invariant_drift_raises_accuracy_error():
    V = harmonic_potential(3.0)
    tr = classical_trajectory(V, [0.0], [0.0], 30.0)
    with pytest.raises(AccuracyError):
        propagate_AB(V, tr, np.eye(1), np.eye(1), tol=1e-3, drift_tol=1e-7)


def test_invalid_initial_matrices():
    V = harmonic_potential(1.0)
    tr = classical_trajectory(V, [0.0], [0.0], 1.0)
    with pytest.raises(InvariantError):
        propagate_AB(V, tr, np.eye(1), 3 * np.eye(1))


def test_free_packet_spreads():
    st0 = PacketState.standard(0.0, 1.0, hbar=1.0, width=0.8)
    trace = propagate_packet(free_potential(), st0, 4.0, t_eval=[0.0, 2.0, 4.0])
    for s in trace.states:
        assert s.q[0] == pytest.approx(s.t, abs=1e-10)
        assert abs(s.A[0, 0]) == pytest.approx(abs(0.8 + 1j * s.t / 0.8), abs=1e-10)


@given(st.floats(0.5, 4.0), st.floats(0.3, 2.5))
def test_semigroup(t1, t2):
    V = anharmonic_potential(1.0, 0.1)
    st0 = PacketState.standard(0.8, -0.2, hbar=0.1, k=(2,))
    direct = propagate_packet(V, st0, t1 + t2).final
    mid = propagate_packet(V, st0, t1).final
    composed = propagate_packet(V, mid, t1 + t2).final
    for a, b in [(direct.q, composed.q), (direct.p, composed.p), (direct.A, composed.A), (direct.B, composed.B)]:
        assert np.max(np.abs(a - b)) < 1e-9
    assert abs(direct.S - composed.S) < 1e-9
    assert abs(direct.log_det_A - composed.log_det_A) < 1e-9


def test_norm_conserved_under_anharmonic_propagation():
    V = anharmonic_potential(1.0, 0.1)
    st0 = PacketState.standard(1.0, 0.0, hbar=0.05, k=(3,))
    trace = propagate_packet(V, st0, 6.0, t_eval=np.linspace(0, 6, 7))
    x = np.linspace(-4, 4, 8192)[:, None]
    for s in trace.states:
        psi = evaluate_packet(s, x)
        assert np.sum(np.abs(psi) ** 2) * (x[1, 0] - x[0, 0]) == pytest.approx(1.0, abs=1e-8)


def test_det_branch_is_continuous():
    # A winds around the origin under the oscillator; the tracked log det follows it
    V = harmonic_potential(1.0)
    st0 = PacketState.standard(0.0, 0.0, width=2.0)
    trace = propagate_packet(V, st0, 20.0, t_eval=np.linspace(0, 20, 400))
    ld = np.array([s.log_det_A for s in trace.states])
    assert np.max(np.abs(np.diff(ld.imag))) < 0.2
    assert np.allclose(np.exp(ld), [np.linalg.det(s.A) for s in trace.states])


def test_paul_potential_consistent():
    check_potential(paul_potential(HillParameters(0.0, 0.3, 2.0)), t_range=(0, 3))
    check_potential(anharmonic_potential(1.0, 0.1))
    check_potential(quadratic_potential(K2))


def test_check_potential_catches_wrong_gradient():
    good = anharmonic_potential(1.0, 0.1)
    bad = PotentialModel(1, good.V, lambda t, x: 2 * good.gradient(t, x), good.hessian)
    with pytest.raises(ValueError, match="gradient"):
        check_potential(bad)
    asym = PotentialModel(2, lambda t, x: 0.0 * x[..., 0], lambda t, x: np.zeros(2),
                          lambda t, x: np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError, match="symmetric"):
        check_potential(asym)


def test_jsonl_trace():
    trace = propagate_packet(harmonic_potential(1.0), PacketState.standard(1.0, 0.0), 1.0, t_eval=[0, 0.5, 1])
    lines = trace.to_jsonl().splitlines()
    assert len(lines) == 3
    rec = json.loads(lines[-1])
    for key in ("q", "p", "S", "A_re", "A_im", "B_re", "B_im", "symmetry_residual", "normalization_residual"):
        assert key in rec
    assert np.allclose(trace.phases(), [np.exp(1j * s.S) for s in trace.states])


def test_packet_wavefunction_includes_action_phase():
    s = PacketState.standard(0.0, 0.0)
    s.S = 0.7
    x = np.linspace(-1, 1, 5)[:, None]
    assert np.allclose(packet_wavefunction(s, x), np.exp(0.7j) * evaluate_packet(s, x))
