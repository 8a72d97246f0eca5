import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loopsim.errors import NonHermitian, UnnormalizedState, ZeroProbabilityCollapse
from loopsim.quantum_core import (
    IDENTITY,
    SIGMA_X,
    SIGMA_Z,
    Observable,
    QubitState,
    born_probability,
    collapse,
    commutator_norm,
    eigendecompose,
    expectation,
    outcome_probabilities,
)

R2 = 1 / math.sqrt(2)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@st.composite
def states(draw):
    a = complex(draw(finite), draw(finite))
    b = complex(draw(finite), draw(finite))
    if abs(a) ** 2 + abs(b) ** 2 < 1e-6:
        a = 1.0
    return QubitState.normalized(a, b)


@st.composite
def observables(draw):
    d0, d1 = draw(finite), draw(finite)
    off = complex(draw(finite), draw(finite))
    return Observable([[d0, off], [off.conjugate(), d1]])


def assert_amps(state, expected, tol=1e-12):
    np.testing.assert_allclose(state.amplitudes, np.asarray(expected, dtype=complex), atol=tol)


def test_sigma_z_eigensystem():
    eig = eigendecompose(SIGMA_Z)
    assert eig.eigenvalues == (1.0, -1.0)
    assert_amps(eig.eigenvectors[0], [1, 0])
    assert_amps(eig.eigenvectors[1], [0, 1])


def test_sigma_x_eigensystem():
    eig = eigendecompose(SIGMA_X)
    assert eig.eigenvalues == pytest.approx((1.0, -1.0), abs=1e-15)
    assert_amps(eig.eigenvectors[0], [R2, R2])
    assert_amps(eig.eigenvectors[1], [R2, -R2])


def test_degenerate_returns_orthonormal_basis():
    eig = eigendecompose(Observable(2 * IDENTITY))
    assert eig.eigenvalues == (2.0, 2.0)
    assert eig.degenerate
    v0, v1 = eig.eigenvectors
    assert abs(v0.overlap(v1)) < 1e-12


def test_non_hermitian_rejected():
    with pytest.raises(NonHermitian):
        Observable([[1, 1], [0, 1]])
    with pytest.raises(NonHermitian):
        eigendecompose(np.array([[0, 1j], [1j, 0]]))


def test_unnormalized_state_rejected():
    with pytest.raises(UnnormalizedState):
        QubitState([1, 1])


def test_born_examples():
    eig = SIGMA_Z.eigensystem
    assert born_probability(QubitState([1, 0]), eig, 0) == 1.0
    assert born_probability(QubitState([R2, R2]), eig, 0) == pytest.approx(0.5, abs=1e-15)
    s = QubitState([math.cos(math.pi / 6), math.sin(math.pi / 6)])
    assert born_probability(s, eig, 0) == pytest.approx(math.cos(math.pi / 6) ** 2, abs=1e-15)
    assert born_probability(s, eig, 0) == pytest.approx(0.75, abs=1e-15)


def test_expectation_examples():
    assert expectation(QubitState([1, 0]), SIGMA_Z) == 1.0
    assert expectation(QubitState([R2, R2]), SIGMA_Z) == pytest.approx(0.0, abs=1e-15)
    s = QubitState([math.cos(math.pi / 6), math.sin(math.pi / 6)])
    assert expectation(s, SIGMA_Z) == pytest.approx(0.75 - 0.25, abs=1e-15)


def test_collapse_examples():
    assert_amps(collapse(QubitState([R2, R2]), SIGMA_Z.eigensystem, 0), [1, 0])
    assert_amps(collapse(QubitState([1, 0]), SIGMA_Z.eigensystem, 0), [1, 0])
    assert_amps(collapse(QubitState([1, 0]), SIGMA_X.eigensystem, 0), [R2, R2])


def test_collapse_onto_impossible_outcome():
    with pytest.raises(ZeroProbabilityCollapse):
        collapse(QubitState([1, 0]), SIGMA_Z.eigensystem, 1)


def _matmul(a, b):
    return [[sum(a[i][k] * b[k][j] for k in range(2)) for j in range(2)] for i in range(2)]


def test_commutator_examples():
    assert commutator_norm(SIGMA_Z, SIGMA_Z) == 0.0
    assert commutator_norm(SIGMA_Z, Observable(IDENTITY)) == 0.0
    # by hand: ZX - XZ = [[0, 2], [-2, 0]]
    z = [[1, 0], [0, -1]]
    x = [[0, 1], [1, 0]]
    zx, xz = _matmul(z, x), _matmul(x, z)
    by_hand = math.sqrt(sum(abs(zx[i][j] - xz[i][j]) ** 2 for i in range(2) for j in range(2)))
    assert by_hand == pytest.approx(2 * math.sqrt(2))
    assert commutator_norm(SIGMA_Z, SIGMA_X) == pytest.approx(by_hand, rel=1e-15)


def test_collapsed_phase_convention():
    eig = Observable.from_bloch(0.3, -0.7, 0.2).eigensystem
    for v in eig.eigenvectors:
        first = v.amplitudes[np.flatnonzero(np.abs(v.amplitudes) > 1e-15)[0]]
        assert first.imag == 0 and first.real > 0


@given(observables())
def test_eigen_reconstruction_and_orthonormality(obs):
    eig = obs.eigensystem
    assert eig.eigenvalues[0] >= eig.eigenvalues[1]
    v0, v1 = eig.eigenvectors
    assert abs(v0.overlap(v1)) < 1e-10
    for lam, v in zip(eig.eigenvalues, eig.eigenvectors):
        np.testing.assert_allclose(obs.matrix @ v.amplitudes, lam * v.amplitudes, atol=1e-10)


@given(states(), observables())
def test_probabilities_sum_to_one(state, obs):
    p0, p1 = outcome_probabilities(state, obs.eigensystem)
    assert abs(p0 + p1 - 1) <= 1e-12


@given(states(), observables(), st.sampled_from([0, 1]))
def test_collapse_is_consistent(state, obs, k):
    eig = obs.eigensystem
    if born_probability(state, eig, k) < 1e-12:
        return
    after = collapse(state, eig, k)
    assert abs(born_probability(after, eig, k) - 1) <= 1e-12
    assert collapse(after, eig, k) == after


@given(states(), observables())
def test_expectation_decomposes(state, obs):
    eig = obs.eigensystem
    total = sum(lam * born_probability(state, eig, k) for k, lam in enumerate(eig.eigenvalues))
    assert expectation(state, obs) == pytest.approx(total, abs=1e-10)


@settings(max_examples=200)
@given(states(), observables(), st.floats(0, 2 * math.pi))
def test_global_phase_invariance(state, obs, phi):
    eig = obs.eigensystem
    rotated = QubitState(state.amplitudes * cmath.exp(1j * phi))
    for k in (0, 1):
        assert born_probability(rotated, eig, k) == pytest.approx(
            born_probability(state, eig, k), abs=1e-12)
