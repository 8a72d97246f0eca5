"""Two-level states, observables, Born probabilities and projective collapse."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import NonHermitian, UnnormalizedState, ZeroProbabilityCollapse

NORM_TOL = 1e-12
HERMITIAN_TOL = 1e-12
COLLAPSE_FLOOR = 1e-15
DEGENERATE_TOL = 1e-12

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)


def _fix_phase(v: np.ndarray) -> np.ndarray:
    # first amplitude with non-negligible modulus made real-positive
    for a in v:
        if abs(a) > 1e-15:
            return v * (abs(a) / a)
    return v


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class QubitState:
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _readonly(np.asarray(self.amplitudes, dtype=complex).reshape(-1))
        if amps.shape != (2,):
            raise ValueError(f"a qubit state has 2 amplitudes, got {amps.shape[0]}")
        object.__setattr__(self, "amplitudes", amps)
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1.0) > NORM_TOL:
            raise UnnormalizedState(f"|a0|^2 + |a1|^2 = {norm2!r}, expected 1")

    @classmethod
    def normalized(cls, a0, a1) -> "QubitState":
        v = np.array([a0, a1], dtype=complex)
        n = np.linalg.norm(v)
        if n == 0:
            raise UnnormalizedState("zero vector cannot be normalized")
        return cls(v / n)

    def overlap(self, other: "QubitState") -> complex:
        """<self|other>."""
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def with_phase(self, phi: float) -> "QubitState":
        return QubitState(self.amplitudes * np.exp(1j * phi))

    def __eq__(self, other):
        if not isinstance(other, QubitState):
            return NotImplemented
        return bool(np.array_equal(self.amplitudes, other.amplitudes))

    def __hash__(self):
        return hash(self.amplitudes.tobytes())

    def __repr__(self):
        a0, a1 = self.amplitudes
        return f"QubitState({a0!r}, {a1!r})"


@dataclass(frozen=True)
class EigenSystem:
    """Eigenpairs sorted by descending eigenvalue; index 0 is the larger outcome."""

    eigenvalues: tuple[float, float]
    eigenvectors: tuple[QubitState, QubitState]

    @property
    def degenerate(self) -> bool:
        return abs(self.eigenvalues[0] - self.eigenvalues[1]) <= DEGENERATE_TOL


@dataclass(frozen=True, eq=False)
class Observable:
    matrix: np.ndarray

    def __post_init__(self):
        m = _readonly(np.asarray(self.matrix, dtype=complex))
        if m.shape != (2, 2):
            raise ValueError(f"observable must be 2x2, got shape {m.shape}")
        object.__setattr__(self, "matrix", m)
        if np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL:
            raise NonHermitian(f"matrix is not Hermitian: {m.tolist()}")

    @classmethod
    def from_bloch(cls, nx: float, ny: float, nz: float) -> "Observable":
        """The operator n.sigma for direction ``(nx, ny, nz)`` (not normalized)."""
        return cls(nx * PAULI_X + ny * PAULI_Y + nz * PAULI_Z)

    def __eq__(self, other):
        if not isinstance(other, Observable):
            return NotImplemented
        return bool(np.array_equal(self.matrix, other.matrix))

    def __hash__(self):
        return hash(self.matrix.tobytes())

    @cached_property
    def eigensystem(self) -> EigenSystem:
        return eigendecompose(self)


SIGMA_X = Observable(PAULI_X)
SIGMA_Y = Observable(PAULI_Y)
SIGMA_Z = Observable(PAULI_Z)


def eigendecompose(obs: Observable) -> EigenSystem:
    """Closed-form eigenpairs of a 2x2 Hermitian operator.

    Writes the operator as ``c*I + r * n.sigma`` with unit ``n``; the
    eigenvalues are ``c +/- r``. A degenerate operator yields the
    computational basis.
    """
    if not isinstance(obs, Observable):
        obs = Observable(obs)
    m = obs.matrix
    c = 0.5 * (m[0, 0] + m[1, 1]).real
    nz = 0.5 * (m[0, 0] - m[1, 1]).real
    nx = m[1, 0].real
    ny = m[1, 0].imag
    r = math.sqrt(nx * nx + ny * ny + nz * nz)
    if r <= DEGENERATE_TOL:
        basis = (QubitState([1.0, 0.0]), QubitState([0.0, 1.0]))
        return EigenSystem((c, c), basis)
    uz = max(-1.0, min(1.0, nz / r))
    cos_h = math.sqrt(0.5 * (1.0 + uz))
    sin_h = math.sqrt(0.5 * (1.0 - uz))
    rho = math.hypot(nx, ny)
    phase = complex(nx, ny) / rho if rho > 0 else 1.0
    plus = _fix_phase(np.array([cos_h, phase * sin_h], dtype=complex))
    minus = _fix_phase(np.array([sin_h, -phase * cos_h], dtype=complex))
    plus /= np.linalg.norm(plus)
    minus /= np.linalg.norm(minus)
    return EigenSystem((c + r, c - r), (QubitState(plus), QubitState(minus)))


def _check_normalized(state: QubitState) -> None:
    amps = state.amplitudes
    norm2 = float(np.vdot(amps, amps).real)
    if abs(norm2 - 1.0) > NORM_TOL:
        raise UnnormalizedState(f"state norm^2 = {norm2!r}")


def born_probability(state: QubitState, eig: EigenSystem, outcome_index: int) -> float:
    """|<state|psi_O>|^2 for outcome ``outcome_index`` (0 = larger eigenvalue)."""
    if outcome_index not in (0, 1):
        raise ValueError(f"outcome_index must be 0 or 1, got {outcome_index!r}")
    _check_normalized(state)
    p = abs(state.overlap(eig.eigenvectors[outcome_index])) ** 2
    return min(1.0, max(0.0, p))


def outcome_probabilities(state: QubitState, eig: EigenSystem) -> tuple[float, float]:
    return born_probability(state, eig, 0), born_probability(state, eig, 1)


def expectation(state: QubitState, obs: Observable) -> float:
    _check_normalized(state)
    v = state.amplitudes
    value = complex(np.vdot(v, obs.matrix @ v))
    if abs(value.imag) > 1e-12:
        raise NonHermitian(f"expectation has imaginary part {value.imag!r}")
    return value.real


def collapse(state: QubitState, eig: EigenSystem, outcome_index: int) -> QubitState:
    """Projective post-measurement state for the given outcome."""
    p = born_probability(state, eig, outcome_index)
    if p < COLLAPSE_FLOOR:
        raise ZeroProbabilityCollapse(
            f"outcome {outcome_index} has probability {p!r} for state {state!r}"
        )
    return eig.eigenvectors[outcome_index]


def commutator_norm(a: Observable, b: Observable) -> float:
    """Frobenius norm of ``AB - BA``."""
    ma, mb = a.matrix, b.matrix
    return float(np.linalg.norm(ma @ mb - mb @ ma, ord="fro"))
