"""Quantum correlation tensors from the Born rule with Pauli observables.

A state is reduced once to its Pauli correlation tensor T[k1..kN] =
Tr[(sigma_k1 x ... x sigma_kN) rho]; every correlation entry is then a
contraction of T with the per-party rows (1, 0, 0, 0) for "no measurement"
and (0, a_x, a_y, a_z) for the Bloch vector of input x.
"""

import functools
import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from bellbounds.errors import DomainError, ShapeError
from bellbounds.polyhedra import RationalPoint, rationalize
from bellbounds.tensor import CorrelationTensor, Scenario

logger = logging.getLogger(__name__)

MAX_QUBITS = 4

PAULI = np.array([
    [[1, 0], [0, 1]],
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)

# sigma_y = i * J with J real; the real Pauli strings carry a factor i^(#y).
_REAL_PAULI = np.array([
    [[1, 0], [0, 1]],
    [[0, 1], [1, 0]],
    [[0, -1], [1, 0]],
    [[1, 0], [0, -1]],
], dtype=np.int64)


# ── States ────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Pure state with integer amplitudes (exact), or an arbitrary density operator."""

    name: str
    parties: int
    amplitudes: tuple[int, ...] | None = None
    density: np.ndarray | None = None

    def __post_init__(self):
        if not 1 <= self.parties <= MAX_QUBITS:
            raise ShapeError(f"supported qubit counts are 1..{MAX_QUBITS}, got {self.parties}")
        dim = 2**self.parties
        if (self.amplitudes is None) == (self.density is None):
            raise DomainError("give exactly one of amplitudes or density")
        if self.amplitudes is not None:
            if len(self.amplitudes) != dim or not any(self.amplitudes):
                raise ShapeError(f"state needs {dim} amplitudes, not all zero")
        else:
            rho = np.asarray(self.density, dtype=complex)
            if rho.shape != (dim, dim):
                raise ShapeError(f"density operator must be {dim}x{dim}")
            if not np.allclose(rho, rho.conj().T, atol=1e-10):
                raise DomainError("density operator is not Hermitian")
            if abs(np.trace(rho) - 1) > 1e-10:
                raise DomainError("density operator does not have unit trace")
            if np.linalg.eigvalsh(rho).min() < -1e-9:
                raise DomainError("density operator is not positive semidefinite")
            object.__setattr__(self, "density", rho)

    @property
    def exact(self) -> bool:
        return self.amplitudes is not None

    def density_matrix(self) -> np.ndarray:
        if self.density is not None:
            return self.density
        v = np.asarray(self.amplitudes, dtype=float)
        return np.outer(v, v) / (v @ v)

    def pauli_tensor(self, exact: bool = False) -> np.ndarray:
        """Real array of shape (4,)*N; Fraction entries when exact."""
        n = self.parties
        if exact:
            if not self.exact:
                raise DomainError(f"state {self.name} has no exact rational form")
            v = np.asarray(self.amplitudes, dtype=np.int64)
            norm = int(v @ v)
            out = np.empty((4,) * n, dtype=object)
            for ks in itertools.product(range(4), repeat=n):
                ys = sum(1 for k in ks if k == 2)
                if ys % 2:
                    out[ks] = Fraction(0)
                    continue
                real = functools.reduce(np.kron, [_REAL_PAULI[k] for k in ks])
                sign = -1 if (ys // 2) % 2 else 1
                out[ks] = Fraction(sign * int(v @ real @ v), norm)
            return out
        rho = self.density_matrix()
        out = np.empty((4,) * n)
        for ks in itertools.product(range(4), repeat=n):
            op = functools.reduce(np.kron, [PAULI[k] for k in ks])
            out[ks] = np.trace(op @ rho).real
        return out


def singlet() -> QuantumState:
    return QuantumState("singlet", 2, amplitudes=(0, 1, -1, 0))


def ghz(parties: int = 3) -> QuantumState:
    amps = [0] * 2**parties
    amps[0] = amps[-1] = 1
    return QuantumState("ghz", parties, amplitudes=tuple(amps))


def w_state() -> QuantumState:
    return QuantumState("w", 3, amplitudes=(0, 1, 1, 0, 1, 0, 0, 0))


NAMED_STATES = {
    "singlet": singlet,
    "werner": singlet,
    "ghz": ghz,
    "w": w_state,
}


def named_state(name: str, parties: int) -> QuantumState:
    if name not in NAMED_STATES:
        raise DomainError(f"unknown state {name!r}; choose from {sorted(NAMED_STATES)}")
    state = NAMED_STATES[name](parties) if name == "ghz" else NAMED_STATES[name]()
    if state.parties != parties:
        raise ShapeError(f"state {name} has {state.parties} parties, not {parties}")
    return state


# ── Measurement settings ──────────────────────────────────────────────


def _is_rational(vec) -> bool:
    return all(isinstance(c, (Fraction, int)) for c in vec)


@dataclass(frozen=True, eq=False)
class QuantumSetup:
    state: QuantumState
    observables: tuple[tuple[tuple, ...], ...]

    def __post_init__(self):
        obs = tuple(tuple(tuple(vec) for vec in party) for party in self.observables)
        if len(obs) != self.state.parties:
            raise ShapeError(f"{len(obs)} observable lists for a {self.state.parties}-party state")
        if len({len(party) for party in obs}) != 1 or not obs[0]:
            raise ShapeError("every party needs the same positive number of inputs")
        for party in obs:
            for vec in party:
                if len(vec) != 3:
                    raise ShapeError("Bloch vectors have three components")
                if _is_rational(vec):
                    if sum(Fraction(c) ** 2 for c in vec) != 1:
                        raise DomainError(f"rational Bloch vector {vec} is not exactly unit")
                elif abs(math.sqrt(sum(float(c) ** 2 for c in vec)) - 1) > 1e-9:
                    raise DomainError(f"Bloch vector {vec} is not unit length")
        object.__setattr__(self, "observables", obs)

    @property
    def parties(self) -> int:
        return self.state.parties

    @property
    def inputs(self) -> int:
        return len(self.observables[0])

    @property
    def exact(self) -> bool:
        return self.state.exact and all(_is_rational(v) for party in self.observables for v in party)

    def shared_measurements(self) -> tuple | None:
        """The common Bloch vector list when every party measures the same set."""
        first = self.observables[0]
        return first if all(party == first for party in self.observables) else None


def _party_matrix(vectors, exact: bool) -> np.ndarray:
    rows = [[1, 0, 0, 0]] + [[0, *vec] for vec in vectors]
    if exact:
        out = np.empty((len(rows), 4), dtype=object)
        for i, row in enumerate(rows):
            for j, c in enumerate(row):
                out[i, j] = Fraction(c)
        return out
    return np.array([[float(c) for c in row] for row in rows])


def _full_tensor(q: QuantumSetup, exact: bool) -> np.ndarray:
    out = q.state.pauli_tensor(exact)
    for party in q.observables:
        out = np.tensordot(out, _party_matrix(party, exact), axes=([0], [1]))
    return out


def lower_order_vanish(q: QuantumSetup, exact: bool | None = None) -> bool:
    """True when every correlator involving fewer than all parties is zero."""
    exact = q.exact if exact is None else exact
    full = _full_tensor(q, exact)
    mask = np.ones(full.shape, dtype=bool)
    mask[(slice(1, None),) * q.parties] = False
    rest = full[mask]
    if exact:
        return all(e == 0 for e in rest[1:])
    return bool(np.all(np.abs(rest[1:]) < 1e-12))


def auto_scenario(q: QuantumSetup) -> Scenario:
    """Full-correlation scenario when lower-order correlators vanish, marginal otherwise."""
    return Scenario(q.parties, q.inputs, marginals=not lower_order_vanish(q))


def quantum_tensor(q: QuantumSetup, sc: Scenario, exact: bool = False) -> CorrelationTensor:
    if sc.parties != q.parties or sc.inputs != q.inputs:
        raise ShapeError(f"setup ({q.parties} parties, {q.inputs} inputs) does not fit scenario {sc}")
    if exact and not q.exact:
        raise DomainError("exact tensor needs rational Bloch vectors and an exact state")
    full = _full_tensor(q, exact)
    if not sc.marginals:
        if not lower_order_vanish(q, exact):
            raise DomainError("scenario drops marginals but the state has nonzero lower-order correlators")
        full = full[(slice(1, None),) * q.parties]
    if not exact:
        bound = float(np.max(np.abs(full)))
        if bound > 1 + 1e-9:
            raise DomainError(f"quantum correlator {bound} exceeds 1")
        full = np.clip(full, -1.0, 1.0)
        if sc.marginals:
            full.flat[0] = 1.0
    return CorrelationTensor(sc, full)


# ── Bloch vector sets ─────────────────────────────────────────────────


def chsh_bloch_vectors(tol: float = 1e-9) -> tuple[list[RationalPoint], list[RationalPoint]]:
    """CHSH-optimal settings: Alice on x and y, Bob on the diagonals (rationalized)."""
    one, zero = Fraction(1), Fraction(0)
    alice = [RationalPoint(one, zero, zero), RationalPoint(zero, one, zero)]
    r = 1 / math.sqrt(2)
    bob = [rationalize((r, r, 0.0), tol), rationalize((r, -r, 0.0), tol)]
    return alice, bob


def polygon_bloch_vectors(m: int, tol: float | None = None) -> list:
    """Regular polygon of m directions on the XY half circle, angles k*pi/m."""
    vectors = [(math.cos(k * math.pi / m), math.sin(k * math.pi / m), 0.0) for k in range(m)]
    if tol is None:
        return vectors
    return [rationalize(v, tol) for v in vectors]


def setup_from_vectors(state: QuantumState, vectors: Sequence) -> QuantumSetup:
    """Every party measures the same list of Bloch vectors."""
    return QuantumSetup(state, tuple(tuple(vectors) for _ in range(state.parties)))


def polyhedron_setup(poly, parties: int, state: QuantumState | None = None) -> QuantumSetup:
    """All parties measure one vertex per antipodal pair of a rational polyhedron or polygon.

    The state defaults to the singlet for two parties and GHZ_N otherwise.
    """
    if state is None:
        state = singlet() if parties == 2 else ghz(parties)
    if state.parties != parties:
        raise ShapeError(f"state {state.name} has {state.parties} parties, not {parties}")
    return setup_from_vectors(state, poly.representatives())
