"""Exact certificates for nonlocality thresholds.

A lower certificate turns a numerical local model of v0 p into a proof that
eta^N * nu * v0 p is local for all projective measurements: the residual
x_T - v0 p is absorbed by the 2-norm ball lemma (nu), the finite measurement
set by the shrinking factor (eta). An upper certificate is an integer Bell
functional with an exactly computed local bound and its quantum value.

Every quantity that enters a bound is an exact rational; irrational values
(square roots) are replaced by directed rational bounds that only ever move
v_low down.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from bellbounds.errors import BellBoundsError, CertificateError, DomainError, SizeError
from bellbounds.fw import ActiveSet
from bellbounds.lmo import (
    EXHAUSTIVE_CAP,
    QUBO_MAX_VARIABLES,
    BellFunctional,
    exhaustive_lmo,
    qubo_branch_and_bound,
    sampled_max,
    sign_table,
    to_qubo,
)
from bellbounds.polyhedra import (
    PlanarPolygon,
    RationalPoint,
    RationalPolyhedron,
    faces_and_eta,
    planar_polygon,
)
from bellbounds.quantum import QuantumSetup, QuantumState, quantum_tensor
from bellbounds.tensor import (
    CorrelationTensor,
    DeterministicStrategy,
    Scenario,
    contract,
    strategy_vector,
)

logger = logging.getLogger(__name__)

SQRT_SCALE = 10**18
BALL_CAP = 22
DEFAULT_WEIGHT_BITS = 48
POVM_FACTOR = Fraction(2, 3)
SPOT_CHECKS = 10_000


# ── Directed rational square roots ────────────────────────────────────


def _as_fraction(value) -> Fraction:
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def _exact_root(q: Fraction) -> Fraction | None:
    n, d = math.isqrt(q.numerator), math.isqrt(q.denominator)
    if n * n == q.numerator and d * d == q.denominator:
        return Fraction(n, d)
    return None


def floor_sqrt(q) -> Fraction:
    """Largest k / 10^18 whose square is <= q; the exact root for rational squares."""
    q = Fraction(q)
    if q < 0:
        raise DomainError("square root of a negative number")
    root = _exact_root(q)
    if root is not None:
        return root
    scaled = q.numerator * SQRT_SCALE**2 // q.denominator
    return Fraction(math.isqrt(scaled), SQRT_SCALE)


def ceil_sqrt(q) -> Fraction:
    """Smallest k / 10^18 whose square is >= q; the exact root for rational squares."""
    q = Fraction(q)
    if q < 0:
        raise DomainError("square root of a negative number")
    root = _exact_root(q)
    if root is not None:
        return root
    scaled = -(-q.numerator * SQRT_SCALE**2 // q.denominator)
    k = math.isqrt(scaled)
    if k * k < scaled:
        k += 1
    return Fraction(k, SQRT_SCALE)


def nu_factor(residual_sq) -> Fraction:
    """Rational lower bound on 1 / (1 + sum of block residual norms).

    Accepts a single squared residual or one per party-subset block.
    """
    if isinstance(residual_sq, dict):
        parts = residual_sq.values()
    elif isinstance(residual_sq, (list, tuple)):
        parts = residual_sq
    else:
        parts = [residual_sq]
    total = sum((ceil_sqrt(r) for r in parts), Fraction(0))
    return 1 / (1 + total)


def eta_power_lower(eta_sq, parties: int) -> Fraction:
    """Rational lower bound on eta^N; exact for even N."""
    eta_sq = Fraction(eta_sq)
    power = eta_sq ** (parties // 2)
    if parties % 2:
        power *= floor_sqrt(eta_sq)
    return power


# ── Ball decomposition ────────────────────────────────────────────────


@dataclass(frozen=True)
class ExactDecomposition:
    """Rational convex weights over strategies; the deficit sits on the zero tensor."""

    atoms: tuple[DeterministicStrategy, ...]
    weights: tuple[Fraction, ...]
    deficit: Fraction

    def reconstruct(self, sc: Scenario) -> np.ndarray:
        x = np.zeros(sc.dimension, dtype=object)
        x[:] = Fraction(0)
        for atom, w in zip(self.atoms, self.weights):
            x = x + w * strategy_vector(atom, sc, dtype=object)
        return x


def _parties_of(mask: int, parties: int) -> list[int]:
    return [n for n in range(parties) if (mask >> n) & 1]


def _block(entries: np.ndarray, sc: Scenario, members: list[int]) -> np.ndarray:
    if not sc.marginals:
        return entries
    index = tuple(slice(1, None) if n in members else 0 for n in range(sc.parties))
    return entries[index]


def _block_norms_sq(entries: np.ndarray, sc: Scenario) -> dict[int, Fraction]:
    vector = sc.free(entries)
    masks = sc.block_masks()
    norms: dict[int, Fraction] = {}
    for value, mask in zip(vector, masks):
        if value:
            norms[int(mask)] = norms.get(int(mask), Fraction(0)) + Fraction(value) ** 2
    return norms


def ball_decomposition(r: CorrelationTensor) -> ExactDecomposition:
    """Explicit local model of r when the block norms of r sum to at most 1.

    Each party-subset block r_S is expanded over the strategies of the parties
    in S with a + first sign, weights <r_S, d_sigma> / 2^(k(m-1)); a negative
    weight flips the first party of S. With marginals every block strategy is
    averaged over the sign patterns with even parity on S, which cancels all
    other blocks.
    """
    sc = r.scenario
    if sc.parties * sc.inputs > BALL_CAP:
        raise SizeError(
            f"ball decomposition materializes 2^(N*m-1) atoms; N*m = {sc.parties * sc.inputs} "
            f"exceeds {BALL_CAP}, certify with the nu factor alone"
        )
    entries = r.as_exact().entries
    norms = _block_norms_sq(entries, sc)
    if len(norms) <= 1:
        if sum(norms.values(), Fraction(0)) > 1:
            raise DomainError("tensor lies outside the unit 2-norm ball")
    elif sum(ceil_sqrt(v) for v in norms.values()) > 1:
        raise DomainError("block norms of the tensor sum to more than 1")

    m = sc.inputs
    table = sign_table(m)[: 2 ** (m - 1)]
    ones = [1] * m
    weights: dict[DeterministicStrategy, Fraction] = {}
    for mask in sorted(norms):
        members = _parties_of(mask, sc.parties)
        k = len(members)
        t = _block(entries, sc, members)
        for _ in range(k):
            t = np.tensordot(t, table, axes=([0], [1]))
        scale = Fraction(1, 2 ** (k * (m - 1)))
        for index in np.ndindex(t.shape):
            w = Fraction(t[index])
            if w == 0:
                continue
            rows = {n: table[i].tolist() for n, i in zip(members, index)}
            if w < 0:
                rows[members[0]] = [-a for a in rows[members[0]]]
            weight = abs(w) * scale
            if not sc.marginals:
                atom = DeterministicStrategy.from_signs([rows[n] for n in range(sc.parties)])
                atom = atom.canonical(sc)
                weights[atom] = weights.get(atom, Fraction(0)) + weight
                continue
            lifted = weight / 2 ** (sc.parties - 1)
            for eps in itertools.product((1, -1), repeat=sc.parties):
                if math.prod(eps[n] for n in members) != 1:
                    continue
                signs = [
                    [eps[n] * a for a in rows.get(n, ones)] for n in range(sc.parties)
                ]
                atom = DeterministicStrategy.from_signs(signs)
                weights[atom] = weights.get(atom, Fraction(0)) + lifted

    atoms = sorted((a for a, w in weights.items() if w), key=str)
    ws = tuple(weights[a] for a in atoms)
    deficit = 1 - sum(ws, Fraction(0))
    return ExactDecomposition(tuple(atoms), ws, deficit)


# ── Rational weights and exact residuals ──────────────────────────────


@dataclass(frozen=True)
class RationalModel:
    atoms: tuple[DeterministicStrategy, ...]
    weights: tuple[Fraction, ...]
    deficit: Fraction
    residual_sq: dict[int, Fraction]
    exact: bool

    @property
    def total_residual_sq(self) -> Fraction:
        return sum(self.residual_sq.values(), Fraction(0))


def exact_residual(
    sc: Scenario,
    atoms: Sequence[DeterministicStrategy],
    weights: Sequence[Fraction],
    target: np.ndarray,
    v0: Fraction,
) -> dict[int, Fraction]:
    """||sum_i w_i d_i - v0 p||^2 per party-subset block, in exact arithmetic."""
    denominator = math.lcm(*(Fraction(w).denominator for w in weights)) if weights else 1
    numerators = [int(Fraction(w) * denominator) for w in weights]
    if denominator < 2**62:
        x = np.zeros(sc.dimension, dtype=np.int64)
        for atom, k in zip(atoms, numerators):
            x += k * strategy_vector(atom, sc, dtype=np.int64)
    else:
        x = np.zeros(sc.dimension, dtype=object)
        for atom, k in zip(atoms, numerators):
            x = x + k * strategy_vector(atom, sc, dtype=object)
    goal = sc.free(target)
    masks = sc.block_masks()
    residual: dict[int, Fraction] = {}
    for xi, pi, mask in zip(x.tolist(), goal, masks.tolist()):
        diff = Fraction(xi, denominator) - v0 * Fraction(pi)
        if diff:
            residual[mask] = residual.get(mask, Fraction(0)) + diff * diff
    return residual


def rationalize_weights(
    active: ActiveSet,
    p: CorrelationTensor,
    v0,
    bits: int = DEFAULT_WEIGHT_BITS,
) -> RationalModel:
    """Round active-set weights to multiples of 2^-bits and recompute the residual exactly.

    Weights are rounded to nearest and clipped at 0; any excess over 1 is
    taken from the largest weights, the deficit goes to the zero tensor.
    """
    sc = active.scenario
    exact = p.exact
    if not exact:
        logger.warning("Target tensor is not rational; the certificate will not be exact")
    target = p.as_exact().entries
    v0 = _as_fraction(v0)
    scale = 1 << bits

    order = sorted(range(len(active)), key=lambda i: str(active.atoms[i]))
    ks = [max(0, round(float(active.weights[i]) * scale)) for i in order]
    excess = sum(ks) - scale
    if excess > 0:
        for j in sorted(range(len(ks)), key=lambda j: -ks[j]):
            take = min(excess, ks[j])
            ks[j] -= take
            excess -= take
            if not excess:
                break
    atoms = tuple(active.atoms[i] for i, k in zip(order, ks) if k)
    weights = tuple(Fraction(k, scale) for k in ks if k)
    residual = exact_residual(sc, atoms, weights, target, v0)
    deficit = 1 - sum(weights, Fraction(0))
    logger.info(
        "Rationalized %d atoms at 2^-%d; deficit %.3e, residual^2 %.3e",
        len(atoms), bits, float(deficit), float(sum(residual.values(), Fraction(0))),
    )
    return RationalModel(atoms, weights, deficit, residual, exact)


# ── Certificates ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class Provenance:
    """How the target was built, so verify() can rebuild it."""

    state: str
    amplitudes: tuple[int, ...] | None
    measurements: tuple[tuple[tuple, ...], ...]
    seed: int = 0

    def setup(self) -> QuantumSetup:
        state = QuantumState(self.state, len(self.measurements), amplitudes=self.amplitudes)
        return QuantumSetup(state, self.measurements)


def provenance_of(q: QuantumSetup, seed: int = 0) -> Provenance:
    return Provenance(q.state.name, q.state.amplitudes, q.observables, seed)


@dataclass(frozen=True, eq=False)
class LowerBoundCertificate:
    scenario: Scenario
    target: np.ndarray
    eta_sq: Fraction
    v0: Fraction
    atoms: tuple[DeterministicStrategy, ...]
    weights: tuple[Fraction, ...]
    residual_sq: dict[int, Fraction]
    nu: Fraction
    v_low: Fraction
    provenance: Provenance | None = None
    shrink_kind: str | None = None
    shrink_vertices: tuple[RationalPoint, ...] = ()

    kind = "lower"

    @property
    def deficit(self) -> Fraction:
        return 1 - sum(self.weights, Fraction(0))


@dataclass(frozen=True, eq=False)
class UpperBoundCertificate:
    scenario: Scenario
    target: np.ndarray
    functional: BellFunctional
    ell: int
    strategy: DeterministicStrategy
    q: Fraction | float
    v_up: Fraction | float
    provenance: Provenance | None = None

    kind = "upper"


def assemble_lower(
    scenario: Scenario,
    shrink: RationalPolyhedron | PlanarPolygon | None,
    v0,
    model: RationalModel,
    target: CorrelationTensor,
    min_nu=Fraction(1, 2),
    provenance: Provenance | None = None,
) -> LowerBoundCertificate:
    """v_low = lb(eta^N) * nu * v0; a run without shrinking set bounds the finite scenario."""
    if not model.exact:
        raise CertificateError("lower certificates need an exactly rational target")
    v0 = _as_fraction(v0)
    nu = nu_factor(model.residual_sq)
    if nu < _as_fraction(min_nu):
        raise CertificateError(
            f"nu = {float(nu):.6f} is below {float(min_nu)}; the residual is too large to be informative"
        )
    if shrink is None:
        eta_sq, kind, vertices = Fraction(1), None, ()
    else:
        eta_sq = shrink.eta_sq
        kind = "polygon" if isinstance(shrink, PlanarPolygon) else "polyhedron"
        vertices = tuple(shrink.vertices)
    v_low = eta_power_lower(eta_sq, scenario.parties) * nu * v0
    logger.info("Lower bound %.6f (eta^2 %.6f, nu %.8f, v0 %s)", float(v_low), float(eta_sq), float(nu), v0)
    return LowerBoundCertificate(
        scenario=scenario,
        target=target.as_exact().entries,
        eta_sq=eta_sq,
        v0=v0,
        atoms=model.atoms,
        weights=model.weights,
        residual_sq=dict(sorted(model.residual_sq.items())),
        nu=nu,
        v_low=v_low,
        provenance=provenance,
        shrink_kind=kind,
        shrink_vertices=vertices,
    )


def integerize(g: BellFunctional, scale: float = 1e4) -> BellFunctional:
    """round(scale * G / max|G|) as an integer functional."""
    weights = g.float_weights()
    peak = float(np.max(np.abs(weights)))
    if peak == 0:
        raise CertificateError("cannot integerize the zero functional")
    entries = np.rint(weights * (scale / peak)).astype(np.int64)
    return BellFunctional(g.scenario, entries)


def assemble_upper(
    m: BellFunctional,
    ell: int,
    p: CorrelationTensor,
    strategy: DeterministicStrategy,
    provenance: Provenance | None = None,
) -> UpperBoundCertificate:
    """v_up = ell / <M, p>; requires a violation and a nontrivial bound."""
    if not m.integral:
        raise CertificateError("upper certificates need an integer functional")
    functional = BellFunctional(m.scenario, m.int_weights())
    q = functional.evaluate(p)
    q = Fraction(q) if p.exact else float(q)
    if q <= ell:
        raise CertificateError(
            f"no violation: <M, p> = {float(q):.6f} <= local bound {ell}; "
            "use a larger integer scale or solve further"
        )
    v_up = Fraction(ell) / q if p.exact else ell / q
    if v_up >= 1:
        raise CertificateError(f"trivial bound v_up = {float(v_up):.6f} >= 1")
    logger.info("Upper bound %.6f (ell %d, quantum value %.6f)", float(v_up), ell, float(q))
    target = p.entries if not p.exact else p.as_exact().entries
    return UpperBoundCertificate(m.scenario, target, functional, int(ell), strategy, q, v_up, provenance)


# ── Derived constants ─────────────────────────────────────────────────


def planar_factor(m: int, parties: int) -> float:
    """cos(pi / 2m)^N: simulation of all planar measurements by a regular m-gon."""
    return math.cos(math.pi / (2 * m)) ** parties


def planar_threshold_bound(threshold: float, m: int, parties: int) -> float:
    return threshold * planar_factor(m, parties)


@dataclass
class DerivedBounds:
    v_low: Fraction | None = None
    v_up: Fraction | float | None = None
    povm_lower: Fraction | None = None
    grothendieck: tuple[float, float] | None = None
    planar_lower: float | None = None
    notes: list[str] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = []
        if self.v_low is not None:
            out.append(f"v_low        {float(self.v_low):.6f}")
        if self.v_up is not None:
            out.append(f"v_up         {float(self.v_up):.6f}")
        if self.povm_lower is not None:
            out.append(f"povm_lower   {float(self.povm_lower):.6f}")
        if self.grothendieck is not None:
            low, high = self.grothendieck
            out.append(f"K_G(3)       [{low:.4f}, {high:.4f}]")
        if self.planar_lower is not None:
            out.append(f"planar_lower {self.planar_lower:.6f}")
        return out + self.notes


_SINGLET_STATES = ("singlet", "werner")


def _is_singlet(cert) -> bool:
    return cert is not None and cert.provenance is not None and cert.provenance.state in _SINGLET_STATES


def derived_bounds(
    lower: LowerBoundCertificate | None = None,
    upper: UpperBoundCertificate | None = None,
) -> DerivedBounds:
    """POVM bound (singlet only), Grothendieck interval and planar bound."""
    out = DerivedBounds()
    if lower is not None:
        out.v_low = lower.v_low
        if _is_singlet(lower):
            out.povm_lower = POVM_FACTOR * lower.v_low
        else:
            out.notes.append("povm bound applies to the singlet only")
        if lower.shrink_kind == "polygon":
            m = len(lower.shrink_vertices) // 2
            finite = float(lower.nu * lower.v0)
            out.planar_lower = planar_threshold_bound(finite, m, lower.scenario.parties)
    if upper is not None:
        out.v_up = upper.v_up
    if lower is not None and upper is not None and _is_singlet(lower) and _is_singlet(upper):
        out.grothendieck = (1 / float(upper.v_up), 1 / float(lower.v_low))
    return out


# ── Verification ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class VerificationReport:
    ok: bool
    reason: str = ""
    checks: tuple[str, ...] = ()


def _fail(reason: str, checks: list[str]) -> VerificationReport:
    logger.info("Certificate rejected: %s", reason)
    return VerificationReport(False, reason, tuple(checks))


def _target_matches(cert, exact: bool) -> bool:
    """The embedded target is rational and, when provenance is known, rebuilt identically."""
    target = cert.target
    if target.dtype != object or not all(isinstance(v, (Fraction, int)) for v in target.flat):
        return not exact
    if cert.provenance is None:
        return True
    try:
        setup = cert.provenance.setup()
        rebuilt = quantum_tensor(setup, cert.scenario, exact=setup.exact)
    except BellBoundsError as e:
        logger.debug("Target rebuild failed: %s", e)
        return False
    if not setup.exact:
        return not exact
    return all(Fraction(a) == Fraction(b) for a, b in zip(rebuilt.entries.flat, target.flat))


def _measurements_match(cert: LowerBoundCertificate) -> bool:
    if cert.shrink_kind is None:
        return not cert.shrink_vertices
    if cert.provenance is None:
        return False
    hull = set(cert.shrink_vertices)
    for party in cert.provenance.measurements:
        try:
            points = [RationalPoint(*(Fraction(c) for c in v)) for v in party]
        except (TypeError, ValueError):
            return False
        if set(points) | {-p for p in points} != hull:
            return False
    return True


def _recomputed_eta_sq(cert: LowerBoundCertificate) -> Fraction | None:
    if cert.shrink_kind is None:
        return Fraction(1)
    try:
        if cert.shrink_kind == "polygon":
            return planar_polygon(cert.shrink_vertices).eta_sq
        return faces_and_eta(cert.shrink_vertices).eta_sq
    except BellBoundsError as e:
        logger.debug("Shrinking factor recomputation failed: %s", e)
        return None


def _nu_holds(nu: Fraction, residual: dict[int, Fraction]) -> bool:
    if not 0 < nu <= 1:
        return False
    slack = 1 / nu - 1
    parts = [r for r in residual.values() if r]
    if len(parts) <= 1:
        return sum(parts, Fraction(0)) <= slack * slack
    return sum(ceil_sqrt(r) for r in parts) <= slack


def verify_lower(cert: LowerBoundCertificate) -> VerificationReport:
    checks: list[str] = []
    sc = cert.scenario
    if any(w < 0 for w in cert.weights):
        return _fail("negative weight", checks)
    checks.append("weights nonnegative")
    if sum(cert.weights, Fraction(0)) > 1:
        return _fail("weight sum exceeds one", checks)
    checks.append("weight sum <= 1")
    canonical = [a.canonical(sc) for a in cert.atoms]
    if len(set(canonical)) != len(canonical):
        return _fail("duplicate atom", checks)
    checks.append("atoms distinct")
    if not _target_matches(cert, exact=True):
        return _fail("inexact target", checks)
    checks.append("target exact")
    if not _measurements_match(cert):
        return _fail("measurements differ from shrinking set", checks)
    checks.append("measurements match shrinking set")
    if not 0 <= cert.v0 <= 1:
        return _fail("v0 outside [0, 1]", checks)
    residual = exact_residual(sc, cert.atoms, cert.weights, cert.target, cert.v0)
    if any(r > cert.residual_sq.get(mask, Fraction(0)) for mask, r in residual.items()):
        return _fail("residual mismatch", checks)
    checks.append("residual recomputed")
    if not _nu_holds(cert.nu, residual):
        return _fail("nu bound violated", checks)
    checks.append("nu bound")
    eta_sq = _recomputed_eta_sq(cert)
    if eta_sq is None or eta_sq != cert.eta_sq:
        return _fail("eta mismatch", checks)
    checks.append("eta recomputed")
    bound = eta_power_lower(cert.eta_sq, sc.parties) * cert.nu * cert.v0
    if cert.v_low > bound:
        return _fail("bound mismatch", checks)
    checks.append("v_low <= eta^N nu v0")
    return VerificationReport(True, "", tuple(checks))


def _exact_local_bound(m: BellFunctional) -> int | None:
    sc = m.scenario
    integer = BellFunctional(sc, m.int_weights())
    if sc.parties * sc.inputs <= EXHAUSTIVE_CAP:
        _, value = exhaustive_lmo(-integer)
        return -value
    if sc.parties == 2 and 2 * sc.inputs <= QUBO_MAX_VARIABLES:
        q = to_qubo(integer)
        solution = qubo_branch_and_bound(q)
        if solution.optimal:
            return q.c + 2 * solution.value
    return None


def verify_upper(cert: UpperBoundCertificate) -> VerificationReport:
    checks: list[str] = []
    sc = cert.scenario
    m = cert.functional
    if not m.integral:
        return _fail("functional is not integral", checks)
    exact = isinstance(cert.q, Fraction)
    if not _target_matches(cert, exact=exact):
        return _fail("quantum value mismatch", checks)
    target = CorrelationTensor(sc, cert.target)
    q = m.evaluate(target)
    if exact:
        if Fraction(q) != cert.q:
            return _fail("quantum value mismatch", checks)
    elif abs(float(q) - float(cert.q)) > 1e-9 * max(1.0, abs(float(q))):
        return _fail("quantum value mismatch", checks)
    checks.append("quantum value recomputed")
    integer = BellFunctional(sc, m.int_weights())
    if contract(integer.weights(), cert.strategy, sc) != cert.ell:
        return _fail("local bound not attained", checks)
    checks.append("strategy attains ell")
    exact_ell = _exact_local_bound(m)
    sampled, _ = sampled_max(m, SPOT_CHECKS)
    if (exact_ell is not None and exact_ell > cert.ell) or sampled > cert.ell + 1e-9:
        return _fail("local bound violated", checks)
    checks.append("ell exact" if exact_ell is not None else "ell spot-checked")
    if exact:
        if Fraction(cert.v_up) != Fraction(cert.ell) / cert.q:
            return _fail("bound mismatch", checks)
    elif abs(float(cert.v_up) - cert.ell / float(cert.q)) > 1e-12:
        return _fail("bound mismatch", checks)
    checks.append("v_up = ell / q")
    if cert.v_up >= 1:
        return _fail("trivial bound", checks)
    checks.append("v_up < 1")
    return VerificationReport(True, "", tuple(checks))


def verify(cert) -> VerificationReport:
    """Recheck every invariant of a certificate; never raises on a bad certificate."""
    try:
        if isinstance(cert, LowerBoundCertificate):
            return verify_lower(cert)
        if isinstance(cert, UpperBoundCertificate):
            return verify_upper(cert)
    except BellBoundsError as e:
        return VerificationReport(False, f"check failed: {e}")
    return VerificationReport(False, f"unknown certificate type {type(cert).__name__}")
