import dataclasses
import math
from fractions import Fraction

import numpy as np
import pytest

from bellbounds.certify import (
    POVM_FACTOR,
    LowerBoundCertificate,
    Provenance,
    RationalModel,
    UpperBoundCertificate,
    assemble_lower,
    assemble_upper,
    ball_decomposition,
    ceil_sqrt,
    derived_bounds,
    eta_power_lower,
    exact_residual,
    floor_sqrt,
    nu_factor,
    planar_threshold_bound,
    provenance_of,
    rationalize_weights,
    verify,
)
from bellbounds.errors import CertificateError, DomainError, SizeError
from bellbounds.fw import ActiveSet, bpcg
from bellbounds.lmo import BellFunctional, local_bound
from bellbounds.polyhedra import faces_and_eta, geodesic_icosahedron, rationalize_solid
from bellbounds.tensor import CorrelationTensor, DeterministicStrategy, Scenario, strategy_tensor, strategy_vector

SINGLET = Provenance("singlet", (0, 1, -1, 0), ())


def unit_entry(sc, index):
    vector = np.zeros(sc.dimension, dtype=object)
    vector[:] = Fraction(0)
    vector[index] = Fraction(1)
    return CorrelationTensor.from_vector(sc, vector)


def shrink_into_ball(sc, vector):
    """Scale an exact vector so that its block norms sum to at most 1."""
    t = CorrelationTensor.from_vector(sc, vector)
    masks = sc.block_masks()
    norms = {}
    for value, mask in zip(t.vector(), masks):
        norms[int(mask)] = norms.get(int(mask), Fraction(0)) + Fraction(value) ** 2
    total = sum(ceil_sqrt(v) for v in norms.values()) + Fraction(1, 10**9)
    return CorrelationTensor.from_vector(sc, t.vector() / total)


@pytest.fixture(scope="module")
def chsh_lower():
    from bellbounds.quantum import QuantumSetup, auto_scenario, chsh_bloch_vectors, quantum_tensor, singlet

    alice, bob = chsh_bloch_vectors()
    setup = QuantumSetup(singlet(), (tuple(alice), tuple(bob)))
    p = quantum_tensor(setup, auto_scenario(setup), exact=True)
    v0 = Fraction(7, 10)
    res = bpcg(p, v0)
    model = rationalize_weights(res.active, p, v0)
    return assemble_lower(p.scenario, None, v0, model, p, provenance=provenance_of(setup))


@pytest.fixture
def chsh_upper(chsh_tensor, chsh_functional, chsh_setup):
    bound = local_bound(chsh_functional)
    return assemble_upper(chsh_functional, bound.value, chsh_tensor, bound.strategy, provenance_of(chsh_setup))


class TestDirectedRoots:
    @pytest.mark.parametrize("q", [Fraction(2), Fraction(1, 3), Fraction(10**-7), Fraction(7, 10**12)])
    def test_bracket_true_root(self, q):
        low, high = floor_sqrt(q), ceil_sqrt(q)
        assert low * low <= q <= high * high
        assert high - low <= Fraction(1, 10**18)

    def test_perfect_squares_are_exact(self):
        assert ceil_sqrt(Fraction(1, 4)) == floor_sqrt(Fraction(1, 4)) == Fraction(1, 2)

    @pytest.mark.parametrize("root", [Fraction(1, 3), Fraction(2, 7), Fraction(5, 3)])
    def test_rational_squares_off_the_decimal_grid(self, root):
        assert ceil_sqrt(root**2) == floor_sqrt(root**2) == root

    def test_negative(self):
        with pytest.raises(DomainError):
            ceil_sqrt(-1)


class TestNuFactor:
    def test_constants(self):
        assert nu_factor(0) == 1
        assert nu_factor(1) == Fraction(1, 2)
        assert float(nu_factor(Fraction(4, 10**8))) == pytest.approx(0.9998, abs=1e-4)

    def test_blocks_add_norms(self):
        assert nu_factor({1: Fraction(1, 4), 2: Fraction(1, 4)}) == Fraction(1, 2)
        assert nu_factor([Fraction(1, 4), Fraction(1, 4)]) == Fraction(1, 2)

    def test_eta_power(self):
        eta_sq = Fraction(2, 3)
        assert eta_power_lower(eta_sq, 2) == eta_sq
        assert eta_power_lower(eta_sq, 4) == eta_sq**2
        three = eta_power_lower(eta_sq, 3)
        assert three**2 <= eta_sq**3
        assert float(three) == pytest.approx((2 / 3) ** 1.5, abs=1e-15)


class TestBallDecomposition:
    def test_zero_tensor(self):
        d = ball_decomposition(CorrelationTensor.zero(Scenario(2, 2, marginals=False)))
        assert d.atoms == ()
        assert d.deficit == 1

    def test_unit_entry_uses_four_strategies(self):
        sc = Scenario(2, 2, marginals=False)
        r = unit_entry(sc, 1)
        d = ball_decomposition(r)
        assert d.weights == (Fraction(1, 4),) * 4
        assert d.deficit == 0
        assert list(d.reconstruct(sc)) == list(r.vector())

    def test_single_input_strategy_is_tight(self):
        sc = Scenario(3, 1, marginals=False)
        d = ball_decomposition(strategy_tensor(DeterministicStrategy.parse("+|-|+"), sc))
        assert d.deficit == 0

    def test_normalized_strategy_is_not_tight(self):
        sc = Scenario(2, 2, marginals=False)
        half = CorrelationTensor.from_vector(sc, strategy_vector(DeterministicStrategy.parse("++|++"), sc, object) * Fraction(1, 2))
        d = ball_decomposition(half)
        assert d.deficit == Fraction(1, 2)
        assert list(d.reconstruct(sc)) == list(half.vector())

    @pytest.mark.parametrize("parties,inputs", [(2, 2), (2, 3), (3, 2)])
    def test_full_correlation_reconstruction(self, rational_vector, parties, inputs):
        sc = Scenario(parties, inputs, marginals=False)
        for _ in range(30):
            r = shrink_into_ball(sc, rational_vector(sc.dimension))
            d = ball_decomposition(r)
            assert all(w > 0 for w in d.weights)
            assert d.deficit >= 0
            assert list(d.reconstruct(sc)) == list(r.vector())

    @pytest.mark.parametrize("parties,inputs", [(2, 1), (2, 2), (3, 2)])
    def test_marginal_reconstruction(self, rational_vector, parties, inputs):
        sc = Scenario(parties, inputs, marginals=True)
        for _ in range(30):
            r = shrink_into_ball(sc, rational_vector(sc.dimension))
            d = ball_decomposition(r)
            assert d.deficit >= 0
            assert list(d.reconstruct(sc)) == list(r.vector())

    @pytest.mark.parametrize("inputs,divisor,total", [
        (1, 3, Fraction(1)),
        (4, 8, Fraction(21, 32)),
    ])
    def test_normalized_strategy_with_marginals(self, inputs, divisor, total):
        sc = Scenario(2, inputs, marginals=True)
        d = strategy_vector(DeterministicStrategy.all_plus(sc), sc, object) * Fraction(1, divisor)
        r = CorrelationTensor.from_vector(sc, d)
        decomposition = ball_decomposition(r)
        assert sum(decomposition.weights, Fraction(0)) == total
        assert decomposition.deficit == 1 - total
        assert list(decomposition.reconstruct(sc)) == list(r.vector())

    @pytest.mark.slow
    @pytest.mark.parametrize("marginals", [False, True])
    def test_thousand_random_tensors(self, rational_vector, marginals):
        for parties, inputs in [(2, 2), (2, 3), (3, 2)] * 334:
            sc = Scenario(parties, inputs, marginals)
            r = shrink_into_ball(sc, rational_vector(sc.dimension, denominator=1000))
            d = ball_decomposition(r)
            assert all(isinstance(w, Fraction) and w >= 0 for w in d.weights)
            assert sum(d.weights, Fraction(0)) <= 1
            assert d.deficit >= 0
            assert list(d.reconstruct(sc)) == list(r.vector())

    def test_outside_ball(self):
        sc = Scenario(2, 2, marginals=False)
        vector = np.full(sc.dimension, Fraction(3, 4), dtype=object)
        with pytest.raises(DomainError):
            ball_decomposition(CorrelationTensor.from_vector(sc, vector))

    def test_size_cap(self):
        with pytest.raises(SizeError):
            ball_decomposition(CorrelationTensor.zero(Scenario(2, 12, marginals=False)))


class TestRationalWeights:
    def test_vertex_target_has_zero_residual(self):
        sc = Scenario(2, 2, marginals=True)
        s = DeterministicStrategy.parse("+-|--")
        model = rationalize_weights(ActiveSet.single(sc, s), strategy_tensor(s, sc), 1)
        assert model.weights == (Fraction(1),)
        assert model.residual_sq == {}
        assert model.deficit == 0

    def test_weight_perturbation_moves_residual_slightly(self):
        sc = Scenario(2, 2, marginals=True)
        s = DeterministicStrategy.parse("+-|--")
        p = strategy_tensor(s, sc)
        delta = Fraction(1, 2**48)
        residual = exact_residual(sc, (s,), (1 - delta,), p.as_exact().entries, Fraction(1))
        assert sum(residual.values()) <= Fraction(sc.dimension, 2**46)

    def test_chsh_model(self, chsh_lower):
        assert sum(chsh_lower.residual_sq.values()) <= Fraction(1, 10**10)
        assert chsh_lower.deficit >= 0
        assert all(w.denominator <= 2**48 for w in chsh_lower.weights)


class TestAssembly:
    def test_chsh_lower_bound(self, chsh_lower):
        assert chsh_lower.eta_sq == 1
        assert chsh_lower.v_low >= Fraction(69, 100)
        assert chsh_lower.v_low <= chsh_lower.v0

    def test_inexact_model_is_refused(self, chsh_tensor):
        model = RationalModel((), (), Fraction(1), {}, exact=False)
        with pytest.raises(CertificateError):
            assemble_lower(chsh_tensor.scenario, None, Fraction(1, 2), model, chsh_tensor)

    def test_small_nu_is_refused(self, chsh_tensor):
        sc = chsh_tensor.scenario
        active = ActiveSet.single(sc, DeterministicStrategy.all_plus(sc))
        model = rationalize_weights(active, chsh_tensor, 0)
        with pytest.raises(CertificateError):
            assemble_lower(sc, None, 0, model, chsh_tensor)
        cert = assemble_lower(sc, None, 0, model, chsh_tensor, min_nu=0)
        assert cert.v_low == 0

    def test_icosahedral_factor(self):
        poly = faces_and_eta(rationalize_solid(geodesic_icosahedron([]), 1e-6))
        v_low = eta_power_lower(poly.eta_sq, 2) * nu_factor(Fraction(1, 10**8)) * Fraction(6, 10)
        assert v_low >= Fraction(378, 1000)

    def test_chsh_upper_bound(self, chsh_upper):
        assert chsh_upper.ell == 2
        assert isinstance(chsh_upper.v_up, Fraction)
        assert float(chsh_upper.v_up) == pytest.approx(1 / math.sqrt(2), abs=1e-6)

    def test_mermin_upper_bound(self, mermin_functional, mermin_tensor, mermin_setup):
        bound = local_bound(mermin_functional)
        cert = assemble_upper(mermin_functional, bound.value, mermin_tensor, bound.strategy, provenance_of(mermin_setup))
        assert cert.q == 4
        assert cert.v_up == Fraction(1, 2)
        assert verify(cert).ok

    def test_no_violation(self, chsh_functional):
        sc = chsh_functional.scenario
        bound = local_bound(chsh_functional)
        p = strategy_tensor(bound.strategy, sc)
        with pytest.raises(CertificateError):
            assemble_upper(chsh_functional, bound.value, p, bound.strategy)

    def test_fractional_functional_is_refused(self, chsh_tensor):
        sc = chsh_tensor.scenario
        m = BellFunctional(sc, np.full(sc.shape, 0.5))
        with pytest.raises(CertificateError):
            assemble_upper(m, 1, chsh_tensor, DeterministicStrategy.all_plus(sc))


def lower_stub(v_low, state="singlet", shrink_kind=None, vertices=()):
    sc = Scenario(2, 2, marginals=False)
    return LowerBoundCertificate(
        scenario=sc, target=np.zeros(sc.shape, dtype=object), eta_sq=Fraction(1), v0=Fraction(v_low),
        atoms=(), weights=(), residual_sq={}, nu=Fraction(1), v_low=Fraction(v_low),
        provenance=dataclasses.replace(SINGLET, state=state), shrink_kind=shrink_kind, shrink_vertices=vertices,
    )


def upper_stub(v_up, state="singlet"):
    sc = Scenario(2, 2, marginals=False)
    return UpperBoundCertificate(
        scenario=sc, target=np.zeros(sc.shape, dtype=object),
        functional=BellFunctional(sc, np.zeros(sc.shape, dtype=np.int64)), ell=0,
        strategy=DeterministicStrategy.all_plus(sc), q=Fraction(1), v_up=Fraction(v_up),
        provenance=dataclasses.replace(SINGLET, state=state),
    )


class TestDerivedBounds:
    def test_povm_bound(self):
        derived = derived_bounds(lower_stub("0.6875"))
        assert derived.povm_lower == POVM_FACTOR * Fraction(6875, 10000)
        assert float(derived.povm_lower) == pytest.approx(0.4583, abs=1e-4)

    def test_povm_bound_is_singlet_only(self):
        derived = derived_bounds(lower_stub("0.6", state="ghz"))
        assert derived.povm_lower is None
        assert derived.notes

    def test_grothendieck_interval(self):
        derived = derived_bounds(lower_stub("0.6875"), upper_stub("0.6955"))
        low, high = derived.grothendieck
        assert low == pytest.approx(1.4376, abs=3e-4)
        assert high == pytest.approx(1.4546, abs=3e-4)
        assert any(line.startswith("K_G(3)") for line in derived.lines())

    def test_planar_threshold(self):
        assert planar_threshold_bound(0.49160, 16, 3) == pytest.approx(0.48453, abs=1e-5)


class TestVerifyLower:
    def test_fresh_certificate(self, chsh_lower):
        report = verify(chsh_lower)
        assert report.ok, report.reason
        assert "residual recomputed" in report.checks

    @pytest.mark.parametrize("mutate,reason", [
        (lambda c: {"weights": (-c.weights[0],) + c.weights[1:]}, "negative weight"),
        (lambda c: {"weights": tuple(w * 2 for w in c.weights)}, "weight sum exceeds one"),
        (lambda c: {"atoms": (c.atoms[0],) * len(c.atoms)}, "duplicate atom"),
        (lambda c: {"residual_sq": {k: v * Fraction(9, 10) for k, v in c.residual_sq.items()}}, "residual mismatch"),
        (lambda c: {"nu": c.nu + Fraction(1, 10**6)}, "nu bound violated"),
        (lambda c: {"eta_sq": Fraction(1, 2)}, "eta mismatch"),
        (lambda c: {"v_low": c.v_low + Fraction(1, 10**9)}, "bound mismatch"),
        (lambda c: {"v0": Fraction(3, 2)}, "v0 outside [0, 1]"),
    ])
    def test_mutations_are_rejected(self, chsh_lower, mutate, reason):
        report = verify(dataclasses.replace(chsh_lower, **mutate(chsh_lower)))
        assert not report.ok
        assert report.reason == reason

    def test_altered_target(self, chsh_lower):
        target = chsh_lower.target.copy()
        target[0, 0] = target[0, 0] + Fraction(1, 10**6)
        report = verify(dataclasses.replace(chsh_lower, target=target))
        assert report.reason == "inexact target"

    def test_random_mutations(self, chsh_lower, rng):
        c = chsh_lower
        rejected = 0
        for _ in range(50):
            i = int(rng.integers(len(c.weights)))
            weights = list(c.weights)
            kind = rng.integers(3)
            if kind == 0:
                weights[i] = -weights[i]
            elif kind == 1:
                weights[i] += Fraction(int(rng.choice([-1, 1])), 1000)
            else:
                weights[i] = weights[i] * Fraction(int(rng.integers(2, 9)), 1)
            rejected += not verify(dataclasses.replace(c, weights=tuple(weights))).ok
        assert rejected == 50


class TestVerifyUpper:
    def test_fresh_certificate(self, chsh_upper):
        report = verify(chsh_upper)
        assert report.ok, report.reason
        assert "ell exact" in report.checks

    def test_understated_local_bound(self, chsh_upper):
        cert = dataclasses.replace(chsh_upper, ell=1, v_up=Fraction(1) / chsh_upper.q)
        assert verify(cert).reason == "local bound not attained"

    def test_weaker_strategy(self, chsh_upper):
        cert = dataclasses.replace(chsh_upper, ell=-2, strategy=DeterministicStrategy.parse("++|++"),
                                   v_up=Fraction(-2) / chsh_upper.q)
        assert verify(cert).reason == "local bound violated"

    def test_quantum_value(self, chsh_upper):
        cert = dataclasses.replace(chsh_upper, q=chsh_upper.q + 1)
        assert verify(cert).reason == "quantum value mismatch"

    def test_bound(self, chsh_upper):
        cert = dataclasses.replace(chsh_upper, v_up=chsh_upper.v_up - Fraction(1, 10**9))
        assert verify(cert).reason == "bound mismatch"

    def test_fractional_functional(self, chsh_upper):
        sc = chsh_upper.scenario
        cert = dataclasses.replace(chsh_upper, functional=BellFunctional(sc, np.full(sc.shape, 0.5)))
        assert verify(cert).reason == "functional is not integral"

    def test_verify_rejects_unknown_objects(self):
        assert not verify(object()).ok
