import logging
import math
from fractions import Fraction

import numpy as np
import pytest

from bellbounds.errors import DomainError
from bellbounds.polyhedra import (
    NAMED_SOLIDS,
    RationalPoint,
    faces_and_eta,
    float_representatives,
    geodesic_icosahedron,
    hull_violations,
    octahedron,
    pentakis_dodecahedron,
    planar_polygon,
    polygon_eta_sq,
    rationalize,
    rationalize_solid,
    read_polyhedron,
    shrink_weights,
    write_polyhedron,
)

ICOSAHEDRON_ETA_SQ = (5 + 2 * math.sqrt(5)) / 15

ONE, ZERO = Fraction(1), Fraction(0)
E1 = RationalPoint(ONE, ZERO, ZERO)
E2 = RationalPoint(ZERO, ONE, ZERO)
E3 = RationalPoint(ZERO, ZERO, ONE)


@pytest.fixture(scope="module")
def icosahedron():
    return faces_and_eta(rationalize_solid(geodesic_icosahedron([]), 1e-9))


class TestGenerators:
    @pytest.mark.parametrize("schedule,count", [
        ([], 12),
        ([3], 92),
        pytest.param([3, 3], 812, marks=pytest.mark.slow),
    ])
    def test_geodesic_vertex_counts(self, schedule, count):
        points = geodesic_icosahedron(schedule)
        assert len(points) == count
        np.testing.assert_allclose(np.linalg.norm(points, axis=1), 1.0, atol=1e-12)

    def test_schedule_rejects_zero(self):
        with pytest.raises(DomainError):
            geodesic_icosahedron([0])

    def test_pentakis_has_sixteen_pairs(self):
        assert len(float_representatives(pentakis_dodecahedron())) == 16

    @pytest.mark.parametrize("m", [3, 6, 16, 46])
    def test_named_solids_match_input_count(self, m):
        assert len(float_representatives(NAMED_SOLIDS[m]())) == m


class TestRationalize:
    def test_axes_are_exact(self):
        assert rationalize((0.0, 0.0, 1.0)) == E3
        assert rationalize((0.0, 0.0, -1.0)) == -E3
        assert rationalize((1.0, 0.0, 0.0)) == E1
        assert rationalize((0.0, -1.0, 0.0)) == -E2

    @pytest.mark.parametrize("tol", [1e-6, 1e-9])
    def test_random_points_land_on_sphere(self, rng, tol):
        v = rng.normal(size=(500, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        for p in v:
            q = rationalize(p, tol)
            assert q.on_sphere()
            assert np.linalg.norm(q.as_float() - p) <= tol

    @pytest.mark.slow
    def test_ten_thousand_points(self, rng):
        v = rng.normal(size=(10_000, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        assert all(rationalize(p, 1e-9).on_sphere() for p in v)

    def test_rejects_point_off_sphere(self):
        with pytest.raises(DomainError):
            rationalize((1.0, 1.0, 0.0))

    def test_solid_is_antipodal(self):
        vertices = rationalize_solid(geodesic_icosahedron([]), 1e-6)
        assert len(vertices) == 12
        assert set(vertices) == {-p for p in vertices}


class TestShrinkingFactor:
    def test_octahedron_is_exact(self):
        poly = faces_and_eta(rationalize_solid(octahedron()))
        assert poly.eta_sq == Fraction(1, 3)
        assert len(poly.faces) == 8
        assert poly.inputs == 3

    def test_icosahedron(self, icosahedron):
        assert float(icosahedron.eta_sq) == pytest.approx(ICOSAHEDRON_ETA_SQ, abs=1e-7)
        assert len(icosahedron.faces) == 20
        assert hull_violations(icosahedron) == 0

    def test_pentakis(self):
        poly = faces_and_eta(rationalize_solid(pentakis_dodecahedron(), 1e-9))
        assert poly.eta == pytest.approx(0.9226, abs=1e-3)
        assert hull_violations(poly) == 0

    def test_finer_solids_shrink_less(self, icosahedron):
        octa = faces_and_eta(rationalize_solid(octahedron()))
        finer = faces_and_eta(rationalize_solid(geodesic_icosahedron([3]), 1e-6))
        assert octa.eta_sq < icosahedron.eta_sq < finer.eta_sq < 1

    @pytest.mark.slow
    def test_geodesic_family_ordering(self, icosahedron):
        middle = faces_and_eta(rationalize_solid(NAMED_SOLIDS[46](), 1e-6))
        finest = faces_and_eta(rationalize_solid(NAMED_SOLIDS[406](), 1e-6))
        assert finest.inputs == 406
        assert finest.eta_sq > middle.eta_sq > icosahedron.eta_sq
        assert icosahedron.eta == pytest.approx(0.7947, abs=1e-4)
        assert abs(math.sqrt(finest.eta_sq) - 0.9968) <= 1e-4
        assert hull_violations(finest) == 0

    def test_missing_antipodes_are_added(self, caplog):
        with caplog.at_level(logging.WARNING, logger="bellbounds.polyhedra"):
            poly = faces_and_eta([E1, E2, E3])
        assert len(poly.vertices) == 6
        assert poly.eta_sq == Fraction(1, 3)
        assert "not antipodal" in caplog.text

    def test_vertices_must_be_on_sphere(self):
        with pytest.raises(DomainError):
            faces_and_eta([E1, E2, RationalPoint(ZERO, ZERO, Fraction(1, 2))])

    def test_coplanar_vertices(self):
        diagonal = RationalPoint(Fraction(3, 5), Fraction(4, 5), ZERO)
        with pytest.raises(DomainError):
            faces_and_eta([E1, E2, diagonal])

    def test_shrink_weights_reproduce_scaled_direction(self, icosahedron, rng):
        vertices = np.array([p.as_float() for p in icosahedron.vertices])
        for u in rng.normal(size=(50, 3)):
            u /= np.linalg.norm(u)
            w = shrink_weights(icosahedron, u)
            assert np.all(w >= 0)
            assert w.sum() == pytest.approx(1.0, abs=1e-12)
            np.testing.assert_allclose(w @ vertices, icosahedron.eta * u, atol=1e-10)


class TestPlanarPolygon:
    def test_square(self):
        assert polygon_eta_sq([E1, E2]) == Fraction(1, 2)

    def test_rational_hexagon(self):
        from bellbounds.quantum import polygon_bloch_vectors

        poly = planar_polygon(polygon_bloch_vectors(6, tol=1e-9))
        assert len(poly.vertices) == 12
        assert float(poly.eta_sq) == pytest.approx(math.cos(math.pi / 12) ** 2, abs=1e-8)

    def test_rejects_points_off_plane(self):
        with pytest.raises(DomainError):
            planar_polygon([E1, E2, E3])


class TestVertexFiles:
    def test_exact_file(self, tmp_path, icosahedron):
        path = tmp_path / "ico.txt"
        write_polyhedron(path, icosahedron.vertices)
        back = read_polyhedron(path)
        assert back == list(icosahedron.vertices)
        assert faces_and_eta(back).eta_sq == icosahedron.eta_sq


@pytest.mark.slow
class TestLargeVertexFile:
    def test_406_inputs_gradient_and_oracle_call(self, tmp_path):
        from bellbounds.lmo import BellFunctional, heuristic_lmo
        from bellbounds.polyhedra import representatives
        from bellbounds.quantum import quantum_tensor, setup_from_vectors, singlet
        from bellbounds.tensor import DeterministicStrategy, Scenario, strategy_vector

        path = tmp_path / "geodesic-406.txt"
        write_polyhedron(path, rationalize_solid(NAMED_SOLIDS[406](), 1e-6))
        reps = representatives(read_polyhedron(path))
        assert len(reps) == 406

        setup = setup_from_vectors(singlet(), reps)
        sc = Scenario(2, 406, marginals=False)
        p = quantum_tensor(setup, sc)
        gradient = strategy_vector(DeterministicStrategy.all_plus(sc), sc) - 0.6 * p.vector()
        s = heuristic_lmo(BellFunctional.from_vector(sc, gradient), restarts=8)
        s.check(sc)
