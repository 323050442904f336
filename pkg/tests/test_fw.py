import logging
import math
from fractions import Fraction

import numpy as np
import pytest

from bellbounds.certify import integerize
from bellbounds.errors import DomainError
from bellbounds.fw import (
    ActiveSet,
    InnerProductCache,
    SolverConfig,
    SolverStatus,
    bpcg,
    direct_values,
    extract_hyperplane,
    fast_inner_cache,
    frank_wolfe_vanilla,
    solve,
)
from bellbounds.lmo import local_bound
from bellbounds.tensor import DeterministicStrategy, Scenario, strategy_tensor, strategy_vector


def random_strategy(rng, sc):
    return DeterministicStrategy.from_signs(rng.choice([-1, 1], size=(sc.parties, sc.inputs)).tolist())


class TestSolverConfig:
    @pytest.mark.parametrize("kwargs", [
        {"lazy_tolerance": 0.5},
        {"epsilon": 0.0},
        {"restarts": 0},
        {"threads": 0},
        {"lmo": "random"},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(DomainError):
            SolverConfig(**kwargs)


class TestActiveSet:
    def test_atoms_are_canonical_and_unique(self):
        sc = Scenario(2, 2, marginals=False)
        active = ActiveSet.single(sc, DeterministicStrategy.parse("-+|++"))
        i, new = active.add(DeterministicStrategy.parse("+-|--"))
        assert (i, new) == (0, False)
        assert str(active.atoms[0]) == "+-|--"

    def test_steps_keep_invariants(self, rng):
        sc = Scenario(2, 3, marginals=True)
        active = ActiveSet.single(sc, random_strategy(rng, sc))
        for _ in range(20):
            i, _ = active.add(random_strategy(rng, sc))
            active.fw_step(i, float(rng.uniform(0.05, 0.5)))
        active.check()
        if len(active) > 1:
            active.pairwise(0, 1, 10.0)
            active.check()

    def test_full_step_collapses(self, rng):
        sc = Scenario(2, 2, marginals=True)
        active = ActiveSet.single(sc, random_strategy(rng, sc))
        i, _ = active.add(DeterministicStrategy.all_plus(sc))
        assert active.fw_step(i, 1.0)
        assert len(active) == 1
        np.testing.assert_array_equal(active.x, strategy_vector(DeterministicStrategy.all_plus(sc), sc))


class TestInnerProductCache:
    def test_incremental_updates_match_direct_values(self, rng):
        sc = Scenario(2, 3, marginals=True)
        y = rng.uniform(-0.5, 0.5, size=sc.dimension)
        active = ActiveSet.single(sc, random_strategy(rng, sc))
        cache = InnerProductCache(active, y)
        for _ in range(8):
            i, new = active.add(random_strategy(rng, sc))
            if new:
                cache.add()
            active.fw_step(i, 0.3)
            cache.scale(0.7)
            cache.update({i: 0.3})
            np.testing.assert_allclose(cache.values, direct_values(active, y), atol=1e-12)

        if len(active) > 1:
            active.pairwise(0, 1, 0.01)
            cache.update({0: -0.01, 1: 0.01})
            np.testing.assert_allclose(cache.values, direct_values(active, y), atol=1e-12)

            gamma = float(active.weights[0])
            assert active.pairwise(0, 1, gamma)
            cache.update({0: -gamma, 1: gamma})
            cache.remove(0)
            np.testing.assert_allclose(cache.values, direct_values(active, y), atol=1e-12)

    def test_empty_update_is_a_no_op(self, rng, chsh_tensor):
        sc = chsh_tensor.scenario
        active = ActiveSet.single(sc, random_strategy(rng, sc))
        cache = fast_inner_cache(active, chsh_tensor)
        values = cache.values
        assert cache.update({}) is values

    def test_many_changes_rebuild(self, rng):
        sc = Scenario(3, 2, marginals=False)
        y = rng.uniform(-0.5, 0.5, size=sc.dimension)
        active = ActiveSet.single(sc, random_strategy(rng, sc))
        cache = InnerProductCache(active, y)
        for _ in range(4):
            i, new = active.add(random_strategy(rng, sc))
            if new:
                cache.add()
        active.weights[:] = 1.0 / len(active)
        active.refresh()
        cache.update({0: 0.0, 1: 0.0, 2: 0.0})
        np.testing.assert_allclose(cache.values, direct_values(active, y), atol=1e-12)


class TestSolvers:
    @pytest.mark.parametrize("algorithm", ["bpcg", "fw"])
    def test_origin_is_inside(self, chsh_tensor, algorithm):
        res = solve(chsh_tensor, 0, SolverConfig(), algorithm)
        assert res.status == SolverStatus.CONVERGED_INSIDE
        assert res.distance <= 1e-6

    @pytest.mark.parametrize("algorithm", ["bpcg", "fw"])
    def test_vertex_target_needs_one_oracle_call(self, rng, algorithm):
        sc = Scenario(2, 3, marginals=True)
        p = strategy_tensor(random_strategy(rng, sc), sc)
        res = solve(p, 1, SolverConfig(), algorithm)
        assert res.status == SolverStatus.CONVERGED_INSIDE
        assert res.distance == 0
        assert res.iterations == 0
        assert res.lmo_calls == 1

    @pytest.mark.parametrize("algorithm,v0", [("bpcg", Fraction(65, 100)), ("fw", Fraction(1, 2))])
    def test_chsh_inside(self, chsh_tensor, algorithm, v0):
        res = solve(chsh_tensor, v0, SolverConfig(debug=True), algorithm)
        assert res.status == SolverStatus.CONVERGED_INSIDE
        assert abs(res.active.weights.sum() - 1) <= 1e-9
        assert np.all(res.active.weights >= 0)

    def test_chsh_outside(self, chsh_tensor):
        res = bpcg(chsh_tensor, Fraction(3, 4))
        assert res.status == SolverStatus.SEPARATED
        assert res.distance > 1e-2

    def test_plain_frank_wolfe_stalls_outside(self, chsh_tensor):
        res = frank_wolfe_vanilla(chsh_tensor, Fraction(3, 4), SolverConfig(max_iterations=2000))
        assert res.status != SolverStatus.CONVERGED_INSIDE
        assert res.distance > 1e-2

    @pytest.mark.parametrize("algorithm", [bpcg, frank_wolfe_vanilla])
    def test_objective_never_increases(self, chsh_tensor, algorithm):
        res = algorithm(chsh_tensor, 0.68, SolverConfig(max_iterations=2000))
        trace = np.array(res.objective_trace)
        assert np.all(np.diff(trace) <= 1e-12 * (1 + trace[:-1]))

    def test_iteration_cap(self, chsh_tensor):
        res = bpcg(chsh_tensor, 0.7, SolverConfig(max_iterations=3))
        assert res.status == SolverStatus.ITERATION_CAP
        assert res.iterations == 3

    def test_phi_halves_only_on_null_steps(self, chsh_tensor):
        records = []
        cfg = SolverConfig(callback=records.append, callback_every=1)
        bpcg(chsh_tensor, 0.69, cfg)
        assert records
        assert any(r.step == "null" for r in records)
        for prev, cur in zip(records, records[1:]):
            expected = prev.phi / 2 if cur.step == "null" else prev.phi
            assert cur.phi == expected

    def test_rejects_visibility_outside_unit_interval(self, chsh_tensor):
        with pytest.raises(DomainError):
            bpcg(chsh_tensor, 1.5)
        with pytest.raises(DomainError):
            solve(chsh_tensor, 0.5, algorithm="away")

    def test_lazy_solver_calls_oracle_less(self, chsh_tensor):
        fewer = 0
        for seed in range(20):
            cfg = SolverConfig(lmo="heuristic", restarts=50, seed=seed)
            lazy = bpcg(chsh_tensor, 0.4, cfg)
            plain = frank_wolfe_vanilla(chsh_tensor, 0.4, cfg)
            assert lazy.status == plain.status == SolverStatus.CONVERGED_INSIDE
            fewer += lazy.lmo_calls <= plain.lmo_calls
        assert fewer >= 18

    def test_same_seed_same_active_set(self, chsh_tensor):
        cfg = SolverConfig(lmo="heuristic", restarts=64, seed=3)
        a = bpcg(chsh_tensor, 0.6, cfg)
        b = bpcg(chsh_tensor, 0.6, SolverConfig(lmo="heuristic", restarts=64, seed=3, threads=2))
        assert a.active.atoms == b.active.atoms
        np.testing.assert_array_equal(a.active.weights, b.active.weights)


class TestHyperplane:
    def test_chsh_hyperplane_recovers_tsirelson_threshold(self, chsh_tensor):
        v0 = Fraction(3, 4)
        res = bpcg(chsh_tensor, v0)
        m = integerize(extract_hyperplane(res, chsh_tensor, v0))
        bound = local_bound(m)
        q = m.evaluate(chsh_tensor)
        assert bound.exact
        assert float(bound.value / q) == pytest.approx(1 / math.sqrt(2), abs=1e-3)

    def test_warns_when_target_is_inside(self, chsh_tensor, caplog):
        res = bpcg(chsh_tensor, 0.5)
        with caplog.at_level(logging.WARNING, logger="bellbounds.fw"):
            g = extract_hyperplane(res, chsh_tensor, 0.5)
        assert "converged inside" in caplog.text
        assert np.max(np.abs(g.float_weights())) <= 1e-6


@pytest.mark.slow
class TestConvergenceRate:
    def test_log_objective_falls_linearly_on_icosahedron(self):
        from bellbounds.polyhedra import NAMED_SOLIDS, faces_and_eta, rationalize_solid
        from bellbounds.quantum import auto_scenario, polyhedron_setup, quantum_tensor

        poly = faces_and_eta(rationalize_solid(NAMED_SOLIDS[6](), 1e-6))
        setup = polyhedron_setup(poly, 2)
        p = quantum_tensor(setup, auto_scenario(setup), exact=True)
        res = bpcg(p, Fraction(3, 5))
        assert res.status == SolverStatus.CONVERGED_INSIDE

        trace = np.array(res.objective_trace)
        tail = np.arange(len(trace))[len(trace) // 2:]
        tail = tail[trace[tail] > 0]
        assert len(tail) >= 2
        slope, _ = np.polyfit(tail, np.log(trace[tail]), 1)
        assert slope < 0
