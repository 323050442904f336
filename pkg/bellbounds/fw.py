"""Conditional gradient solvers for membership in the local polytope.

Both solvers minimize f(x) = 1/2 ||x - v0 p||^2 over convex combinations of
deterministic strategy tensors, keeping the iterate as an explicit active set
so that a converged run doubles as a local model.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from bellbounds.errors import DomainError
from bellbounds.lmo import BellFunctional, exhaustive_lmo, heuristic_lmo
from bellbounds.tensor import (
    CorrelationTensor,
    DeterministicStrategy,
    Scenario,
    overlap,
    strategy_vector,
)

logger = logging.getLogger(__name__)

WEIGHT_DRIFT = 1e-12
# LMO mode "auto" enumerates exactly up to this many signs in total.
AUTO_EXHAUSTIVE = 12
LMO_MODES = ("auto", "heuristic", "exhaustive")


class SolverStatus(str, Enum):
    CONVERGED_INSIDE = "converged_inside"
    SEPARATED = "separated"
    ITERATION_CAP = "iteration_cap"


@dataclass
class IterationRecord:
    iteration: int
    step: str
    distance: float
    phi: float
    active_size: int
    lmo_calls: int


@dataclass
class SolverConfig:
    lazy_tolerance: float = 2.0
    max_iterations: int = 100_000
    epsilon: float = 1e-6
    restarts: int = 3000
    seed: int = 0
    threads: int = 1
    lmo: str = "auto"
    callback: Callable[[IterationRecord], None] | None = None
    callback_every: int = 1000
    refresh_every: int = 10_000
    debug: bool = False

    def __post_init__(self):
        if self.lazy_tolerance < 1:
            raise DomainError(f"lazy tolerance K must be >= 1, got {self.lazy_tolerance}")
        if self.epsilon <= 0:
            raise DomainError("epsilon must be positive")
        if self.max_iterations < 0 or self.restarts < 1 or self.threads < 1:
            raise DomainError("max_iterations >= 0, restarts >= 1 and threads >= 1 are required")
        if self.lmo not in LMO_MODES:
            raise DomainError(f"unknown LMO mode {self.lmo!r}; choose from {LMO_MODES}")


# ── Active set ────────────────────────────────────────────────────────


class ActiveSet:
    """Convex combination of canonical strategies with a cached iterate x."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.atoms: list[DeterministicStrategy] = []
        self.weights = np.zeros(0)
        self.x = np.zeros(scenario.dimension)
        self._index: dict[DeterministicStrategy, int] = {}

    @classmethod
    def single(cls, scenario: Scenario, atom: DeterministicStrategy) -> "ActiveSet":
        active = cls(scenario)
        i, _ = active.add(atom)
        active.weights[i] = 1.0
        active.x = active.vector(i)
        return active

    def __len__(self) -> int:
        return len(self.atoms)

    def __iter__(self):
        return iter(zip(self.atoms, self.weights))

    def find(self, atom: DeterministicStrategy) -> int | None:
        return self._index.get(atom.canonical(self.scenario))

    def vector(self, i: int) -> np.ndarray:
        return strategy_vector(self.atoms[i], self.scenario)

    def add(self, atom: DeterministicStrategy) -> tuple[int, bool]:
        """Index of the atom, inserting it with weight 0 if new."""
        atom = atom.canonical(self.scenario)
        if atom in self._index:
            return self._index[atom], False
        self._index[atom] = len(self.atoms)
        self.atoms.append(atom)
        self.weights = np.append(self.weights, 0.0)
        return len(self.atoms) - 1, True

    def fw_step(self, i: int, gamma: float) -> bool:
        """x <- (1 - gamma) x + gamma d_i. Returns True if the set collapsed to atom i."""
        if gamma >= 1.0:
            atom = self.atoms[i]
            self.atoms = [atom]
            self._index = {atom: 0}
            self.weights = np.ones(1)
            self.x = self.vector(0)
            return True
        self.weights *= 1.0 - gamma
        self.weights[i] += gamma
        self.x *= 1.0 - gamma
        self.x += gamma * self.vector(i)
        return False

    def pairwise(self, away: int, local: int, gamma: float) -> bool:
        """Move gamma of weight from `away` to `local`; drops `away` when emptied."""
        dropped = gamma >= self.weights[away]
        if dropped:
            gamma = self.weights[away]
        self.x += gamma * (self.vector(local) - self.vector(away))
        self.weights[local] += gamma
        if dropped:
            self.remove(away)
        else:
            self.weights[away] -= gamma
        return dropped

    def remove(self, i: int):
        """Swap-remove: the last atom takes index i."""
        last = len(self.atoms) - 1
        del self._index[self.atoms[i]]
        if i != last:
            self.atoms[i] = self.atoms[last]
            self.weights[i] = self.weights[last]
            self._index[self.atoms[i]] = i
        self.atoms.pop()
        self.weights = self.weights[:-1].copy()

    def reconstruct(self) -> np.ndarray:
        x = np.zeros(self.scenario.dimension)
        for i, w in enumerate(self.weights):
            x += w * self.vector(i)
        return x

    def refresh(self):
        self.x = self.reconstruct()

    def renormalize(self) -> float:
        """Rescale weights to sum 1 if they drifted; returns the factor applied."""
        total = float(self.weights.sum())
        if abs(total - 1.0) <= WEIGHT_DRIFT:
            return 1.0
        logger.debug("Renormalizing active set weights (sum %.17g)", total)
        self.weights /= total
        self.x /= total
        return 1.0 / total

    def check(self, tol: float = 1e-10):
        """Assert every active-set invariant (debug mode)."""
        assert np.all(self.weights >= 0), "negative weight in active set"
        assert abs(self.weights.sum() - 1.0) <= 1e-9, "active set weights do not sum to 1"
        assert len(set(self.atoms)) == len(self.atoms), "duplicate atom in active set"
        assert np.max(np.abs(self.x - self.reconstruct()), initial=0.0) <= tol, "cached iterate drifted"


# ── Inner-product cache ───────────────────────────────────────────────


class InnerProductCache:
    """Values <x - y, d_mu> for every active atom, maintained incrementally.

    With K the Gram matrix of the active strategies (popcount overlaps),
    t_mu = <y, d_mu> and s = K w, the values are s - t. A change of two
    weights costs one pass over the active set.
    """

    def __init__(self, active: ActiveSet, target: np.ndarray):
        self.active = active
        self.target = target
        self.rebuild()

    def _allocate(self, capacity: int):
        gram = np.zeros((capacity, capacity))
        t = np.zeros(capacity)
        s = np.zeros(capacity)
        g = np.zeros(capacity)
        if hasattr(self, "_gram"):
            n = self._size
            gram[:n, :n] = self._gram[:n, :n]
            t[:n] = self._t[:n]
            s[:n] = self._s[:n]
        self._gram, self._t, self._s, self._g = gram, t, s, g
        self._values = None

    def rebuild(self) -> np.ndarray:
        active = self.active
        sc = active.scenario
        n = len(active)
        if hasattr(self, "_gram"):
            del self._gram
        self._size = 0
        self._allocate(max(16, 2 * n))
        for i in range(n):
            for j in range(i + 1):
                k = overlap(active.atoms[i], active.atoms[j], sc)
                self._gram[i, j] = self._gram[j, i] = k
            self._t[i] = float(active.vector(i) @ self.target)
        self._size = n
        self._s[:n] = self._gram[:n, :n] @ active.weights
        return self._refresh()

    def _refresh(self) -> np.ndarray:
        n = self._size
        np.subtract(self._s[:n], self._t[:n], out=self._g[:n])
        if self._values is None or len(self._values) != n:
            self._values = self._g[:n]
        return self._values

    @property
    def values(self) -> np.ndarray:
        return self._values

    def gram(self, i: int, j: int) -> float:
        return self._gram[i, j]

    def update(self, changes: dict[int, float]) -> np.ndarray:
        """Apply weight deltas {index: delta}; more than two changes rebuild."""
        if not changes:
            return self._values
        if len(changes) > 2:
            return self.rebuild()
        n = self._size
        for j, delta in changes.items():
            self._s[:n] += delta * self._gram[:n, j]
        return self._refresh()

    def scale(self, factor: float) -> np.ndarray:
        self._s[: self._size] *= factor
        return self._refresh()

    def add(self) -> np.ndarray:
        """Register the newest active atom (weight 0)."""
        active = self.active
        i = self._size
        if i >= self._gram.shape[0]:
            self._allocate(2 * self._gram.shape[0])
        sc = active.scenario
        for j in range(i + 1):
            k = overlap(active.atoms[i], active.atoms[j], sc)
            self._gram[i, j] = self._gram[j, i] = k
        self._t[i] = float(active.vector(i) @ self.target)
        self._size = i + 1
        self._s[i] = self._gram[i, : i + 1] @ active.weights[: i + 1]
        return self._refresh()

    def remove(self, i: int) -> np.ndarray:
        """Mirror ActiveSet.remove (swap-remove)."""
        last = self._size - 1
        if i != last:
            self._gram[i, :] = self._gram[last, :]
            self._gram[:, i] = self._gram[:, last]
            self._t[i] = self._t[last]
            self._s[i] = self._s[last]
        self._size = last
        return self._refresh()


def fast_inner_cache(active: ActiveSet, target: CorrelationTensor | np.ndarray) -> InnerProductCache:
    if isinstance(target, CorrelationTensor):
        target = target.as_float().vector()
    return InnerProductCache(active, np.asarray(target, dtype=np.float64))


def direct_values(active: ActiveSet, target: np.ndarray) -> np.ndarray:
    """<x - y, d_mu> recomputed from scratch."""
    g = active.x - target
    return np.array([active.vector(i) @ g for i in range(len(active))])


# ── Solvers ───────────────────────────────────────────────────────────


@dataclass(frozen=True)
class SolverResult:
    scenario: Scenario
    v0: float
    status: SolverStatus
    active: ActiveSet
    distance: float
    phi: float
    gradient: np.ndarray
    iterations: int
    lmo_calls: int
    elapsed: float
    objective_trace: list[float] = field(default_factory=list)

    @property
    def x(self) -> np.ndarray:
        return self.active.x


class _Oracle:
    def __init__(self, sc: Scenario, cfg: SolverConfig):
        self.scenario = sc
        self.cfg = cfg
        mode = cfg.lmo
        if mode == "auto":
            mode = "exhaustive" if sc.parties * sc.inputs <= AUTO_EXHAUSTIVE else "heuristic"
        self.mode = mode
        self.calls = 0

    def __call__(self, gradient: np.ndarray) -> DeterministicStrategy:
        g = BellFunctional.from_vector(self.scenario, gradient)
        if self.mode == "exhaustive":
            s, _ = exhaustive_lmo(g)
        else:
            s = heuristic_lmo(g, self.cfg.restarts, seed=(self.cfg.seed, self.calls), threads=self.cfg.threads)
        self.calls += 1
        return s.canonical(self.scenario)


def _target(p: CorrelationTensor, v0) -> tuple[Scenario, np.ndarray]:
    if not 0 <= v0 <= 1:
        raise DomainError(f"v0 must lie in [0, 1], got {v0}")
    return p.scenario, float(v0) * p.as_float().vector()


def _objective(x: np.ndarray, y: np.ndarray) -> float:
    r = x - y
    return 0.5 * float(r @ r)


def _notify(cfg: SolverConfig, record: IterationRecord):
    if record.iteration % cfg.callback_every:
        return
    logger.debug(
        "it=%d step=%s dist=%.3e phi=%.3e active=%d lmo=%d",
        record.iteration, record.step, record.distance, record.phi,
        record.active_size, record.lmo_calls,
    )
    if cfg.callback is not None:
        cfg.callback(record)


def _check_descent(f_old: float, f_new: float, step: str, iteration: int):
    assert f_new <= f_old + 1e-12 * (1.0 + f_old), (
        f"objective increased on {step} step at iteration {iteration}: {f_old} -> {f_new}"
    )


def _finish(name, sc, v0, status, active, y, phi, iterations, oracle, start, trace) -> SolverResult:
    elapsed = time.perf_counter() - start
    gradient = active.x - y
    distance = math.sqrt(float(gradient @ gradient))
    logger.info(
        "%s finished: %s after %d iterations, distance %.3e, %d atoms, %d LMO calls (%.2fs)",
        name, status.value, iterations, distance, len(active), oracle.calls, elapsed,
    )
    return SolverResult(
        sc, float(v0), status, active, distance, phi, gradient, iterations, oracle.calls, elapsed, trace,
    )


def frank_wolfe_vanilla(p: CorrelationTensor, v0, cfg: SolverConfig | None = None) -> SolverResult:
    """Gilbert's algorithm: one LMO call and an exact line search per iteration."""
    cfg = cfg or SolverConfig()
    sc, y = _target(p, v0)
    oracle = _Oracle(sc, cfg)
    start = time.perf_counter()
    logger.info("Frank-Wolfe on scenario %s at v0=%s", sc, v0)

    active = ActiveSet.single(sc, oracle(-y))
    f = _objective(active.x, y)
    trace = [f]
    gap = math.inf
    iterations = 0
    eps = cfg.epsilon
    while True:
        if math.sqrt(2.0 * f) <= eps:
            status = SolverStatus.CONVERGED_INSIDE
            break
        if iterations >= cfg.max_iterations:
            status = SolverStatus.ITERATION_CAP
            break
        g = active.x - y
        atom = oracle(g)
        d = strategy_vector(atom, sc)
        direction = active.x - d
        gap = float(g @ direction)
        if gap <= eps**2 / 2:
            status = SolverStatus.SEPARATED
            break
        iterations += 1
        gamma = min(max(gap / float(direction @ direction), 0.0), 1.0)
        i, _ = active.add(atom)
        active.fw_step(i, gamma)
        active.renormalize()
        if iterations % cfg.refresh_every == 0:
            active.refresh()

        f_new = _objective(active.x, y)
        if cfg.debug:
            _check_descent(f, f_new, "fw", iterations)
            active.check()
        f = f_new
        trace.append(f)
        _notify(cfg, IterationRecord(iterations, "fw", math.sqrt(2.0 * f), gap, len(active), oracle.calls))

    phi = gap if math.isfinite(gap) else f
    return _finish("Frank-Wolfe", sc, v0, status, active, y, phi, iterations, oracle, start, trace)


def bpcg(p: CorrelationTensor, v0, cfg: SolverConfig | None = None) -> SolverResult:
    """Lazy blended pairwise conditional gradients.

    Each iteration either moves weight between the worst and best active
    atoms (pairwise, or drop when the away atom empties), calls the LMO and
    takes a Frank-Wolfe step when the new vertex improves on the dual estimate
    phi by a factor 1/K, or halves phi.
    """
    cfg = cfg or SolverConfig()
    sc, y = _target(p, v0)
    oracle = _Oracle(sc, cfg)
    start = time.perf_counter()
    logger.info("BPCG on scenario %s at v0=%s (K=%s)", sc, v0, cfg.lazy_tolerance)

    active = ActiveSet.single(sc, oracle(-y))
    cache = InnerProductCache(active, y)
    f = _objective(active.x, y)
    phi = f
    trace = [f]
    iterations = 0
    eps = cfg.epsilon
    dim = float(sc.dimension)
    while True:
        if math.sqrt(2.0 * f) <= eps:
            status = SolverStatus.CONVERGED_INSIDE
            break
        if phi < eps**2 / 2:
            status = SolverStatus.SEPARATED
            break
        if iterations >= cfg.max_iterations:
            status = SolverStatus.ITERATION_CAP
            break
        iterations += 1

        values = cache.values
        away = int(np.argmax(values))
        local = int(np.argmin(values))
        spread = float(values[away] - values[local])
        if away != local and spread >= phi:
            gamma = spread / (2.0 * (dim - cache.gram(away, local)))
            gamma = min(gamma, float(active.weights[away]))
            dropped = active.pairwise(away, local, gamma)
            cache.update({away: -gamma, local: gamma})
            if dropped:
                cache.remove(away)
            step = "drop" if dropped else "pairwise"
        else:
            g = active.x - y
            atom = oracle(g)
            d = strategy_vector(atom, sc)
            direction = active.x - d
            gap = float(g @ direction)
            if gap >= phi / cfg.lazy_tolerance:
                gamma = min(max(gap / float(direction @ direction), 0.0), 1.0)
                if gamma > 0.0:
                    i, new = active.add(atom)
                    if new:
                        cache.add()
                    if active.fw_step(i, gamma):
                        cache.rebuild()
                    else:
                        cache.scale(1.0 - gamma)
                        cache.update({i: gamma})
                step = "fw"
            else:
                phi /= 2.0
                step = "null"

        factor = active.renormalize()
        if factor != 1.0:
            cache.scale(factor)
        if iterations % cfg.refresh_every == 0:
            active.refresh()
            cache.rebuild()

        f_new = _objective(active.x, y)
        if cfg.debug:
            _check_descent(f, f_new, step, iterations)
            active.check()
            assert np.allclose(cache.values, direct_values(active, y), atol=1e-8), "inner-product cache drifted"
        f = f_new
        trace.append(f)
        _notify(cfg, IterationRecord(iterations, step, math.sqrt(2.0 * f), phi, len(active), oracle.calls))

    return _finish("BPCG", sc, v0, status, active, y, phi, iterations, oracle, start, trace)


ALGORITHMS = {
    "bpcg": bpcg,
    "fw": frank_wolfe_vanilla,
}


def solve(p: CorrelationTensor, v0, cfg: SolverConfig | None = None, algorithm: str = "bpcg") -> SolverResult:
    if algorithm not in ALGORITHMS:
        raise DomainError(f"unknown algorithm {algorithm!r}; choose from {sorted(ALGORITHMS)}")
    return ALGORITHMS[algorithm](p, v0, cfg)


def extract_hyperplane(res: SolverResult, p: CorrelationTensor, v0) -> BellFunctional:
    """G = v0 p - x_T; a local bound of G below <G, v0 p> separates the target."""
    if res.status == SolverStatus.CONVERGED_INSIDE:
        logger.warning("Extracting a hyperplane from a run that converged inside the polytope")
    _, y = _target(p, v0)
    return BellFunctional.from_vector(p.scenario, y - res.active.x)
