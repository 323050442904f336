"""Linear minimization oracles over deterministic strategies.

Every oracle minimizes <G, d_s> over strategies s; local bounds of Bell
functionals are the same problem for -M. Three engines are provided: batched
alternating best responses from random starts, exhaustive enumeration with the
last party solved in closed form, and an exact branch and bound over the QUBO
reformulation of bipartite functionals.
"""

import logging
import math
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import dimod
import numpy as np

from bellbounds.errors import ShapeError, SizeError
from bellbounds.tensor import (
    CorrelationTensor,
    DeterministicStrategy,
    Scenario,
    contract,
    format_tensor,
    parse_tensor,
)

logger = logging.getLogger(__name__)

DEFAULT_RESTARTS = 3000
RESTART_CHUNK = 256
MAX_ROUNDS = 100
EXHAUSTIVE_CAP = 26
# local_bound enumerates below this N*m and uses the QUBO path above it.
EXHAUSTIVE_LIMIT = 20
QUBO_MAX_VARIABLES = 64
_VECTORIZED_ENTRIES = 1 << 23


# ── Bell functionals ──────────────────────────────────────────────────


def _to_int(value) -> int:
    if isinstance(value, float):
        return int(value)
    return int(Fraction(value))


@dataclass(frozen=True, eq=False)
class BellFunctional:
    """Linear functional on correlation tensors; the root coefficient is ignored."""

    scenario: Scenario
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, copy=True)
        if entries.shape != self.scenario.shape:
            raise ShapeError(f"functional shape {entries.shape} does not match scenario {self.scenario}")
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_vector(cls, sc: Scenario, vector) -> "BellFunctional":
        return cls(sc, sc.embed(np.asarray(vector), root=0))

    @property
    def integral(self) -> bool:
        e = self.entries
        if np.issubdtype(e.dtype, np.integer):
            return True
        if e.dtype == object:
            return all(Fraction(v).denominator == 1 for v in e.flat)
        return bool(np.all(np.isfinite(e)) and np.all(np.mod(e, 1) == 0))

    def weights(self) -> np.ndarray:
        """Entries with the root coefficient zeroed (float unless already exact)."""
        w = np.array(self.entries, copy=True)
        if self.scenario.marginals:
            w.flat[0] = 0
        return w

    def int_weights(self) -> np.ndarray:
        """Exact Python-int weights; requires an integral functional."""
        if not self.integral:
            raise ShapeError("functional has non-integer entries")
        out = np.empty(self.entries.shape, dtype=object)
        for index, v in np.ndenumerate(self.entries):
            out[index] = _to_int(v)
        if self.scenario.marginals:
            out.flat[0] = 0
        return out

    def float_weights(self) -> np.ndarray:
        return self.weights().astype(np.float64)

    def vector(self) -> np.ndarray:
        return self.scenario.free(self.entries).copy()

    def value(self, s: DeterministicStrategy):
        """<M, d_s>."""
        return contract(self.weights(), s, self.scenario)

    def evaluate(self, t: CorrelationTensor):
        """<M, t> over the free entries."""
        if t.scenario != self.scenario:
            raise ShapeError(f"scenario mismatch: {t.scenario} vs {self.scenario}")
        value = np.dot(self.vector(), t.vector())
        return value.item() if isinstance(value, np.generic) else value

    def __neg__(self) -> "BellFunctional":
        return BellFunctional(self.scenario, -self.entries)


def read_functional(path) -> BellFunctional:
    with open(path, encoding="utf-8") as f:
        sc, entries = parse_tensor(f)
    return BellFunctional(sc, entries)


def write_functional(path, m: BellFunctional):
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_tensor(m.scenario, m.entries))


def _gradient_weights(gradient) -> tuple[Scenario, np.ndarray]:
    sc = gradient.scenario
    w = np.array(gradient.entries, dtype=np.float64, copy=True)
    if sc.marginals:
        w.flat[0] = 0.0
    return sc, w


# ── Heuristic oracle ──────────────────────────────────────────────────


def _extend(signs: np.ndarray, marginals: bool) -> np.ndarray:
    if not marginals:
        return signs
    return np.hstack([np.ones((signs.shape[0], 1)), signs])


def _coefficients(weights: np.ndarray, exts: list[np.ndarray], party: int) -> np.ndarray:
    """Per-restart linear coefficients of one party with the others fixed."""
    count = exts[0].shape[0]
    n = weights.ndim
    if n == 1:
        return np.broadcast_to(weights, (count, weights.shape[0]))
    letters = string.ascii_lowercase[:n]
    operands = [weights]
    terms = [letters]
    for k in range(n):
        if k != party:
            operands.append(exts[k])
            terms.append("z" + letters[k])
    subscripts = ",".join(terms) + "->z" + letters[party]
    return np.einsum(subscripts, *operands, optimize=True)


def _best_of(values: np.ndarray, strategies) -> tuple[float, DeterministicStrategy]:
    """Minimal value; among near-ties the lexicographically smallest strategy."""
    low = float(np.min(values))
    tol = 1e-12 * max(1.0, abs(low))
    candidates = [strategies(i) for i in np.nonzero(values <= low + tol)[0]]
    return low, min(candidates, key=str)


def _alternate_chunk(weights: np.ndarray, sc: Scenario, count: int, seed_seq) -> tuple[float, DeterministicStrategy]:
    rng = np.random.default_rng(seed_seq)
    parties = [rng.integers(0, 2, size=(count, sc.inputs)) * 2.0 - 1.0 for _ in range(sc.parties)]
    values = np.full(count, np.inf)
    for _ in range(MAX_ROUNDS):
        for n in range(sc.parties):
            exts = [_extend(p, sc.marginals) for p in parties]
            coeff = _coefficients(weights, exts, n)
            free = coeff[:, 1:] if sc.marginals else coeff
            parties[n] = np.where(free > 0, -1.0, 1.0)
        last = _extend(parties[-1], sc.marginals)
        new_values = np.einsum("zx,zx->z", coeff, last)
        improved = new_values < values - 1e-12 * np.maximum(1.0, np.abs(new_values))
        values = new_values
        if not improved.any():
            break

    def strategy(i):
        return DeterministicStrategy.from_signs([p[i].astype(int).tolist() for p in parties])

    return _best_of(values, strategy)


def heuristic_lmo(
    gradient,
    restarts: int = DEFAULT_RESTARTS,
    seed: int | Sequence[int] = 0,
    threads: int = 1,
) -> DeterministicStrategy:
    """Alternating best responses from random sign vectors, best of all restarts.

    Restarts run in fixed chunks seeded from one SeedSequence, so the result
    depends on the seed only, never on the thread count.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    sc, weights = _gradient_weights(gradient)
    sizes = [min(RESTART_CHUNK, restarts - start) for start in range(0, restarts, RESTART_CHUNK)]
    children = np.random.SeedSequence(seed).spawn(len(sizes))

    def run(job):
        size, child = job
        return _alternate_chunk(weights, sc, size, child)

    jobs = list(zip(sizes, children))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    values = np.array([v for v, _ in results])
    _, best = _best_of(values, lambda i: results[i][1])
    return best


# ── Exhaustive oracle ─────────────────────────────────────────────────


def sign_table(m: int) -> np.ndarray:
    """All 2^m sign vectors in lexicographic order ('+' before '-')."""
    index = np.arange(2**m)[:, None]
    shifts = np.arange(m - 1, -1, -1)
    return (1 - 2 * ((index >> shifts) & 1)).astype(np.int64)


def _scan(t: np.ndarray, ext: np.ndarray, enumerated: int, marginals: bool):
    """Minimize over `enumerated` leading parties by enumeration and the last in closed form."""
    for _ in range(enumerated):
        t = np.tensordot(t, ext, axes=([0], [1]))
    t = np.moveaxis(t, 0, -1)
    free = t[..., 1:] if marginals else t
    values = np.abs(free).sum(axis=-1)
    values = (t[..., 0] - values) if marginals else -values
    values = np.asarray(values)
    flat = values.reshape(-1)
    idx = int(np.argmin(flat))
    multi = np.unravel_index(idx, values.shape)
    last = np.where(np.asarray(free[multi] > 0, dtype=bool), -1, 1)
    value = flat[idx]
    return (value.item() if isinstance(value, np.generic) else value), tuple(int(i) for i in multi), last


def _exhaustive(weights: np.ndarray, sc: Scenario):
    if sc.parties * sc.inputs > EXHAUSTIVE_CAP:
        raise SizeError(
            f"exhaustive enumeration needs N*m <= {EXHAUSTIVE_CAP}, got {sc.parties * sc.inputs}"
        )
    table = sign_table(sc.inputs)
    ext = np.hstack([np.ones((len(table), 1), dtype=np.int64), table]) if sc.marginals else table
    n = sc.parties
    if n == 1 or len(table) ** (n - 1) * sc.width <= _VECTORIZED_ENTRIES:
        value, prefix, last = _scan(weights, ext, n - 1, sc.marginals)
    else:
        value = prefix = last = None
        for i in range(len(table)):
            partial = np.tensordot(ext[i], weights, axes=(0, 0))
            v, rest, tail = _scan(partial, ext, n - 2, sc.marginals)
            if value is None or v < value:
                value, prefix, last = v, (i,) + rest, tail
    signs = [table[i].tolist() for i in prefix] + [last.tolist()]
    return DeterministicStrategy.from_signs(signs), value


def exhaustive_lmo(gradient) -> tuple[DeterministicStrategy, object]:
    """Global minimizer of <gradient, d_s>; ties go to the lexicographically smallest strategy."""
    sc = gradient.scenario
    if isinstance(gradient, BellFunctional) and gradient.entries.dtype == object:
        weights = gradient.weights()
    else:
        _, weights = _gradient_weights(gradient)
    return _exhaustive(weights, sc)


# ── QUBO reformulation ────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class QuboInstance:
    """max over a, b of the functional equals c + 2 max_{w in {0,1}^n} w^T Q w."""

    Q: np.ndarray
    c: object
    rows: int

    @property
    def size(self) -> int:
        return self.Q.shape[0]

    def quadratic(self, w: Sequence[int]):
        n = self.size
        return sum(self.Q[i, j] * w[i] * w[j] for i in range(n) for j in range(n) if w[i] and w[j])

    def objective(self, w: Sequence[int]):
        return self.c + 2 * self.quadratic(w)

    def signs(self, w: Sequence[int]) -> tuple[list[int], list[int]]:
        a = [2 * int(v) - 1 for v in w[: self.rows]]
        b = [2 * int(v) - 1 for v in w[self.rows:]]
        return a, b

    def to_bqm(self) -> dimod.BinaryQuadraticModel:
        """BINARY model whose energy is minus the functional value (min energy = -ell)."""
        n = self.size
        linear = {i: -2.0 * float(self.Q[i, i]) for i in range(n)}
        quadratic = {
            (i, j): -4.0 * float(self.Q[i, j])
            for i in range(n)
            for j in range(i + 1, n)
            if self.Q[i, j] != 0
        }
        return dimod.BinaryQuadraticModel(linear, quadratic, -float(self.c), dimod.BINARY)


def to_qubo(m: BellFunctional) -> QuboInstance:
    sc = m.scenario
    if sc.parties != 2:
        raise ShapeError("QUBO reformulation is bipartite only")
    w = m.int_weights() if m.integral else m.weights()
    if sc.marginals:
        core, alpha, beta = w[1:, 1:], w[1:, 0], w[0, 1:]
    else:
        core = w
        alpha = beta = np.zeros(sc.inputs, dtype=w.dtype)
    k = sc.inputs
    rows = core.sum(axis=1)
    cols = core.sum(axis=0)
    q = np.zeros((2 * k, 2 * k), dtype=w.dtype)
    if w.dtype == object:
        q[:] = 0
    q[:k, k:] = core
    q[k:, :k] = core.T
    for x in range(k):
        q[x, x] = alpha[x] - rows[x]
        q[k + x, k + x] = beta[x] - cols[x]
    c = core.sum() - alpha.sum() - beta.sum()
    if isinstance(c, np.generic):
        c = c.item()
    return QuboInstance(q, c, k)


@dataclass(frozen=True)
class QuboSolution:
    value: object
    assignment: tuple[int, ...]
    optimal: bool
    nodes: int


def qubo_branch_and_bound(q: QuboInstance, budget: int = 1_000_000) -> QuboSolution:
    """Exact max of w^T Q w over {0,1}^n by depth-first branch and bound.

    Pairs of free variables are bounded by 2 Q_ij w_i w_j <= Q_ij^+ (w_i + w_j),
    so each free variable contributes at most max(0, L_i + P_i), with L_i its
    linear coefficient given the fixed ones and P_i its positive free couplings.
    Variables are branched in order of decreasing |row sum|.
    """
    n = q.size
    if n > QUBO_MAX_VARIABLES:
        raise SizeError(f"QUBO with {n} variables exceeds the cap of {QUBO_MAX_VARIABLES}")
    vals = [[v.item() if isinstance(v, np.generic) else v for v in row] for row in q.Q]
    order = sorted(range(n), key=lambda i: (-abs(sum(vals[i])), i))
    pos = [[max(vals[i][j], 0) if i != j else 0 for j in range(n)] for i in range(n)]

    best_value = 0
    best_w = [0] * n
    assignment = [0] * n
    nodes = 0
    exhausted = False

    def visit(depth, fixed_value, linear, positive):
        nonlocal best_value, best_w, nodes, exhausted
        nodes += 1
        if nodes > budget:
            exhausted = True
            return
        if depth == n:
            if fixed_value > best_value:
                best_value = fixed_value
                best_w = assignment[:]
            return
        free = order[depth:]
        bound = fixed_value + sum(max(0, linear[i] + positive[i]) for i in free)
        if bound <= best_value:
            return
        k = order[depth]
        rest = order[depth + 1:]
        for value in ((1, 0) if linear[k] > 0 else (0, 1)):
            if exhausted:
                return
            lin = linear[:]
            pos_next = positive[:]
            for i in rest:
                pos_next[i] -= pos[i][k]
                if value:
                    lin[i] += 2 * vals[i][k]
            assignment[k] = value
            visit(depth + 1, fixed_value + (linear[k] if value else 0), lin, pos_next)
        assignment[k] = 0

    visit(0, 0, [vals[i][i] for i in range(n)], [sum(pos[i]) for i in range(n)])
    if exhausted:
        logger.warning("QUBO branch and bound hit its budget of %d nodes", budget)
    return QuboSolution(best_value, tuple(best_w), not exhausted, nodes)


# ── Local bounds ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class LocalBound:
    value: object
    strategy: DeterministicStrategy
    exact: bool
    method: str


def local_bound(
    m: BellFunctional,
    budget: int = 1_000_000,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
) -> LocalBound:
    """ell = max over strategies of <M, d_s>; exact when M is integral and the method is exact."""
    sc = m.scenario
    integral = m.integral
    weights = m.int_weights() if integral else m.float_weights()

    if sc.parties * sc.inputs <= EXHAUSTIVE_LIMIT:
        strategy, value = _exhaustive(-weights, sc)
        value = -value
        return LocalBound(value if integral else float(value), strategy, integral, "exhaustive")

    if sc.parties == 2 and 2 * sc.inputs <= QUBO_MAX_VARIABLES:
        q = to_qubo(BellFunctional(sc, weights))
        solution = qubo_branch_and_bound(q, budget)
        a, b = q.signs(solution.assignment)
        strategy = DeterministicStrategy.from_signs([a, b])
        value = q.c + 2 * solution.value
        exact = integral and solution.optimal
        if not solution.optimal:
            logger.warning("Local bound %s is a best-found value, not proven optimal", value)
        return LocalBound(value if integral else float(value), strategy, exact, "qubo")

    logger.warning("No exact method for scenario %s; using the heuristic oracle", sc)
    strategy = heuristic_lmo(BellFunctional(sc, -m.float_weights()), restarts, seed)
    value = m.value(strategy)
    return LocalBound(value if integral else float(value), strategy, False, "heuristic")


def sampled_max(m: BellFunctional, samples: int = 10_000, seed: int = 0):
    """Largest <M, d_s> over uniformly random strategies (cheap spot check)."""
    sc = m.scenario
    rng = np.random.default_rng(seed)
    weights = m.float_weights()
    best = -math.inf
    best_s = None
    for start in range(0, samples, RESTART_CHUNK):
        count = min(RESTART_CHUNK, samples - start)
        parties = [rng.integers(0, 2, size=(count, sc.inputs)) * 2.0 - 1.0 for _ in range(sc.parties)]
        exts = [_extend(p, sc.marginals) for p in parties]
        coeff = _coefficients(weights, exts, sc.parties - 1)
        values = np.einsum("zx,zx->z", coeff, exts[-1])
        i = int(np.argmax(values))
        if values[i] > best:
            best = float(values[i])
            best_s = DeterministicStrategy.from_signs([p[i].astype(int).tolist() for p in parties])
    return best, best_s
