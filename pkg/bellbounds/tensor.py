"""Correlation tensors, deterministic strategies and their inner-product algebra.

Input index 0 is the marginal slot ("party measures nothing") when a scenario
carries marginals; full-correlation scenarios drop it. The all-zero entry of a
marginal scenario is the constant 1 and never takes part in inner products,
norms or the optimization space.
"""

import functools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from bellbounds.errors import DomainError, ShapeError, SizeError

logger = logging.getLogger(__name__)

MAX_ENTRIES = 10**8


# ── Scenario ──────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Scenario:
    parties: int
    inputs: int
    marginals: bool = True

    def __post_init__(self):
        if self.parties < 1 or self.inputs < 1:
            raise ShapeError(
                f"scenario needs parties >= 1 and inputs >= 1, got {self.parties}, {self.inputs}"
            )
        if self.size > MAX_ENTRIES:
            raise SizeError(f"scenario has {self.size} entries, cap is {MAX_ENTRIES}")

    @property
    def width(self) -> int:
        return self.inputs + 1 if self.marginals else self.inputs

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.width,) * self.parties

    @property
    def size(self) -> int:
        return self.width**self.parties

    @property
    def dimension(self) -> int:
        """Dimension of the optimization space (root entry excluded)."""
        return self.size - 1 if self.marginals else self.size

    @property
    def vertex_count(self) -> int:
        return 2 ** (self.parties * self.inputs)

    @property
    def full_mask(self) -> int:
        return (1 << self.parties) - 1

    def block_masks(self) -> np.ndarray:
        """Bitmask of measuring parties for every free entry, in vector order.

        Bit n is set when party n's input index is nonzero. Full-correlation
        scenarios have a single block.
        """
        if not self.marginals:
            return np.full(self.size, self.full_mask, dtype=np.int64)
        index = np.indices(self.shape).reshape(self.parties, -1)
        masks = np.zeros(self.size, dtype=np.int64)
        for n in range(self.parties):
            masks |= (index[n] != 0).astype(np.int64) << n
        return masks[1:]

    def free(self, entries: np.ndarray) -> np.ndarray:
        """Flat view of the free entries of a full-shape array."""
        flat = np.asarray(entries).reshape(-1)
        return flat[1:] if self.marginals else flat

    def embed(self, vector: np.ndarray, root=1) -> np.ndarray:
        """Inverse of :meth:`free`: put a free vector back into full shape."""
        vector = np.asarray(vector)
        if vector.shape != (self.dimension,):
            raise ShapeError(f"expected {self.dimension} free entries, got {vector.shape}")
        if not self.marginals:
            return vector.reshape(self.shape).copy()
        dtype = object if vector.dtype == object else np.result_type(vector.dtype, type(root))
        full = np.empty(self.size, dtype=dtype)
        full[0] = root
        full[1:] = vector
        return full.reshape(self.shape)

    def __str__(self) -> str:
        return f"{self.parties} {self.inputs} {int(self.marginals)}"


# ── Deterministic strategies ──────────────────────────────────────────


@dataclass(frozen=True)
class DeterministicStrategy:
    """One sign vector per party, bit-packed: bit x set means output -1 on input x."""

    bits: tuple[int, ...]
    inputs: int

    def __post_init__(self):
        limit = 1 << self.inputs
        if any(b < 0 or b >= limit for b in self.bits):
            raise ShapeError(f"strategy bits out of range for {self.inputs} inputs")

    @classmethod
    def from_signs(cls, signs: Sequence[Sequence[int]]) -> "DeterministicStrategy":
        rows = [list(row) for row in signs]
        if not rows:
            raise ShapeError("strategy needs at least one party")
        m = len(rows[0])
        bits = []
        for row in rows:
            if len(row) != m:
                raise ShapeError("all parties must have the same number of inputs")
            packed = 0
            for x, s in enumerate(row):
                if s not in (1, -1):
                    raise DomainError(f"signs must be +1 or -1, got {s}")
                if s == -1:
                    packed |= 1 << x
            bits.append(packed)
        return cls(tuple(bits), m)

    @classmethod
    def parse(cls, text: str) -> "DeterministicStrategy":
        parts = text.strip().split("|")
        signs = []
        for part in parts:
            if not part or any(ch not in "+-" for ch in part):
                raise ShapeError(f"malformed strategy string {text!r}")
            signs.append([1 if ch == "+" else -1 for ch in part])
        return cls.from_signs(signs)

    @classmethod
    def all_plus(cls, sc: Scenario) -> "DeterministicStrategy":
        return cls((0,) * sc.parties, sc.inputs)

    @property
    def parties(self) -> int:
        return len(self.bits)

    def signs(self) -> np.ndarray:
        """(parties, inputs) array of +1/-1."""
        shifts = np.arange(self.inputs)
        packed = np.asarray(self.bits, dtype=np.int64)[:, None]
        return (1 - 2 * ((packed >> shifts) & 1)).astype(np.int64)

    def flip(self, party: int) -> "DeterministicStrategy":
        bits = list(self.bits)
        bits[party] ^= (1 << self.inputs) - 1
        return DeterministicStrategy(tuple(bits), self.inputs)

    def canonical(self, sc: Scenario) -> "DeterministicStrategy":
        """Representative of the strategies inducing the same tensor.

        In full-correlation scenarios flipping any two parties leaves the
        tensor unchanged; the representative has a + first sign for every
        party but the last. With marginals every strategy is its own class.
        """
        if sc.marginals or self.parties < 2:
            return self
        bits = list(self.bits)
        full = (1 << self.inputs) - 1
        for n in range(self.parties - 1):
            if bits[n] & 1:
                bits[n] ^= full
                bits[-1] ^= full
        return DeterministicStrategy(tuple(bits), self.inputs)

    def check(self, sc: Scenario):
        if self.parties != sc.parties or self.inputs != sc.inputs:
            raise ShapeError(
                f"strategy of shape {self.parties}x{self.inputs} does not fit scenario {sc}"
            )

    def __str__(self) -> str:
        return "|".join(
            "".join("-" if (b >> x) & 1 else "+" for x in range(self.inputs)) for b in self.bits
        )


def extended_signs(s: DeterministicStrategy, sc: Scenario) -> list[np.ndarray]:
    """Per-party vectors (1, a_1, ..., a_m) with marginals, (a_1, ..., a_m) without."""
    rows = s.signs()
    if not sc.marginals:
        return list(rows)
    return [np.concatenate(([1], row)) for row in rows]


# ── Correlation tensors ───────────────────────────────────────────────


def _is_exact(array: np.ndarray) -> bool:
    return array.dtype == object or np.issubdtype(array.dtype, np.integer)


@dataclass(frozen=True, eq=False)
class CorrelationTensor:
    """Dense correlation tensor; float entries, or exact entries in an object array."""

    scenario: Scenario
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, copy=True)
        if entries.shape != self.scenario.shape:
            raise ShapeError(f"tensor shape {entries.shape} does not match scenario {self.scenario}")
        free = self.scenario.free(entries)
        if free.size and float(np.max(np.abs(free.astype(np.float64)))) > 1 + 1e-9:
            raise DomainError("correlation tensor entries must lie in [-1, 1]")
        if self.scenario.marginals and entries.reshape(-1)[0] != 1:
            raise DomainError("root entry of a marginal tensor must equal 1")
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_vector(cls, sc: Scenario, vector) -> "CorrelationTensor":
        return cls(sc, sc.embed(np.asarray(vector)))

    @classmethod
    def zero(cls, sc: Scenario) -> "CorrelationTensor":
        return cls.from_vector(sc, np.zeros(sc.dimension, dtype=np.int64))

    @property
    def exact(self) -> bool:
        return _is_exact(self.entries)

    def vector(self) -> np.ndarray:
        return self.scenario.free(self.entries).copy()

    def as_float(self) -> "CorrelationTensor":
        if self.entries.dtype == np.float64:
            return self
        return CorrelationTensor(self.scenario, self.entries.astype(np.float64))

    def as_exact(self) -> "CorrelationTensor":
        """Exact copy; float entries are converted to their exact binary value."""
        if self.entries.dtype == object:
            return self
        converted = np.empty(self.entries.shape, dtype=object)
        for index, value in np.ndenumerate(self.entries):
            converted[index] = Fraction(value.item())
        return CorrelationTensor(self.scenario, converted)

    def __getitem__(self, index):
        return self.entries[index]


def strategy_tensor(s: DeterministicStrategy, sc: Scenario) -> CorrelationTensor:
    s.check(sc)
    entries = functools.reduce(np.multiply.outer, extended_signs(s, sc))
    return CorrelationTensor(sc, np.asarray(entries, dtype=np.int64).reshape(sc.shape))


def strategy_vector(s: DeterministicStrategy, sc: Scenario, dtype=np.float64) -> np.ndarray:
    """Free entries of the strategy tensor as a flat vector."""
    entries = functools.reduce(np.multiply.outer, extended_signs(s, sc))
    return sc.free(np.asarray(entries, dtype=dtype))


def contract(entries: np.ndarray, s: DeterministicStrategy, sc: Scenario):
    """<entries, d_s> by successive contraction with the per-party sign vectors.

    The root coefficient of a marginal scenario is excluded, so arbitrary
    functionals (including ones carrying a constant term) can be passed.
    """
    s.check(sc)
    out = np.asarray(entries)
    for ext in extended_signs(s, sc):
        out = np.tensordot(ext, out, axes=(0, 0))
    value = out.item() if isinstance(out, np.ndarray) else out
    if sc.marginals:
        value = value - np.asarray(entries).reshape(-1)[0]
    return value


def overlap(s: DeterministicStrategy, t: DeterministicStrategy, sc: Scenario) -> int:
    """<d_s, d_t> from popcounts: the tensors factor per party."""
    product = 1
    for a, b in zip(s.bits, t.bits):
        dot = sc.inputs - 2 * (a ^ b).bit_count()
        product *= (1 + dot) if sc.marginals else dot
    return product - 1 if sc.marginals else product


# ── Algebra ───────────────────────────────────────────────────────────


def _check_same(t1: CorrelationTensor, t2: CorrelationTensor):
    if t1.scenario != t2.scenario:
        raise ShapeError(f"scenario mismatch: {t1.scenario} vs {t2.scenario}")


def inner(t1: CorrelationTensor, t2: CorrelationTensor):
    _check_same(t1, t2)
    value = np.dot(t1.vector(), t2.vector())
    return value.item() if isinstance(value, np.generic) else value


def norm2_sq(t: CorrelationTensor):
    return inner(t, t)


def norm2(t: CorrelationTensor) -> float:
    return math.sqrt(float(norm2_sq(t)))


def norm1(t: CorrelationTensor):
    return sum(abs(e) for e in t.vector())


def scale(t: CorrelationTensor, v) -> CorrelationTensor:
    """Multiply every free entry by the visibility v."""
    if not 0 <= v <= 1:
        raise DomainError(f"visibility must lie in [0, 1], got {v}")
    if not t.exact:
        v = float(v)
    elif isinstance(v, float):
        t = t.as_float()
    return CorrelationTensor.from_vector(t.scenario, t.vector() * v)


# ── Text serialization ────────────────────────────────────────────────


def format_number(value) -> str:
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return str(value.numerator)
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def parse_number(token: str) -> Fraction:
    try:
        return Fraction(token)
    except (ValueError, ZeroDivisionError) as e:
        raise ShapeError(f"cannot parse number {token!r}") from e


def format_tensor(sc: Scenario, entries: np.ndarray) -> str:
    """Header `N m marginals`, then one line per last-axis row in row-major order."""
    entries = np.asarray(entries)
    if entries.shape != sc.shape:
        raise ShapeError(f"tensor shape {entries.shape} does not match scenario {sc}")
    lines = [str(sc)]
    for row in entries.reshape(-1, sc.width):
        lines.append(" ".join(format_number(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_tensor(lines: Iterable[str]) -> tuple[Scenario, np.ndarray]:
    """Parse the tensor text format into a scenario and an exact object array."""
    tokens: list[str] = []
    header = None
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if header is None:
            header = line.split()
            continue
        tokens.extend(line.split())
    if header is None or len(header) != 3:
        raise ShapeError("tensor file needs a header line `N m marginals`")
    try:
        parties, inputs, marginals = (int(h) for h in header)
    except ValueError as e:
        raise ShapeError(f"malformed tensor header {' '.join(header)!r}") from e
    sc = Scenario(parties, inputs, bool(marginals))
    if len(tokens) != sc.size:
        raise ShapeError(f"expected {sc.size} entries, found {len(tokens)}")
    entries = np.empty(sc.size, dtype=object)
    for i, token in enumerate(tokens):
        entries[i] = parse_number(token)
    return sc, entries.reshape(sc.shape)


def read_tensor(path) -> CorrelationTensor:
    with open(path, encoding="utf-8") as f:
        sc, entries = parse_tensor(f)
    logger.debug("Read tensor %s (scenario %s)", path, sc)
    return CorrelationTensor(sc, entries)


def write_tensor(path, t: CorrelationTensor):
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_tensor(t.scenario, t.entries))
