"""Plain-text certificate files.

A certificate is a sequence of sections. Each section starts with an
uppercase keyword line, optionally followed by inline values; body lines run
until the next keyword. Exact values are written as integers or `num/den`.
Nothing time-dependent is written, so equal inputs give byte-identical files.
"""

import logging
from fractions import Fraction
from typing import Iterable

import numpy as np

from bellbounds import __version__
from bellbounds.certify import (
    LowerBoundCertificate,
    Provenance,
    UpperBoundCertificate,
)
from bellbounds.errors import BellBoundsError, CertificateError
from bellbounds.lmo import BellFunctional
from bellbounds.polyhedra import RationalPoint
from bellbounds.tensor import DeterministicStrategy, Scenario, format_number, parse_number

logger = logging.getLogger(__name__)

KEYWORDS = (
    "KIND", "VERSION", "SCENARIO", "SEED", "STATE", "MEASUREMENTS", "SHRINK",
    "TARGET", "ETA_SQ", "V0", "ATOMS", "WEIGHTS", "RESIDUAL_SQ", "NU", "V_LOW",
    "FUNCTIONAL", "ELL", "STRATEGY", "Q", "V_UP",
)


# ── Writing ───────────────────────────────────────────────────────────


def _rows(entries: np.ndarray, width: int) -> list[str]:
    return [" ".join(format_number(v) for v in row) for row in np.asarray(entries).reshape(-1, width)]


def _vector(vec) -> str:
    return " ".join(format_number(c) for c in vec)


def _header(cert) -> list[str]:
    lines = [f"KIND {cert.kind}", f"VERSION {__version__}", f"SCENARIO {cert.scenario}"]
    prov = cert.provenance
    if prov is not None:
        lines.append(f"SEED {prov.seed}")
        lines.append(f"STATE {prov.state}")
        if prov.amplitudes is not None:
            lines.append(" ".join(str(a) for a in prov.amplitudes))
        lines.append("MEASUREMENTS")
        for party in prov.measurements:
            lines.append(" ; ".join(_vector(v) for v in party))
    return lines


def format_certificate(cert: LowerBoundCertificate | UpperBoundCertificate) -> str:
    sc = cert.scenario
    lines = _header(cert)
    if isinstance(cert, LowerBoundCertificate):
        if cert.shrink_kind is not None:
            lines.append(f"SHRINK {cert.shrink_kind}")
            lines.extend(_vector(p) for p in cert.shrink_vertices)
        lines.append("TARGET")
        lines.extend(_rows(cert.target, sc.width))
        lines.append(f"ETA_SQ {format_number(cert.eta_sq)}")
        lines.append(f"V0 {format_number(cert.v0)}")
        lines.append("ATOMS")
        lines.extend(str(a) for a in cert.atoms)
        lines.append("WEIGHTS")
        lines.extend(format_number(w) for w in cert.weights)
        lines.append("RESIDUAL_SQ")
        lines.extend(f"{mask} {format_number(r)}" for mask, r in sorted(cert.residual_sq.items()))
        lines.append(f"NU {format_number(cert.nu)}")
        lines.append(f"V_LOW {format_number(cert.v_low)}")
    else:
        lines.append("TARGET")
        lines.extend(_rows(cert.target, sc.width))
        lines.append("FUNCTIONAL")
        lines.extend(_rows(cert.functional.entries, sc.width))
        lines.append(f"ELL {cert.ell}")
        lines.append(f"STRATEGY {cert.strategy}")
        lines.append(f"Q {format_number(cert.q)}")
        lines.append(f"V_UP {format_number(cert.v_up)}")
    return "\n".join(lines) + "\n"


def write_certificate(path, cert):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_certificate(cert))
    logger.info("Wrote %s certificate to %s", cert.kind, path)


# ── Reading ───────────────────────────────────────────────────────────


def _number(token: str):
    """Decimal tokens parse as float, everything else exactly."""
    if "/" not in token and any(ch in token for ch in ".eE"):
        try:
            return float(token)
        except ValueError as e:
            raise CertificateError(f"cannot parse number {token!r}") from e
    return parse_number(token)


def _sections(lines: Iterable[str]) -> dict[str, tuple[list[str], list[str]]]:
    sections: dict[str, tuple[list[str], list[str]]] = {}
    current = None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head in KEYWORDS:
            if head in sections:
                raise CertificateError(f"line {lineno}: duplicate section {head}")
            sections[head] = (rest, [])
            current = head
        elif current is None:
            raise CertificateError(f"line {lineno}: content before the first section")
        else:
            sections[current][1].append(line)
    return sections


def _inline(sections, key: str, required: bool = True) -> list[str] | None:
    if key not in sections:
        if required:
            raise CertificateError(f"missing section {key}")
        return None
    return sections[key][0]


def _single(sections, key: str) -> str:
    values = _inline(sections, key)
    if len(values) != 1:
        raise CertificateError(f"section {key} takes exactly one value")
    return values[0]


def _body(sections, key: str) -> list[str]:
    _inline(sections, key)
    return sections[key][1]


def _tensor(sections, key: str, sc: Scenario, parse=_number) -> np.ndarray:
    tokens = [t for line in _body(sections, key) for t in line.split()]
    if len(tokens) != sc.size:
        raise CertificateError(f"section {key} needs {sc.size} entries, found {len(tokens)}")
    values = [parse(t) for t in tokens]
    if all(isinstance(v, Fraction) for v in values):
        out = np.empty(sc.size, dtype=object)
        out[:] = values
    else:
        out = np.array([float(v) for v in values])
    return out.reshape(sc.shape)


def _point(text: str, parse=_number) -> tuple:
    comps = text.split()
    if len(comps) != 3:
        raise CertificateError(f"expected 3 components, got {text!r}")
    return tuple(parse(c) for c in comps)


def _provenance(sections, sc: Scenario) -> Provenance | None:
    if "STATE" not in sections:
        return None
    name = _single(sections, "STATE")
    body = _body(sections, "STATE")
    amplitudes = tuple(int(a) for a in body[0].split()) if body else None
    parties = _body(sections, "MEASUREMENTS")
    if len(parties) != sc.parties:
        raise CertificateError(f"MEASUREMENTS needs {sc.parties} party lines, found {len(parties)}")
    measurements = tuple(tuple(_point(v) for v in line.split(";")) for line in parties)
    seed = int(_single(sections, "SEED")) if "SEED" in sections else 0
    return Provenance(name, amplitudes, measurements, seed)


def parse_certificate(lines: Iterable[str]) -> LowerBoundCertificate | UpperBoundCertificate:
    try:
        return _parse(lines)
    except CertificateError:
        raise
    except (BellBoundsError, ValueError, IndexError) as e:
        raise CertificateError(str(e)) from e


def _parse(lines):
    sections = _sections(lines)
    kind = _single(sections, "KIND")
    header = _inline(sections, "SCENARIO")
    if len(header) != 3:
        raise CertificateError("SCENARIO takes `N m marginals`")
    parties, inputs, marginals = (int(h) for h in header)
    sc = Scenario(parties, inputs, bool(marginals))
    prov = _provenance(sections, sc)
    target = _tensor(sections, "TARGET", sc)

    if kind == "lower":
        shrink_kind = None
        vertices: tuple[RationalPoint, ...] = ()
        if "SHRINK" in sections:
            shrink_kind = _single(sections, "SHRINK")
            vertices = tuple(RationalPoint(*_point(v, parse_number)) for v in _body(sections, "SHRINK"))
        atoms = tuple(DeterministicStrategy.parse(a) for a in _body(sections, "ATOMS"))
        for atom in atoms:
            atom.check(sc)
        weights = tuple(parse_number(w) for w in _body(sections, "WEIGHTS"))
        if len(weights) != len(atoms):
            raise CertificateError(f"{len(atoms)} atoms but {len(weights)} weights")
        residual = {}
        for line in _body(sections, "RESIDUAL_SQ"):
            mask, value = line.split()
            residual[int(mask)] = parse_number(value)
        return LowerBoundCertificate(
            scenario=sc,
            target=target,
            eta_sq=parse_number(_single(sections, "ETA_SQ")),
            v0=parse_number(_single(sections, "V0")),
            atoms=atoms,
            weights=weights,
            residual_sq=residual,
            nu=parse_number(_single(sections, "NU")),
            v_low=parse_number(_single(sections, "V_LOW")),
            provenance=prov,
            shrink_kind=shrink_kind,
            shrink_vertices=vertices,
        )

    if kind == "upper":
        functional = BellFunctional(sc, _tensor(sections, "FUNCTIONAL", sc, parse_number))
        strategy = DeterministicStrategy.parse(_single(sections, "STRATEGY"))
        strategy.check(sc)
        return UpperBoundCertificate(
            scenario=sc,
            target=target,
            functional=functional,
            ell=int(_single(sections, "ELL")),
            strategy=strategy,
            q=_number(_single(sections, "Q")),
            v_up=_number(_single(sections, "V_UP")),
            provenance=prov,
        )

    raise CertificateError(f"unknown certificate kind {kind!r}")


def read_certificate(path) -> LowerBoundCertificate | UpperBoundCertificate:
    with open(path, encoding="utf-8") as f:
        cert = parse_certificate(f)
    logger.debug("Read %s certificate from %s", cert.kind, path)
    return cert
