"""Pipeline orchestration behind the command-line surface.

Each entry point returns a process exit code: 0 certified/ok, 2 inconclusive,
1 error. Results go to stdout, diagnostics to the log.
"""

import csv
import json
import logging
import sys
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence, TextIO

from bellbounds import __version__
from bellbounds.certfile import read_certificate, write_certificate
from bellbounds.certify import (
    LowerBoundCertificate,
    Provenance,
    UpperBoundCertificate,
    assemble_lower,
    assemble_upper,
    derived_bounds,
    integerize,
    provenance_of,
    rationalize_weights,
    verify,
)
from bellbounds.config import RunConfig
from bellbounds.errors import BellBoundsError, CertificateError
from bellbounds.fw import SolverResult, SolverStatus, extract_hyperplane, solve
from bellbounds.lmo import local_bound, read_functional, to_qubo
from bellbounds.polyhedra import (
    NAMED_SOLIDS,
    PlanarPolygon,
    RationalPolyhedron,
    faces_and_eta,
    geodesic_icosahedron,
    octahedron,
    pentakis_dodecahedron,
    planar_polygon,
    rationalize_solid,
    read_polyhedron,
    write_polyhedron,
)
from bellbounds.quantum import (
    QuantumSetup,
    auto_scenario,
    chsh_bloch_vectors,
    named_state,
    polygon_bloch_vectors,
    polyhedron_setup,
    quantum_tensor,
)
from bellbounds.tensor import CorrelationTensor, Scenario, read_tensor

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INCONCLUSIVE = 2

SOLIDS = {
    "octahedron": octahedron,
    "pentakis": pentakis_dodecahedron,
}


# ── Targets ───────────────────────────────────────────────────────────


@dataclass
class Target:
    scenario: Scenario
    tensor: CorrelationTensor
    shrink: RationalPolyhedron | PlanarPolygon | None
    provenance: Provenance | None


def _polyhedron(cfg: RunConfig) -> RationalPolyhedron:
    if cfg.polyhedron:
        vertices = read_polyhedron(cfg.polyhedron)
    else:
        if cfg.inputs not in NAMED_SOLIDS:
            raise BellBoundsError(f"no built-in polyhedron with {cfg.inputs} inputs")
        vertices = rationalize_solid(NAMED_SOLIDS[cfg.inputs](), cfg.settings.rationalize_tol)
    return faces_and_eta(vertices)


def _from_setup(setup: QuantumSetup, shrink, seed: int) -> Target:
    sc = auto_scenario(setup)
    p = quantum_tensor(setup, sc, exact=setup.exact)
    logger.info("Target %s on scenario %s (exact=%s)", setup.state.name, sc, setup.exact)
    return Target(sc, p, shrink, provenance_of(setup, seed))


def build_target(cfg: RunConfig) -> Target:
    seed = cfg.settings.seed
    if cfg.state == "custom":
        p = read_tensor(cfg.tensor)
        return Target(p.scenario, p, None, None)

    state = named_state(cfg.state, cfg.parties)
    if cfg.state in ("werner", "singlet") and cfg.inputs == 2 and not cfg.polyhedron:
        alice, bob = chsh_bloch_vectors()
        return _from_setup(QuantumSetup(state, (tuple(alice), tuple(bob))), None, seed)
    if cfg.polygon:
        polygon = planar_polygon(polygon_bloch_vectors(cfg.inputs, cfg.settings.rationalize_tol))
        return _from_setup(polyhedron_setup(polygon, cfg.parties, state), polygon, seed)
    poly = _polyhedron(cfg)
    return _from_setup(polyhedron_setup(poly, cfg.parties, state), poly, seed)


# ── Run artifacts ─────────────────────────────────────────────────────


def result_summary(res: SolverResult, cfg: RunConfig) -> dict:
    """JSON-ready summary of a solver run (active set sorted by strategy string)."""
    atoms = sorted(zip(res.active.atoms, res.active.weights), key=lambda aw: str(aw[0]))
    return {
        "version": __version__,
        "state": cfg.state,
        "scenario": str(res.scenario),
        "v0": cfg.v0,
        "algorithm": cfg.algorithm,
        "seed": cfg.settings.seed,
        "status": res.status.value,
        "distance": res.distance,
        "phi": res.phi,
        "iterations": res.iterations,
        "lmo_calls": res.lmo_calls,
        "runtime": round(res.elapsed, 3),
        "active_set": [{"strategy": str(a), "weight": float(w)} for a, w in atoms],
    }


def artifact(out: str, suffix: str) -> Path:
    """`out` plus suffix; dots inside `out` (e.g. run_0.70) are kept."""
    return Path(str(out) + suffix)


def _write_json(path: Path, data: dict):
    path.write_text(json.dumps(data, indent=2) + "\n")
    logger.info("Wrote %s", path)


def _finalize(cert, out: str) -> int:
    report_ = verify(cert)
    if not report_.ok:
        logger.error("Fresh certificate failed verification: %s", report_.reason)
        return EXIT_ERROR
    path = artifact(out, ".cert")
    write_certificate(path, cert)
    print(f"certificate: {path}")
    return EXIT_OK


# ── Pipeline ──────────────────────────────────────────────────────────


def run_pipeline(cfg: RunConfig) -> int:
    cfg.validate()
    start = time.perf_counter()
    target = build_target(cfg)
    v0 = Fraction(cfg.v0)
    res = solve(target.tensor, v0, cfg.solver_config(), cfg.algorithm)
    summary = result_summary(res, cfg)
    out = cfg.out
    print(f"status: {res.status.value}  distance: {res.distance:.3e}  iterations: {res.iterations}")

    if cfg.mode == "decide":
        _write_json(artifact(out, ".json"), summary)
        return EXIT_INCONCLUSIVE if res.status == SolverStatus.ITERATION_CAP else EXIT_OK

    code = _lower(cfg, target, res, v0) if cfg.mode == "lower" else _upper(cfg, target, res, v0)
    summary["runtime"] = round(time.perf_counter() - start, 3)
    _write_json(artifact(out, ".json"), summary)
    return code


def _lower(cfg: RunConfig, target: Target, res: SolverResult, v0: Fraction) -> int:
    if res.status != SolverStatus.CONVERGED_INSIDE:
        print(f"inconclusive: run ended {res.status.value}, no local model at v0={cfg.v0}")
        return EXIT_INCONCLUSIVE
    s = cfg.settings
    model = rationalize_weights(res.active, target.tensor, v0, s.weight_bits)
    try:
        cert = assemble_lower(
            target.scenario, target.shrink, v0, model, target.tensor,
            Fraction(repr(s.min_nu)), target.provenance,
        )
    except CertificateError as e:
        logger.warning("No lower certificate: %s", e)
        print(f"inconclusive: {e}")
        return EXIT_INCONCLUSIVE
    print(f"v_low: {float(cert.v_low):.6f}  (eta^2 {float(cert.eta_sq):.6f}, nu {float(cert.nu):.8f})")
    return _finalize(cert, cfg.out)


def _upper(cfg: RunConfig, target: Target, res: SolverResult, v0: Fraction) -> int:
    if res.status == SolverStatus.CONVERGED_INSIDE:
        print(f"inconclusive: v0={cfg.v0} is inside the local polytope, no Bell inequality")
        return EXIT_INCONCLUSIVE
    s = cfg.settings
    m = integerize(extract_hyperplane(res, target.tensor, v0), s.integer_scale)
    bound = local_bound(m, restarts=s.restarts, seed=s.seed)
    if not bound.exact:
        print(f"inconclusive: local bound {bound.value} found by {bound.method} is not proven")
        return EXIT_INCONCLUSIVE
    try:
        cert = assemble_upper(m, bound.value, target.tensor, bound.strategy, target.provenance)
    except CertificateError as e:
        logger.warning("No upper certificate: %s", e)
        print(f"inconclusive: {e}")
        return EXIT_INCONCLUSIVE
    print(f"v_up: {float(cert.v_up):.6f}  (ell {cert.ell}, quantum value {float(cert.q):.6f})")
    return _finalize(cert, cfg.out)


# ── Other subcommands ─────────────────────────────────────────────────


def generate_polyhedron(schedule: Sequence[int], tol: float, out: str, solid: str | None = None) -> int:
    points = SOLIDS[solid]() if solid else geodesic_icosahedron(schedule)
    vertices = rationalize_solid(points, tol)
    poly = faces_and_eta(vertices)
    write_polyhedron(out, poly.vertices)
    print(f"{len(poly.vertices)} vertices ({poly.inputs} inputs), eta^2 = {float(poly.eta_sq):.10f}")
    return EXIT_OK


def polyhedron_eta(path: str) -> int:
    poly = faces_and_eta(read_polyhedron(path))
    eta_sq = poly.eta_sq
    print(f"eta^2 = {eta_sq.numerator}/{eta_sq.denominator}")
    print(f"eta^2 ~ {float(eta_sq):.12f}  eta ~ {poly.eta:.12f}  faces: {len(poly.faces)}")
    return EXIT_OK


def bound_functional(path: str, restarts: int, seed: int, bqm_out: str | None = None) -> int:
    m = read_functional(path)
    bound = local_bound(m, restarts=restarts, seed=seed)
    print(f"local bound: {bound.value}  strategy: {bound.strategy}  method: {bound.method}  exact: {bound.exact}")
    if bqm_out:
        qubo, offset = to_qubo(m).to_bqm().to_qubo()
        data = {
            "offset": offset,
            "terms": [[int(i), int(j), bias] for (i, j), bias in sorted(qubo.items())],
        }
        _write_json(Path(bqm_out), data)
    return EXIT_OK if bound.exact else EXIT_INCONCLUSIVE


def verify_file(path: str) -> int:
    try:
        cert = read_certificate(path)
    except (OSError, BellBoundsError) as e:
        print(f"FAILED {path}: parse error: {e}")
        return EXIT_ERROR
    result = verify(cert)
    if not result.ok:
        print(f"FAILED {path}: {result.reason}")
        return EXIT_ERROR
    print(f"OK {path} ({cert.kind})")
    for check in result.checks:
        print(f"  - {check}")
    derived = derived_bounds(cert if cert.kind == "lower" else None, cert if cert.kind == "upper" else None)
    for line in derived.lines():
        print(f"  {line}")
    return EXIT_OK


# ── Report ────────────────────────────────────────────────────────────

COLUMNS = ("file", "kind", "state", "m", "v_low", "v_up", "eta_sq", "nu", "runtime", "status")


def _row(path: str) -> tuple[dict, object | None]:
    row = dict.fromkeys(COLUMNS, "")
    row["file"] = path
    try:
        cert = read_certificate(path)
    except (OSError, BellBoundsError) as e:
        row["status"] = f"FAILED parse error: {e}"
        return row, None
    result = verify(cert)
    row["kind"] = cert.kind
    row["state"] = cert.provenance.state if cert.provenance else "custom"
    row["m"] = str(cert.scenario.inputs)
    if not result.ok:
        row["status"] = f"FAILED {result.reason}"
        return row, None
    if isinstance(cert, LowerBoundCertificate):
        row["v_low"] = f"{float(cert.v_low):.6f}"
        row["eta_sq"] = f"{float(cert.eta_sq):.6f}"
        row["nu"] = f"{float(cert.nu):.8f}"
    else:
        row["v_up"] = f"{float(cert.v_up):.6f}"
    sidecar = Path(path[: -len(".cert")] + ".json" if path.endswith(".cert") else path + ".json")
    if sidecar.exists():
        try:
            row["runtime"] = str(json.loads(sidecar.read_text()).get("runtime", ""))
        except (OSError, ValueError):
            logger.warning("Unreadable run summary %s", sidecar)
    row["status"] = "ok"
    return row, cert


def report(paths: Sequence[str], csv_path: str | None = None, stream: TextIO | None = None) -> int:
    """Aligned table (and optional CSV) of verified certificates; failed rows are flagged."""
    stream = stream or sys.stdout
    rows = []
    certs = []
    for path in paths:
        row, cert = _row(path)
        rows.append(row)
        if cert is not None:
            certs.append(cert)

    widths = {c: max([len(c)] + [len(r[c]) for r in rows]) for c in COLUMNS}
    print("  ".join(c.ljust(widths[c]) for c in COLUMNS).rstrip(), file=stream)
    for r in rows:
        print("  ".join(r[c].ljust(widths[c]) for c in COLUMNS).rstrip(), file=stream)

    lowers = {(c.provenance.state if c.provenance else "custom"): c for c in certs if isinstance(c, LowerBoundCertificate)}
    uppers = {(c.provenance.state if c.provenance else "custom"): c for c in certs if isinstance(c, UpperBoundCertificate)}
    for state in sorted(set(lowers) | set(uppers)):
        derived = derived_bounds(lowers.get(state), uppers.get(state))
        extra = [line for line in derived.lines() if not line.startswith(("v_low", "v_up"))]
        for line in extra:
            print(f"{state}: {line}", file=stream)

    if csv_path:
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
        logger.info("Wrote %d rows to %s", len(rows), csv_path)

    failed = [r for r in rows if r["status"] != "ok"]
    return EXIT_ERROR if failed else EXIT_OK
