import argparse
import logging
import sys
import traceback
from pathlib import Path


def _get_log_dir() -> Path:
    """Return the bellbounds config/log directory, creating it if needed."""
    from bellbounds.config import app_dir

    return app_dir()


def _schedule(text: str) -> list[int]:
    return [int(k) for k in text.split(",") if k.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bellbounds",
        description="Certified bounds on nonlocality thresholds",
    )
    parser.add_argument("--debug", "-d", action="store_true", help="Enable debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    poly = commands.add_parser("polyhedron", help="Rational polyhedra on the sphere")
    poly_commands = poly.add_subparsers(dest="action", required=True)
    gen = poly_commands.add_parser("gen", help="Generate and rationalize a polyhedron")
    gen.add_argument("--schedule", type=_schedule, default=[], help="Subdivision factors, e.g. 3,3")
    gen.add_argument("--solid", choices=["octahedron", "pentakis"], help="Named solid instead of a geodesic one")
    gen.add_argument("--tol", type=float, default=None, help="Rationalization tolerance")
    gen.add_argument("--out", required=True)
    eta = poly_commands.add_parser("eta", help="Exact shrinking factor of a vertex file")
    eta.add_argument("--in", dest="path", required=True)

    solve = commands.add_parser("solve", help="Run the pipeline")
    solve.add_argument("mode", choices=["lower", "upper", "decide"])
    solve.add_argument("--state", default="werner", choices=["werner", "singlet", "ghz", "w", "custom"])
    solve.add_argument("--N", dest="parties", type=int, default=None, help="Number of parties")
    solve.add_argument("--m", dest="inputs", type=int, default=2, help="Number of inputs per party")
    solve.add_argument("--v0", required=True, help="Visibility, decimal or num/den")
    solve.add_argument("--polyhedron", help="Vertex file for the measurements")
    solve.add_argument("--polygon", action="store_true", help="Planar polygon measurements (ghz)")
    solve.add_argument("--tensor", help="Correlation tensor file (custom state)")
    solve.add_argument("--algo", dest="algorithm", choices=["bpcg", "fw"], default=None)
    solve.add_argument("--K", dest="lazy_tolerance", type=float, default=None)
    solve.add_argument("--eps", dest="epsilon", type=float, default=None)
    solve.add_argument("--max-iter", dest="max_iterations", type=int, default=None)
    solve.add_argument("--restarts", type=int, default=None)
    solve.add_argument("--seed", type=int, default=None)
    solve.add_argument("--threads", type=int, default=None)
    solve.add_argument("--lmo", choices=["auto", "heuristic", "exhaustive"], default=None)
    solve.add_argument("--tol", dest="rationalize_tol", type=float, default=None)
    solve.add_argument("--scale", dest="integer_scale", type=float, default=None)
    solve.add_argument("--out", default="bellbounds-run", help="Artifact path prefix")

    bound = commands.add_parser("bound", help="Local bound of a Bell functional file")
    bound.add_argument("--tensor", required=True)
    bound.add_argument("--restarts", type=int, default=None)
    bound.add_argument("--seed", type=int, default=None)
    bound.add_argument("--bqm", help="Also write the QUBO (minimum energy -ell) as JSON")

    cert = commands.add_parser("certify", help="Certificate checks")
    cert_commands = cert.add_subparsers(dest="action", required=True)
    verify = cert_commands.add_parser("verify", help="Re-check a certificate file")
    verify.add_argument("--in", dest="path", required=True)

    report = commands.add_parser("report", help="Tabulate verified certificates")
    report.add_argument("paths", nargs="*")
    report.add_argument("--csv", help="Also write the table as CSV")
    return parser


def _setup_logging(debug: bool) -> Path:
    log_file = _get_log_dir() / "bellbounds.log"
    stderr = logging.StreamHandler(sys.stderr)
    stderr.setLevel(logging.DEBUG if debug else logging.WARNING)
    handlers: list[logging.Handler] = [
        logging.FileHandler(log_file, encoding="utf-8"),
        stderr,
    ]
    logging.basicConfig(
        level=logging.DEBUG if debug else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        handlers=handlers,
    )

    # Silence noisy third-party debug loggers
    logging.getLogger("dimod").setLevel(logging.INFO)
    return log_file


def _run_config(args, settings):
    from bellbounds.config import RunConfig

    for name in ("lazy_tolerance", "epsilon", "max_iterations", "restarts", "seed",
                 "threads", "lmo", "rationalize_tol", "integer_scale"):
        value = getattr(args, name)
        if value is not None:
            setattr(settings, name, value)
    parties = args.parties
    if parties is None:
        parties = {"w": 3, "ghz": 3}.get(args.state, 2)
    return RunConfig(
        mode=args.mode,
        state=args.state,
        parties=parties,
        inputs=args.inputs,
        v0=args.v0,
        polyhedron=args.polyhedron,
        polygon=args.polygon,
        tensor=args.tensor,
        out=args.out,
        algorithm=args.algorithm or settings.algorithm,
        debug=args.debug,
        settings=settings,
    )


def dispatch(args) -> int:
    from bellbounds import app
    from bellbounds.config import Config

    settings = Config.load()
    if args.command == "polyhedron":
        if args.action == "gen":
            tol = args.tol if args.tol is not None else settings.rationalize_tol
            return app.generate_polyhedron(args.schedule, tol, args.out, args.solid)
        return app.polyhedron_eta(args.path)
    if args.command == "solve":
        return app.run_pipeline(_run_config(args, settings))
    if args.command == "bound":
        restarts = args.restarts if args.restarts is not None else settings.restarts
        seed = args.seed if args.seed is not None else settings.seed
        return app.bound_functional(args.tensor, restarts, seed, args.bqm)
    if args.command == "certify":
        return app.verify_file(args.path)
    return app.report(args.paths, args.csv)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    log_file = _setup_logging(args.debug)

    logger = logging.getLogger(__name__)
    logger.info("bellbounds %s (debug=%s, log=%s)", args.command, args.debug, log_file)

    from bellbounds.errors import BellBoundsError

    try:
        return dispatch(args)
    except BellBoundsError as e:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception:
        logger.error("Unexpected failure", exc_info=True)
        raise


if __name__ == "__main__":
    try:
        sys.exit(main())
    except Exception:
        # Last-resort: write the traceback to the log file even if logging
        # hasn't been configured yet (e.g. crash during early startup).
        try:
            log_file = _get_log_dir() / "bellbounds.log"
            with open(log_file, "a", encoding="utf-8") as f:
                f.write("\n=== FATAL ERROR ===\n")
                traceback.print_exc(file=f)
        except Exception:
            pass
        raise
