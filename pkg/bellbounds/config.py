import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from bellbounds import HOME_ENV, THREADS_ENV
from bellbounds.errors import DomainError
from bellbounds.fw import ALGORITHMS, LMO_MODES, SolverConfig
from bellbounds.polyhedra import NAMED_SOLIDS

logger = logging.getLogger(__name__)

STATES = ("werner", "singlet", "ghz", "w", "custom")
MODES = ("lower", "upper", "decide")


def app_dir() -> Path:
    """The bellbounds config/log directory, created on demand."""
    override = os.environ.get(HOME_ENV)
    path = Path(override) if override else Path.home() / ".bellbounds"
    path.mkdir(parents=True, exist_ok=True)
    return path


@dataclass
class Config:
    """Persisted user defaults."""

    algorithm: str = "bpcg"
    lazy_tolerance: float = 2.0
    epsilon: float = 1e-6
    max_iterations: int = 100_000
    restarts: int = 3000
    seed: int = 0
    threads: int = 1
    lmo: str = "auto"
    rationalize_tol: float = 1e-6
    integer_scale: float = 1e4
    weight_bits: int = 48
    min_nu: float = 0.5

    @classmethod
    def load(cls) -> "Config":
        config_path = cls._config_file()
        config = cls()
        if config_path.exists():
            try:
                data = json.loads(config_path.read_text())
                config = cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})
            except Exception as e:
                logger.warning("Failed to load config: %s, using defaults", e)
        threads = os.environ.get(THREADS_ENV)
        if threads:
            try:
                config.threads = max(1, int(threads))
            except ValueError:
                logger.warning("Ignoring %s=%r (not an integer)", THREADS_ENV, threads)
        return config

    def save(self):
        config_file = self._config_file()
        config_file.parent.mkdir(parents=True, exist_ok=True)
        config_file.write_text(json.dumps(self.__dict__, indent=2))

    @staticmethod
    def _config_file() -> Path:
        return app_dir() / "config.json"


@dataclass
class RunConfig:
    """One pipeline invocation: what to build, how to solve it and where to write."""

    mode: str = "lower"
    state: str = "werner"
    parties: int = 2
    inputs: int = 2
    v0: str = "0.7"
    polyhedron: str | None = None
    polygon: bool = False
    tensor: str | None = None
    out: str = "bellbounds-run"
    algorithm: str = "bpcg"
    debug: bool = False
    settings: Config = field(default_factory=Config)

    def validate(self):
        if self.mode not in MODES:
            raise DomainError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.state not in STATES:
            raise DomainError(f"unknown state {self.state!r}; choose from {STATES}")
        if self.algorithm not in ALGORITHMS:
            raise DomainError(f"unknown algorithm {self.algorithm!r}; choose from {sorted(ALGORITHMS)}")
        if self.settings.lmo not in LMO_MODES:
            raise DomainError(f"unknown LMO mode {self.settings.lmo!r}")
        if self.polygon and self.state != "ghz":
            raise DomainError("planar polygon measurements are only available for the ghz state")
        if self.state == "custom" and not self.tensor:
            raise DomainError("custom state needs a tensor file")
        if self.state != "custom" and self.tensor:
            raise DomainError("a tensor file is only used with the custom state")
        if self.state in ("werner", "singlet", "w") and self.parties != (3 if self.state == "w" else 2):
            raise DomainError(f"state {self.state} has a fixed number of parties")
        if self.state == "ghz" and not 2 <= self.parties <= 4:
            raise DomainError("ghz supports 2 to 4 parties")
        if self.inputs < 1:
            raise DomainError("number of inputs must be positive")
        if (
            self.state in ("werner", "singlet")
            and self.inputs != 2
            and self.polyhedron is None
            and self.inputs not in NAMED_SOLIDS
        ):
            raise DomainError(
                f"no built-in polyhedron with {self.inputs} inputs; "
                f"pass --polyhedron or pick m from {sorted(NAMED_SOLIDS)}"
            )
        return self

    def solver_config(self) -> SolverConfig:
        s = self.settings
        return SolverConfig(
            lazy_tolerance=s.lazy_tolerance,
            max_iterations=s.max_iterations,
            epsilon=s.epsilon,
            restarts=s.restarts,
            seed=s.seed,
            threads=s.threads,
            lmo=s.lmo,
            debug=self.debug,
        )
