__version__ = "0.1.0"

# Environment variables honored by the CLI.
HOME_ENV = "BELLBOUNDS_HOME"
THREADS_ENV = "BELLBOUNDS_THREADS"
