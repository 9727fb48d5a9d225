"""
Environment-driven defaults for the multiport tools.

Every value here can be overridden per run by a CLI flag; the environment only
moves the defaults (e.g. MULTIPORT_RESTARTS=16 for quick interactive runs).
"""
import os
import logging

from errors import ConfigError


def _env(name, default, cast):
    raw = os.getenv(name)
    if raw is None or raw == '':
        return default
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"{name}={raw!r} is not a valid {cast.__name__}")


# Solver
RESTARTS = _env('MULTIPORT_RESTARTS', 64, int)
MAX_ITERS = _env('MULTIPORT_MAX_ITERS', 2000, int)
FTOL = _env('MULTIPORT_FTOL', 1e-10, float)
SEED = _env('MULTIPORT_SEED', 20220, int)
WORKERS = _env('MULTIPORT_WORKERS', 1, int)
REFINE_TOP = _env('MULTIPORT_REFINE_TOP', 1, int)
WEIGHTING = os.getenv('MULTIPORT_WEIGHTING', 'auto')

# Data
FIXTURES_DIR = os.getenv(
    'MULTIPORT_FIXTURES_DIR',
    os.path.join(os.path.dirname(os.path.abspath(__file__)), 'fixtures'),
)

# HTTP API
HOST = os.getenv('MULTIPORT_HOST', '0.0.0.0')
PORT = _env('MULTIPORT_PORT', 5000, int)

LOG_LEVEL = os.getenv('MULTIPORT_LOG_LEVEL', 'INFO')
LOG_FORMAT = '[%(name)s] %(message)s'


def setup_logging(level=None):
    """Configure the root handler once; library modules only get loggers."""
    level = (level or LOG_LEVEL).upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ConfigError(f"unknown log level {level!r}")
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
