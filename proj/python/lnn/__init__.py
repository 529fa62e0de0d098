"""Deep linear network training dynamics: simulation and analysis."""

import json as _json

from ._core import *  # noqa: F401,F403
from ._core import (
    ConfigError,
    ConvergenceError,
    DegenerateInputError,
    DivergenceError,
    Error,
    InfeasibleError,
    InputError,
    PreconditionError,
    ShapeError,
)
from ._core import run_scenario as _run_scenario

__all__ = [name for name in dir() if not name.startswith("_")]


def run_scenario(config_toml: str, output_dir: str = "") -> dict:
    """Run a lab scenario from TOML text and return its summary."""
    return _json.loads(_run_scenario(config_toml, output_dir))
