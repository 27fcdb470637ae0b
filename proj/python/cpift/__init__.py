"""Python bindings for the cpift core library.

Configs and run records are passed as JSON text on the C++ side; the helpers
here accept and return plain dicts.
"""

import json as _json

from ._cpift import (
    Error,
    ParameterSnapshot,
    TensorMeta,
    core_size,
    group_tasks,
    jaccard,
    read_snapshot,
    select_core,
    slerp,
    write_snapshot,
)
from . import _cpift

__all__ = [
    "Error",
    "ParameterSnapshot",
    "TensorMeta",
    "core_size",
    "group_tasks",
    "jaccard",
    "read_snapshot",
    "select_core",
    "slerp",
    "write_snapshot",
    "resolve_config",
    "run_pipeline",
    "run_phase",
    "render_report",
]


def resolve_config(config: dict) -> dict:
    """Config with every default and derived seed filled in."""
    return _json.loads(_cpift.resolve_config(_json.dumps(config)))


def run_pipeline(config: dict) -> dict:
    """Runs all phases; returns the run record."""
    return _json.loads(_cpift.run_pipeline(_json.dumps(config)))


def run_phase(config: dict, phase: str) -> dict:
    return _json.loads(_cpift.run_phase(_json.dumps(config), phase))


def render_report(output_dir, fmt: str = "json"):
    text = _cpift.render_report(str(output_dir), fmt)
    return _json.loads(text) if fmt == "json" else text
