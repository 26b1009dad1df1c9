"""Python access to the BDSVIE/FDSVIE solvers and the experiment corpus."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Optional, Union

from ._bdsvie import (
    BdsvieError,
    LipschitzApprox,
    contraction_constants,
    inf_convolution,
    scenarios,
    set_threads,
    threads,
)
from . import _bdsvie

__all__ = [
    "BdsvieError",
    "LipschitzApprox",
    "contraction_constants",
    "inf_convolution",
    "list_problems",
    "run",
    "scenarios",
    "set_threads",
    "strip_wallclock",
    "threads",
]


def list_problems() -> list[dict[str, Any]]:
    """Corpus entries with kind, anchor, oracle and default parameters."""
    return json.loads(_bdsvie.list_problems_json())


def run(
    config: Union[dict[str, Any], str, Path],
    out: Optional[Union[str, Path]] = None,
    seed_override: Optional[int] = None,
) -> tuple[int, dict[str, Any]]:
    """Runs one experiment and returns (exit code, summary).

    `config` is either a parsed config dict or a path to a JSON config file.
    Config and solver errors raise BdsvieError(code, message).
    """
    if not isinstance(config, dict):
        config = json.loads(Path(config).read_text())
    code, summary, _ = _bdsvie.run_json(
        json.dumps(config), None if out is None else str(out), seed_override
    )
    return code, json.loads(summary)


def strip_wallclock(summary: dict[str, Any]) -> dict[str, Any]:
    return json.loads(_bdsvie.strip_wallclock_json(json.dumps(summary)))
