"""Run configuration: one JSON document per run, validated up front.

Example::

    {"rows": {"gamma": 10, "beta": 1, "iterations": 1000},
     "cols": {"gamma": 100, "beta": 1, "iterations": 1000},
     "cdp": {"iter_u": 20},
     "orientation": "rows-are-parts",
     "seeds": [0, 1, 2]}

Unknown keys are rejected so that typos do not silently fall back to
defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .cdp import CdpHyper
from .dpmm import DpmmConfig

ORIENTATIONS = ("rows-are-parts", "rows-are-composites")
SWEEP_MODES = ("batch", "serial")

_DPMM_KEYS = {f.name for f in fields(DpmmConfig)} - {"seed", "workers", "debug"}
_CDP_KEYS = {f.name for f in fields(CdpHyper)}


@dataclass
class RunConfig:
    rows: DpmmConfig = field(default_factory=lambda: DpmmConfig(iterations=200))
    cols: DpmmConfig = field(default_factory=lambda: DpmmConfig(iterations=200))
    cdp: CdpHyper = field(default_factory=CdpHyper)
    orientation: str = "rows-are-parts"
    seeds: List[int] = field(default_factory=lambda: [0])
    sweep_mode: str = "batch"
    trace_thin: int = 1
    input: Optional[str] = None
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {', '.join(ORIENTATIONS)}")
        if self.sweep_mode not in SWEEP_MODES:
            raise ValueError(f"sweep_mode must be one of {', '.join(SWEEP_MODES)}")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        self.seeds = [int(s) for s in self.seeds]
        if int(self.trace_thin) < 1:
            raise ValueError("trace_thin must be >= 1")

    def to_dict(self):
        """JSON form accepted back by :func:`config_from_dict`; sampler seeds are
        derived per run, so they are left out."""
        def sampler(c):
            d = c.to_dict()
            d.pop("seed")
            return d
        return {"rows": sampler(self.rows), "cols": sampler(self.cols),
                "cdp": self.cdp.to_dict(), "orientation": self.orientation,
                "seeds": list(self.seeds), "sweep_mode": self.sweep_mode,
                "trace_thin": int(self.trace_thin), "input": self.input,
                "out_dir": self.out_dir}


def _section(doc, key, allowed, what):
    sec = doc.get(key, {})
    if not isinstance(sec, dict):
        raise ValueError(f"config section '{key}' must be an object")
    unknown = set(sec) - allowed
    if unknown:
        raise ValueError(f"unknown {what} setting(s): {', '.join(sorted(unknown))}")
    return sec


def config_from_dict(doc):
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    top = {"rows", "cols", "cdp", "orientation", "seeds", "sweep_mode", "trace_thin",
           "input", "out_dir"}
    unknown = set(doc) - top
    if unknown:
        raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    base = RunConfig()
    rows = _section(doc, "rows", _DPMM_KEYS, "row sampler")
    cols = _section(doc, "cols", _DPMM_KEYS, "column sampler")
    cdp = _section(doc, "cdp", _CDP_KEYS, "cdp")
    try:
        return RunConfig(
            rows=replace(base.rows, **rows), cols=replace(base.cols, **cols),
            cdp=replace(base.cdp, **cdp),
            orientation=doc.get("orientation", base.orientation),
            seeds=doc.get("seeds", base.seeds),
            sweep_mode=doc.get("sweep_mode", base.sweep_mode),
            trace_thin=doc.get("trace_thin", base.trace_thin),
            input=doc.get("input"), out_dir=doc.get("out_dir"))
    except TypeError as exc:
        raise ValueError(f"invalid config: {exc}") from None


def load_config(path=None):
    """Read and validate a config file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed JSON: {exc}") from None
    try:
        return config_from_dict(doc)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def derive_seeds(seed):
    """Independent seeds for the row sampler, column sampler and token sweeps."""
    a, b, c = np.random.SeedSequence(int(seed)).generate_state(3)
    return int(a), int(b), int(c)
