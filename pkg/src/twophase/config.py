"""Experiment configuration documents (YAML or JSON).

See ``docs/config-schema.md`` for the versioned schema.  The seed can be
overridden by the ``TWOPHASE_SEED`` environment variable, which takes
precedence over the document; a ``--seed`` flag takes precedence over both.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import yaml

from .errors import ModelError
from .model import TwoPhaseModel

SCHEMA_VERSION = 1
SEED_ENV = "TWOPHASE_SEED"

RUN_DEFAULTS = {
    "dt": 1e-3,
    "horizon": 2000.0,
    "replicates": 100,
    "chain_length": 100_000,
    "bridge_correction": True,
    "parallel": 1,
    "max_steps": None,
    "onset_draws": 100_000,
    "probes": None,
    "hitting": {"z": None, "c": None, "paths": 10_000, "dt": 1e-4, "monte_carlo": True},
    "closed_forms": None,
    "thm2": None,
}

_RUN_KEYS = set(RUN_DEFAULTS)


def _canonical(obj):
    """JSON-safe copy with non-finite floats spelled as strings."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    return obj


def _decode(obj):
    if isinstance(obj, str) and obj.lower() in ("inf", "+inf", "infinity", "-inf", "-infinity", "nan"):
        return float(obj)
    if isinstance(obj, dict):
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


@dataclass
class ExperimentConfig:
    model: dict
    run: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "results"
    version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.version != SCHEMA_VERSION:
            raise ModelError(f"unsupported config version {self.version}")
        unknown = set(self.run) - _RUN_KEYS
        if unknown:
            raise ModelError(f"unknown run keys: {sorted(unknown)}")
        merged = copy.deepcopy(RUN_DEFAULTS)
        for k, v in self.run.items():
            if isinstance(merged.get(k), dict) and isinstance(v, dict):
                merged[k].update(v)
            else:
                merged[k] = v
        self.run = merged
        self.seed = int(self.seed)
        if not 0 <= self.seed < 2**63:
            raise ModelError("seed must be a non-negative 63-bit integer")

    def build_model(self) -> TwoPhaseModel:
        return TwoPhaseModel.from_dict(_decode(self.model))

    def to_dict(self) -> dict:
        return _canonical({
            "version": self.version,
            "seed": self.seed,
            "out": self.out,
            "model": self.model,
            "run": self.run,
        })

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = _decode(dict(doc))
        if "model" not in doc:
            raise ModelError("config needs a model block")
        return cls(
            model=doc["model"],
            run=doc.get("run", {}) or {},
            seed=doc.get("seed", 0),
            out=doc.get("out", "results"),
            version=doc.get("version", SCHEMA_VERSION),
        )

    def dumps(self) -> str:
        """Canonical JSON of everything that affects results.

        ``run.parallel`` only decides how replicates are spread over threads
        and ``out`` only where files go; neither changes any output, so both
        are left out.
        """
        doc = self.to_dict()
        doc["run"].pop("parallel", None)
        doc.pop("out", None)
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def provenance(self, command: str) -> dict:
        from . import __version__

        return {"command": command, "config_sha256": self.sha256, "seed": self.seed,
                "config": json.loads(self.dumps()), "package_version": __version__}

    def header_lines(self, command: str) -> list[str]:
        return [f"command={command}", f"config_sha256={self.sha256}", f"seed={self.seed}",
                f"config={self.dumps()}"]


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    """Read a YAML or JSON config document."""
    with open(path) as fh:
        text = fh.read()
    if str(path).endswith(".json"):
        doc = json.loads(text)
    else:
        doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ModelError("config document must be a mapping")
    return ExperimentConfig.from_dict(doc)


def apply_overrides(cfg: ExperimentConfig, seed=None, out=None, env=None, **run) -> ExperimentConfig:
    """Command-line and environment overrides (flag > environment > document)."""
    env = os.environ if env is None else env
    doc = cfg.to_dict()
    if env.get(SEED_ENV):
        doc["seed"] = int(env[SEED_ENV])
    if seed is not None:
        doc["seed"] = int(seed)
    if out is not None:
        doc["out"] = out
    for k, v in run.items():
        if v is not None:
            doc["run"][k] = v
    return ExperimentConfig.from_dict(doc)
