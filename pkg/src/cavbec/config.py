"""Run configuration: a flat JSON document validated against a schema."""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass
from typing import Any, Optional

import jsonschema

from .core import RawParams, SpatialGrid, SystemParams, make_grid
from .dynamics import IntegratorConfig
from .ensemble import REDUCTIONS, EnsembleConfig, default_workers
from .sampler import SamplerConfig

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_opt_pos = {"type": ["number", "null"], "exclusiveMinimum": 0}
_opt_num = {"type": ["number", "null"]}
_seed = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}

K_MODE = re.compile(r"^mode:([1-9][0-9]*)$")

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["C", "gamma_m", "k", "n_points"],
    "properties": {
        # system
        "C": _nonneg,
        "gamma_m": _nonneg,
        "k": {"oneOf": [_pos, {"type": "string", "pattern": K_MODE.pattern}]},
        "N": _pos,
        "cavity_parity": {"enum": ["sine", "cosine"]},
        "pump_geometry": {"enum": ["transverse", "axial"]},
        "pump_profile": {"enum": ["uniform", "gaussian"]},
        "pump_width": _opt_pos,
        "lightshift": _num,
        "kappa_ratio": _opt_pos,
        "temperature": _nonneg,
        "g0": _opt_num, "h0": _opt_num, "kappa": _opt_pos, "delta_pa": _opt_num,
        "delta_pc": _opt_num, "eta": _opt_num, "omega_perp": _opt_pos, "a_s": _opt_num,
        # grid and modes
        "n_points": {"type": "integer", "minimum": 4, "multipleOf": 2},
        "half_width": _pos,
        "n_modes": {"type": "integer", "minimum": 1},
        # sampling
        "fluctuations": {"type": "boolean"},
        "mode_cutoff": {"type": ["integer", "null"], "minimum": 0},
        "condensate_number": _opt_pos,
        # integration
        "dt": _pos,
        "t_final": _nonneg,
        "scheme": {"enum": ["milstein", "exact_split"]},
        "snapshot_stride": {"type": "integer", "minimum": 1},
        "observable_stride": {"type": "integer", "minimum": 1},
        "seed": _seed,
        # ensemble
        "n_trajectories": {"type": "integer", "minimum": 1},
        "worker_count": {"type": ["integer", "null"], "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "reductions": {"type": "array", "items": {"enum": list(REDUCTIONS)}, "uniqueItems": True},
        "probe_positions": {"type": "array", "items": _num},
        "persist_records": {"type": "boolean"},
        "persist_snapshots": {"type": "boolean"},
        "output_dir": {"type": "string", "minLength": 1},
    },
}

DEFAULTS: dict[str, Any] = {
    "N": 1000.0,
    "cavity_parity": "sine",
    "pump_geometry": "transverse",
    "pump_profile": "uniform",
    "pump_width": None,
    "lightshift": 0.0,
    "kappa_ratio": None,
    "temperature": 0.0,
    "g0": None, "h0": None, "kappa": None, "delta_pa": None,
    "delta_pc": None, "eta": None, "omega_perp": None, "a_s": None,
    "half_width": 16.0,
    "n_modes": 12,
    "fluctuations": False,
    "mode_cutoff": None,
    "condensate_number": None,
    "dt": 1e-4,
    "t_final": 30.0,
    "scheme": "milstein",
    "snapshot_stride": 100,
    "observable_stride": 10,
    "seed": 0,
    "n_trajectories": 1,
    "worker_count": None,
    "batch_size": 32,
    "reductions": list(REDUCTIONS),
    "probe_positions": [0.0, 3.0],
    "persist_records": False,
    "persist_snapshots": False,
    "output_dir": "out",
}

_RAW_KEYS = ("g0", "h0", "kappa", "delta_pa", "delta_pc", "eta", "omega_perp", "a_s")


class ConfigError(ValueError):
    """Invalid configuration document; ``errors`` lists "path: message" strings."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = errors


def _path(err) -> str:
    p = "$"
    for part in err.absolute_path:
        p += f"[{part}]" if isinstance(part, int) else f".{part}"
    return p


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with every default filled in."""

    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def as_dict(self) -> dict:
        return copy.deepcopy(self.values)

    @property
    def k_mode(self) -> Optional[int]:
        """Mode index when k is given as "mode:<j>", else None."""
        k = self.values["k"]
        return int(K_MODE.match(k).group(1)) if isinstance(k, str) else None

    def grid(self) -> SpatialGrid:
        return make_grid(self["n_points"], self["half_width"])

    def raw(self) -> RawParams:
        return RawParams(**{k: self.values[k] for k in _RAW_KEYS})

    def params(self, k: Optional[float] = None) -> SystemParams:
        """System parameters; ``k`` overrides the wavenumber (needed for "mode:<j>")."""
        v = self.values
        if k is None:
            if self.k_mode is not None:
                raise ValueError("wavenumber given as a mode target; resolve it first")
            k = v["k"]
        raw = self.raw()
        ratio = v["kappa_ratio"]
        if ratio is None and raw.has("g0", "kappa", "delta_pa"):
            ratio = v["N"] * raw.g0**2 / (raw.delta_pa * raw.kappa)
        return SystemParams(
            n_atoms=float(v["N"]), interaction=float(v["C"]), cavity_wavenumber=float(k),
            coupling_rate=float(v["gamma_m"]), cavity_parity=v["cavity_parity"],
            pump_geometry=v["pump_geometry"], pump_profile=v["pump_profile"],
            pump_width=v["pump_width"], lightshift_rate=float(v["lightshift"]),
            kappa_ratio=ratio, temperature=float(v["temperature"]), raw=raw,
        )

    def sampler(self) -> SamplerConfig:
        v = self.values
        return SamplerConfig(temperature=float(v["temperature"]), mode_cutoff=v["mode_cutoff"],
                             condensate_number=v["condensate_number"],
                             fluctuations_enabled=v["fluctuations"], rng_seed=v["seed"])

    def integrator(self) -> IntegratorConfig:
        v = self.values
        return IntegratorConfig(dt=float(v["dt"]), t_final=float(v["t_final"]), scheme=v["scheme"],
                                rng_seed=v["seed"], snapshot_stride=v["snapshot_stride"],
                                observable_stride=v["observable_stride"])

    def ensemble(self, worker_count: Optional[int] = None) -> EnsembleConfig:
        v = self.values
        workers = worker_count or v["worker_count"] or default_workers()
        return EnsembleConfig(n_trajectories=v["n_trajectories"], base_seed=v["seed"],
                              worker_count=workers, batch_size=v["batch_size"],
                              reductions=tuple(v["reductions"]),
                              probe_positions=tuple(float(p) for p in v["probe_positions"]),
                              persist_records=v["persist_records"],
                              persist_snapshots=v["persist_snapshots"])

    def replace(self, **changes) -> "RunConfig":
        doc = self.as_dict()
        doc.update(changes)
        return parse_config(doc)


def parse_config(document) -> RunConfig:
    """Validate a JSON document (text or dict) and fill defaults.

    Raises ConfigError with JSON-path context for every violation.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"$: not valid JSON ({exc.msg} at line {exc.lineno})"]) from None
    if not isinstance(document, dict):
        raise ConfigError(["$: configuration must be a JSON object"])
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(document), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        raise ConfigError([f"{_path(e)}: {e.message}" for e in errors])
    values = copy.deepcopy(DEFAULTS)
    values.update(copy.deepcopy(document))
    msgs = []
    if values["pump_profile"] == "gaussian" and values["pump_width"] is None:
        msgs.append("$.pump_width: required for a gaussian pump profile")
    if values["mode_cutoff"] is not None and values["mode_cutoff"] > values["n_modes"]:
        msgs.append("$.mode_cutoff: exceeds n_modes")
    if "g1_series" in values["reductions"] and len(values["probe_positions"]) != 2:
        msgs.append("$.probe_positions: g1 needs exactly two positions")
    for key in ("C", "gamma_m", "dt", "t_final", "half_width", "N"):
        if values[key] != values[key] or abs(values[key]) == float("inf"):
            msgs.append(f"$.{key}: must be finite")
    if msgs:
        raise ConfigError(msgs)
    return RunConfig(values)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
