"""Run configuration: JSON documents with optional unit-suffixed values.

The core library is strictly SI. Configuration values may be plain numbers
(SI) or strings such as ``"1mW"``, ``"2pi*100Hz"``, ``"2.5cm"``,
``"1064nm"``, ``"1mg"``, ``"300K"`` or ``"-0.5gamma"``. A string is a
``*``-separated product of factors, each a number with an optional unit.
``Hz`` denotes ``1/s`` numerically; write ``2pi*`` explicitly for cycle
frequencies. ``gamma`` is the cavity decay rate of the same document and
is only allowed for rates and detunings.

Schema (version 1)::

    {
      "schema_version": 1,
      "configuration": "3MC" | "2MC",
      "system": {mirror_mass, mech_freq, mech_damping, subcavity_length,
                 wavelength, cavity_decay, bath_temperature},
      "fields": [{"role": "trap" | "cool", "power": ..., "detuning": ...}],
      "options": {...command options...},
      "sweep": {"axis1": {"path", "start", "stop", "num", "spacing"},
                "axis2": {...} (optional),
                "outputs": [...]}
    }

Sweep paths are ``system.<name>`` or ``fields.<role>.<power|detuning>``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, InvalidParameterError
from .params import DriveField, SystemParams, validate

SCHEMA_VERSION = 1
ROLES = ("trap", "cool")
SWEEP_OUTPUTS = ("omega_eff", "gamma_eff", "n_quanta", "stability", "root_count", "delta_prime")

_UNITS = {
    "power": {"W": 1.0, "kW": 1e3, "mW": 1e-3, "uW": 1e-6, "µW": 1e-6, "nW": 1e-9},
    "length": {"m": 1.0, "km": 1e3, "cm": 1e-2, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "nm": 1e-9, "pm": 1e-12},
    "mass": {"kg": 1.0, "g": 1e-3, "mg": 1e-6, "ug": 1e-9, "µg": 1e-9, "ng": 1e-12},
    "temperature": {"K": 1.0, "mK": 1e-3, "uK": 1e-6, "µK": 1e-6},
    "rate": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9, "/s": 1.0, "1/s": 1.0, "rad/s": 1.0},
}
_DIMENSIONLESS = {"": 1.0, "pi": math.pi, "π": math.pi}
_GAMMA = ("gamma", "γ")

SYSTEM_KINDS = {
    "mirror_mass": "mass",
    "mech_freq": "rate",
    "mech_damping": "rate",
    "subcavity_length": "length",
    "wavelength": "length",
    "cavity_decay": "rate",
    "bath_temperature": "temperature",
}
FIELD_KINDS = {"power": "power", "detuning": "rate"}

_FACTOR = re.compile(r"^([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*(.*)$")


def parse_quantity(value, kind: str, gamma: float | None = None) -> float:
    """Convert a number or unit-suffixed string to SI.

    Parameters
    ----------
    value : float, int or str
    kind : {"power", "length", "mass", "temperature", "rate", "dimensionless"}
    gamma : float, optional
        Cavity decay rate used to resolve ``gamma`` factors.

    Raises
    ------
    ConfigError
        Unknown unit, unit of the wrong kind, or unresolvable ``gamma``.
    """
    if isinstance(value, bool):
        raise ConfigError(f"expected a {kind} quantity, got a boolean")
    if isinstance(value, (int, float)):
        out = float(value)
    elif isinstance(value, str):
        out = _parse_string(value, kind, gamma)
    else:
        raise ConfigError(f"expected a {kind} quantity, got {type(value).__name__}")
    if not math.isfinite(out):
        raise ConfigError(f"non-finite {kind} value {value!r}")
    return out


def _parse_string(text: str, kind: str, gamma: float | None) -> float:
    factors = [f.strip() for f in text.replace(" ", "").split("*")]
    if not factors or any(f == "" for f in factors):
        raise ConfigError(f"cannot parse quantity {text!r}")
    total = 1.0
    dims: list[str] = []
    for f in factors:
        m = _FACTOR.match(f)
        number, unit = m.group(1), m.group(2)
        total *= float(number) if number else 1.0
        if unit in _DIMENSIONLESS:
            if not number and unit == "":
                raise ConfigError(f"cannot parse quantity {text!r}")
            total *= _DIMENSIONLESS[unit]
            continue
        if unit in _GAMMA:
            if gamma is None:
                raise ConfigError(f"'gamma' in {text!r} needs system.cavity_decay")
            total *= gamma
            dims.append("rate")
            continue
        for dim, table in _UNITS.items():
            if unit in table:
                total *= table[unit]
                dims.append(dim)
                break
        else:
            raise ConfigError(f"unknown unit {unit!r} in {text!r}")
    if kind == "dimensionless":
        if dims:
            raise ConfigError(f"{text!r} must be dimensionless")
    elif dims and dims != [kind]:
        raise ConfigError(f"{text!r} is not a {kind} quantity")
    return total


@dataclass(frozen=True)
class SweepAxis:
    path: str
    start: float
    stop: float
    num: int
    spacing: str = "linear"

    def values(self):
        import numpy as np

        if self.spacing == "log":
            return np.geomspace(self.start, self.stop, self.num)
        return np.linspace(self.start, self.stop, self.num)


@dataclass(frozen=True)
class SweepSpec:
    axes: tuple[SweepAxis, ...]
    outputs: tuple[str, ...]


@dataclass
class RunConfig:
    system: SystemParams
    fields: list[DriveField]
    configuration: str
    options: dict = field(default_factory=dict)
    sweep: SweepSpec | None = None
    normalized: dict = field(default_factory=dict)

    def field_by_role(self, role: str) -> DriveField | None:
        for f in self.fields:
            if f.role == role:
                return f
        return None

    def with_value(self, path: str, value: float) -> "RunConfig":
        """Copy with one sweep path set to ``value`` (SI)."""
        parts = path.split(".")
        if parts[0] == "system" and len(parts) == 2:
            return RunConfig(self.system.replace(**{parts[1]: value}), list(self.fields),
                             self.configuration, self.options, self.sweep, self.normalized)
        if parts[0] == "fields" and len(parts) == 3:
            role, attr = parts[1], parts[2]
            new = [
                DriveField(**{**f.to_dict(), attr: value}) if f.role == role else f for f in self.fields
            ]
            return RunConfig(self.system, new, self.configuration, self.options, self.sweep, self.normalized)
        raise ConfigError(f"bad sweep path {path!r}")


def _path_kind(path: str, cfg_fields) -> str:
    parts = path.split(".")
    if parts[0] == "system" and len(parts) == 2 and parts[1] in SYSTEM_KINDS:
        return SYSTEM_KINDS[parts[1]]
    if parts[0] == "fields" and len(parts) == 3 and parts[2] in FIELD_KINDS:
        if parts[1] not in {f.role for f in cfg_fields}:
            raise ConfigError(f"sweep path {path!r} names a role with no field")
        return FIELD_KINDS[parts[2]]
    raise ConfigError(
        f"sweep path {path!r} must be system.<name> or fields.<role>.<power|detuning>"
    )


def _parse_axis(raw: dict, cfg_fields, gamma: float) -> SweepAxis:
    try:
        path = raw["path"]
        kind = _path_kind(path, cfg_fields)
        start = parse_quantity(raw["start"], kind, gamma)
        stop = parse_quantity(raw["stop"], kind, gamma)
        num = raw["num"]
    except KeyError as exc:
        raise ConfigError(f"sweep axis missing key {exc}") from None
    spacing = raw.get("spacing", "linear")
    if not isinstance(num, int) or num < 2:
        raise ConfigError("sweep point count must be an integer >= 2")
    if spacing not in ("linear", "log"):
        raise ConfigError("sweep spacing must be 'linear' or 'log'")
    if not start < stop:
        raise ConfigError(f"sweep range for {path!r} must be ordered (start < stop)")
    if spacing == "log" and start <= 0:
        raise ConfigError("log spacing needs a positive range")
    return SweepAxis(path, start, stop, num, spacing)


def parse_config(doc: dict) -> RunConfig:
    """Validate and normalise a configuration document.

    Raises
    ------
    ConfigError
        Malformed document or unit errors.
    InvalidParameterError
        Physical invariants violated.
    """
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    configuration = str(doc.get("configuration", "3MC")).upper()
    if configuration not in ("3MC", "2MC"):
        raise ConfigError("configuration must be '3MC' or '2MC'")

    raw_sys = doc.get("system")
    if not isinstance(raw_sys, dict):
        raise ConfigError("missing 'system' object")
    unknown = set(raw_sys) - set(SYSTEM_KINDS)
    if unknown:
        raise ConfigError(f"unknown system keys {sorted(unknown)}")
    missing = set(SYSTEM_KINDS) - set(raw_sys)
    if missing:
        raise ConfigError(f"missing system keys {sorted(missing)}")
    gamma = parse_quantity(raw_sys["cavity_decay"], "rate")
    system = SystemParams(**{k: parse_quantity(raw_sys[k], SYSTEM_KINDS[k], gamma) for k in SYSTEM_KINDS})

    raw_fields = doc.get("fields")
    if not isinstance(raw_fields, list) or not raw_fields:
        raise ConfigError("at least one drive field is required")
    fields_ = []
    for i, rf in enumerate(raw_fields):
        if not isinstance(rf, dict) or "power" not in rf or "detuning" not in rf:
            raise ConfigError(f"field {i} needs 'power' and 'detuning'")
        role = rf.get("role", "trap")
        if role not in ROLES:
            raise ConfigError(f"field {i}: role must be one of {ROLES}")
        fields_.append(DriveField(parse_quantity(rf["power"], "power", gamma),
                                  parse_quantity(rf["detuning"], "rate", gamma), role))
    roles = [f.role for f in fields_]
    if len(set(roles)) != len(roles):
        raise ConfigError("role tags must be unique")

    report = validate(system, fields_, configuration)
    if not report.ok:
        raise InvalidParameterError(report.violations)

    options = dict(doc.get("options", {}))
    if not isinstance(doc.get("options", {}), dict):
        raise ConfigError("'options' must be an object")

    sweep = None
    if "sweep" in doc:
        raw = doc["sweep"]
        if not isinstance(raw, dict) or "axis1" not in raw:
            raise ConfigError("'sweep' needs at least 'axis1'")
        axes = [_parse_axis(raw["axis1"], fields_, gamma)]
        if raw.get("axis2") is not None:
            axes.append(_parse_axis(raw["axis2"], fields_, gamma))
        outputs = tuple(raw.get("outputs", ("omega_eff", "gamma_eff")))
        bad = [o for o in outputs if o not in SWEEP_OUTPUTS]
        if bad or not outputs:
            raise ConfigError(f"unknown sweep outputs {bad}; choose from {SWEEP_OUTPUTS}")
        sweep = SweepSpec(tuple(axes), outputs)

    normalized = {
        "schema_version": SCHEMA_VERSION,
        "configuration": configuration,
        "system": system.to_dict(),
        "fields": [f.to_dict() for f in fields_],
        "options": options,
    }
    if sweep is not None:
        normalized["sweep"] = {
            **{f"axis{i + 1}": vars(ax).copy() for i, ax in enumerate(sweep.axes)},
            "outputs": list(sweep.outputs),
        }
    return RunConfig(system, fields_, configuration, options, sweep, normalized)


def load_config(path) -> RunConfig:
    """Read and validate a JSON configuration file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return parse_config(doc)
