"""Physical parameters, derived constants and input validation.

Everything is strict SI. Angular frequencies and damping constants are in
rad/s. The mechanical damping constant is a pure rate: the momentum equation
carries ``-(mech_damping / 2) * P`` and a bare mirror has an effective
damping of ``mech_damping / 2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

from scipy.constants import c as SPEED_OF_LIGHT
from scipy.constants import hbar as HBAR
from scipy.constants import k as K_BOLTZMANN

from .errors import InvalidParameterError

# cavity must hold at least this many wavelengths
MIN_LENGTH_TO_WAVELENGTH = 100.0
# fraction of the wavelength above which a static displacement is flagged
DISPLACEMENT_WARN_FRACTION = 0.1


@dataclass(frozen=True)
class SystemParams:
    """Mechanical and cavity constants shared by both configurations.

    Attributes
    ----------
    mirror_mass : float
        Mass of the movable mirror [kg].
    mech_freq : float
        Bare mechanical angular frequency [rad/s].
    mech_damping : float
        Bare mechanical damping rate [rad/s].
    subcavity_length : float
        Length of each (sub-)cavity [m].
    wavelength : float
        Optical wavelength [m].
    cavity_decay : float
        Energy decay rate of each (sub-)cavity [rad/s].
    bath_temperature : float
        Temperature of the mechanical bath [K].
    """

    mirror_mass: float
    mech_freq: float
    mech_damping: float
    subcavity_length: float
    wavelength: float
    cavity_decay: float
    bath_temperature: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemParams":
        names = {f.name for f in fields(cls)}
        missing = names - set(data)
        if missing:
            raise InvalidParameterError(
                [f"missing system parameter '{m}'" for m in sorted(missing)]
            )
        return cls(**{k: float(data[k]) for k in names})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SystemParams":
        return cls.from_dict(json.loads(text))

    def replace(self, **changes) -> "SystemParams":
        data = self.to_dict()
        data.update(changes)
        return SystemParams(**data)


@dataclass(frozen=True)
class DriveField:
    """One pump field.

    ``power`` is the optical power entering each pumped port [W]; for the
    three-mirror cavity both sub-cavities receive this power. ``detuning``
    is cavity resonance minus laser frequency [rad/s], so a negative value
    is the trapping (spring-stiffening) side.
    """

    power: float
    detuning: float
    role: str = "trap"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DriveField":
        return cls(float(data["power"]), float(data["detuning"]), str(data.get("role", "trap")))


@dataclass(frozen=True)
class DerivedConstants:
    optical_freq: float  # rad/s
    coupling: float  # rad s^-1 m^-1
    thermal_quanta_scale: float  # k_B T / (hbar Omega_M)


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _system_violations(p: SystemParams) -> list[str]:
    out = []
    for f in fields(SystemParams):
        value = getattr(p, f.name)
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            out.append(f"{f.name} must be a finite positive number (got {value!r})")
    if not out:
        if p.mech_damping >= p.mech_freq:
            out.append(
                "mech_damping must be smaller than mech_freq (underdamped oscillator)"
            )
        if p.subcavity_length < MIN_LENGTH_TO_WAVELENGTH * p.wavelength:
            out.append(
                "wavelength must be much smaller than subcavity_length "
                f"(need subcavity_length >= {MIN_LENGTH_TO_WAVELENGTH:g} wavelengths)"
            )
    return out


def _field_violations(drive: DriveField, index: int) -> list[str]:
    out = []
    if not (math.isfinite(drive.power) and drive.power >= 0):
        out.append(f"field {index}: power must be finite and >= 0 (got {drive.power!r})")
    if not math.isfinite(drive.detuning):
        out.append(f"field {index}: detuning must be finite (got {drive.detuning!r})")
    return out


def validate(p: SystemParams, drives=(), configuration: str = "3MC") -> ValidationReport:
    """Collect invariant violations and physical-regime warnings.

    Never raises. For the two-mirror cavity each field's static recoil is
    computed and a warning is emitted when it exceeds a tenth of the
    wavelength, where the single-mode small-displacement picture breaks down.
    ``drive.power`` is taken as the total two-mirror pump power.
    """
    report = ValidationReport(violations=_system_violations(p))
    for i, d in enumerate(drives):
        report.violations.extend(_field_violations(d, i))
    if not report.ok or configuration.upper() != "2MC":
        return report

    from .steady_state import two_mirror_equilibrium

    limit = DISPLACEMENT_WARN_FRACTION * p.wavelength
    for i, d in enumerate(drives):
        eq = two_mirror_equilibrium(p, d, total_power=True)
        q_max = max(abs(q) for q in eq.positions)
        if q_max > limit:
            report.warnings.append(
                f"field {i}: static displacement {q_max:.3e} m exceeds "
                f"{DISPLACEMENT_WARN_FRACTION:g} wavelength ({limit:.3e} m); "
                "the small-displacement approximation is questionable"
            )
    return report


def require_valid(p: SystemParams, drives=()) -> None:
    violations = _system_violations(p)
    for i, d in enumerate(drives):
        violations.extend(_field_violations(d, i))
    if violations:
        raise InvalidParameterError(violations)


def derive_constants(p: SystemParams) -> DerivedConstants:
    """Optical frequency ``2 pi c / lambda``, coupling ``omega_c / L`` and
    the thermal quanta scale ``k_B T / (hbar Omega_M)``."""
    require_valid(p)
    omega_c = 2.0 * math.pi * SPEED_OF_LIGHT / p.wavelength
    return DerivedConstants(
        optical_freq=omega_c,
        coupling=omega_c / p.subcavity_length,
        thermal_quanta_scale=K_BOLTZMANN * p.bath_temperature / (HBAR * p.mech_freq),
    )


def input_photon_flux(p: SystemParams, power: float) -> float:
    """Squared input amplitude ``|f_in|^2 = P / (hbar omega_c)`` [1/s]."""
    return power / (HBAR * derive_constants(p).optical_freq)


# Reference parameter sets. The source gives no mechanical damping; the
# value below keeps the single-field trapping point dynamically stable.
REFERENCE_MECH_DAMPING = 500.0


def reference_system(**overrides) -> SystemParams:
    """1 mg mirror at 2 pi x 100 Hz in 2.5 cm sub-cavities, 1064 nm,
    cavity decay 1e7 1/s, room temperature."""
    base = SystemParams(
        mirror_mass=1e-6,
        mech_freq=2 * math.pi * 100.0,
        mech_damping=REFERENCE_MECH_DAMPING,
        subcavity_length=0.025,
        wavelength=1064e-9,
        cavity_decay=1e7,
        bath_temperature=300.0,
    )
    return base.replace(**overrides) if overrides else base


def reference_trap_drive(p: SystemParams | None = None) -> DriveField:
    """1 mW per side at detuning -gamma/2."""
    gamma = (p or reference_system()).cavity_decay
    return DriveField(power=1e-3, detuning=-0.5 * gamma, role="trap")


def ground_state_setup(quality_factor: float = 1e4):
    """System and (trap, cool) fields for the ground-state cooling scenario:
    L = 1 cm, 400 mW at -2.5 gamma and 5 mW at +gamma/2, room temperature."""
    p = reference_system(subcavity_length=0.01)
    p = p.replace(mech_damping=p.mech_freq / quality_factor)
    gamma = p.cavity_decay
    trap = DriveField(power=0.4, detuning=-2.5 * gamma, role="trap")
    cool = DriveField(power=5e-3, detuning=0.5 * gamma, role="cool")
    return p, trap, cool
