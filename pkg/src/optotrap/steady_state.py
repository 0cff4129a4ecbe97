"""Classical steady states of the two- and three-mirror cavities.

The two-mirror (2MC) static balance between radiation pressure and the
spring is a cubic in the recoil ``q_s``. It is solved for the radiation
induced detuning shift ``s = xi * q_s`` (not for ``Delta' = Delta - s``
directly) so that weak recoils keep full relative precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError
from .params import DriveField, SystemParams, derive_constants, input_photon_flux, require_valid

_NEWTON_BUDGET = 100
_RESIDUAL_TOL = 1e-12
_CRITICAL_TOL = 1e-12
BISTABILITY_DETUNING = math.sqrt(3.0) / 2.0  # in units of the cavity decay


@dataclass(frozen=True)
class ThreeMirrorSteadyState:
    field_amplitude: float
    mirror_position: float = 0.0
    mirror_momentum: float = 0.0


@dataclass(frozen=True)
class TwoMirrorEquilibrium:
    """All static equilibria of the two-mirror cavity, sorted by position.

    ``default_branch`` indexes the smallest-``|q_s|`` root; callers that care
    about the other branches of a bistable state pick them explicitly.
    """

    positions: tuple[float, ...]
    effective_detunings: tuple[float, ...]
    field_amplitudes: tuple[float, ...]
    stability_class: str
    residuals: tuple[float, ...]
    pump_power: float
    detuning: float
    default_branch: int = 0

    @property
    def n_roots(self) -> int:
        return len(self.positions)

    @property
    def position(self) -> float:
        return self.positions[self.default_branch]

    @property
    def effective_detuning(self) -> float:
        return self.effective_detunings[self.default_branch]


@dataclass(frozen=True)
class BistabilityReport:
    classification: str  # never-bistable | critical | conditionally-bistable
    detuning: float
    threshold_power: float | None
    analytic_window: tuple[float, float] | None  # total pump power [W]


def three_mirror_steady_state(p: SystemParams, drive: DriveField) -> ThreeMirrorSteadyState:
    """Common real intracavity amplitude of both sub-cavity modes.

    ``f_s = sqrt(gamma) f_in / sqrt(gamma^2/4 + Delta^2)``, with the mirror at
    rest at the centre.
    """
    require_valid(p, [drive])
    f_in = math.sqrt(input_photon_flux(p, drive.power))
    g = p.cavity_decay
    f_s = math.sqrt(g) * f_in / math.hypot(0.5 * g, drive.detuning)
    return ThreeMirrorSteadyState(field_amplitude=f_s)


def pump_power_2mc(drive: DriveField, total_power: bool) -> float:
    """Power entering the single pumped port of the two-mirror cavity."""
    return drive.power if total_power else 2.0 * drive.power


def radiation_force_2mc(p: SystemParams, pump_power: float, detuning: float, q):
    """Static radiation force on the movable mirror at position ``q`` [N]."""
    xi = derive_constants(p).coupling
    g = p.cavity_decay
    q = np.asarray(q, dtype=float)
    dp = detuning - xi * q
    return g * pump_power / p.subcavity_length / (0.25 * g * g + dp * dp)


def static_force_2mc(p: SystemParams, pump_power: float, detuning: float, q):
    """Total static force (radiation minus spring) in the two-mirror cavity."""
    k_spring = p.mirror_mass * p.mech_freq**2
    return radiation_force_2mc(p, pump_power, detuning, q) - k_spring * np.asarray(q, dtype=float)


def _depressed(a, b, c):
    p = b - a * a / 3.0
    q = 2.0 * a**3 / 27.0 - a * b / 3.0 + c
    return p, q


def _classify(p, q):
    lhs = 4.0 * p**3 + 27.0 * q * q
    scale = 4.0 * abs(p) ** 3 + 27.0 * q * q
    if scale == 0.0 or abs(lhs) <= _CRITICAL_TOL * scale:
        return "critical", lhs
    return ("bistable" if lhs < 0 else "monostable"), lhs


def _closed_form_roots(a, b, c):
    """Real roots of ``z^3 + a z^2 + b z + c`` and the root-count class."""
    p, q = _depressed(a, b, c)
    cls, _ = _classify(p, q)
    shift = -a / 3.0
    if cls == "critical":
        if p == 0.0:
            ts = [0.0]
        else:
            ts = [3.0 * q / p, -1.5 * q / p]
    elif cls == "bistable":
        m = 2.0 * math.sqrt(-p / 3.0)
        arg = 3.0 * q / (p * m)
        theta = math.acos(max(-1.0, min(1.0, arg))) / 3.0
        ts = [m * math.cos(theta - 2.0 * math.pi * k / 3.0) for k in range(3)]
    else:
        root = math.sqrt(0.25 * q * q + p**3 / 27.0)
        big = -math.copysign(1.0, q) * np.cbrt(0.5 * abs(q) + root)
        ts = [big - p / (3.0 * big)] if big != 0.0 else [0.0]
    return sorted(t + shift for t in ts), cls


def _polish(z, d, r):
    """Newton refinement of ``z ((z - d)^2 + 1/4) - r = 0``."""
    for _ in range(_NEWTON_BUDGET):
        u = z - d
        h = u * u + 0.25
        g = z * h - r
        if abs(g) <= _RESIDUAL_TOL * r:
            return z
        dg = h + 2.0 * z * u
        if dg == 0.0:
            break
        step = g / dg
        z -= step
        if abs(step) <= 4 * np.finfo(float).eps * abs(z):
            u = z - d
            if abs(z * (u * u + 0.25) - r) <= 1e-10 * r:
                return z
    raise ConvergenceError(
        f"force-balance root refinement did not converge (d={d!r}, r={r!r})", last_iterate=z
    )


def _reduced_load(p: SystemParams, pump_power: float) -> float:
    """``r = xi gamma P / (L M Omega_M^2) / gamma^3`` (dimensionless)."""
    xi = derive_constants(p).coupling
    g = p.cavity_decay
    k_spring = p.mirror_mass * p.mech_freq**2
    return xi * g * pump_power / (p.subcavity_length * k_spring) / g**3


def _power_from_load(p: SystemParams, r: float) -> float:
    return r / _reduced_load(p, 1.0)


def two_mirror_equilibrium(
    p: SystemParams, drive: DriveField, total_power: bool = True
) -> TwoMirrorEquilibrium:
    """Solve the two-mirror force balance for every real root.

    Parameters
    ----------
    p, drive
        System and pump field.
    total_power
        If True ``drive.power`` is the total pump entering the two-mirror
        cavity; if False it is the per-side three-mirror power and the
        two-mirror pump is twice that.

    Returns
    -------
    TwoMirrorEquilibrium
        Roots sorted ascending with the effective detuning
        ``Delta' = Delta - xi q_s`` and intracavity amplitude at each.
    """
    require_valid(p, [drive])
    const = derive_constants(p)
    xi, g = const.coupling, p.cavity_decay
    pump = pump_power_2mc(drive, total_power)
    delta = drive.detuning
    flux = input_photon_flux(p, pump)

    if pump == 0.0:
        amp = math.sqrt(g * flux) / math.hypot(0.5 * g, delta)
        return TwoMirrorEquilibrium((0.0,), (delta,), (amp,), "monostable", (0.0,), pump, delta)

    d = delta / g
    r = _reduced_load(p, pump)
    zs, cls = _closed_form_roots(-2.0 * d, d * d + 0.25, -r)
    zs = sorted(_polish(z, d, r) for z in zs)

    positions, detunings, amps, residuals = [], [], [], []
    for z in zs:
        s = z * g
        dp = delta - s
        positions.append(float(s / xi))
        detunings.append(float(dp))
        amps.append(math.sqrt(g * flux) / math.hypot(0.5 * g, dp))
        u = z - d
        residuals.append(float(abs(z * (u * u + 0.25) - r) / r))
    branch = int(np.argmin(np.abs(positions)))
    return TwoMirrorEquilibrium(
        tuple(positions), tuple(detunings), tuple(amps), cls, tuple(residuals), pump, delta, branch
    )


def _discriminant(d: float, r: float) -> float:
    p, q = _depressed(-2.0 * d, d * d + 0.25, -r)
    return 4.0 * p**3 + 27.0 * q * q


def analytic_bistable_window(p: SystemParams, detuning: float):
    """Total pump power interval with three real equilibria, or None."""
    d = detuning / p.cavity_decay
    pd = 0.25 - d * d / 3.0
    if pd >= 0.0:
        return None
    q0 = 2.0 * d**3 / 27.0 + d / 6.0
    half = 2.0 * (-pd / 3.0) ** 1.5
    lo, hi = q0 - half, q0 + half
    if hi <= 0.0:
        return None
    return (_power_from_load(p, max(lo, 0.0)), _power_from_load(p, hi))


def bistability_analysis(
    p: SystemParams, detuning: float, power_range: tuple[float, float], n_scan: int = 400
) -> BistabilityReport:
    """Classify a detuning and locate the onset of bistability.

    Powers are total two-mirror pump powers. Below ``|Delta| = sqrt(3)/2
    gamma`` there is a single equilibrium at every power. Above it the
    smallest power in ``power_range`` with three real roots is located by a
    log-spaced scan of the cubic discriminant's sign, refined by bisection.
    With the sign convention used here the recoil pushes the detuning
    towards more negative values, so only ``Delta > 0`` can actually reach
    the three-root window at positive power.
    """
    require_valid(p)
    lo, hi = power_range
    if not (0 < lo < hi and math.isfinite(hi)):
        raise ValueError("power_range must satisfy 0 < low < high < inf")
    d = detuning / p.cavity_decay
    window = analytic_bistable_window(p, detuning)
    if abs(abs(d) - BISTABILITY_DETUNING) <= 1e-12 * BISTABILITY_DETUNING:
        return BistabilityReport("critical", detuning, None, window)
    if abs(d) < BISTABILITY_DETUNING:
        return BistabilityReport("never-bistable", detuning, None, None)

    unit = _reduced_load(p, 1.0)
    powers = np.geomspace(lo, hi, n_scan)
    # the discriminant is quadratic in the load with its minimum at the
    # centre of the three-root window; sampling it there means a window
    # narrower than the scan step cannot be skipped
    centre = (2.0 * d**3 / 27.0 + d / 6.0) / unit
    if lo < centre < hi:
        powers = np.sort(np.append(powers, centre))
    disc = np.array([_discriminant(d, unit * P) for P in powers])
    inside = np.flatnonzero(disc < 0)
    threshold = None
    if inside.size:
        i = int(inside[0])
        if i == 0:
            threshold = float(powers[0])
        else:
            threshold = brentq(
                lambda P: _discriminant(d, unit * P), powers[i - 1], powers[i], xtol=1e-16 * powers[i - 1], rtol=1e-14
            )
    return BistabilityReport("conditionally-bistable", detuning,
                             None if threshold is None else float(threshold), window)


def three_mirror_force(p: SystemParams, drive: DriveField, q):
    """Static force on the middle mirror (both radiation pressures plus spring).

    The difference of the two Lorentzian intensities is evaluated in the
    factored form ``4 Delta s / (A B)``, which is exactly odd in ``q``.
    """
    xi = derive_constants(p).coupling
    g = p.cavity_decay
    q = np.asarray(q, dtype=float)
    s = xi * q
    delta = drive.detuning
    a = 0.25 * g * g + (delta - s) ** 2
    b = 0.25 * g * g + (delta + s) ** 2
    f_rad = (g * drive.power / p.subcavity_length) * 4.0 * delta * s / (a * b)
    return f_rad - p.mirror_mass * p.mech_freq**2 * q


def three_mirror_monostability_check(
    p: SystemParams, drive: DriveField, search_window: float | None = None, n_points: int = 10_001
) -> list[float]:
    """All real roots of the three-mirror static force on ``[-w, w]``.

    Located by a sign-change scan refined with Brent's method. The default
    window is a quarter wavelength. Returns the sorted root list, which for
    trapping detunings is expected to be ``[0.0]``.
    """
    require_valid(p, [drive])
    w = p.wavelength / 4.0 if search_window is None else float(search_window)
    if w <= 0:
        raise ValueError("search_window must be positive")
    if n_points % 2 == 0:
        n_points += 1
    qs = np.linspace(-w, w, n_points)
    qs[n_points // 2] = 0.0
    fs = three_mirror_force(p, drive, qs)

    roots = [float(q) for q in qs[fs == 0.0]]
    sign = np.sign(fs)
    for i in np.flatnonzero(sign[:-1] * sign[1:] < 0):
        roots.append(
            brentq(lambda x: float(three_mirror_force(p, drive, x)), qs[i], qs[i + 1],
                   xtol=1e-15 * w, rtol=4 * np.finfo(float).eps)
        )
    roots.sort()
    merged: list[float] = []
    for r in roots:
        if not merged or abs(r - merged[-1]) > 1e-9 * w:
            merged.append(r)
    return merged
