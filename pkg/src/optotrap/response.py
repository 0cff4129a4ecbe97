"""Mechanical response: optical spring, optical damping and occupancy.

Two routes are provided. The closed form evaluates the Lorentzian
parameters analytically; :func:`susceptibility_numeric` solves the
Fourier-transformed linear system built from the drift matrix and
:func:`fit_effective_params` extracts the same parameters from it.

Conventions: ``chi^-1(w) = M (Omega_eff^2 - w^2) - i M Gamma_eff w`` and a
bare mirror has ``Gamma_eff = mech_damping / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, FitError, InvalidParameterError, SingularSystemError
from .linear_dynamics import (
    build_drift_matrix_2mc,
    build_drift_matrix_3mc,
    joint_equilibrium_2mc,
    routh_hurwitz_stable,
)
from .params import DriveField, SystemParams, derive_constants, require_valid
from .steady_state import pump_power_2mc

FIXED_POINT_BUDGET = 50
FIXED_POINT_RTOL = 1e-8
FIT_MAX_RESIDUAL = 1e-3


@dataclass(frozen=True)
class EffectiveParams:
    eval_freq: float
    omega_eff_sq: float
    gamma_eff: float
    configuration: str
    detunings: tuple[float, ...] = ()
    spring_terms: tuple[float, ...] = ()
    damping_terms: tuple[float, ...] = ()
    position: float = 0.0
    iterations: int = 0
    fit_residual: float | None = None
    fitted_mass: float | None = None

    @property
    def anti_trapped(self) -> bool:
        return self.omega_eff_sq <= 0.0

    @property
    def omega_eff(self) -> float:
        return math.sqrt(self.omega_eff_sq) if self.omega_eff_sq > 0 else float("nan")


@dataclass(frozen=True, eq=False)
class Susceptibility:
    freq_grid: np.ndarray
    chi: np.ndarray
    mass: float
    configuration: str = "3MC"
    unstable: bool = False
    singular: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


@dataclass(frozen=True)
class OccupancyResult:
    n_quanta: float
    gamma_ratio: float  # Gamma_M / Gamma_eff
    omega_ratio: float  # Omega_M / Omega_eff

    @property
    def contributing_ratios(self):
        return (self.gamma_ratio, self.omega_ratio)


@dataclass(frozen=True)
class FrequencyRatio:
    formula: float  # static-limit estimate from the two detunings alone
    exact: float  # ratio of the two closed-form static frequencies
    detuning: float
    effective_detuning: float


@dataclass(frozen=True)
class GroundStateBound:
    max_mech_damping: float
    min_quality_factor: float


def optical_terms(p: SystemParams, pump_eff: float, detuning: float, omega: float):
    """Optical contribution ``(dOmega^2, dGamma)`` of one field at ``omega``.

    ``pump_eff`` is the power whose photons push the mirror: twice the
    per-side power for the three-mirror cavity, the full pump for the
    two-mirror cavity.
    """
    xi = derive_constants(p).coupling
    g = p.cavity_decay
    pref = 2.0 * xi * g * pump_eff / (p.mirror_mass * p.subcavity_length)
    lor = detuning / (detuning * detuning + 0.25 * g * g)
    dd = detuning * detuning + 0.25 * g * g - omega * omega
    den = dd * dd + g * g * omega * omega
    return -pref * lor * dd / den, pref * lor * g / den


def _as_drives(drives):
    return [drives] if isinstance(drives, DriveField) else list(drives)


def _field_terms(p, drives, configuration, position, total_power):
    """Per field ``(pump_eff, effective detuning)`` and the static recoil."""
    config = configuration.upper()
    if config == "3MC":
        return [(2.0 * d.power, d.detuning) for d in drives], 0.0
    if config != "2MC":
        raise ValueError(f"unknown configuration {configuration!r}")
    xi = derive_constants(p).coupling
    if position is None:
        position = min(joint_equilibrium_2mc(p, drives, total_power), key=abs)
    return [(pump_power_2mc(d, total_power), d.detuning - xi * position) for d in drives], position


def _evaluate(p, terms, omega):
    springs, dampings = [], []
    for pump_eff, det in terms:
        s, g = optical_terms(p, pump_eff, det, omega)
        springs.append(s)
        dampings.append(g)
    return springs, dampings


def effective_params_closed_form(
    p: SystemParams,
    drives,
    configuration: str = "3MC",
    eval_freq: float | None = 0.0,
    position: float | None = None,
    total_power: bool = True,
) -> EffectiveParams:
    """Closed-form effective frequency and damping.

    Parameters
    ----------
    drives : DriveField or sequence of DriveField
        Several fields add their optical terms independently.
    configuration : {"3MC", "2MC"}
        For the two-mirror cavity the detuning of every field is replaced by
        its effective value at the static recoil ``position`` (default: the
        smallest-``|q_s|`` equilibrium).
    eval_freq : float or None
        Frequency at which the frequency-dependent terms are evaluated.
        ``None`` selects the self-consistent point ``w = Omega_eff(w)``.
    total_power : bool
        Two-mirror only: whether ``power`` is already the full pump.

    Returns
    -------
    EffectiveParams
        ``omega_eff_sq < 0`` is returned as an anti-trapped state, never
        clipped.
    """
    drives = _as_drives(drives)
    require_valid(p, drives)
    terms, q_s = _field_terms(p, drives, configuration, position, total_power)
    base_sq = p.mech_freq**2
    base_g = 0.5 * p.mech_damping

    def build(omega, iterations=0):
        springs, dampings = _evaluate(p, terms, omega)
        return EffectiveParams(
            eval_freq=omega,
            omega_eff_sq=base_sq + math.fsum(springs),
            gamma_eff=base_g + math.fsum(dampings),
            configuration=configuration.upper(),
            detunings=tuple(t[1] for t in terms),
            spring_terms=tuple(springs),
            damping_terms=tuple(dampings),
            position=q_s,
            iterations=iterations,
        )

    if eval_freq is not None:
        return build(float(eval_freq))

    res = build(0.0)
    if res.anti_trapped:
        return res
    omega = res.omega_eff
    for it in range(1, FIXED_POINT_BUDGET + 1):
        res = build(omega, it)
        if res.anti_trapped:
            return res
        new = res.omega_eff
        if abs(new - omega) <= FIXED_POINT_RTOL * new:
            return build(new, it)
        omega = new
    raise ConvergenceError(
        f"self-consistent frequency did not converge in {FIXED_POINT_BUDGET} iterations",
        last_iterate=res,
    )


def combine_fields(
    p: SystemParams,
    trap: DriveField,
    cool: DriveField,
    configuration: str = "3MC",
    total_power: bool = True,
) -> EffectiveParams:
    """Trapping and cooling fields acting together.

    The optical terms of both fields add; cross terms between the two
    tones are neglected. The result is evaluated at the self-consistent
    frequency.
    """
    return effective_params_closed_form(p, [trap, cool], configuration, None, None, total_power)


def _drift(p, drives, configuration, position, total_power):
    if configuration.upper() == "3MC":
        return build_drift_matrix_3mc(p, drives)
    return build_drift_matrix_2mc(p, drives, position, total_power)


def susceptibility_from_drift(A, freq_grid) -> Susceptibility:
    """Displacement response per unit force from a drift matrix.

    Solves ``(-i w - A) u = e_P F`` by eliminating the optical quadratures
    (Schur complement onto the mechanical pair). Frequencies where the
    optical block is singular yield NaN and are flagged.
    """
    M = A.entries
    n = M.shape[0]
    w = np.atleast_1d(np.asarray(freq_grid, dtype=float))
    z = -1j * w
    no = n - 2
    A_oo, A_om = M[:no, :no], M[:no, no:]
    A_mo, A_mm = M[no:, :no], M[no:, no:]
    G = z[:, None, None] * np.eye(2) - A_mm[None, :, :]
    singular = np.zeros(w.size, dtype=bool)
    if no:
        lhs = z[:, None, None] * np.eye(no) - A_oo[None, :, :]
        rhs = np.broadcast_to(A_om.astype(complex), (w.size, no, 2))
        sol = np.empty((w.size, no, 2), dtype=complex)
        for k in range(w.size):
            try:
                sol[k] = np.linalg.solve(lhs[k], rhs[k])
            except np.linalg.LinAlgError:
                singular[k] = True
                sol[k] = np.nan
        G = G - A_mo[None, :, :] @ sol
    det = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] * G[:, 1, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        chi = -G[:, 0, 1] / det
    singular |= ~np.isfinite(chi)
    chi[singular] = np.nan
    unstable = not routh_hurwitz_stable(A).routh_hurwitz_stable
    return Susceptibility(w, chi, A.params.mirror_mass, A.configuration, unstable, singular)


def susceptibility_numeric(
    p: SystemParams,
    drives,
    configuration: str,
    freq_grid,
    position: float | None = None,
    total_power: bool = True,
    strict: bool = False,
) -> Susceptibility:
    """Numerical mechanical susceptibility of the linearised system.

    No Lorentzian form is assumed. ``unstable`` is set on the result when
    the drift matrix fails the Routh-Hurwitz test; with ``strict=True`` a
    singular grid point raises instead of being returned as NaN.
    """
    A = _drift(p, _as_drives(drives), configuration, position, total_power)
    sus = susceptibility_from_drift(A, freq_grid)
    if strict and sus.singular.any():
        bad = sus.freq_grid[sus.singular]
        raise SingularSystemError(f"singular response at w = {bad.tolist()}")
    return sus


def resonance_grid(A, half_width: float = 0.02, n: int = 81) -> np.ndarray:
    """Frequency grid centred on the mechanical natural frequency of ``A``.

    The mechanical pair is taken as the eigenvalue closest to the origin,
    which holds whenever the mirror is much slower than the cavity. Its
    modulus, not its imaginary part, is the undamped frequency, so the grid
    stays centred for strongly damped mirrors.
    """
    from .linear_dynamics import balance

    B, _ = balance(A.entries)
    eig = np.linalg.eigvals(B)
    lam = eig[np.argmin(np.abs(eig))]
    centre = abs(lam)
    return centre * np.linspace(1.0 - half_width, 1.0 + half_width, n)


def fit_effective_params(chi: Susceptibility, max_residual: float = FIT_MAX_RESIDUAL) -> EffectiveParams:
    """Least-squares Lorentzian fit of the inverse susceptibility.

    Fits ``chi^-1 = a - b w^2 - i c w`` (linear in ``a, b, c``), giving
    ``Omega_eff^2 = a / b``, ``Gamma_eff = c / b`` and a fitted mass ``b``.
    Raises FitError when the relative residual exceeds ``max_residual`` or
    when the grid does not bracket the fitted resonance.
    """
    ok = np.isfinite(chi.chi)
    w = chi.freq_grid[ok]
    if w.size < 4:
        raise FitError("too few finite susceptibility samples")
    inv = 1.0 / chi.chi[ok]
    scale = float(np.median(np.abs(w))) or 1.0
    x = w / scale
    X = np.column_stack([np.ones_like(x), -(x**2)])
    (a, b), *_ = np.linalg.lstsq(X, inv.real, rcond=None)
    (c,), *_ = np.linalg.lstsq(-x[:, None], inv.imag, rcond=None)
    model = (a - b * x**2) - 1j * c * x
    residual = float(np.linalg.norm(model - inv) / np.linalg.norm(inv))
    if not (b > 0):
        raise FitError("fitted mass is not positive")
    omega_sq = a / b * scale**2
    gamma = c / b * scale
    mass = b / scale**2
    if residual > max_residual:
        raise FitError(f"non-Lorentzian response: relative residual {residual:.3e}")
    if omega_sq <= 0 or not (w.min() <= math.sqrt(omega_sq) <= w.max()):
        raise FitError("frequency grid does not bracket the fitted resonance")
    return EffectiveParams(
        eval_freq=math.sqrt(omega_sq),
        omega_eff_sq=omega_sq,
        gamma_eff=gamma,
        configuration=chi.configuration,
        fit_residual=residual,
        fitted_mass=mass,
    )


def frequency_ratio_formula(detuning: float, effective_detuning: float, gamma: float) -> float:
    """Static, high-power estimate of the three- to two-mirror frequency ratio."""
    if detuning / effective_detuning < 0:
        return float("nan")
    g2 = 0.25 * gamma * gamma
    return math.sqrt(detuning / effective_detuning) * (effective_detuning**2 + g2) / (detuning**2 + g2)


def frequency_ratio(
    p: SystemParams, drive: DriveField, position: float | None = None
) -> FrequencyRatio:
    """Three-mirror over two-mirror trap frequency at equal total power.

    ``drive.power`` is the per-side three-mirror power; the two-mirror
    cavity is pumped with twice that. Both the detuning-only estimate and
    the ratio of the full static closed forms are returned.
    """
    three = effective_params_closed_form(p, drive, "3MC", 0.0)
    two = effective_params_closed_form(p, drive, "2MC", 0.0, position, total_power=False)
    dprime = two.detunings[0]
    return FrequencyRatio(
        formula=frequency_ratio_formula(drive.detuning, dprime, p.cavity_decay),
        exact=three.omega_eff / two.omega_eff,
        detuning=drive.detuning,
        effective_detuning=dprime,
    )


def phonon_number(p: SystemParams, eff: EffectiveParams) -> OccupancyResult:
    """Mean phonon number ``(k_B T / hbar Omega_M)(Gamma_M / Gamma_eff)(Omega_M / Omega_eff)^3``."""
    if eff.anti_trapped:
        raise InvalidParameterError("anti-trapped state (Omega_eff^2 <= 0) has no occupancy")
    if eff.gamma_eff <= 0:
        raise InvalidParameterError("non-positive effective damping: the mirror is unstable")
    scale = derive_constants(p).thermal_quanta_scale
    g_ratio = p.mech_damping / eff.gamma_eff
    w_ratio = p.mech_freq / eff.omega_eff
    return OccupancyResult(scale * g_ratio * w_ratio**3, g_ratio, w_ratio)


def ground_state_damping_bound(
    p: SystemParams, drives, configuration: str = "3MC", total_power: bool = True
) -> GroundStateBound:
    """Largest mechanical damping for which the occupancy stays below one.

    Neither the self-consistent frequency nor the optical damping depends
    on ``mech_damping``, so ``n(Gamma_M) = 1`` is solved exactly.
    """
    eff = effective_params_closed_form(p, drives, configuration, None, None, total_power)
    if eff.anti_trapped:
        return GroundStateBound(0.0, float("inf"))
    s = derive_constants(p).thermal_quanta_scale * (p.mech_freq / eff.omega_eff) ** 3
    g_opt = math.fsum(eff.damping_terms)
    if s <= 0.5:
        bound = float("inf")
    elif g_opt <= 0:
        bound = 0.0
    else:
        bound = g_opt / (s - 0.5)
    q_min = p.mech_freq / bound if bound > 0 else float("inf")
    return GroundStateBound(bound, q_min)
