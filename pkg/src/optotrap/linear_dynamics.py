"""Linearised fluctuation dynamics and Routh-Hurwitz stability.

State ordering for the three-mirror cavity is
``(dX_a, dY_a, dX_b, dY_b, dQ, dP)``; extra pump fields append further
``(dX_a, dY_a, dX_b, dY_b)`` blocks ahead of the mechanical pair. The
two-mirror cavity uses ``(dX_a, dY_a, dq, dp)``.

The field rows couple to the displacement through ``sqrt(2) xi f_s``; only
the force row carries ``hbar``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.constants import hbar as HBAR
from scipy.linalg import matrix_balance

from .errors import DegeneratePolynomialError, EquilibriumError
from .params import DriveField, SystemParams, derive_constants, input_photon_flux, require_valid
from .steady_state import (
    pump_power_2mc,
    radiation_force_2mc,
    three_mirror_steady_state,
    two_mirror_equilibrium,
)

PIVOT_TOL = 1e-12
EIG_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DriftMatrix:
    entries: np.ndarray
    ordering: tuple[str, ...]
    units_row_scale: tuple[str, ...]
    configuration: str
    params: SystemParams
    detunings: tuple[float, ...] = ()
    amplitudes: tuple[float, ...] = ()

    @property
    def order(self) -> int:
        return self.entries.shape[0]

    def index(self, label: str) -> int:
        return self.ordering.index(label)

    @property
    def position_index(self) -> int:
        return self.order - 2

    @property
    def momentum_index(self) -> int:
        return self.order - 1

    def optical_indices(self) -> list[int]:
        return list(range(self.order - 2))


@dataclass
class StabilityReport:
    routh_hurwitz_stable: bool
    verdict: str  # stable | unstable | critical
    eigenvalues: np.ndarray
    max_real_part: float
    char_poly: np.ndarray
    rhp_roots: int
    tolerance: float
    error: str | None = None

    @property
    def consistent(self) -> bool:
        """Routh-Hurwitz and eigenvalue verdicts agree outside the tolerance band."""
        if abs(self.max_real_part) <= self.tolerance:
            return True
        return self.routh_hurwitz_stable == (self.max_real_part < 0)


def _as_drives(drives) -> list[DriveField]:
    if isinstance(drives, DriveField):
        return [drives]
    return list(drives)


def _optical_block(gamma: float, delta: float) -> np.ndarray:
    return np.array([[-0.5 * gamma, delta], [-delta, -0.5 * gamma]])


def build_drift_matrix_3mc(p: SystemParams, drives) -> DriftMatrix:
    """Drift matrix of the three-mirror cavity linearised about ``Q_s = 0``.

    ``drives`` is one :class:`DriveField` or a sequence of independent
    fields; each contributes its own pair of sub-cavity modes.
    """
    drives = _as_drives(drives)
    require_valid(p, drives)
    xi = derive_constants(p).coupling
    g = p.cavity_decay
    nf = len(drives)
    n = 4 * nf + 2
    iq, ip = n - 2, n - 1
    A = np.zeros((n, n))
    ordering: list[str] = []
    amps = []
    for k, d in enumerate(drives):
        f_s = three_mirror_steady_state(p, d).field_amplitude
        amps.append(f_s)
        field_coupling = math.sqrt(2.0) * xi * f_s
        force_coupling = math.sqrt(2.0) * HBAR * xi * f_s
        o = 4 * k
        A[o:o + 2, o:o + 2] = _optical_block(g, d.detuning)
        A[o + 2:o + 4, o + 2:o + 4] = _optical_block(g, d.detuning)
        A[o + 1, iq] = field_coupling
        A[o + 3, iq] = -field_coupling
        A[ip, o] = force_coupling
        A[ip, o + 2] = -force_coupling
        suffix = "" if nf == 1 else str(k + 1)
        ordering += [f"dX_a{suffix}", f"dY_a{suffix}", f"dX_b{suffix}", f"dY_b{suffix}"]
    A[iq, ip] = 1.0 / p.mirror_mass
    A[ip, iq] = -p.mirror_mass * p.mech_freq**2
    A[ip, ip] = -0.5 * p.mech_damping
    ordering += ["dQ", "dP"]
    units = ("1/s",) * (4 * nf) + ("m/s", "N")
    return DriftMatrix(
        A, tuple(ordering), units, "3MC", p,
        tuple(d.detuning for d in drives), tuple(amps),
    )


def joint_equilibrium_2mc(p: SystemParams, drives, total_power: bool = True):
    """Static equilibria of the two-mirror cavity under several fields.

    One field reduces to the closed-form cubic. Several fields are handled
    by a sign-change scan of the summed static force over ``[0, q_max]``
    where ``q_max`` is the recoil if every field sat on resonance.
    """
    drives = _as_drives(drives)
    if len(drives) == 1:
        return list(two_mirror_equilibrium(p, drives[0], total_power).positions)
    from scipy.optimize import brentq

    k_spring = p.mirror_mass * p.mech_freq**2
    pumps = [pump_power_2mc(d, total_power) for d in drives]

    def force(q):
        tot = sum(radiation_force_2mc(p, P, d.detuning, q) for P, d in zip(pumps, drives))
        return tot - k_spring * np.asarray(q)

    f_max = sum(4.0 * P / (p.cavity_decay * p.subcavity_length) for P in pumps)
    q_max = 1.01 * f_max / k_spring
    if q_max == 0.0:
        return [0.0]
    qs = np.linspace(0.0, q_max, 20_001)
    fs = force(qs)
    roots = [float(q) for q in qs[fs == 0.0]]
    for i in np.flatnonzero(np.sign(fs[:-1]) * np.sign(fs[1:]) < 0):
        roots.append(brentq(lambda x: float(force(x)), qs[i], qs[i + 1], xtol=1e-16 * q_max, rtol=1e-15))
    return sorted(roots)


def build_drift_matrix_2mc(
    p: SystemParams, drives, position: float | None = None, total_power: bool = True
) -> DriftMatrix:
    """Drift matrix of the two-mirror cavity linearised about a static root.

    Parameters
    ----------
    position
        Equilibrium recoil ``q_s`` [m]. Defaults to the smallest-``|q_s|``
        root. A value that does not balance the forces raises
        :class:`EquilibriumError`.
    total_power
        Whether ``drive.power`` is already the total two-mirror pump.
    """
    drives = _as_drives(drives)
    require_valid(p, drives)
    const = derive_constants(p)
    xi, g = const.coupling, p.cavity_decay
    k_spring = p.mirror_mass * p.mech_freq**2
    pumps = [pump_power_2mc(d, total_power) for d in drives]
    if position is None:
        roots = joint_equilibrium_2mc(p, drives, total_power)
        position = min(roots, key=abs)
    f_rad = sum(float(radiation_force_2mc(p, P, d.detuning, position)) for P, d in zip(pumps, drives))
    spring = k_spring * position
    scale = max(abs(f_rad), abs(spring))
    if scale > 0 and abs(f_rad - spring) > 1e-8 * scale:
        raise EquilibriumError(
            f"q_s={position!r} m does not satisfy the force balance "
            f"(radiation {f_rad:.6e} N vs spring {spring:.6e} N)"
        )
    if scale == 0 and position != 0.0:
        raise EquilibriumError("nonzero q_s with zero radiation force")

    nf = len(drives)
    n = 2 * nf + 2
    iq, ip = n - 2, n - 1
    A = np.zeros((n, n))
    ordering: list[str] = []
    dets, amps = [], []
    for k, (P, d) in enumerate(zip(pumps, drives)):
        dp = d.detuning - xi * position
        a_s = math.sqrt(g * input_photon_flux(p, P)) / math.hypot(0.5 * g, dp)
        dets.append(dp)
        amps.append(a_s)
        o = 2 * k
        A[o:o + 2, o:o + 2] = _optical_block(g, dp)
        A[o + 1, iq] = math.sqrt(2.0) * xi * a_s
        A[ip, o] = math.sqrt(2.0) * HBAR * xi * a_s
        suffix = "" if nf == 1 else str(k + 1)
        ordering += [f"dX_a{suffix}", f"dY_a{suffix}"]
    A[iq, ip] = 1.0 / p.mirror_mass
    A[ip, iq] = -k_spring
    A[ip, ip] = -0.5 * p.mech_damping
    ordering += ["dq", "dp"]
    units = ("1/s",) * (2 * nf) + ("m/s", "N")
    return DriftMatrix(A, tuple(ordering), units, "2MC", p, tuple(dets), tuple(amps))


def balance(A: np.ndarray):
    """Diagonal similarity ``B = S^-1 A S`` with power-of-two scales.

    Returns ``(B, s)`` where ``s`` is the scale vector; the mixed physical
    units make the raw matrix span ~35 orders of magnitude.
    """
    B, (scale, _perm) = matrix_balance(np.asarray(A, dtype=float), permute=False, separate=True)
    return B, scale


def characteristic_polynomial(A: np.ndarray) -> np.ndarray:
    """Monic coefficients ``[1, c_1, ..., c_n]`` of ``det(sI - A)``.

    Faddeev-LeVerrier recursion on the balanced matrix (the polynomial is
    similarity invariant). Intended for small orders only.
    """
    B, _ = balance(A)
    n = B.shape[0]
    coeffs = np.empty(n + 1)
    coeffs[0] = 1.0
    Mk = np.zeros_like(B)
    eye = np.eye(n)
    for k in range(1, n + 1):
        Mk = B @ Mk + coeffs[k - 1] * eye
        coeffs[k] = -np.trace(B @ Mk) / k
    return coeffs


def routh_array(coeffs: Sequence[float]):
    """Routh table of a polynomial given highest power first.

    Returns ``(first_column, marginal)``. Zero or vanishingly small pivots
    (below ``PIVOT_TOL`` times the row norm) are replaced by a small positive
    epsilon and flag the polynomial as marginal; an all-zero row is replaced
    by the derivative of the auxiliary polynomial.
    """
    c = np.asarray(coeffs, dtype=float)
    if c.size == 0 or c[0] == 0.0:
        raise DegeneratePolynomialError("leading coefficient vanishes")
    c = c / c[0]
    n = c.size - 1
    if n == 0:
        return np.array([1.0]), False
    # rescale s so the coefficients are O(1): s = sigma * s'
    nz = np.flatnonzero(c)
    last = nz[-1]
    sigma = abs(c[last]) ** (1.0 / last) if last > 0 else 1.0
    c = c / sigma ** np.arange(n + 1)

    width = n // 2 + 1
    rows = [np.zeros(width), np.zeros(width)]
    rows[0][: len(c[0::2])] = c[0::2]
    rows[1][: len(c[1::2])] = c[1::2]
    marginal = False
    for i in range(1, n + 1):
        cur = rows[i]
        norm = np.max(np.abs(cur))
        if norm == 0.0:
            # all-zero row: differentiate the auxiliary polynomial of the row above
            prev = rows[i - 1]
            deg = n - (i - 1)
            powers = deg - 2 * np.arange(width)
            cur = np.where(powers > 0, prev * powers, 0.0)
            rows[i] = cur
            marginal = True
            norm = np.max(np.abs(cur))
        if abs(cur[0]) <= PIVOT_TOL * max(norm, np.max(np.abs(rows[i - 1]))):
            cur[0] = PIVOT_TOL * max(norm, 1e-300)
            marginal = True
        if i == n:
            break
        prev = rows[i - 1]
        nxt = np.zeros(width)
        for j in range(width - 1):
            nxt[j] = (cur[0] * prev[j + 1] - prev[0] * cur[j + 1]) / cur[0]
        rows.append(nxt)
    first = np.array([r[0] for r in rows[: n + 1]])
    return first, marginal


def routh_hurwitz(coeffs: Sequence[float]):
    """``(verdict, sign_changes)`` for a real polynomial."""
    first, marginal = routh_array(coeffs)
    signs = np.sign(first)
    changes = int(np.count_nonzero(signs[:-1] * signs[1:] < 0))
    if changes:
        return "unstable", changes
    return ("critical" if marginal else "stable"), 0


def routh_hurwitz_stable(A) -> StabilityReport:
    """Routh-Hurwitz stability of a drift matrix, cross-checked by eigenvalues.

    Parameters
    ----------
    A : DriftMatrix or array_like
        Square real matrix.

    Returns
    -------
    StabilityReport
        ``routh_hurwitz_stable`` is True only for a strict "stable" verdict;
        marginal tables are reported as "critical". The eigenvalues are
        computed independently from the balanced matrix and the agreement
        band is ``1e-9`` times its norm.
    """
    M = A.entries if isinstance(A, DriftMatrix) else np.asarray(A, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    coeffs = characteristic_polynomial(M)
    verdict, changes = routh_hurwitz(coeffs)
    B, _ = balance(M)
    eig = np.linalg.eigvals(B)
    return StabilityReport(
        routh_hurwitz_stable=verdict == "stable",
        verdict=verdict,
        eigenvalues=eig,
        max_real_part=float(np.max(eig.real)),
        char_poly=coeffs,
        rhp_roots=changes,
        tolerance=EIG_TOL * float(np.linalg.norm(B, 2)),
    )


@dataclass
class StabilityPoint:
    drive: tuple[DriveField, ...]
    reports: list[StabilityReport] = field(default_factory=list)
    positions: list[float] = field(default_factory=list)
    error: str | None = None

    @property
    def stable(self) -> bool:
        return self.error is None and bool(self.reports) and all(
            r.routh_hurwitz_stable for r in self.reports
        )


def stability_region(
    p: SystemParams, drives, configuration: str = "3MC", total_power: bool = True
) -> list[StabilityPoint]:
    """Stability at every grid point.

    ``drives`` is a sequence whose items are a DriveField or a tuple of
    simultaneous fields. For the two-mirror cavity every real equilibrium
    branch gets its own report. Errors at one point are recorded on that
    point and do not abort the grid.
    """
    drives = list(drives)
    if not drives:
        raise ValueError("empty drive grid")
    out = []
    for item in drives:
        fields_ = (item,) if isinstance(item, DriveField) else tuple(item)
        point = StabilityPoint(fields_)
        try:
            if configuration.upper() == "3MC":
                point.reports.append(routh_hurwitz_stable(build_drift_matrix_3mc(p, fields_)))
                point.positions.append(0.0)
            else:
                for q in joint_equilibrium_2mc(p, fields_, total_power):
                    A = build_drift_matrix_2mc(p, fields_, q, total_power)
                    point.reports.append(routh_hurwitz_stable(A))
                    point.positions.append(q)
        except Exception as exc:  # recorded per point
            point.error = f"{type(exc).__name__}: {exc}"
        out.append(point)
    return out
