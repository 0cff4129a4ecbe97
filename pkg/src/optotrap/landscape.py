"""Static trapping potentials of the movable mirror.

The radiation potential of one Lorentzian cavity mode integrates to an
arctangent. Differences of arctangents are evaluated through ``atan2`` so
that small displacements keep full precision. Potentials are zeroed at
``q = 0`` and only valid for ``|q| <= lambda / 4`` (single resonance).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .params import DriveField, SystemParams, derive_constants, require_valid
from .steady_state import pump_power_2mc


@dataclass(frozen=True, eq=False)
class PotentialCurve:
    positions: np.ndarray
    potential: np.ndarray
    force: np.ndarray
    minima: list[tuple[float, float]]  # (position [m], curvature [N/m])
    configuration: str


def _atan_diff(delta_scaled, s_scaled):
    """``arctan(x0) - arctan(x0 - s)`` without cancellation."""
    x = delta_scaled
    y = delta_scaled - s_scaled
    return np.arctan2(s_scaled, 1.0 + x * y)


def _check_window(p: SystemParams, q_window: float) -> None:
    if not (0 < q_window <= p.wavelength / 4.0):
        raise ValueError(
            f"q_window must lie in (0, lambda/4 = {p.wavelength / 4:.4e} m]; got {q_window!r}"
        )


class _Mode:
    """One cavity mode pushing the mirror towards +q with strength ``force_scale``."""

    def __init__(self, p: SystemParams, power: float, detuning: float, sign: float):
        self.xi = derive_constants(p).coupling
        self.g = p.cavity_decay
        self.c = self.g * power / p.subcavity_length
        self.delta = detuning
        self.sign = sign  # +1: detuning Delta - xi q, pushes +q; -1: mirror image

    def force(self, q):
        s = self.sign * self.xi * q
        dp = self.delta - s
        return self.sign * self.c / (0.25 * self.g**2 + dp * dp)

    def stiffness(self, q):
        """``dF/dq``."""
        s = self.sign * self.xi * q
        dp = self.delta - s
        den = 0.25 * self.g**2 + dp * dp
        return 2.0 * self.c * self.xi * dp / den**2

    def work(self, q):
        """``int_0^q F dq'``."""
        s = self.sign * self.xi * q
        return (2.0 * self.c / (self.xi * self.g)) * _atan_diff(2.0 * self.delta / self.g, 2.0 * s / self.g)


def _curve(p, modes, q_window, n_points, configuration, symmetric=False):
    half = np.linspace(0.0, q_window, int(n_points) // 2 + 1)
    q = np.concatenate([-half[:0:-1], half])  # exactly mirror-symmetric with q = 0 on the grid
    k = p.mirror_mass * p.mech_freq**2

    def force(x):
        return sum(m.force(x) for m in modes) - k * x

    def curvature(x):
        return k - sum(m.stiffness(x) for m in modes)

    if symmetric:
        # a and b work summed in a fixed order so U(q) and U(-q) round identically
        work = modes[0].work(q) + modes[0].work(-q)
    else:
        work = sum(m.work(q) for m in modes)
    U = 0.5 * k * q * q - work
    F = force(q)

    minima = []
    for i in np.flatnonzero(F == 0.0):
        if curvature(q[i]) > 0:
            minima.append((float(q[i]), float(curvature(q[i]))))
    for i in np.flatnonzero((F[:-1] > 0) & (F[1:] < 0)):
        x = brentq(lambda t: float(force(t)), q[i], q[i + 1], xtol=1e-15 * q_window, rtol=1e-15)
        minima.append((float(x), float(curvature(x))))
    minima.sort()
    return PotentialCurve(q, U, F, minima, configuration)


def potential_2mc(
    p: SystemParams, drive: DriveField, q_window: float, n_points: int = 4001, total_power: bool = True
) -> PotentialCurve:
    """Static potential of the two-mirror cavity (spring plus one-sided light).

    ``total_power`` has the same meaning as in the steady-state solver.
    """
    require_valid(p, [drive])
    _check_window(p, q_window)
    mode = _Mode(p, pump_power_2mc(drive, total_power), drive.detuning, +1.0)
    return _curve(p, [mode], q_window, n_points, "2MC")


def potential_3mc(p: SystemParams, drive: DriveField, q_window: float, n_points: int = 4001) -> PotentialCurve:
    """Static potential of the three-mirror cavity; even in ``q``."""
    require_valid(p, [drive])
    _check_window(p, q_window)
    left = _Mode(p, drive.power, drive.detuning, +1.0)
    right = _Mode(p, drive.power, drive.detuning, -1.0)
    curve = _curve(p, [left, right], q_window, n_points, "3MC", symmetric=True)
    return curve
