import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.constants import hbar

from optotrap.errors import DegeneratePolynomialError, EquilibriumError
from optotrap.linear_dynamics import (
    build_drift_matrix_2mc,
    build_drift_matrix_3mc,
    characteristic_polynomial,
    joint_equilibrium_2mc,
    routh_hurwitz,
    routh_hurwitz_stable,
    stability_region,
)
from optotrap.params import DriveField, derive_constants, input_photon_flux, reference_system
from optotrap.steady_state import two_mirror_equilibrium

P = reference_system()
GAMMA = P.cavity_decay


def mean_field_2mc(p, pump, detuning):
    """Nonlinear mean-field vector field in (sqrt2 Re a, sqrt2 Im a, q, p) with
    the input phase chosen so the steady amplitude is real."""
    xi = derive_constants(p).coupling
    g = p.cavity_decay
    q_s = two_mirror_equilibrium(p, DriveField(pump, detuning)).position
    dp_s = detuning - xi * q_s
    a_s = math.sqrt(g * input_photon_flux(p, pump)) / math.hypot(g / 2, dp_s)
    drive = (g / 2 + 1j * dp_s) * a_s

    def f(u):
        a = (u[0] + 1j * u[1]) / math.sqrt(2)
        q, mom = u[2], u[3]
        da = -(g / 2 + 1j * (detuning - xi * q)) * a + drive
        dq = mom / p.mirror_mass
        dmom = -p.mirror_mass * p.mech_freq**2 * q + hbar * xi * abs(a) ** 2 - 0.5 * p.mech_damping * mom
        return np.array([math.sqrt(2) * da.real, math.sqrt(2) * da.imag, dq, dmom])

    return f, np.array([math.sqrt(2) * a_s, 0.0, q_s, 0.0])


def mean_field_3mc(p, power, detuning):
    xi = derive_constants(p).coupling
    g = p.cavity_decay
    a_s = math.sqrt(g * input_photon_flux(p, power)) / math.hypot(g / 2, detuning)
    drive = (g / 2 + 1j * detuning) * a_s

    def f(u):
        a = (u[0] + 1j * u[1]) / math.sqrt(2)
        b = (u[2] + 1j * u[3]) / math.sqrt(2)
        q, mom = u[4], u[5]
        da = -(g / 2 + 1j * (detuning - xi * q)) * a + drive
        db = -(g / 2 + 1j * (detuning + xi * q)) * b + drive
        dq = mom / p.mirror_mass
        dmom = (-p.mirror_mass * p.mech_freq**2 * q + hbar * xi * (abs(a) ** 2 - abs(b) ** 2)
                - 0.5 * p.mech_damping * mom)
        return np.array([math.sqrt(2) * da.real, math.sqrt(2) * da.imag,
                         math.sqrt(2) * db.real, math.sqrt(2) * db.imag, dq, dmom])

    u0 = np.array([math.sqrt(2) * a_s, 0.0, math.sqrt(2) * a_s, 0.0, 0.0, 0.0])
    return f, u0


def fd_jacobian(f, u0, steps):
    n = u0.size
    J = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = steps[j]
        J[:, j] = (f(u0 + e) - f(u0 - e)) / (2 * steps[j])
    return J


def assert_jacobian_close(A, J):
    # compare entry by entry against the row scale
    for i in range(A.shape[0]):
        scale = np.max(np.abs(A[i])) or 1.0
        np.testing.assert_allclose(A[i], J[i], rtol=1e-6, atol=1e-6 * scale)


def test_steady_point_is_a_fixed_point_of_the_oracle():
    f, u0 = mean_field_2mc(P, 2e-3, -0.5 * GAMMA)
    r = f(u0)
    assert abs(r[3]) < 1e-9 * hbar * derive_constants(P).coupling * u0[0] ** 2
    assert np.max(np.abs(r[:2])) < 1e-9 * GAMMA * u0[0]


@settings(max_examples=40, deadline=None)
@given(power=st.floats(1e-5, 1e-1), det=st.floats(-5.0, 0.5))
def test_2mc_drift_matches_finite_difference_jacobian(power, det):
    f, u0 = mean_field_2mc(P, power, det * GAMMA)
    A = build_drift_matrix_2mc(P, DriveField(power, det * GAMMA))
    steps = [1e-3 * u0[0], 1e-3 * u0[0], 1e-16, 1e-16 * P.mirror_mass * P.mech_freq]
    assert_jacobian_close(A.entries, fd_jacobian(f, u0, steps))
    assert A.ordering == ("dX_a", "dY_a", "dq", "dp")


@settings(max_examples=40, deadline=None)
@given(power=st.floats(1e-5, 1e-1), det=st.floats(-5.0, 5.0))
def test_3mc_drift_matches_finite_difference_jacobian(power, det):
    f, u0 = mean_field_3mc(P, power, det * GAMMA)
    A = build_drift_matrix_3mc(P, DriveField(power, det * GAMMA))
    steps = [1e-3 * u0[0]] * 4 + [1e-16, 1e-16 * P.mirror_mass * P.mech_freq]
    assert_jacobian_close(A.entries, fd_jacobian(f, u0, steps))
    assert A.ordering == ("dX_a", "dY_a", "dX_b", "dY_b", "dQ", "dP")


def test_zero_power_is_block_diagonal():
    A = build_drift_matrix_3mc(P, DriveField(0.0, -0.5 * GAMMA)).entries
    assert np.all(A[:4, 4:] == 0) and np.all(A[4:, :4] == 0)
    B = build_drift_matrix_2mc(P, DriveField(0.0, -0.5 * GAMMA)).entries
    assert np.all(B[:2, 2:] == 0) and np.all(B[2:, :2] == 0)


def test_multi_field_layout(ground_state):
    p, trap, cool = ground_state
    A = build_drift_matrix_3mc(p, [trap, cool])
    assert A.order == 10 and A.ordering[-2:] == ("dQ", "dP")
    assert A.ordering[:4] == ("dX_a1", "dY_a1", "dX_b1", "dY_b1")
    assert routh_hurwitz_stable(A).routh_hurwitz_stable


def test_2mc_rejects_non_equilibrium_position():
    with pytest.raises(EquilibriumError):
        build_drift_matrix_2mc(P, DriveField(2e-3, -0.5 * GAMMA), position=1e-9)


def test_joint_equilibrium_single_field_matches_cubic():
    d = DriveField(2e-3, -0.5 * GAMMA)
    assert joint_equilibrium_2mc(P, [d]) == list(two_mirror_equilibrium(P, d).positions)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_characteristic_polynomial_matches_numpy(n, seed):
    M = np.random.default_rng(seed).normal(size=(n, n))
    np.testing.assert_allclose(characteristic_polynomial(M), np.poly(M), rtol=1e-8, atol=1e-8 * n**n)


def hurwitz_stable(coeffs):
    """Independent oracle: all leading principal minors of the Hurwitz matrix positive."""
    a = np.asarray(coeffs, dtype=float) / coeffs[0]
    n = a.size - 1
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            k = 2 * j - i + 1
            if 0 <= k <= n:
                H[i, j] = a[k]
    return all(np.linalg.det(H[:k, :k]) > 0 for k in range(1, n + 1))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=8))
def test_routh_matches_hurwitz_determinants(roots_re):
    rng = np.random.default_rng(len(roots_re))
    # polynomial with well-separated real parts; complex pairs from the imaginary draw
    roots = []
    for x in roots_re:
        if abs(x) < 0.05:
            x = 0.05 if x >= 0 else -0.05
        if rng.random() < 0.5:
            y = rng.uniform(0.1, 3)
            roots += [complex(x, y), complex(x, -y)]
        else:
            roots.append(x)
    coeffs = np.real(np.poly(roots))
    verdict, changes = routh_hurwitz(coeffs)
    assert (verdict == "stable") == hurwitz_stable(coeffs)
    assert changes == sum(1 for r in roots if r.real > 0)


@pytest.mark.parametrize(
    "coeffs, verdict, rhp",
    [
        ([1, 1, 2, 2, 3], "unstable", 2),  # zero pivot, epsilon substitution
        ([1, 0, 5, 0, 4], "critical", 0),  # all-zero row, roots +-i, +-2i
        ([1, 1, 1, 1], "critical", 0),  # roots -1, +-i
        ([1, 3, 3, 1], "stable", 0),
        ([1, -1], "unstable", 1),
    ],
)
def test_routh_special_cases(coeffs, verdict, rhp):
    assert routh_hurwitz(coeffs) == (verdict, rhp)


def test_degenerate_polynomial():
    with pytest.raises(DegeneratePolynomialError):
        routh_hurwitz([0.0, 1.0, 2.0])


def test_reference_points(trap):
    stable = routh_hurwitz_stable(build_drift_matrix_3mc(P, trap))
    assert stable.routh_hurwitz_stable and stable.consistent
    weak = reference_system(mech_damping=50.0)
    rep = routh_hurwitz_stable(build_drift_matrix_3mc(weak, trap))
    assert rep.verdict == "unstable" and rep.max_real_part > 0 and rep.consistent
    two = routh_hurwitz_stable(build_drift_matrix_2mc(P, DriveField(2e-3, -0.5 * GAMMA)))
    assert two.routh_hurwitz_stable and two.consistent


def test_stability_region_records_errors_per_point():
    grid = [DriveField(1e-3, -0.5 * GAMMA), DriveField(-1.0, 0.0), DriveField(1e-3, 0.5 * GAMMA)]
    pts = stability_region(P, grid, "3MC")
    assert pts[0].stable
    assert pts[1].error is not None and not pts[1].stable
    assert not pts[2].stable


def test_stability_region_2mc_reports_every_branch():
    lo, hi = 6.856e-6, 1.895e-5
    pts = stability_region(P, [DriveField(math.sqrt(lo * hi), 2 * GAMMA)], "2MC")
    assert len(pts[0].reports) == 3
    assert all(r.consistent for r in pts[0].reports)
    # the middle branch of an S-curve is statically unstable
    assert not pts[0].reports[1].routh_hurwitz_stable
