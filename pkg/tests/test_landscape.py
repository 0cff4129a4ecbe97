import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from optotrap.landscape import potential_2mc, potential_3mc
from optotrap.params import DriveField, reference_system
from optotrap.response import effective_params_closed_form
from optotrap.steady_state import radiation_force_2mc, three_mirror_force, two_mirror_equilibrium

P = reference_system()
GAMMA = P.cavity_decay
K = P.mirror_mass * P.mech_freq**2


def test_zero_power_is_the_bare_spring():
    c = potential_3mc(P, DriveField(0.0, -0.5 * GAMMA), 1e-9, 101)
    np.testing.assert_allclose(c.potential, 0.5 * K * c.positions**2, rtol=1e-14, atol=0)
    assert c.minima == [(0.0, pytest.approx(K))]


@settings(max_examples=30, deadline=None)
@given(power=st.floats(1e-5, 1e-2), det=st.floats(-3.0, -0.05))
def test_3mc_potential_matches_quadrature(power, det):
    d = DriveField(power, det * GAMMA)
    c = potential_3mc(P, d, 5e-9, 201)
    for i in (0, 37, 150, 200):
        q = c.positions[i]
        ref = -quad(lambda x: float(three_mirror_force(P, d, x)), 0.0, q, epsabs=0, epsrel=1e-12)[0]
        assert c.potential[i] == pytest.approx(ref, rel=1e-8, abs=1e-30)
    np.testing.assert_allclose(c.force, three_mirror_force(P, d, c.positions), rtol=1e-12, atol=1e-25)


def test_2mc_potential_matches_quadrature(trap):
    pump = 2e-3
    c = potential_2mc(P, DriveField(pump, trap.detuning), 2e-9, 201)

    def force(x):
        return float(radiation_force_2mc(P, pump, trap.detuning, x)) - K * x

    for i in (0, 60, 140, 200):
        q = c.positions[i]
        ref = -quad(force, 0.0, q, epsabs=0, epsrel=1e-12)[0]
        assert c.potential[i] == pytest.approx(ref, rel=1e-8, abs=1e-30)


def test_3mc_potential_is_even(trap):
    c = potential_3mc(P, trap, P.wavelength / 4)
    assert np.array_equal(c.potential, c.potential[::-1])
    assert np.array_equal(c.force, -c.force[::-1])


def test_minima_and_curvature_match_response(trap):
    c3 = potential_3mc(P, trap, 1e-9)
    assert c3.minima[0][0] == 0.0
    e3 = effective_params_closed_form(P, trap, "3MC", eval_freq=0.0)
    assert c3.minima[0][1] == pytest.approx(P.mirror_mass * e3.omega_eff_sq, rel=1e-6)

    d2 = DriveField(2e-3, trap.detuning)
    c2 = potential_2mc(P, d2, 1e-8)
    eq = two_mirror_equilibrium(P, d2)
    assert len(c2.minima) == 1
    assert c2.minima[0][0] == pytest.approx(eq.position, rel=1e-8)
    e2 = effective_params_closed_form(P, d2, "2MC", eval_freq=0.0)
    assert c2.minima[0][1] == pytest.approx(P.mirror_mass * e2.omega_eff_sq, rel=1e-6)


def test_bistable_2mc_has_two_minima():
    d = DriveField(1.2e-5, 2 * GAMMA)
    eq = two_mirror_equilibrium(P, d)
    assert eq.n_roots == 3
    c = potential_2mc(P, d, P.wavelength / 4, 20001)
    assert [m[0] for m in c.minima] == pytest.approx([eq.positions[0], eq.positions[2]], rel=1e-7)


def test_window_limited_to_quarter_wavelength(trap):
    with pytest.raises(ValueError):
        potential_3mc(P, trap, P.wavelength)
    with pytest.raises(ValueError):
        potential_2mc(P, trap, 0.0)
