import math

import numpy as np
import pytest
from scipy import signal

from oracles import ar2_oscillator, lyapunov_covariance
from optotrap.errors import (
    InsufficientDataError,
    NoPeakError,
    SimulationDivergedError,
    StepSizeError,
    UnstableSystemError,
)
from optotrap.linear_dynamics import balance, build_drift_matrix_3mc
from optotrap.params import DriveField, reference_system
from optotrap.response import effective_params_closed_form
from optotrap.timedomain import (
    NoiseModel,
    WindowConfig,
    diffusion_matrix,
    estimate_spectrum,
    integrate_ensemble,
    integrate_trajectory,
    max_step,
    zero_crossing_frequency,
)

# a slow cavity keeps the Euler step large enough for second-scale runs
CHEAP = reference_system(cavity_decay=2e5, mech_damping=200.0)
CHEAP_DRIVE = DriveField(3e-9, -0.5 * CHEAP.cavity_decay)


@pytest.fixture(scope="module")
def cheap():
    A = build_drift_matrix_3mc(CHEAP, CHEAP_DRIVE)
    eff = effective_params_closed_form(CHEAP, CHEAP_DRIVE, "3MC", None)
    return A, eff


def test_zero_noise_zero_state_stays_zero(cheap):
    A, _ = cheap
    tr = integrate_trajectory(A, NoiseModel(0.0, 0.0), 2e-7, 1000)
    assert not tr.states.any()


def test_same_seed_is_bit_identical(cheap):
    A, _ = cheap
    noise = NoiseModel.for_system(CHEAP, seed=42)
    a = integrate_trajectory(A, noise, 2e-7, 5000, record_every=5)
    b = integrate_trajectory(A, noise, 2e-7, 5000, record_every=5)
    c = integrate_trajectory(A, noise.with_seed(43), 2e-7, 5000, record_every=5)
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)
    assert a.states.shape == (1001, 6) and a.times[-1] == pytest.approx(5000 * 2e-7)


def test_channel_streams_are_independent_of_other_channels():
    # decoupled optics: the optical quadratures only see their own noise
    A = build_drift_matrix_3mc(CHEAP, DriveField(0.0, -0.5 * CHEAP.cavity_decay))
    with_thermal = integrate_trajectory(A, NoiseModel(0.5, 1e-20, seed=7), 2e-7, 3000)
    without = integrate_trajectory(A, NoiseModel(0.5, 0.0, seed=7), 2e-7, 3000)
    assert np.array_equal(with_thermal.states[:, :4], without.states[:, :4])
    assert not np.array_equal(with_thermal.states[:, 4:], without.states[:, 4:])


def test_ringdown_frequency_matches_closed_form(trap):
    p = reference_system()
    A = build_drift_matrix_3mc(p, trap)
    eff = effective_params_closed_form(p, trap, "3MC", None)
    x0 = np.zeros(6)
    x0[A.position_index] = 1e-12
    tr = integrate_trajectory(A, NoiseModel(0.0, 0.0), 1.25e-8, 8000 * 100, x0=x0, record_every=20)
    w = zero_crossing_frequency(tr.times, tr.position)
    assert w == pytest.approx(eff.omega_eff, rel=0.02)
    # decay envelope follows the effective damping
    peaks = signal.find_peaks(tr.position)[0]
    t, amp = tr.times[peaks], tr.position[peaks]
    rate = -np.polyfit(t, np.log(amp), 1)[0]
    assert 2 * rate == pytest.approx(eff.gamma_eff, rel=0.02)


def test_step_bound(cheap):
    A, _ = cheap
    bound = max_step(A)
    eig = np.linalg.eigvals(balance(A.entries)[0])
    assert bound == pytest.approx(0.1 / np.max(np.abs(eig)))
    with pytest.raises(StepSizeError):
        integrate_trajectory(A, NoiseModel(), 1.01 * bound, 10)


def test_unstable_system_refused_and_cutoff_aborts():
    weak = reference_system(mech_damping=50.0)
    d = DriveField(1e-3, -0.5 * weak.cavity_decay)
    A = build_drift_matrix_3mc(weak, d)
    with pytest.raises(UnstableSystemError):
        integrate_trajectory(A, NoiseModel(), 1e-8, 100)
    x0 = np.zeros(6)
    x0[A.position_index] = 1e-12
    with pytest.raises(SimulationDivergedError) as exc:
        integrate_trajectory(A, NoiseModel(0.0, 0.0), 1.25e-8, 40_000_000, x0=x0, record_every=1000,
                             allow_unstable=True, amplitude_cutoff=[np.inf] * 4 + [2e-12, np.inf])
    partial = exc.value.partial
    assert partial.unstable and 0 < partial.times.size < 40_001
    assert np.abs(partial.position).max() > 1e-12


def test_lyapunov_variance_thermal_only(cheap):
    A, _ = cheap
    noise = NoiseModel.for_system(CHEAP, vacuum=False)
    S = lyapunov_covariance(A, diffusion_matrix(A, noise))
    target = S[A.position_index, A.position_index]
    dt = 2.5e-7
    burn = 400  # records of 250 us: 0.1 s, about 8 relaxation times
    runs = integrate_ensemble(A, noise, dt, 1_600_000, seeds=range(64), record_every=1000)
    v = np.array([np.mean(r.position[burn:] ** 2) for r in runs])
    sigma = v.std(ddof=1) / math.sqrt(v.size)
    assert abs(v.mean() - target) < 3 * sigma
    assert sigma < 0.1 * target


def test_dt_halving_keeps_peak(cheap):
    A, eff = cheap
    noise = NoiseModel.for_system(CHEAP, seed=11)
    dt = 4e-7
    win = WindowConfig(segment_length=2048, discard=200)
    n_rec = 32 * 2048 + 200
    coarse = integrate_trajectory(A, noise, dt, n_rec * 500, record_every=500, noise_substeps=2)
    fine = integrate_trajectory(A, noise, dt / 2, n_rec * 1000, record_every=1000)
    sc, sf = estimate_spectrum(coarse, win), estimate_spectrum(fine, win)
    assert abs(sc.fitted_peak - sf.fitted_peak) < min(sc.peak_stderr, sf.peak_stderr)
    assert sf.fitted_peak == pytest.approx(eff.omega_eff, rel=0.02)


def test_synthetic_oscillator_fit():
    w0, width, h = 2 * math.pi * 50.0, 8.0, 1e-3
    x = ar2_oscillator(w0, width, h, 400_000, seed=5)
    sp = estimate_spectrum(x, WindowConfig(segment_length=8192), sample_interval=h)
    assert sp.segments_averaged >= 16
    assert sp.fitted_peak == pytest.approx(w0, rel=0.02)
    assert sp.fitted_width == pytest.approx(width, rel=0.10)
    assert np.all(sp.psd >= 0)


def test_spectrum_is_time_reversal_invariant():
    x = ar2_oscillator(2 * math.pi * 50.0, 8.0, 1e-3, 100_000, seed=1)
    a = estimate_spectrum(x, WindowConfig(segment_length=2048), sample_interval=1e-3)
    b = estimate_spectrum(x[::-1].copy(), WindowConfig(segment_length=2048), sample_interval=1e-3)
    np.testing.assert_allclose(a.psd, b.psd, rtol=1e-9, atol=1e-12 * a.psd.max())


def test_ensemble_average_is_order_independent():
    xs = [ar2_oscillator(2 * math.pi * 50.0, 8.0, 1e-3, 70_000, seed=s) for s in range(3)]
    win = WindowConfig(segment_length=2048)
    a = estimate_spectrum(xs, win, sample_interval=1e-3)
    b = estimate_spectrum(xs[::-1], win, sample_interval=1e-3)
    assert np.array_equal(a.psd, b.psd) and a.fitted_peak == b.fitted_peak
    assert a.segments_averaged == 3 * estimate_spectrum(xs[0], win, sample_interval=1e-3).segments_averaged


def test_spectrum_errors():
    with pytest.raises(NoPeakError):
        estimate_spectrum(np.full(100_000, 3.0), WindowConfig(segment_length=1024), sample_interval=1e-3)
    with pytest.raises(InsufficientDataError):
        estimate_spectrum(np.zeros(1000), WindowConfig(segment_length=1024), sample_interval=1e-3)
    with pytest.raises(NoPeakError):
        white = np.random.default_rng(0).standard_normal(100_000)
        estimate_spectrum(white, WindowConfig(segment_length=1024), sample_interval=1e-3)
