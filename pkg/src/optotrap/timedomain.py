"""Stochastic trajectories of the linearised fluctuations and their spectra.

Trajectories are generated with the explicit Euler-Maruyama scheme for
``du = A u dt + B dW``. Optical quadratures receive vacuum noise of
intensity ``gamma * vacuum_strength`` each and the momentum receives a
white thermal force. The thermal force is the classical limit of the
Brownian kernel: its two-sided intensity is ``mech_damping * M * k_B * T``,
which gives equipartition for the ``-(mech_damping/2) P`` friction used
throughout.

The displacement spectrum is a Welch estimate. Its Lorentzian fit models
the *expected* windowed periodogram of a damped oscillator (Lorentzian
convolved with the window kernel, aliasing included), so the fitted width
is not inflated by the finite segment length.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import signal as sp_signal
from scipy.constants import k as K_BOLTZMANN
from scipy.optimize import least_squares

from .errors import (
    InsufficientDataError,
    NoPeakError,
    SimulationDivergedError,
    StepSizeError,
    UnstableSystemError,
)
from .linear_dynamics import DriftMatrix, balance, routh_hurwitz_stable
from .params import SystemParams

DT_SAFETY = 0.1
MIN_SEGMENTS = 16
MIN_LENGTH_FACTOR = 32
DEFAULT_CUTOFF = 1e150


@dataclass(frozen=True)
class NoiseModel:
    vacuum_strength: float = 0.5  # symmetrised per-quadrature intensity
    thermal_force_psd: float = 0.0  # two-sided, N^2 s
    seed: int = 0

    def __post_init__(self):
        if self.vacuum_strength < 0 or self.thermal_force_psd < 0:
            raise ValueError("noise strengths must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    @classmethod
    def for_system(cls, p: SystemParams, seed: int = 0, vacuum: bool = True, thermal: bool = True):
        psd = p.mech_damping * p.mirror_mass * K_BOLTZMANN * p.bath_temperature if thermal else 0.0
        return cls(0.5 if vacuum else 0.0, psd, seed)

    def with_seed(self, seed: int) -> "NoiseModel":
        return NoiseModel(self.vacuum_strength, self.thermal_force_psd, seed)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_records, n_state)
    ordering: tuple[str, ...]
    dt: float
    record_every: int
    seed: int
    unstable: bool = False

    @property
    def sample_interval(self) -> float:
        return self.dt * self.record_every

    @property
    def position_index(self) -> int:
        return len(self.ordering) - 2

    @property
    def position(self) -> np.ndarray:
        return self.states[:, self.position_index]


@dataclass(frozen=True)
class WindowConfig:
    segment_length: int = 4096  # samples
    overlap: float = 0.5
    fit_band: float = 6.0  # half-width of the fit band in initial linewidths
    min_prominence: float = 10.0
    discard: int = 0  # leading samples dropped before estimation


@dataclass(frozen=True, eq=False)
class SpectrumEstimate:
    freq_grid: np.ndarray  # rad/s
    psd: np.ndarray  # m^2 s (two-sided per rad/s, folded to positive w)
    segments_averaged: int
    fitted_peak: float
    fitted_width: float
    fit_residual: float
    peak_stderr: float = float("nan")
    width_stderr: float = float("nan")
    fitted_variance: float = float("nan")
    fit_band: tuple[float, float] = field(default=(float("nan"), float("nan")))


def noise_channels(A: DriftMatrix, noise: NoiseModel):
    """Rows driven by noise, their gains and stream keys.

    Channels with zero strength are dropped; each remaining channel is keyed
    by its state label so its random stream does not depend on which other
    channels exist.
    """
    rows, gains, keys = [], [], []
    g_opt = math.sqrt(A.params.cavity_decay * noise.vacuum_strength)
    for i in A.optical_indices():
        if g_opt > 0:
            rows.append(i)
            gains.append(g_opt)
            keys.append(A.ordering[i])
    if noise.thermal_force_psd > 0:
        rows.append(A.momentum_index)
        gains.append(math.sqrt(noise.thermal_force_psd))
        keys.append(A.ordering[A.momentum_index])
    return np.array(rows, dtype=np.int64), np.array(gains, dtype=float), keys


def diffusion_matrix(A: DriftMatrix, noise: NoiseModel) -> np.ndarray:
    """``D = B B^T`` for the Euler increments ``B dW``."""
    rows, gains, _ = noise_channels(A, noise)
    D = np.zeros((A.order, A.order))
    D[rows, rows] = gains**2
    return D


def _streams(seed: int, keys):
    return [
        np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(k.encode()),)))
        for k in keys
    ]


def max_step(A) -> float:
    """Largest admissible Euler step, ``0.1 / rho(A)``.

    The spectral radius is used as the matrix scale; any operator norm of
    the raw mixed-unit matrix would be dominated by unit choices.
    """
    M = A.entries if isinstance(A, DriftMatrix) else np.asarray(A)
    B, _ = balance(M)
    return DT_SAFETY / float(np.max(np.abs(np.linalg.eigvals(B))))


@njit(cache=True, nogil=True)
def _euler_chunk(x, indptr, indices, data, rows, gains, noise, record_every, out, out_start, cutoff):
    n = x.shape[0]
    n_steps = noise.shape[1]
    m = rows.shape[0]
    y = np.empty(n)
    k = out_start
    for t in range(n_steps):
        for i in range(n):
            s = 0.0
            for jj in range(indptr[i], indptr[i + 1]):
                s += data[jj] * x[indices[jj]]
            y[i] = s
        for c in range(m):
            y[rows[c]] += gains[c] * noise[c, t]
        bad = False
        for i in range(n):
            x[i] = y[i]
            v = y[i]
            if not (abs(v) <= cutoff[i]):
                bad = True
        if (t + 1) % record_every == 0:
            out[k, :] = x
            k += 1
        if bad:
            return k, t + 1
    return k, -1


def integrate_trajectory(
    A: DriftMatrix,
    noise: NoiseModel,
    dt: float,
    n_steps: int,
    x0=None,
    record_every: int = 1,
    allow_unstable: bool = False,
    amplitude_cutoff=None,
    noise_substeps: int = 1,
    chunk_steps: int = 1 << 20,
) -> Trajectory:
    """Euler-Maruyama integration of the linear Langevin system.

    Parameters
    ----------
    A : DriftMatrix
    noise : NoiseModel
    dt : float
        Step [s]; must be below ``0.1 / rho(A)``.
    n_steps : int
        Number of Euler steps; must be a multiple of ``record_every``.
    x0 : array_like, optional
        Initial fluctuation vector (zeros by default).
    record_every : int
        Keep one state every this many steps (the initial state is always kept).
    allow_unstable : bool
        Integrate a drift matrix that fails the Routh-Hurwitz test.
    amplitude_cutoff : float or array_like, optional
        Per-component magnitude that aborts the run.
    noise_substeps : int
        Each Wiener increment is the normalised sum of this many draws. A run
        with ``(dt, k=2)`` then follows the same Brownian path as
        ``(dt/2, k=1)`` with the same seed, which isolates the step-size
        error in convergence checks.

    Raises
    ------
    UnstableSystemError, StepSizeError, SimulationDivergedError
    """
    M = A.entries
    n = M.shape[0]
    if n_steps <= 0 or record_every <= 0 or n_steps % record_every:
        raise ValueError("n_steps must be a positive multiple of record_every")
    if noise_substeps < 1:
        raise ValueError("noise_substeps must be >= 1")
    report = routh_hurwitz_stable(A)
    unstable = not report.routh_hurwitz_stable
    if unstable and not allow_unstable:
        raise UnstableSystemError(
            f"drift matrix is {report.verdict} (max Re lambda = {report.max_real_part:.4e} 1/s)"
        )
    limit = max_step(A)
    if not (0 < dt < limit):
        raise StepSizeError(f"dt={dt!r} s violates the stability bound dt < {limit:.4e} s")

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"x0 must have shape ({n},)")
    cutoff = np.broadcast_to(
        np.asarray(DEFAULT_CUTOFF if amplitude_cutoff is None else amplitude_cutoff, dtype=float), (n,)
    ).copy()

    step = np.eye(n) + M * dt
    nz = step != 0.0
    indptr = np.concatenate([[0], np.cumsum(nz.sum(axis=1))]).astype(np.int64)
    indices = np.nonzero(nz)[1].astype(np.int64)
    data = step[nz].astype(float)
    rows, gains, keys = noise_channels(A, noise)
    gains = gains * math.sqrt(dt)
    streams = _streams(noise.seed, keys)

    n_rec = n_steps // record_every
    out = np.empty((n_rec + 1, n))
    out[0] = x
    k = 1
    chunk = max(record_every, (chunk_steps // record_every) * record_every)
    ksub = int(noise_substeps)
    buf = np.empty((len(rows), chunk))
    sub = np.empty(chunk * ksub) if ksub > 1 else None
    done = 0
    while done < n_steps:
        size = min(chunk, n_steps - done)
        view = buf[:, :size]
        for c, rng in enumerate(streams):
            if ksub == 1:
                rng.standard_normal(out=view[c])
            else:
                draws = sub[: size * ksub]
                rng.standard_normal(out=draws)
                np.sum(draws.reshape(size, ksub), axis=1, out=view[c])
                view[c] *= 1.0 / math.sqrt(ksub)
        k, failed = _euler_chunk(x, indptr, indices, data, rows, gains, view, record_every, out, k, cutoff)
        if failed >= 0:
            t_fail = (done + failed) * dt
            partial = Trajectory(
                np.arange(k) * record_every * dt, out[:k].copy(), A.ordering, dt, record_every,
                noise.seed, unstable,
            )
            raise SimulationDivergedError(
                f"state amplitude crossed the cutoff at t = {t_fail:.6e} s "
                f"(state {np.array2string(x, precision=3)})",
                partial=partial,
            )
        done += size
    times = np.arange(n_rec + 1) * (record_every * dt)
    return Trajectory(times, out, A.ordering, dt, record_every, noise.seed, unstable)


def integrate_ensemble(A, noise: NoiseModel, dt, n_steps, seeds, workers: int = 1, **kwargs):
    """Independent trajectories, one per seed, in seed order."""
    def run(seed):
        return integrate_trajectory(A, noise.with_seed(seed), dt, n_steps, **kwargs)

    if workers <= 1:
        return [run(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, seeds))


def zero_crossing_frequency(times, values) -> float:
    """Angular frequency from linearly interpolated upward zero crossings."""
    v = np.asarray(values, dtype=float)
    t = np.asarray(times, dtype=float)
    idx = np.flatnonzero((v[:-1] < 0) & (v[1:] >= 0))
    if idx.size < 2:
        raise NoPeakError("fewer than two upward zero crossings")
    tc = t[idx] - v[idx] * (t[idx + 1] - t[idx]) / (v[idx + 1] - v[idx])
    return 2.0 * math.pi * (idx.size - 1) / (tc[-1] - tc[0])


def _window(n: int) -> np.ndarray:
    return sp_signal.windows.hann(n, sym=True)


def _oscillator_autocov(tau, omega0, width, variance):
    """Autocovariance of a white-noise driven damped oscillator."""
    w1 = np.sqrt(complex(omega0 * omega0 - 0.25 * width * width))
    decay = np.exp(-0.5 * width * tau)
    if abs(w1) == 0:
        return variance * decay * (1.0 + 0.5 * width * tau)
    r = decay * (np.cos(w1 * tau) + (0.5 * width / w1) * np.sin(w1 * tau))
    return variance * r.real


class _WelchModel:
    """Expected one-sided Welch density of the oscillator process."""

    def __init__(self, nperseg: int, h: float):
        self.n = nperseg
        self.h = h
        w = _window(nperseg)
        full = np.correlate(w, w, mode="full")
        self.lag_weight = full[nperseg - 1:]
        self.norm = 2.0 / ((1.0 / h) * np.sum(w * w)) / (2.0 * math.pi)
        self.tau = np.arange(nperseg) * h

    def __call__(self, omega0, width, variance, bins):
        g = _oscillator_autocov(self.tau, omega0, width, variance) * self.lag_weight
        spec = 2.0 * np.fft.fft(g).real - g[0]
        return self.norm * spec[bins]


def _series_of(item, sample_interval):
    if isinstance(item, Trajectory):
        return item.position, item.sample_interval
    if sample_interval is None:
        raise ValueError("sample_interval is required for a bare array")
    return np.asarray(item, dtype=float), float(sample_interval)


def _welch(x, h, window: WindowConfig):
    x = x[window.discard:]
    nperseg = int(window.segment_length)
    if x.size < MIN_LENGTH_FACTOR * nperseg:
        raise InsufficientDataError(
            f"need at least {MIN_LENGTH_FACTOR} x {nperseg} samples, got {x.size}"
        )
    hop = nperseg - int(round(window.overlap * nperseg))
    n_seg = 1 + (x.size - nperseg) // hop
    span = nperseg + (n_seg - 1) * hop
    excess = x.size - span
    # centre the segments; for odd excess average the two nearest placements
    # so that the estimate is unchanged by time reversal
    starts = [excess // 2] if excess % 2 == 0 else [excess // 2, excess // 2 + 1]
    p_f = 0.0
    for s0 in starts:
        f, pk = sp_signal.welch(
            x[s0:s0 + span], fs=1.0 / h, window=_window(nperseg), nperseg=nperseg,
            noverlap=nperseg - hop, detrend="constant", scaling="density", return_onesided=True,
        )
        p_f = p_f + pk
    p_f = p_f / len(starts)
    return 2.0 * math.pi * f, p_f / (2.0 * math.pi), int(n_seg)


def estimate_spectrum(series, window: WindowConfig = WindowConfig(), sample_interval: float | None = None):
    """Welch displacement spectrum and Lorentzian fit about its dominant peak.

    Parameters
    ----------
    series : Trajectory, 1-D array, or a list of either
        Several series (same sample interval) are averaged segment-weighted.
        Bins are summed in sorted order, so the result does not depend on
        the order of the list. For bare arrays ``sample_interval`` is required.
    window : WindowConfig
        Segment length in samples, overlap, and fit settings.

    Returns
    -------
    SpectrumEstimate
        ``fitted_peak`` is the oscillator frequency and ``fitted_width`` the
        energy linewidth (FWHM of the Lorentzian), both in rad/s.

    Raises
    ------
    InsufficientDataError
        A series shorter than 32 segment lengths, or fewer than 16 segments.
    NoPeakError
        No peak standing ``min_prominence`` above the median level.
    """
    items = list(series) if isinstance(series, (list, tuple)) else [series]
    if not items:
        raise InsufficientDataError("no series given")
    parts = [_series_of(it, sample_interval) for it in items]
    h = parts[0][1]
    if any(not math.isclose(hi, h, rel_tol=1e-12) for _, hi in parts):
        raise ValueError("all series must share one sample interval")
    welch = [_welch(x, h, window) for x, _ in parts]
    omega = welch[0][0]
    n_seg = sum(w[2] for w in welch)
    if n_seg < MIN_SEGMENTS:
        raise InsufficientDataError(f"only {n_seg} segments; need {MIN_SEGMENTS}")
    weighted = np.sort(np.stack([w[1] * w[2] for w in welch]), axis=0)
    psd = weighted.sum(axis=0) / n_seg
    nperseg = int(window.segment_length)

    inner = slice(1, psd.size - 1)
    body = psd[inner]
    if not np.any(body > 0):
        raise NoPeakError("spectrum is identically zero")
    ipk = int(np.argmax(body)) + 1
    floor = float(np.median(body))
    if floor > 0 and psd[ipk] / floor < window.min_prominence:
        raise NoPeakError(f"peak prominence {psd[ipk] / floor:.3g} below {window.min_prominence}")

    half = psd[ipk] / 2.0
    lo = ipk
    while lo > 1 and psd[lo] > half:
        lo -= 1
    hi = ipk
    while hi < psd.size - 2 and psd[hi] > half:
        hi += 1
    d_omega = omega[1] - omega[0]
    width0 = max(omega[hi] - omega[lo] - d_omega, 2.0 * d_omega)
    band_lo = max(omega[ipk] - window.fit_band * width0, omega[1])
    band_hi = min(omega[ipk] + window.fit_band * width0, omega[-2])
    bins = np.flatnonzero((omega >= band_lo) & (omega <= band_hi))
    if bins.size < 8:
        bins = np.arange(max(1, ipk - 4), min(psd.size - 1, ipk + 5))

    model = _WelchModel(nperseg, h)
    data = np.log(psd[bins])
    var0 = float(np.mean([np.var(x) for x, _ in parts]))

    def resid(theta):
        w0, g, v = np.exp(theta)
        m = model(w0, g, v, bins)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.log(np.where(m > 0, m, np.nan)) - data
        return np.nan_to_num(out, nan=50.0)

    theta0 = np.log([omega[ipk], width0, max(var0, 1e-300)])
    fit = least_squares(resid, theta0, method="lm", x_scale=1.0)
    w0, g, v = np.exp(fit.x)
    r = fit.fun
    dof = max(bins.size - 3, 1)
    s2 = float(r @ r) / dof
    try:
        cov = np.linalg.inv(fit.jac.T @ fit.jac) * s2
        se = np.sqrt(np.diag(cov)) * np.array([w0, g, v])
    except np.linalg.LinAlgError:
        se = np.full(3, np.nan)
    return SpectrumEstimate(
        freq_grid=omega, psd=psd, segments_averaged=int(n_seg),
        fitted_peak=float(w0), fitted_width=float(g), fit_residual=float(np.sqrt(s2)),
        peak_stderr=float(se[0]), width_stderr=float(se[1]), fitted_variance=float(v),
        fit_band=(float(band_lo), float(band_hi)),
    )
