"""Independent reference computations shared by the test modules."""

import math

import numpy as np
from scipy import signal
from scipy.linalg import solve_continuous_lyapunov

from optotrap.linear_dynamics import balance


def lyapunov_covariance(A, D):
    """Steady covariance from A S + S A^T + D = 0, solved in balanced coordinates."""
    B, s = balance(A.entries)
    Db = D / np.outer(s, s)
    Sb = solve_continuous_lyapunov(B, -Db)
    return Sb * np.outer(s, s)


def ar2_oscillator(omega0, width, h, n, seed):
    """Sampled white-noise driven oscillator built from its discrete poles."""
    w1 = math.sqrt(omega0**2 - width**2 / 4)
    r = math.exp(-width * h / 2)
    a = [1.0, -2 * r * math.cos(w1 * h), r * r]
    e = np.random.default_rng(seed).standard_normal(n)
    return signal.lfilter([1.0], a, e)
