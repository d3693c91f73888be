"""Analytic linear-stability predictions and growth-rate extraction.

A circular droplet of radius R0 perturbed in polar mode m relaxes (or
not) at the cubic dispersion rate

    s_m = -sigma m (m^2 - 1) / R0^3.

Modes m = 0 (area) and m = 1 (translation) are marginal; every m >= 2
decays under positive surface tension.  The perturbed pressure field is
harmonic, p = sigma/R0 + A_m r^m cos(m theta), with amplitude
A_m = sigma (m^2 - 1) / R0^(m+2) per unit radial amplitude.  These
formulas are the independent oracle the time-stepping schemes are
verified against.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FitError

__all__ = ["ModePrediction", "dispersion_rate", "mode_prediction",
           "perturbed_pressure", "fit_growth_rate"]

NOISE_FLOOR_REL = 1e-9


@dataclass(frozen=True)
class ModePrediction:
    m: int
    growth_rate: float
    pressure_amplitude: float


def dispersion_rate(m: int, sigma: float, r0: float = 1.0) -> float:
    """Decay/growth rate of polar mode m on a radius-r0 disk."""
    if m < 0:
        raise ValueError("mode number must be >= 0")
    if sigma <= 0 or r0 <= 0:
        raise ValueError("sigma and r0 must be positive")
    return -sigma * m * (m * m - 1) / r0**3


def mode_prediction(m: int, sigma: float, r0: float = 1.0, delta_r: float = 1.0) -> ModePrediction:
    return ModePrediction(
        m=m,
        growth_rate=dispersion_rate(m, sigma, r0),
        pressure_amplitude=sigma * (m * m - 1) / r0 ** (m + 2) * delta_r,
    )


def perturbed_pressure(m: int, sigma: float, r0: float, delta_r_m: float, point) -> float:
    """Linearized pressure at polar ``point=(r, theta)`` for one cosine mode.

    p = sigma/r0 + A_m r^m cos(m theta), the harmonic field matching the
    Young-Laplace condition on the perturbed interface to first order in
    the radial amplitude ``delta_r_m``.
    """
    if m < 2:
        raise ValueError("pressure perturbation defined for m >= 2")
    r, theta = point
    a_m = sigma * (m * m - 1) / r0 ** (m + 2) * delta_r_m
    return sigma / r0 + a_m * r**m * np.cos(m * theta)


def fit_growth_rate(times, amplitudes, noise_floor_rel: float = NOISE_FLOOR_REL):
    """Least-squares exponential rate of an amplitude series.

    Fits a line through (t, log |a|) after dropping samples whose
    magnitude fell below ``noise_floor_rel`` times the initial magnitude
    (late-time quadrature noise).  Returns ``(rate, rms_residual)``.
    """
    t = np.asarray(times, dtype=float)
    a = np.abs(np.asarray(amplitudes, dtype=float))
    if t.shape != a.shape or t.ndim != 1:
        raise FitError("times and amplitudes must be equal-length 1d arrays")
    if t.size and np.any(np.diff(t) <= 0):
        raise FitError("times must be strictly increasing")
    if a.size == 0 or a[0] == 0.0:
        raise FitError("initial amplitude must be nonzero")
    keep = a >= noise_floor_rel * a[0]
    t, a = t[keep], a[keep]
    if t.size < 5:
        raise FitError(f"need at least 5 usable samples, have {t.size}")
    if np.any(a <= 0.0):
        raise FitError("non-positive amplitude above the noise floor")
    log_a = np.log(a)
    design = np.column_stack([t, np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(design, log_a, rcond=None)
    rate = float(coef[0])
    resid = log_a - design @ coef
    return rate, float(np.sqrt(np.mean(resid**2)))
