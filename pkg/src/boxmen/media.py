"""Modal admittances of the PEC-terminated layered regions around the plane.

Time convention ``exp(j w t)``; a lossy dielectric has
``eps = eps_r (1 - j tan_delta)``.  Admittances are the input admittances seen
from the discontinuity plane looking into each shorted layered region.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.constants import epsilon_0, mu_0, speed_of_light

from .boxmodes import TE, BoxMode
from .geometry import Layer, LayerStack

# |denominator| below this (relative) marks a transverse resonance
RESONANCE_RTOL = 1e-9


class NearResonanceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class AsymptoticCoeffs:
    """Large-cutoff admittance ``Y_inf(w) = c1 / (j w mu0) + j w eps0 c2``."""

    c1: float
    c2: complex


def _coth_safe(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """coth for Re(z) >= 0 without overflow; also returns |1 - exp(-2z)|."""
    e = np.exp(-2.0 * z)
    den = 1.0 - e
    with np.errstate(divide="ignore", invalid="ignore"):
        return (1.0 + e) / den, np.abs(den)


def propagation_constant(kc, omega: float, eps: complex) -> np.ndarray:
    """Principal-branch ``sqrt(kc^2 - w^2 mu0 eps0 eps)`` with Re >= 0."""
    k2 = omega**2 * mu_0 * epsilon_0 * eps
    arg = np.asarray(kc, float) ** 2 - k2
    # lossless stacks must land on the +j branch for propagating modes
    arg = arg.real + 1j * np.abs(arg.imag)
    return np.sqrt(arg)


def stack_admittance(
    is_te: np.ndarray, kc: np.ndarray, layers: Sequence[Layer], f: float
) -> tuple[np.ndarray, np.ndarray]:
    """Input admittance of a shorted layer stack for many modes at once.

    ``layers`` are ordered from the discontinuity plane toward the PEC wall.
    Returns ``(Y, near_resonant)``.
    """
    is_te = np.asarray(is_te, bool)
    kc = np.asarray(kc, float)
    omega = 2.0 * np.pi * f
    flag = np.zeros(kc.shape, bool)
    y = None
    for layer in reversed(layers):
        eps = layer.eps_complex
        g = propagation_constant(kc, omega, eps)
        with np.errstate(divide="ignore", invalid="ignore"):
            yc = np.where(is_te, g / (1j * omega * mu_0), 1j * omega * epsilon_0 * eps / g)
        flag |= np.abs(g) < RESONANCE_RTOL * np.maximum(kc, 1.0)
        gt = g * layer.thickness
        if y is None:
            cth, den = _coth_safe(gt)
            flag |= den < RESONANCE_RTOL
            y = yc * cth
        else:
            t = np.tanh(gt)
            den = yc + y * t
            scale = np.abs(yc) + np.abs(y * t)
            with np.errstate(divide="ignore", invalid="ignore"):
                flag |= np.abs(den) < RESONANCE_RTOL * scale
                y = yc * (y + yc * t) / den
    flag |= ~np.isfinite(y)
    return y, flag


def modal_admittance(mode: BoxMode, side: int, stack: LayerStack, f: float) -> complex:
    """Admittance ``Y_m^(side)`` of one mode; warns near a transverse resonance."""
    if not f > 0:
        raise ValueError("frequency must be positive")
    y, flag = stack_admittance(
        np.array([mode.family == TE]), np.array([mode.kc]), stack.side(side), f
    )
    if flag[0]:
        warnings.warn(f"near-resonant frequency point for {mode} at {f} Hz", NearResonanceWarning)
    return complex(y[0])


def total_admittances(
    is_te: np.ndarray, kc: np.ndarray, stack: LayerStack, f: float
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``Y^T = Y^(1) + Y^(2)`` with the combined resonance flags."""
    y1, f1 = stack_admittance(is_te, kc, stack.below, f)
    y2, f2 = stack_admittance(is_te, kc, stack.above, f)
    return y1 + y2, f1 | f2


def total_admittance(mode: BoxMode, stack: LayerStack, f: float) -> complex:
    return modal_admittance(mode, 1, stack, f) + modal_admittance(mode, 2, stack, f)


def _static_side(is_te: np.ndarray, kc: np.ndarray, layers: Sequence[Layer]) -> np.ndarray:
    """Frequency-free part of the admittance with every gamma replaced by kc.

    TE entries are in units of ``1/(j w mu0)``, TM entries in units of ``j w eps0``.
    """
    kc = np.asarray(kc, float)
    u = None
    for layer in reversed(layers):
        uc = np.where(is_te, kc + 0j, layer.eps_complex / kc)
        x = kc * layer.thickness
        if u is None:
            u = uc / np.tanh(x)
        else:
            t = np.tanh(x)
            u = uc * (u + uc * t) / (uc + u * t)
    return u


def asymptotic_coeff_arrays(
    is_te: np.ndarray, kc: np.ndarray, stack: LayerStack
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Kummer coefficients ``(c1, c2)`` for many modes."""
    is_te = np.asarray(is_te, bool)
    u = _static_side(is_te, kc, stack.below) + _static_side(is_te, kc, stack.above)
    c1 = np.where(is_te, u.real, 0.0)
    c2 = np.where(is_te, 0.0, u)
    return c1, c2


def asymptotic_coeffs(mode: BoxMode, stack: LayerStack) -> AsymptoticCoeffs:
    c1, c2 = asymptotic_coeff_arrays(np.array([mode.family == TE]), np.array([mode.kc]), stack)
    return AsymptoticCoeffs(float(c1[0]), complex(c2[0]))


def asymptotic_admittance(c1, c2, f: float):
    omega = 2.0 * np.pi * f
    return c1 / (1j * omega * mu_0) + 1j * omega * epsilon_0 * c2


def max_wavenumber(stack: LayerStack, f: float) -> float:
    eps_max = max(abs(layer.eps_complex) for layer in stack.below + stack.above)
    return 2.0 * np.pi * f / speed_of_light * np.sqrt(eps_max)
