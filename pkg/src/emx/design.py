"""Lumped-element design helpers for the spiral-coil LC resonator.

Closed-form estimates only: the current-sheet/modified-Wheeler inductance of
a square planar spiral, stray capacitance backed out of the coil's self
resonance, the motional participation ratio of the vacuum-gap capacitor, the
zero-point amplitude of the acoustic mode and the vacuum electromechanical
coupling assembled from those circuit quantities.  Mutual coil coupling and
feed-line loading come from field solvers and are accepted as plain inputs
elsewhere in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import HBAR

MU0 = 4.0e-7 * np.pi

# Square-layout coefficients of the modified Wheeler fit
# L = K1 * mu0 * n^2 * d_avg / (1 + K2 * rho).
WHEELER_K1 = 2.34
WHEELER_K2 = 2.75


@dataclass(frozen=True)
class CoilGeometry:
    """Square planar spiral: all lengths in meters, ``turns`` a count."""

    wire_width: float
    pitch: float
    turns: int
    outer_dim: float
    thickness: float

    def __post_init__(self):
        for name in ("wire_width", "pitch", "outer_dim", "thickness"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.turns <= 0:
            raise ValueError("turns must be positive")
        if self.wire_width > self.pitch:
            raise ValueError("wire width cannot exceed the winding pitch")
        if self.inner_dim <= 0:
            raise ValueError("turns * pitch leaves no inner opening "
                             "for this outer dimension")

    @property
    def inner_dim(self) -> float:
        return self.outer_dim - 2.0 * self.turns * self.pitch

    @property
    def avg_dim(self) -> float:
        return 0.5 * (self.outer_dim + self.inner_dim)

    @property
    def fill_ratio(self) -> float:
        return ((self.outer_dim - self.inner_dim)
                / (self.outer_dim + self.inner_dim))


@dataclass(frozen=True)
class CapacitorBudget:
    """Motional and stray capacitance of the LC circuit (farads)."""

    c_motional: float
    c_stray: float

    def __post_init__(self):
        if self.c_motional < 0 or self.c_stray < 0:
            raise ValueError("capacitances must be >= 0")

    @property
    def c_total(self) -> float:
        return self.c_motional + self.c_stray


def wheeler_inductance(geom: CoilGeometry, k1: float = WHEELER_K1,
                       k2: float = WHEELER_K2) -> float:
    """Self inductance (H) of a square planar spiral, modified-Wheeler fit.

    The default coefficients are the square-layout values; they reproduce
    published coil anchors to better than 10% and can be overridden for other
    layouts.
    """
    n = geom.turns
    return k1 * MU0 * n**2 * geom.avg_dim / (1.0 + k2 * geom.fill_ratio)


def stray_capacitance_from_srf(inductance: float, omega_srf: float) -> float:
    """Capacitance (F) implied by a coil self-resonance at ``omega_srf``
    (rad/s): ``C = 1 / (L * omega_srf^2)``."""
    if inductance <= 0 or omega_srf <= 0:
        raise ValueError("inductance and omega_srf must be positive")
    return 1.0 / (inductance * omega_srf**2)


def lc_resonance(inductance: float, capacitance: float) -> float:
    """Angular LC resonance frequency ``1/sqrt(L C)`` (rad/s)."""
    if inductance <= 0 or capacitance <= 0:
        raise ValueError("inductance and capacitance must be positive")
    return 1.0 / np.sqrt(inductance * capacitance)


def participation_ratio(budget: CapacitorBudget) -> float:
    """Motional fraction of the total capacitance, in [0, 1]."""
    if budget.c_total <= 0:
        raise ValueError("total capacitance must be positive")
    return budget.c_motional / budget.c_total


def zero_point_motion(m_eff: float, omega_m: float) -> float:
    """Zero-point displacement amplitude ``sqrt(hbar / 2 m omega)`` (m)."""
    if m_eff <= 0 or omega_m <= 0:
        raise ValueError("m_eff and omega_m must be positive")
    return np.sqrt(HBAR / (2.0 * m_eff * omega_m))


def g0_from_circuit(eta: float, x_zpf: float, omega_r0: float,
                    c_motional: float, dc_du: float) -> float:
    """Vacuum electromechanical coupling (rad/s) from circuit quantities.

        g0 = -eta * x_zpf * (omega_r0 / 2 C_m) * dC_m/du

    The sign follows the sign of the capacitance gradient ``dc_du`` (F/m).
    """
    if c_motional <= 0:
        raise ValueError("c_motional must be positive")
    return -eta * x_zpf * (omega_r0 / (2.0 * c_motional)) * dc_du
