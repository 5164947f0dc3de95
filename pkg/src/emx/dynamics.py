"""Time-domain models: ringdown with cavity leakage and pump-induced heating.

The ringdown is an energy decay, so the detected power is proportional to
the phonon number and the fast initial segment decays at the full cavity
rate ``kappa_plus`` (not ``kappa_plus/2``).  The heating model couples the
mode to the cold drive (back-action), the ambient bath and a pump-induced
hot bath whose slow fraction turns on with rate ``gamma_s``; both the
closed-form solution and an independently integrated ODE are provided so
each can check the other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

# Relative rate difference below which the closed form switches to its
# removable-singularity limit branch.
DEGENERATE_RTOL = 1e-9


@dataclass(frozen=True)
class RingdownTrace:
    """Detected power vs time for a pulsed ring-up / read-out measurement.

    ``segments``, when present, labels each sample as ``cavity_leak`` or
    ``mechanical_decay``.
    """

    times: np.ndarray
    power: np.ndarray
    segments: tuple | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        power = np.asarray(self.power, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "power", power)
        if len(times) != len(power):
            raise ValueError("times and power must have equal length")
        if not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        if np.any(power < 0):
            raise ValueError("power must be >= 0")
        if self.segments is not None:
            if len(self.segments) != len(times):
                raise ValueError("segments must label every sample")
            bad = set(self.segments) - {"cavity_leak", "mechanical_decay"}
            if bad:
                raise ValueError(f"unknown segment labels: {bad}")


@dataclass(frozen=True)
class HeatingParams:
    """Rates and occupancies of the three-bath heating model (rad/s).

    ``delta_b`` is the fraction of the pump-induced hot bath that switches on
    slowly with rate ``gamma_s``; the remainder appears instantly.
    """

    gamma_i: float
    gamma_em: float
    gamma_p: float
    n_bath_m: float
    n_p: float
    delta_b: float
    gamma_s: float

    def __post_init__(self):
        for name in ("gamma_i", "gamma_em", "gamma_p", "n_bath_m", "n_p",
                     "gamma_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.delta_b <= 1.0:
            raise ValueError("delta_b must lie in [0, 1]")
        if self.gamma <= 0:
            raise ValueError("total damping gamma must be positive")

    @property
    def gamma(self) -> float:
        """Total mode damping: intrinsic + back-action + hot-bath coupling."""
        return self.gamma_i + self.gamma_em + self.gamma_p

    @property
    def n_hot(self) -> float:
        """Steady-state occupancy the mode settles to under the pump."""
        return (self.gamma_p * self.n_p + self.gamma_i * self.n_bath_m) / self.gamma

    @classmethod
    def with_hot_occupancy(cls, gamma_i, gamma_em, gamma_p, n_bath_m,
                           n_hot, delta_b, gamma_s) -> "HeatingParams":
        """Choose the hot-bath occupancy so the steady state equals ``n_hot``."""
        if gamma_p <= 0:
            raise ValueError("gamma_p must be positive to target a hot occupancy")
        gamma = gamma_i + gamma_em + gamma_p
        n_p = (gamma * n_hot - gamma_i * n_bath_m) / gamma_p
        if n_p < 0:
            raise ValueError("target n_hot below the ambient-bath steady state")
        return cls(gamma_i, gamma_em, gamma_p, n_bath_m, n_p, delta_b, gamma_s)


def ringdown_signal(t, a_cav: float, kappa_plus: float, a_mech: float,
                    gamma_m: float):
    """Two-exponential energy decay: cavity leak plus mechanical ringdown."""
    if kappa_plus <= 0 or gamma_m <= 0:
        raise ValueError("decay rates must be positive")
    if a_cav < 0 or a_mech < 0:
        raise ValueError("amplitudes must be >= 0")
    t = np.asarray(t, dtype=float)
    out = a_cav * np.exp(-kappa_plus * t) + a_mech * np.exp(-gamma_m * t)
    return out if out.ndim else float(out)


def total_damping(gamma_i: float, gamma_em: float) -> float:
    """Driven mechanical energy decay rate ``gamma_i + gamma_em``."""
    return gamma_i + gamma_em


def heating_closed_form(t, p: HeatingParams):
    """Occupancy n_m(t) of the heating model, starting from the ambient bath.

        n(t) = n_bath * exp(-gamma t) + n_hot * (1 - exp(-gamma t))
               + n_delta * (exp(-gamma_s t) - exp(-gamma t))

    with ``n_delta = gamma_p n_p delta_b / (gamma_s - gamma)``.  When
    ``gamma_s`` approaches ``gamma`` the last term has a removable
    singularity and the analytic limit ``-gamma_p n_p delta_b t exp(-gamma t)``
    is used instead (validated against the ODE oracle).
    """
    t = np.asarray(t, dtype=float)
    g = p.gamma
    decay = np.exp(-g * t)
    base = p.n_bath_m * decay + p.n_hot * (1.0 - decay)
    slow_amp = p.gamma_p * p.n_p * p.delta_b
    if slow_amp == 0:
        out = base
    elif abs(p.gamma_s - g) < DEGENERATE_RTOL * g:
        out = base - slow_amp * t * decay
    else:
        n_delta = slow_amp / (p.gamma_s - g)
        out = base + n_delta * (np.exp(-p.gamma_s * t) - decay)
    return out if out.ndim else float(out)


def heating_ode_oracle(t_grid, p: HeatingParams) -> np.ndarray:
    """Integrate the heating rate equation directly (independent oracle).

    Uses an adaptive 4th/5th-order Runge-Kutta scheme with fixed tolerances
    (rel 1e-9, abs 1e-12) so repeated runs are deterministic.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) < 2:
        raise ValueError("t_grid must be a 1-D array with at least two points")
    if t_grid[0] < 0 or not np.all(np.diff(t_grid) > 0):
        raise ValueError("t_grid must increase from t >= 0")

    def rhs(t, n):
        hot = p.gamma_p * p.n_p * (1.0 - p.delta_b * np.exp(-p.gamma_s * t))
        return -p.gamma * n + hot + p.gamma_i * p.n_bath_m

    sol = solve_ivp(rhs, (0.0, float(t_grid[-1])), [p.n_bath_m],
                    method="RK45", t_eval=t_grid, rtol=1e-9, atol=1e-12)
    if not sol.success:
        raise RuntimeError(f"heating ODE integration failed: {sol.message}")
    return sol.y[0]
