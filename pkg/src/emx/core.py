"""Core types and single-mode response functions for a two-mode electromechanical circuit.

Conventions used throughout the package:

* Every frequency or rate stored on a type or passed between functions is
  ANGULAR (rad/s).  Anything touching files, configs or the CLI is ordinary
  frequency in Hz; convert with ``hz_to_rad`` / ``rad_to_hz``.
* A pair of tunnel-coupled LC modes hybridizes into even/odd supermodes at
  ``omega_r0 +/- tunnel_rate``.  The strong pump drives the odd (lower)
  supermode; the probe and all detected spectra live near the even (upper)
  supermode.
* Detunings follow the red-sideband pumping convention
  ``Delta = omega_supermode - omega_drive`` (positive when the drive sits
  below the resonance).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi

# Reduced Planck constant, J*s (2018 CODATA exact value).
HBAR = 1.054571817e-34

# Substituted for a vanishing intrinsic mechanical linewidth so that
# limiting-case expressions stay finite (rad/s).
GAMMA_FLOOR_DEFAULT = 1e-6


class SingularityError(ZeroDivisionError):
    """A response function was evaluated exactly on a pole."""


def hz_to_rad(f):
    """Ordinary frequency (Hz) -> angular frequency (rad/s)."""
    return TWO_PI * np.asarray(f) if np.ndim(f) else TWO_PI * f


def rad_to_hz(w):
    """Angular frequency (rad/s) -> ordinary frequency (Hz)."""
    return np.asarray(w) / TWO_PI if np.ndim(w) else w / TWO_PI


def dbm_to_watts(p_dbm: float) -> float:
    return 1e-3 * 10.0 ** (p_dbm / 10.0)


@dataclass(frozen=True)
class CavityPair:
    """Electrical side of the device: two tunnel-coupled LC modes.

    All rates angular (rad/s).  ``omega_r0`` is the bare frequency of each
    (identical) LC mode and ``tunnel_rate`` the photon tunneling rate between
    them, so the supermodes sit at ``omega_r0 +/- tunnel_rate``.  The
    ``plus``/``minus`` suffixes refer to the even (upper) and odd (lower)
    supermodes.  ``n_bath_plus`` is the thermal occupancy of the bath seen by
    the even mode through its internal loss channel.
    """

    omega_r0: float
    tunnel_rate: float
    kappa_plus: float
    kappa_minus: float
    kappa_e_plus: float
    kappa_e_minus: float
    n_bath_plus: float = 0.0

    def __post_init__(self):
        if self.omega_r0 <= 0:
            raise ValueError("omega_r0 must be positive")
        if self.tunnel_rate < 0:
            raise ValueError("tunnel_rate must be >= 0")
        for name in ("kappa_plus", "kappa_minus", "kappa_e_plus",
                     "kappa_e_minus", "n_bath_plus"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.kappa_e_plus > self.kappa_plus:
            raise ValueError("kappa_e_plus cannot exceed kappa_plus")
        if self.kappa_e_minus > self.kappa_minus:
            raise ValueError("kappa_e_minus cannot exceed kappa_minus")

    @classmethod
    def from_hz(cls, omega_r0_hz, tunnel_rate_hz, kappa_plus_hz,
                kappa_minus_hz, kappa_e_plus_hz, kappa_e_minus_hz,
                n_bath_plus=0.0) -> "CavityPair":
        return cls(
            omega_r0=hz_to_rad(omega_r0_hz),
            tunnel_rate=hz_to_rad(tunnel_rate_hz),
            kappa_plus=hz_to_rad(kappa_plus_hz),
            kappa_minus=hz_to_rad(kappa_minus_hz),
            kappa_e_plus=hz_to_rad(kappa_e_plus_hz),
            kappa_e_minus=hz_to_rad(kappa_e_minus_hz),
            n_bath_plus=n_bath_plus,
        )

    @property
    def omega_plus(self) -> float:
        return self.omega_r0 + self.tunnel_rate

    @property
    def omega_minus(self) -> float:
        return self.omega_r0 - self.tunnel_rate

    @property
    def kappa_i_plus(self) -> float:
        """Internal loss rate of the even supermode."""
        return self.kappa_plus - self.kappa_e_plus

    @property
    def kappa_i_minus(self) -> float:
        return self.kappa_minus - self.kappa_e_minus


@dataclass(frozen=True)
class MechMode:
    """The acoustic breathing mode: frequency, intrinsic damping, thermal bath.

    ``gamma_i`` is the intrinsic ENERGY decay rate (rad/s), i.e. the dark
    phonon lifetime is ``1/gamma_i``.
    """

    omega_m: float
    gamma_i: float
    n_bath_m: float = 0.0

    def __post_init__(self):
        if self.omega_m <= 0:
            raise ValueError("omega_m must be positive")
        if self.gamma_i < 0:
            raise ValueError("gamma_i must be >= 0")
        if self.n_bath_m < 0:
            raise ValueError("n_bath_m must be >= 0")

    @classmethod
    def from_hz(cls, omega_m_hz, gamma_i_hz, n_bath_m=0.0) -> "MechMode":
        return cls(omega_m=hz_to_rad(omega_m_hz),
                   gamma_i=hz_to_rad(gamma_i_hz),
                   n_bath_m=n_bath_m)

    def sideband_resolved(self, kappa_plus: float) -> bool:
        """True when motional sidebands are spectrally separated from the
        cavity line (omega_m > kappa_plus)."""
        return self.omega_m > kappa_plus


@dataclass(frozen=True)
class DriveConfig:
    """Strong pump tone: generator power, line attenuation, frequency.

    ``attenuation_db`` is stored as a negative number (a 76 dB attenuator is
    ``-76.0``) so that the power reaching the circuit input is simply
    ``1e-3 * 10**((attenuation_db + power_in_dbm)/10)`` watts.  ``g0_pm`` is
    the cross-mode vacuum coupling rate (half the full single-mode rate).
    """

    power_in_dbm: float
    attenuation_db: float
    omega_d: float
    g0_pm: float

    def __post_init__(self):
        if not np.isfinite(self.power_in_dbm):
            raise ValueError("power_in_dbm must be finite")
        if not np.isfinite(self.attenuation_db):
            raise ValueError("attenuation_db must be finite")
        if self.attenuation_db > 0:
            raise ValueError(
                "attenuation_db is a negative-sense quantity; got a positive value")
        if self.omega_d <= 0:
            raise ValueError("omega_d must be positive")
        if self.g0_pm < 0:
            raise ValueError("g0_pm must be >= 0")

    @property
    def power_at_input_watts(self) -> float:
        """Drive power delivered to the circuit input (W)."""
        return dbm_to_watts(self.attenuation_db + self.power_in_dbm)

    def detuning_plus(self, cav: CavityPair) -> float:
        """Delta_+ = omega_plus - omega_d (rad/s)."""
        return cav.omega_plus - self.omega_d

    def detuning_minus(self, cav: CavityPair) -> float:
        """Delta_- = omega_minus - omega_d (rad/s)."""
        return cav.omega_minus - self.omega_d


def supermode_frequencies(omega_r0: float, tunnel_rate: float) -> tuple[float, float]:
    """Hybridized even/odd supermode frequencies of the coupled LC pair.

    Returns ``(omega_r0 + tunnel_rate, omega_r0 - tunnel_rate)``; the
    splitting is twice the tunneling rate.
    """
    if omega_r0 <= 0:
        raise ValueError("omega_r0 must be positive")
    if tunnel_rate < 0:
        raise ValueError("tunnel_rate must be >= 0")
    return omega_r0 + tunnel_rate, omega_r0 - tunnel_rate


def chi_electrical(omega, kappa: float, detuning: float):
    """Uncoupled electrical susceptibility 1/(kappa/2 + i(Delta - omega)).

    ``omega`` is the Fourier frequency in the frame rotating with the drive;
    ``detuning`` is the supermode detuning from the drive.  Units: seconds.
    Peaks at ``omega = detuning`` with value ``2/kappa``.
    """
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    denom = kappa / 2.0 + 1j * (detuning - np.asarray(omega, dtype=float))
    if np.any(denom == 0):
        raise SingularityError("chi_electrical evaluated on its pole "
                               "(kappa = 0 at omega = detuning)")
    chi = 1.0 / denom
    return chi if np.ndim(omega) else complex(chi)


def chi_mechanical(omega, gamma_i: float, omega_m: float,
                   gamma_floor: float = GAMMA_FLOOR_DEFAULT):
    """Uncoupled mechanical susceptibility 1/(gamma_i/2 + i(omega_m - omega)).

    Units: seconds.  A strictly zero ``gamma_i`` is replaced by
    ``gamma_floor`` (and a warning emitted) so that limiting cases remain
    finite rather than raising on resonance.
    """
    if gamma_i < 0:
        raise ValueError("gamma_i must be >= 0")
    if gamma_i == 0:
        warnings.warn("gamma_i = 0 replaced by floor value "
                      f"{gamma_floor} rad/s in chi_mechanical",
                      stacklevel=2)
        gamma_i = gamma_floor
    denom = gamma_i / 2.0 + 1j * (omega_m - np.asarray(omega, dtype=float))
    if np.any(denom == 0):
        raise SingularityError("chi_mechanical evaluated on its pole")
    chi = 1.0 / denom
    return chi if np.ndim(omega) else complex(chi)


def photons_from_power(power_watts: float, omega_d: float, kappa_minus: float,
                       kappa_e_minus: float, detuning_minus: float) -> float:
    """Intracavity photon number of the odd supermode for a given input power.

    ``n = (P/hbar*omega_d) * 4*kappa_e / (kappa**2 + 4*Delta**2)`` with the
    total (loaded) decay rate in the denominator.
    """
    if kappa_minus <= 0:
        raise ValueError("kappa_minus must be positive")
    if power_watts < 0:
        raise ValueError("power_watts must be >= 0")
    flux = power_watts / (HBAR * omega_d)
    return flux * 4.0 * kappa_e_minus / (kappa_minus**2 + 4.0 * detuning_minus**2)


def intracavity_photons(drive: DriveConfig, cav: CavityPair) -> float:
    """Pump photon number in the odd supermode for the given drive settings."""
    return photons_from_power(
        drive.power_at_input_watts,
        drive.omega_d,
        cav.kappa_minus,
        cav.kappa_e_minus,
        drive.detuning_minus(cav),
    )


def enhanced_coupling(g0_pm: float, n_d: float) -> float:
    """Parametrically enhanced coupling rate ``g0_pm * sqrt(n_d)`` (rad/s)."""
    if n_d < 0:
        raise ValueError("photon number must be >= 0")
    return g0_pm * np.sqrt(n_d)
