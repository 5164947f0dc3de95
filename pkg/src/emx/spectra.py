"""Frequency-domain forward models for the driven two-mode circuit.

Everything here evaluates closed forms from linearized input-output theory
under a strong red-detuned pump on the odd supermode:

* probe reflection off the even supermode with the interference window
  opened by the dressed acoustic mode,
* its inverse-power representation whose two peaks are split by twice the
  enhanced coupling rate,
* the output noise power spectral density (vacuum floor normalized to 1),
* the steady-state phonon occupancy under back-action cooling,
* blurring of the narrow mechanical feature by slow frequency jitter.

Frequency axes on traces are ordinary Hz; the model arguments stay angular.
For a reflection trace the axis is the probe detuning from the even
supermode (``delta = omega_p - omega_plus``); for a noise trace it is the
Fourier frequency in the frame rotating with the drive, so the mechanical
peak sits near ``omega_m``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import (
    CavityPair,
    MechMode,
    SingularityError,
    chi_electrical,
    chi_mechanical,
    hz_to_rad,
)


class SpectrumKind(str, Enum):
    REFLECTION = "reflection"
    INVERSE_POWER = "inverse_power"
    NPSD = "npsd"


@dataclass(frozen=True)
class SpectrumTrace:
    """Sampled frequency-domain data.

    ``freqs`` are ordinary Hz (strictly increasing); ``values`` are |S11| for
    reflection traces, 1/|S11|^2 for inverse-power traces and quanta-referenced
    PSD (vacuum floor = 1) for noise traces.  ``meta`` carries acquisition
    context such as ``drive_detuning_hz``, ``n_drive`` and ``gain_db``.
    """

    freqs: np.ndarray
    values: np.ndarray
    kind: SpectrumKind
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", SpectrumKind(self.kind))
        if freqs.ndim != 1 or values.ndim != 1:
            raise ValueError("freqs and values must be 1-D")
        if len(freqs) != len(values):
            raise ValueError("freqs and values must have equal length")
        if len(freqs) < 2:
            raise ValueError("a trace needs at least two points")
        if not np.all(np.diff(freqs) > 0):
            raise ValueError("freqs must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")

    @property
    def spacing(self) -> float:
        return float(np.mean(np.diff(self.freqs)))

    def is_uniform(self, rtol: float = 1e-6) -> bool:
        df = np.diff(self.freqs)
        return bool(np.all(np.abs(df - df[0]) <= rtol * abs(df[0])))


class KernelShape(str, Enum):
    GAUSSIAN = "gaussian"
    LORENTZIAN = "lorentzian"


@dataclass(frozen=True)
class JitterKernel:
    """Distribution of the wandering mechanical frequency, by its FWHM (Hz).

    Gaussian is the default (many slow fluctuators); a Lorentzian can be
    selected instead.  ``sample`` discretizes the kernel on a grid of the
    given spacing, normalized to unit area.
    """

    fwhm_hz: float
    shape: KernelShape = KernelShape.GAUSSIAN

    def __post_init__(self):
        object.__setattr__(self, "shape", KernelShape(self.shape))
        if self.fwhm_hz < 0:
            raise ValueError("fwhm must be >= 0")

    def sample(self, spacing_hz: float) -> tuple[np.ndarray, np.ndarray]:
        """Return (offsets_hz, weights) with weights summing to exactly 1.

        The support is +/-6 sigma for the Gaussian and +/-50 FWHM for the
        heavy-tailed Lorentzian.
        """
        if spacing_hz <= 0:
            raise ValueError("spacing must be positive")
        delta_kernel = (np.zeros(1), np.ones(1))
        if self.fwhm_hz == 0:
            return delta_kernel
        if self.shape is KernelShape.GAUSSIAN:
            sigma = self.fwhm_hz / (2.0 * np.sqrt(2.0 * np.log(2.0)))
            half = 6.0 * sigma
        else:
            sigma = self.fwhm_hz / 2.0
            half = 50.0 * self.fwhm_hz
        if sigma == 0.0 or half < spacing_hz / 2.0:
            # Unresolvable on this grid.
            return delta_kernel
        n = max(1, int(np.ceil(half / spacing_hz)))
        x = np.arange(-n, n + 1) * spacing_hz
        if self.shape is KernelShape.GAUSSIAN:
            w = np.exp(-0.5 * (x / sigma) ** 2)
        else:
            w = sigma**2 / (x**2 + sigma**2)
        return x, w / w.sum()


def s11_eit(delta_probe, cav: CavityPair, mech: MechMode, g_enhanced: float,
            drive_detuning: float, warn_unresolved: bool = True):
    """Complex probe reflection near the even supermode under a red pump.

    ``delta_probe`` is the probe detuning from the even supermode (rad/s,
    scalar or array); ``drive_detuning`` is the pump detuning
    ``omega_plus - omega_d``.  The interference term opens a transparency
    window at the two-photon resonance ``delta = omega_m - drive_detuning``:

        S11 = 1 - kappa_e / (kappa/2 + i*delta
                             + 2 G^2 / (gamma_i + 2i(delta - (omega_m - Delta))))
    """
    if warn_unresolved and not mech.sideband_resolved(cav.kappa_plus):
        warnings.warn("not sideband-resolved (omega_m <= kappa_plus); "
                      "the single-sideband reflection model is inaccurate",
                      stacklevel=2)
    delta = np.asarray(delta_probe, dtype=float)
    offset = delta - (mech.omega_m - drive_detuning)
    inner = mech.gamma_i + 2j * offset
    if g_enhanced == 0:
        if mech.gamma_i == 0 and np.any(offset == 0):
            raise SingularityError(
                "gamma_i and coupling both zero at exact two-photon resonance")
        mech_term = np.zeros_like(delta)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            mech_term = np.where(inner == 0, np.inf,
                                 2.0 * g_enhanced**2 / inner)
    denom = cav.kappa_plus / 2.0 + 1j * delta + mech_term
    with np.errstate(invalid="ignore"):
        s11 = np.where(np.isinf(denom), 1.0 + 0j, 1.0 - cav.kappa_e_plus / denom)
    return s11 if np.ndim(delta_probe) else complex(s11)


def s11_bare(delta_probe, cav: CavityPair):
    """Bare even-supermode reflection (no electromechanical coupling)."""
    delta = np.asarray(delta_probe, dtype=float)
    s11 = 1.0 - cav.kappa_e_plus / (cav.kappa_plus / 2.0 + 1j * delta)
    return s11 if np.ndim(delta_probe) else complex(s11)


def eit_reflection_trace(delta_hz, cav: CavityPair, mech: MechMode,
                         g_enhanced: float, drive_detuning: float,
                         kernel: JitterKernel | None = None,
                         meta: dict | None = None) -> SpectrumTrace:
    """|S11| sampled on a probe-detuning grid, optionally jitter-blurred.

    With a kernel, the mechanical feature (trace minus the bare-cavity
    baseline) is convolved with the jitter distribution; the model is
    evaluated on a padded grid first so the convolution carries no edge
    artifacts.  The grid must be uniform when a kernel is supplied.
    """
    delta_hz = np.asarray(delta_hz, dtype=float)
    if kernel is None or kernel.fwhm_hz == 0:
        values = np.abs(s11_eit(hz_to_rad(delta_hz), cav, mech,
                                g_enhanced, drive_detuning))
    else:
        df = np.diff(delta_hz)
        if not np.all(np.abs(df - df[0]) <= 1e-6 * abs(df[0])):
            raise ValueError("jitter blurring requires a uniform grid")
        spacing = float(df[0])
        _, weights = kernel.sample(spacing)
        npad = len(weights) // 2
        padded = np.concatenate([
            delta_hz[0] - spacing * np.arange(npad, 0, -1),
            delta_hz,
            delta_hz[-1] + spacing * np.arange(1, npad + 1),
        ])
        w = hz_to_rad(padded)
        base = np.abs(s11_bare(w, cav))
        full = np.abs(s11_eit(w, cav, mech, g_enhanced, drive_detuning))
        blurred = base + np.convolve(full - base, weights, mode="same")
        values = blurred[npad:npad + len(delta_hz)] if npad else blurred
    return SpectrumTrace(delta_hz, values, SpectrumKind.REFLECTION,
                         dict(meta or {}))


def inverse_response(trace: SpectrumTrace) -> SpectrumTrace:
    """1/|S11|^2 of a reflection trace.

    The two local maxima near two-photon resonance are separated by roughly
    twice the enhanced coupling rate and are fairly insensitive to jitter.
    """
    if trace.kind is not SpectrumKind.REFLECTION:
        raise ValueError("inverse_response expects a reflection trace")
    if np.any(trace.values <= 0):
        raise ValueError("reflection values must be positive to invert")
    return SpectrumTrace(trace.freqs, 1.0 / trace.values**2,
                         SpectrumKind.INVERSE_POWER, dict(trace.meta))


def local_maxima(freqs: np.ndarray, values: np.ndarray) -> list[tuple[float, float]]:
    """Interior local maxima as (position, height), parabolically refined.

    A point is a maximum when it exceeds its left neighbor and is at least as
    large as its right neighbor, so plateau ties resolve toward lower
    frequency.
    """
    out = []
    v = values
    for i in range(1, len(v) - 1):
        if v[i] > v[i - 1] and v[i] >= v[i + 1]:
            denom = v[i - 1] - 2.0 * v[i] + v[i + 1]
            if denom < 0:
                shift = 0.5 * (v[i - 1] - v[i + 1]) / denom
                h = freqs[i + 1] - freqs[i] if shift > 0 else freqs[i] - freqs[i - 1]
                pos = freqs[i] + shift * h
                height = v[i] - 0.25 * (v[i - 1] - v[i + 1]) * shift
            else:
                pos, height = freqs[i], v[i]
            out.append((float(pos), float(height)))
    return out


def inverse_peak_separation(trace: SpectrumTrace) -> tuple[float, tuple[float, float]]:
    """Frequency separation (Hz) of the two tallest peaks of an inverse trace.

    Raises ValueError when fewer than two resolvable peaks exist, which is the
    single-peak (unresolved coupling) diagnosis.
    """
    if trace.kind is not SpectrumKind.INVERSE_POWER:
        raise ValueError("expects an inverse-power trace")
    peaks = local_maxima(trace.freqs, trace.values)
    if len(peaks) < 2:
        raise ValueError("fewer than two resolvable peaks in inverse response")
    peaks.sort(key=lambda p: p[1], reverse=True)
    (p1, _), (p2, _) = peaks[0], peaks[1]
    lo, hi = sorted((p1, p2))
    return hi - lo, (lo, hi)


def npsd_components(omega, cav: CavityPair, mech: MechMode, g_enhanced: float,
                    drive_detuning: float):
    """The three contributions to the output noise PSD, quanta-referenced.

    Returns (coherent background, electrical-bath term, mechanical-bath term)
    evaluated at Fourier frequency ``omega`` (rad/s, drive rotating frame).
    """
    chi_r = chi_electrical(omega, cav.kappa_plus, drive_detuning)
    chi_m = chi_mechanical(omega, mech.gamma_i, mech.omega_m)
    dressing = 1.0 + g_enhanced**2 * chi_m * chi_r
    coherent = np.abs(1.0 - cav.kappa_e_plus * chi_r / dressing) ** 2
    mod2 = np.abs(dressing) ** 2
    electrical = ((cav.n_bath_plus + 1.0) * cav.kappa_e_plus * cav.kappa_i_plus
                  * np.abs(chi_r) ** 2 / mod2)
    mechanical = ((mech.n_bath_m + 1.0) * cav.kappa_e_plus * mech.gamma_i
                  * g_enhanced**2 * np.abs(chi_m) ** 2 * np.abs(chi_r) ** 2 / mod2)
    return coherent, electrical, mechanical


def npsd_sii(omega, cav: CavityPair, mech: MechMode, g_enhanced: float,
             drive_detuning: float):
    """Total output noise PSD (vacuum floor = 1) at Fourier frequency omega."""
    coherent, electrical, mechanical = npsd_components(
        omega, cav, mech, g_enhanced, drive_detuning)
    total = coherent + electrical + mechanical
    if not np.all(np.isfinite(total)):
        raise FloatingPointError("noise PSD evaluated to a non-finite value")
    return total


def npsd_trace(freqs_hz, cav: CavityPair, mech: MechMode, g_enhanced: float,
               drive_detuning: float, kernel: JitterKernel | None = None,
               meta: dict | None = None) -> SpectrumTrace:
    """Noise PSD sampled on a rotating-frame frequency grid (Hz), optionally
    jitter-blurred against the mechanical-term-free background."""
    freqs_hz = np.asarray(freqs_hz, dtype=float)
    w = hz_to_rad(freqs_hz)
    coherent, electrical, mechanical = npsd_components(
        w, cav, mech, g_enhanced, drive_detuning)
    trace = SpectrumTrace(freqs_hz, coherent + electrical + mechanical,
                          SpectrumKind.NPSD, dict(meta or {}))
    if kernel is not None and kernel.fwhm_hz > 0:
        trace = jitter_convolve(trace, kernel, baseline=coherent + electrical)
    return trace


def mechanical_peak_area(cav: CavityPair, mech: MechMode, g_enhanced: float) -> float:
    """Exact frequency-integrated area of the mechanical noise term.

    Integral of the third PSD term over ordinary frequency (Hz) when the
    pump sits exactly on the two-photon resonance.  Derived by contour
    integration of the closed form; used as the inversion constant for
    occupancy calibration and as an oracle for quadrature tests.
    """
    g2 = g_enhanced**2
    a = cav.kappa_plus * mech.gamma_i / 4.0 + g2
    b = (cav.kappa_plus + mech.gamma_i) / 2.0
    return ((mech.n_bath_m + 1.0) * cav.kappa_e_plus * mech.gamma_i * g2
            / (2.0 * a * b))


def occupancy_steady(cav: CavityPair, mech: MechMode, g_enhanced: float) -> float:
    """Steady-state phonon occupancy under red-sideband pumping.

    Interpolates between the thermal bath value at zero coupling and
    ``n_bath_m * gamma_i / kappa_plus + n_bath_plus`` at strong coupling.
    """
    if cav.kappa_plus <= 0:
        raise ValueError("kappa_plus must be positive")
    if g_enhanced == 0:
        return mech.n_bath_m
    four_g2 = 4.0 * g_enhanced**2
    kg = cav.kappa_plus * mech.gamma_i
    thermal = (mech.n_bath_m * (mech.gamma_i / cav.kappa_plus)
               * (four_g2 + cav.kappa_plus**2) / (four_g2 + kg))
    electrical = cav.n_bath_plus * four_g2 / (four_g2 + kg)
    return thermal + electrical


def backaction_rate(g_enhanced: float, kappa_plus: float) -> float:
    """Drive-induced mechanical damping ``4 G^2 / kappa_plus`` (rad/s)."""
    if kappa_plus <= 0:
        raise ValueError("kappa_plus must be positive")
    return 4.0 * g_enhanced**2 / kappa_plus


def cooperativity(g_enhanced: float, kappa_plus: float, gamma_i: float) -> float:
    """Ratio of back-action scattering to intrinsic mechanical loss."""
    if gamma_i <= 0:
        raise ValueError("gamma_i must be positive")
    return backaction_rate(g_enhanced, kappa_plus) / gamma_i


def jitter_convolve(trace: SpectrumTrace, kernel: JitterKernel,
                    baseline=None, resample: bool = False) -> SpectrumTrace:
    """Blur the mechanical feature of a trace with the jitter kernel.

    ``baseline`` is the non-jittering part of the trace (scalar or array on
    the same grid); only ``values - baseline`` is convolved.  Without a
    baseline the whole trace is convolved with edge-replicated padding, which
    is exact for features on a flat background.  The grid must be uniform;
    with ``resample=True`` a non-uniform trace is first linearly interpolated
    onto a uniform grid of the same span and point count.
    """
    if not trace.is_uniform():
        if not resample:
            raise ValueError("jitter_convolve requires a uniform grid "
                             "(pass resample=True to interpolate)")
        freqs = np.linspace(trace.freqs[0], trace.freqs[-1], len(trace.freqs))
        values = np.interp(freqs, trace.freqs, trace.values)
        if baseline is not None and np.ndim(baseline):
            baseline = np.interp(freqs, trace.freqs, np.asarray(baseline, float))
        trace = SpectrumTrace(freqs, values, trace.kind, dict(trace.meta))
    spacing = float(trace.freqs[1] - trace.freqs[0])
    span = trace.freqs[-1] - trace.freqs[0]
    if kernel.fwhm_hz >= span / 4.0:
        raise ValueError("kernel FWHM must be below a quarter of the span")
    if kernel.fwhm_hz == 0:
        return trace
    _, weights = kernel.sample(spacing)
    npad = len(weights) // 2
    base = np.zeros_like(trace.values) if baseline is None \
        else np.broadcast_to(np.asarray(baseline, float), trace.values.shape)
    feature = trace.values - base
    padded = np.pad(feature, npad, mode="edge")
    blurred = np.convolve(padded, weights, mode="same")[npad:-npad]
    return SpectrumTrace(trace.freqs, base + blurred, trace.kind,
                         dict(trace.meta))


def jitter_decompose(area_bb: float, area_nb: float, area_delta: float,
                     gamma_m: float) -> tuple[float, float]:
    """Broadening of the mechanical linewidth from fast frequency jitter.

    Given the areas of the broadband thermal-like response, the narrowband
    response around an injected weak tone, and the bare injected tone, returns
    ``(ratio, gamma_broadened)`` with

        ratio = 1 + (area_bb/area_delta) * (1 - area_nb/area_delta)

    Only ratios are reported; no slow-jitter kernel width is inferred.
    """
    if area_delta <= 0:
        raise ValueError("area_delta must be positive")
    if area_bb < 0 or area_nb < 0:
        raise ValueError("areas must be >= 0")
    if area_nb > area_delta:
        warnings.warn("narrowband area exceeds the injected-tone area; "
                      "the broadening ratio term goes below 1 (unphysical)",
                      stacklevel=2)
    ratio = 1.0 + (area_bb / area_delta) * (1.0 - area_nb / area_delta)
    return ratio, ratio * gamma_m
