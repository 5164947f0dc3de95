"""Forward models and parameter estimation for two-mode microwave
electromechanical circuits: probe reflection with its motionally induced
transparency window, output noise spectra and phonon thermometry, ringdown
and heating dynamics, the staged two-tone fit pipeline and lumped-element
circuit design helpers.

All model-level quantities are angular (rad/s); file and config I/O is
ordinary Hz.  See individual modules for the conventions.
"""

from .core import (
    HBAR,
    TWO_PI,
    CavityPair,
    DriveConfig,
    MechMode,
    SingularityError,
    chi_electrical,
    chi_mechanical,
    dbm_to_watts,
    enhanced_coupling,
    hz_to_rad,
    intracavity_photons,
    photons_from_power,
    rad_to_hz,
    supermode_frequencies,
)
from .design import (
    CapacitorBudget,
    CoilGeometry,
    g0_from_circuit,
    lc_resonance,
    participation_ratio,
    stray_capacitance_from_srf,
    wheeler_inductance,
    zero_point_motion,
)
from .dynamics import (
    HeatingParams,
    RingdownTrace,
    heating_closed_form,
    heating_ode_oracle,
    ringdown_signal,
    total_damping,
)
from .fitting import (
    Convergence,
    FitReport,
    calibrate_occupancy,
    fit_eit_pipeline,
    fit_g0_slope,
    fit_heating,
    fit_lorentzian,
    fit_ringdown,
)
from .spectra import (
    JitterKernel,
    KernelShape,
    SpectrumKind,
    SpectrumTrace,
    backaction_rate,
    cooperativity,
    eit_reflection_trace,
    inverse_peak_separation,
    inverse_response,
    jitter_convolve,
    jitter_decompose,
    mechanical_peak_area,
    npsd_sii,
    npsd_trace,
    occupancy_steady,
    s11_bare,
    s11_eit,
)
from .traceio import ExperimentConfig, TraceFile, load_config

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
