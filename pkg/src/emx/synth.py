"""Deterministic synthetic experiments.

Produces the measurement set a real two-tone campaign would: noisy probe
sweeps over drive detunings, dark and driven ringdowns, a heating pulse and a
noise spectrum, plus a ground-truth manifest.  Every trace gets its own
random generator derived from the master seed and the trace index, so a
dataset can be extended without perturbing existing traces and identical
seeds give byte-identical files.
"""

from __future__ import annotations

import os

import numpy as np
import yaml

from .core import enhanced_coupling, hz_to_rad, rad_to_hz
from .dynamics import HeatingParams, heating_closed_form, ringdown_signal
from .spectra import (
    SpectrumTrace,
    backaction_rate,
    eit_reflection_trace,
    npsd_trace,
    occupancy_steady,
)
from .traceio import (
    ExperimentConfig,
    TraceFile,
    atomic_write_text,
    ringdown_to_file,
    spectrum_to_file,
)


def trace_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent stream for trace ``index`` of a dataset."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, index]))


def synth_eit_sweep(config: ExperimentConfig) -> list[SpectrumTrace]:
    """Noisy probe reflection scans, one per configured drive detuning."""
    g = enhanced_coupling(config.g0_pm, config.n_drive)
    out = []
    for i, det_hz in enumerate(config.drive_detunings_hz):
        rng = trace_rng(config.seed, i)
        tr = eit_reflection_trace(
            config.grid_hz, config.cav, config.mech, g, hz_to_rad(det_hz),
            kernel=config.jitter,
            meta={"drive_detuning_hz": det_hz, "n_drive": config.n_drive,
                  "seed_index": i})
        noisy = tr.values + config.noise_sigma * rng.standard_normal(
            len(tr.values))
        out.append(SpectrumTrace(tr.freqs, noisy, tr.kind, dict(tr.meta)))
    return out


def synth_ringdown(config: ExperimentConfig, n_drive: float,
                   seed_index: int):
    """One ringdown trace; ``n_drive = 0`` is the dark measurement."""
    rng = trace_rng(config.seed, seed_index)
    gamma_i = config.mech.gamma_i
    if n_drive > 0:
        g = enhanced_coupling(config.g0_pm, n_drive)
        gamma_m = gamma_i + backaction_rate(g, config.cav.kappa_plus)
        a_cav = config.ringdown_cavity_amplitude
    else:
        gamma_m = gamma_i
        a_cav = 0.0
    # Span about ten slow decay constants so the tail is well sampled even
    # under strong back-action damping.
    t_stop = min(config.ringdown_t_stop_s, 10.0 / gamma_m)
    t = np.linspace(0.0, t_stop, config.ringdown_points)
    clean = ringdown_signal(t, a_cav, config.cav.kappa_plus, 1.0, gamma_m)
    sigma = (a_cav + 1.0) / config.ringdown_snr
    power = np.clip(clean + sigma * rng.standard_normal(len(t)), 0.0, None)
    from .dynamics import RingdownTrace
    return RingdownTrace(t, power), gamma_m


def synth_heating(config: ExperimentConfig, seed_index: int):
    """Occupancy-vs-time pulse trace from the three-bath heating model."""
    h = config.heating
    n_drive = float(h.get("n_drive", config.n_drive))
    g = enhanced_coupling(config.g0_pm, n_drive)
    gamma_em = backaction_rate(g, config.cav.kappa_plus)
    params = HeatingParams.with_hot_occupancy(
        gamma_i=config.mech.gamma_i,
        gamma_em=gamma_em,
        gamma_p=hz_to_rad(float(h.get("gamma_p_hz", 50.0))),
        n_bath_m=config.mech.n_bath_m,
        n_hot=float(h.get("n_hot", 8.9)),
        delta_b=float(h.get("delta_b", 0.6)),
        gamma_s=hz_to_rad(float(h.get("gamma_s_hz", 80.0))),
    )
    t = np.linspace(0.0, float(h.get("t_stop_s", 0.015)),
                    int(h.get("points", 301)))
    rng = trace_rng(config.seed, seed_index)
    sigma = float(h.get("noise", 0.1))
    values = heating_closed_form(t, params) + sigma * rng.standard_normal(len(t))
    return t, values, params


def synth_npsd(config: ExperimentConfig, seed_index: int):
    """Noise spectrum around the mechanical sideband at two-photon resonance."""
    p = config.npsd
    n_drive = float(p.get("n_drive", config.n_drive))
    g = enhanced_coupling(config.g0_pm, n_drive)
    span = float(p.get("span_hz", 60e3))
    points = int(p.get("points", 4001))
    center = rad_to_hz(config.mech.omega_m)
    freqs = np.linspace(center - span / 2.0, center + span / 2.0, points)
    tr = npsd_trace(freqs, config.cav, config.mech, g, config.mech.omega_m,
                    kernel=config.jitter,
                    meta={"drive_detuning_hz": center, "n_drive": n_drive,
                          "seed_index": seed_index, "y_unit": "quanta"})
    rng = trace_rng(config.seed, seed_index)
    sigma = float(p.get("noise", config.noise_sigma))
    noisy = tr.values + sigma * rng.standard_normal(len(tr.values))
    return SpectrumTrace(tr.freqs, noisy, tr.kind, dict(tr.meta)), g


def generate_dataset(config: ExperimentConfig, out_dir) -> dict:
    """Write the full synthetic dataset; returns the ground-truth manifest."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    manifest = {
        "seed": int(config.seed),
        "device": {
            "omega_r0_hz": float(rad_to_hz(config.cav.omega_r0)),
            "tunnel_rate_hz": float(rad_to_hz(config.cav.tunnel_rate)),
            "kappa_plus_hz": float(rad_to_hz(config.cav.kappa_plus)),
            "kappa_e_plus_hz": float(rad_to_hz(config.cav.kappa_e_plus)),
            "kappa_minus_hz": float(rad_to_hz(config.cav.kappa_minus)),
            "kappa_e_minus_hz": float(rad_to_hz(config.cav.kappa_e_minus)),
            "n_bath_plus": float(config.cav.n_bath_plus),
        },
        "mech": {
            "omega_m_hz": float(rad_to_hz(config.mech.omega_m)),
            "gamma_i_hz": float(rad_to_hz(config.mech.gamma_i)),
            "n_bath_m": float(config.mech.n_bath_m),
        },
        "coupling": {"g0_pm_hz": float(rad_to_hz(config.g0_pm))},
        "jitter": {"shape": config.jitter.shape.value,
                   "fwhm_hz": float(config.jitter.fwhm_hz)},
        "noise_sigma": float(config.noise_sigma),
    }

    index = 0
    for tr in synth_eit_sweep(config):
        name = f"eit_{index:03d}.txt"
        spectrum_to_file(tr).write(os.path.join(out_dir, name))
        files.append({"file": name, "kind": "reflection",
                      "drive_detuning_hz": float(tr.meta["drive_detuning_hz"]),
                      "n_drive": float(config.n_drive)})
        index += 1

    rd, gamma_m = synth_ringdown(config, 0.0, index)
    name = "ringdown_dark.txt"
    ringdown_to_file(rd, {"n_drive": 0.0, "seed_index": index}).write(
        os.path.join(out_dir, name))
    files.append({"file": name, "kind": "ringdown", "n_drive": 0.0,
                  "gamma_m_hz": float(rad_to_hz(gamma_m))})
    index += 1

    for n_d in config.ringdown_photon_numbers:
        rd, gamma_m = synth_ringdown(config, n_d, index)
        name = f"ringdown_driven_{index:03d}.txt"
        ringdown_to_file(rd, {"n_drive": float(n_d), "seed_index": index}).write(
            os.path.join(out_dir, name))
        files.append({"file": name, "kind": "ringdown", "n_drive": float(n_d),
                      "gamma_m_hz": float(rad_to_hz(gamma_m))})
        index += 1

    t, values, hparams = synth_heating(config, index)
    name = "heating.txt"
    TraceFile({"kind": "heating", "x_unit": "s", "y_unit": "quanta",
               "seed_index": index}, t, values).write(
        os.path.join(out_dir, name))
    files.append({"file": name, "kind": "heating",
                  "n_hot": float(hparams.n_hot),
                  "n_bath_m": float(hparams.n_bath_m),
                  "gamma_hz": float(rad_to_hz(hparams.gamma)),
                  "gamma_s_hz": float(rad_to_hz(hparams.gamma_s)),
                  "delta_b": float(hparams.delta_b)})
    index += 1

    npsd, g = synth_npsd(config, index)
    name = "npsd.txt"
    spectrum_to_file(npsd).write(os.path.join(out_dir, name))
    files.append({"file": name, "kind": "npsd",
                  "n_drive": float(npsd.meta["n_drive"]),
                  "n_m_steady": float(occupancy_steady(config.cav, config.mech, g))})
    index += 1

    manifest["files"] = files
    atomic_write_text(os.path.join(out_dir, "manifest.yaml"),
                      yaml.safe_dump(manifest, sort_keys=False))
    return manifest
