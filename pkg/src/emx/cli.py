"""Command-line entry point: ``emx spectrum|synth|fit|design``.

Exit codes are a stable scripting contract: 0 success, 1 input error
(missing/invalid files or options), 2 fit degeneracy.  Output locations
default to ``--out``, then the ``EMX_OUT_DIR`` environment variable, then
the current directory.  All emitted files are plain text (see traceio).
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import os
import sys

import numpy as np
import yaml

from .core import TWO_PI, CavityPair, enhanced_coupling, hz_to_rad, rad_to_hz
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
from .fitting import (
    Convergence,
    FitReport,
    calibrate_occupancy,
    dressed_reflection,
    fit_eit_pipeline,
    fit_g0_slope,
    fit_heating,
    fit_lorentzian,
    fit_ringdown,
    heating_model_curve,
    lorentzian_reflection_abs,
)
from .spectra import backaction_rate, eit_reflection_trace, inverse_response, npsd_trace
from .synth import generate_dataset
from .traceio import (
    ConfigError,
    TraceFile,
    atomic_write_text,
    file_to_ringdown,
    file_to_spectrum,
    load_config,
    spectrum_to_file,
    write_overlay,
    write_report,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_DEGENERATE = 2


class _Parser(argparse.ArgumentParser):
    # Bad usage is an input error (exit 1); 2 is reserved for degenerate fits.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_INPUT)


def _out_dir(args, fallback="."):
    out = args.out or os.environ.get("EMX_OUT_DIR") or fallback
    os.makedirs(out, exist_ok=True)
    return out


def _parse_grid(spec: str):
    parts = spec.split(",")
    if len(parts) != 3:
        raise ConfigError("--grid expects start,stop,points")
    start, stop, points = float(parts[0]), float(parts[1]), int(parts[2])
    if points < 2 or stop <= start:
        raise ConfigError("--grid needs stop > start and points >= 2")
    return np.linspace(start, stop, points)


def cmd_spectrum(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    out = _out_dir(args)
    grid = _parse_grid(args.grid) if args.grid else config.grid_hz
    g = enhanced_coupling(config.g0_pm, config.n_drive)
    written = []
    if args.kind in ("eit", "inverse"):
        for i, det_hz in enumerate(config.drive_detunings_hz):
            tr = eit_reflection_trace(
                grid, config.cav, config.mech, g, hz_to_rad(det_hz),
                kernel=config.jitter,
                meta={"drive_detuning_hz": det_hz, "n_drive": config.n_drive})
            if args.kind == "inverse":
                tr = inverse_response(tr)
            name = f"{args.kind}_{i:03d}.txt"
            spectrum_to_file(tr).write(os.path.join(out, name))
            written.append(name)
    else:
        span = float(config.npsd.get("span_hz", 60e3))
        points = int(config.npsd.get("points", 4001))
        center = rad_to_hz(config.mech.omega_m)
        freqs = np.linspace(center - span / 2, center + span / 2, points)
        tr = npsd_trace(freqs, config.cav, config.mech, g,
                        config.mech.omega_m, kernel=config.jitter,
                        meta={"drive_detuning_hz": center,
                              "n_drive": config.n_drive, "y_unit": "quanta"})
        name = "npsd_model.txt"
        spectrum_to_file(tr).write(os.path.join(out, name))
        written.append(name)
    for name in written:
        print(os.path.join(out, name))
    return EXIT_OK


def cmd_synth(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    out = _out_dir(args)
    manifest = generate_dataset(config, out)
    print(f"wrote {len(manifest['files']) + 1} files to {out}")
    return EXIT_OK


def _load_manifest(dataset):
    path = os.path.join(dataset, "manifest.yaml")
    if not os.path.exists(path):
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def _eit_traces(dataset):
    paths = sorted(glob.glob(os.path.join(dataset, "eit_*.txt")))
    return paths, [file_to_spectrum(TraceFile.read(p)) for p in paths]


def _missing(dataset, what) -> int:
    print(f"error: no {what} found in {dataset}", file=sys.stderr)
    return EXIT_INPUT


def _report_exit(report: FitReport) -> int:
    return EXIT_DEGENERATE if report.convergence is Convergence.DEGENERATE \
        else EXIT_OK


def _fit_lorentzian_cmd(dataset, out) -> int:
    paths, traces = _eit_traces(dataset)
    if not traces:
        return _missing(dataset, "eit_*.txt reflection traces")
    report = fit_lorentzian(traces[0])
    write_report(os.path.join(out, "lorentzian_report.txt"), report,
                 f"lorentzian ({os.path.basename(paths[0])})")
    model = lorentzian_reflection_abs(
        traces[0].freqs, report.value("omega_0_hz"),
        report.value("kappa_hz"), report.value("kappa_e_hz"))
    write_overlay(os.path.join(out, "lorentzian_overlay.txt"),
                  {"kind": "reflection", "columns": "freq_hz data model"},
                  traces[0].freqs, traces[0].values, model)
    return _report_exit(report)


def _fit_eit_cmd(dataset, out) -> int:
    paths, traces = _eit_traces(dataset)
    if len(traces) < 4:
        return _missing(dataset, "at least four eit_*.txt traces")
    report = fit_eit_pipeline(traces)
    write_report(os.path.join(out, "eit_report.txt"), report, "eit pipeline")
    ref = {k: v for name, _, vals in report.stage_log
           for k, v in vals.items() if name == "model_reference"}
    if ref and report.convergence is not Convergence.DEGENERATE:
        tr = traces[int(ref["resonance_trace_index"])]
        model = dressed_reflection(
            tr.freqs, ref["center_hz"], report.value("kappa_plus_hz"),
            report.value("kappa_e_plus_hz"), report.value("g_hz"),
            report.value("gamma_i_hz"), report.value("jitter_fwhm_hz"),
            ref["feature_hz"])
        write_overlay(os.path.join(out, "eit_overlay.txt"),
                      {"kind": "reflection", "columns": "freq_hz data model"},
                      tr.freqs, tr.values, model)
    return _report_exit(report)


def _fit_ringdown_cmd(dataset, out) -> int:
    path = os.path.join(dataset, "ringdown_dark.txt")
    if not os.path.exists(path):
        return _missing(dataset, "ringdown_dark.txt")
    trace = file_to_ringdown(TraceFile.read(path))
    report = fit_ringdown(trace)
    write_report(os.path.join(out, "ringdown_report.txt"), report,
                 "ringdown (dark)")
    if report.convergence is not Convergence.DEGENERATE:
        gamma = report.value("gamma_m_hz") * TWO_PI
        # Amplitude from the slow-tail stage output.
        slow = [s for s in report.stage_log if s[0] == "slow_tail"][0][2]
        model = slow["amplitude"] * np.exp(-gamma * trace.times)
        write_overlay(os.path.join(out, "ringdown_overlay.txt"),
                      {"kind": "ringdown", "columns": "time_s data model"},
                      trace.times, trace.power, model)
    return _report_exit(report)


def _fit_g0slope_cmd(dataset, out, kappa_plus_hz) -> int:
    paths = sorted(glob.glob(os.path.join(dataset, "ringdown_driven_*.txt")))
    if len(paths) < 3:
        return _missing(dataset, "at least three ringdown_driven_*.txt traces")
    if kappa_plus_hz is None:
        manifest = _load_manifest(dataset)
        kappa_plus_hz = (manifest.get("device") or {}).get("kappa_plus_hz")
        if kappa_plus_hz is None:
            print("error: supply --kappa-plus-hz (no manifest device entry)",
                  file=sys.stderr)
            return EXIT_INPUT
    points = []
    for p in paths:
        tf = TraceFile.read(p)
        n_d = float(tf.header["n_drive"])
        rep = fit_ringdown(file_to_ringdown(tf))
        if rep.convergence is Convergence.DEGENERATE:
            print(f"error: ringdown fit degenerate for {p}", file=sys.stderr)
            return EXIT_DEGENERATE
        points.append((n_d, rep.value("gamma_m_hz") * TWO_PI))
    report = fit_g0_slope(points, hz_to_rad(float(kappa_plus_hz)))
    write_report(os.path.join(out, "g0slope_report.txt"), report, "g0 slope")
    pts = np.asarray(points)
    slope = [s for s in report.stage_log if s[0] == "weighted_regression"][0][2]
    model = (slope["intercept_rad_s"] + slope["slope_rad_s"] * pts[:, 0]) / TWO_PI
    write_overlay(os.path.join(out, "g0slope_overlay.txt"),
                  {"kind": "g0slope", "columns": "n_drive gamma_m_hz model_hz"},
                  pts[:, 0], pts[:, 1] / TWO_PI, model)
    return _report_exit(report)


def _fit_occupancy_cmd(dataset, out, gain_db) -> int:
    path = os.path.join(dataset, "npsd.txt")
    if not os.path.exists(path):
        return _missing(dataset, "npsd.txt")
    manifest = _load_manifest(dataset)
    device = manifest.get("device")
    coupling = manifest.get("coupling")
    if not device or not coupling:
        print("error: occupancy pipeline needs manifest.yaml with device and "
              "coupling calibration", file=sys.stderr)
        return EXIT_INPUT
    trace = file_to_spectrum(TraceFile.read(path))
    cav = CavityPair.from_hz(
        device["omega_r0_hz"], device["tunnel_rate_hz"],
        device["kappa_plus_hz"], device["kappa_minus_hz"],
        device["kappa_e_plus_hz"], device["kappa_e_minus_hz"],
        device.get("n_bath_plus", 0.0))
    n_d = float(trace.meta["n_drive"])
    g = enhanced_coupling(hz_to_rad(coupling["g0_pm_hz"]), n_d)
    gamma_em = backaction_rate(g, cav.kappa_plus)
    # Flat background from the outer fifth of the span, then subtract.
    n_edge = max(len(trace.values) // 10, 4)
    background = float(np.median(np.concatenate([trace.values[:n_edge],
                                                 trace.values[-n_edge:]])))
    sub = trace.values - background
    from .spectra import SpectrumTrace
    sub_trace = SpectrumTrace(trace.freqs, sub, trace.kind, dict(trace.meta))
    n_m = calibrate_occupancy(sub_trace, gain_db, gamma_em, cav)
    report = FitReport(
        {"n_m": (float(n_m), float("nan"))}, float("nan"),
        Convergence.CONVERGED,
        [("background_subtraction", {"edge_points": 2 * n_edge},
          {"background_quanta": background}),
         ("area_inversion",
          {"gain_db": gain_db, "gamma_em_hz": rad_to_hz(gamma_em),
           "n_drive": n_d}, {"n_m": float(n_m)})])
    write_report(os.path.join(out, "occupancy_report.txt"), report,
                 "occupancy calibration")
    write_overlay(os.path.join(out, "occupancy_overlay.txt"),
                  {"kind": "npsd", "columns": "freq_hz data background_subtracted"},
                  trace.freqs, trace.values, sub)
    return EXIT_OK


def _fit_heating_cmd(dataset, out) -> int:
    path = os.path.join(dataset, "heating.txt")
    if not os.path.exists(path):
        return _missing(dataset, "heating.txt")
    tf = TraceFile.read(path)
    report = fit_heating(tf.x, tf.y)
    write_report(os.path.join(out, "heating_report.txt"), report, "heating")
    model = heating_model_curve(
        tf.x, report.value("n_bath_m"), report.value("n_hot"),
        report.value("n_delta"), report.value("gamma_hz") * TWO_PI,
        report.value("gamma_s_hz") * TWO_PI)
    write_overlay(os.path.join(out, "heating_overlay.txt"),
                  {"kind": "heating", "columns": "time_s data model"},
                  tf.x, tf.y, model)
    return _report_exit(report)


def cmd_fit(args) -> int:
    dataset = args.dataset
    if not os.path.isdir(dataset):
        print(f"error: dataset directory not found: {dataset}", file=sys.stderr)
        return EXIT_INPUT
    out = _out_dir(args, fallback=dataset)
    if args.pipeline == "lorentzian":
        return _fit_lorentzian_cmd(dataset, out)
    if args.pipeline == "eit":
        return _fit_eit_cmd(dataset, out)
    if args.pipeline == "ringdown":
        return _fit_ringdown_cmd(dataset, out)
    if args.pipeline == "g0slope":
        return _fit_g0slope_cmd(dataset, out, args.kappa_plus_hz)
    if args.pipeline == "occupancy":
        return _fit_occupancy_cmd(dataset, out, args.gain_db)
    return _fit_heating_cmd(dataset, out)


def cmd_design(args) -> int:
    with open(args.config, "r", encoding="utf-8") as f:
        tree = yaml.safe_load(f)
    if not isinstance(tree, dict) or "coil" not in tree:
        raise ConfigError("design config needs a 'coil' section")
    coil = tree["coil"]
    try:
        geom = CoilGeometry(
            wire_width=float(coil["wire_width_nm"]) * 1e-9,
            pitch=float(coil["pitch_nm"]) * 1e-9,
            turns=int(coil["turns"]),
            outer_dim=float(coil["outer_dim_um"]) * 1e-6,
            thickness=float(coil["thickness_nm"]) * 1e-9,
        )
    except KeyError as exc:
        raise ConfigError(f"design config missing coil entry {exc}")
    except ValueError as exc:
        raise ConfigError(f"invalid coil geometry: {exc}")
    inductance = wheeler_inductance(geom)
    lines = [f"inductance_nh: {inductance * 1e9!r}"]

    caps = tree.get("capacitors", {})
    c_s = caps.get("c_stray_ff")
    if c_s is None and coil.get("srf_hz"):
        c_s = stray_capacitance_from_srf(
            inductance, hz_to_rad(float(coil["srf_hz"]))) * 1e15
    if c_s is not None:
        lines.append(f"c_stray_ff: {float(c_s)!r}")
    c_m = caps.get("c_motional_ff")
    if c_m is not None and c_s is not None:
        budget = CapacitorBudget(float(c_m) * 1e-15, float(c_s) * 1e-15)
        eta = participation_ratio(budget)
        omega_r0 = lc_resonance(inductance, budget.c_total)
        lines.append(f"c_total_ff: {budget.c_total * 1e15!r}")
        lines.append(f"participation_ratio: {eta!r}")
        lines.append(f"omega_r0_ghz: {rad_to_hz(omega_r0) / 1e9!r}")
        mech = tree.get("mech", {})
        if mech.get("m_eff_kg") and mech.get("omega_m_hz"):
            x_zpf = zero_point_motion(float(mech["m_eff_kg"]),
                                      hz_to_rad(float(mech["omega_m_hz"])))
            lines.append(f"x_zpf_fm: {x_zpf * 1e15!r}")
            if mech.get("dc_du_f_per_m") is not None:
                g0 = g0_from_circuit(eta, x_zpf, omega_r0,
                                     float(c_m) * 1e-15,
                                     float(mech["dc_du_f_per_m"]))
                lines.append(f"g0_hz: {rad_to_hz(g0)!r}")
    out = _out_dir(args)
    text = "# design report\n" + "\n".join(lines) + "\n"
    atomic_write_text(os.path.join(out, "design_report.txt"), text)
    print(text, end="")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _Parser(prog="emx",
                     description="Two-mode electromechanics toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_spec = sub.add_parser("spectrum", parents=[], help="evaluate forward models")
    p_spec.add_argument("--config", required=True)
    p_spec.add_argument("--kind", choices=["eit", "inverse", "npsd"],
                        default="eit")
    p_spec.add_argument("--out", default=None)
    p_spec.add_argument("--seed", type=int, default=None)
    p_spec.add_argument("--grid", default=None,
                        help="start,stop,points (Hz) overriding the config grid")

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--config", required=True)
    p_synth.add_argument("--out", default=None)
    p_synth.add_argument("--seed", type=int, default=None)

    p_fit = sub.add_parser("fit", help="run a fit pipeline on a dataset")
    p_fit.add_argument("dataset")
    p_fit.add_argument("--pipeline", required=True,
                       choices=["lorentzian", "eit", "ringdown", "g0slope",
                                "occupancy", "heating"])
    p_fit.add_argument("--out", default=None)
    p_fit.add_argument("--kappa-plus-hz", type=float, default=None,
                       help="cavity linewidth for the g0 slope (default: "
                            "manifest device calibration)")
    p_fit.add_argument("--gain-db", type=float, default=0.0,
                       help="amplification between device and analyzer for "
                            "W/Hz noise traces")

    p_des = sub.add_parser("design", help="lumped-element design report")
    p_des.add_argument("--config", required=True)
    p_des.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "spectrum":
            return cmd_spectrum(args)
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "fit":
            return cmd_fit(args)
        return cmd_design(args)
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
