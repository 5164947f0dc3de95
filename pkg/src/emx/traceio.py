"""Plain-text data files and the experiment configuration.

Trace files are UTF-8 with ``#``-prefixed ``key = value`` header lines and a
tab-separated two-column numeric body.  Floats are written with ``repr`` so
parsing returns bit-identical values and serialize/parse round-trips exactly;
unknown header keys pass through untouched.  Fit reports are written as a
human-readable ``key: value`` block format.  The experiment configuration is
a single YAML file; every physical value is ordinary frequency/power with
the unit in the key name (``_hz``, ``_dbm``, ``_db``, ``_s``).
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
import yaml

from .core import CavityPair, DriveConfig, MechMode, hz_to_rad
from .dynamics import RingdownTrace
from .fitting import FitReport
from .spectra import JitterKernel, SpectrumKind, SpectrumTrace


class ConfigError(ValueError):
    """Bad or missing configuration entry; message names the key path."""


@dataclass
class TraceFile:
    """In-memory image of a two-column trace file."""

    header: dict
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise ValueError("x and y must be 1-D arrays of equal length")
        self.header = {str(k): str(v) for k, v in self.header.items()}

    def __eq__(self, other):
        if not isinstance(other, TraceFile):
            return NotImplemented
        return (self.header == other.header
                and self.x.shape == other.x.shape
                and np.array_equal(self.x, other.x)
                and np.array_equal(self.y, other.y))

    def serialize(self) -> str:
        lines = [f"# {k} = {v}" for k, v in self.header.items()]
        lines += [f"{float(v_x)!r}\t{float(v_y)!r}"
                  for v_x, v_y in zip(self.x, self.y)]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "TraceFile":
        header = {}
        xs, ys = [], []
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" not in body:
                    raise ValueError(f"line {lineno}: header line without '='")
                key, _, value = body.partition("=")
                header[key.strip()] = value.strip()
            else:
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ValueError(f"line {lineno}: expected two columns")
                xs.append(float(parts[0]))
                ys.append(float(parts[1]))
        return cls(header, np.array(xs), np.array(ys))

    def write(self, path):
        atomic_write_text(path, self.serialize())

    @classmethod
    def read(cls, path) -> "TraceFile":
        with open(path, "r", encoding="utf-8") as f:
            return cls.parse(f.read())


def atomic_write_text(path, text: str):
    """Write-then-rename so readers never see a partial file."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def spectrum_to_file(trace: SpectrumTrace) -> TraceFile:
    header = {"kind": trace.kind.value, "x_unit": "Hz"}
    header["y_unit"] = trace.meta.get(
        "y_unit", "dimensionless" if trace.kind is not SpectrumKind.NPSD
        else "quanta")
    for k, v in trace.meta.items():
        if k not in header:
            header[k] = v
    return TraceFile(header, trace.freqs, trace.values)


def file_to_spectrum(tf: TraceFile) -> SpectrumTrace:
    kind = SpectrumKind(tf.header["kind"])
    meta = {k: _maybe_float(v) for k, v in tf.header.items()
            if k not in ("kind", "x_unit")}
    return SpectrumTrace(tf.x, tf.y, kind, meta)


def ringdown_to_file(trace: RingdownTrace, meta: dict | None = None) -> TraceFile:
    header = {"kind": "ringdown", "x_unit": "s", "y_unit": "quanta"}
    header.update(meta or {})
    return TraceFile(header, trace.times, trace.power)


def file_to_ringdown(tf: TraceFile) -> RingdownTrace:
    if tf.header.get("kind") != "ringdown":
        raise ValueError("not a ringdown trace file")
    return RingdownTrace(tf.x, tf.y)


def _maybe_float(s):
    try:
        return float(s)
    except (TypeError, ValueError):
        return s


def format_report(report: FitReport, title: str) -> str:
    """Human-readable key: value block rendering of a fit report."""
    lines = [f"# fit report: {title}",
             f"convergence: {report.convergence.value}",
             f"residual_norm: {float(report.residual_norm)!r}",
             "", "[params]"]
    for name, (value, err) in report.params.items():
        lines.append(f"{name}: {float(value)!r} +/- {float(err)!r}")
    for stage, inputs, outputs in report.stage_log:
        lines.append("")
        lines.append(f"[stage {stage}]")
        for k, v in inputs.items():
            lines.append(f"in.{k}: {v}")
        for k, v in outputs.items():
            lines.append(f"out.{k}: {v}")
    return "\n".join(lines) + "\n"


def write_report(path, report: FitReport, title: str):
    atomic_write_text(path, format_report(report, title))


def write_overlay(path, header: dict, x, data, model):
    """Three-column plot file: axis, measured values, model values."""
    x = np.asarray(x, float)
    data = np.asarray(data, float)
    model = np.asarray(model, float)
    lines = [f"# {k} = {v}" for k, v in header.items()]
    lines += [f"{float(a)!r}\t{float(b)!r}\t{float(c)!r}"
              for a, b, c in zip(x, data, model)]
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Validated device/drive/synthesis settings, converted to model units."""

    cav: CavityPair
    mech: MechMode
    g0_pm: float                       # rad/s
    drive_detunings_hz: tuple          # Delta_r+,d sweep for the probe scans
    n_drive: float                     # pump photons for the probe scans
    grid_start_hz: float
    grid_stop_hz: float
    grid_points: int
    jitter: JitterKernel
    noise_sigma: float
    seed: int
    ringdown_photon_numbers: tuple = ()
    ringdown_t_stop_s: float = 0.02
    ringdown_points: int = 2001
    ringdown_snr: float = 100.0
    ringdown_cavity_amplitude: float = 0.3
    heating: dict = field(default_factory=dict)
    npsd: dict = field(default_factory=dict)

    @property
    def grid_hz(self) -> np.ndarray:
        return np.linspace(self.grid_start_hz, self.grid_stop_hz,
                           self.grid_points)

    def drive_for(self, detuning_plus_hz: float,
                  power_dbm: float | None = None,
                  attenuation_db: float = -76.0) -> DriveConfig:
        omega_d = self.cav.omega_plus - hz_to_rad(detuning_plus_hz)
        if power_dbm is None:
            power_dbm = 0.0
        return DriveConfig(power_in_dbm=power_dbm,
                           attenuation_db=attenuation_db,
                           omega_d=omega_d, g0_pm=self.g0_pm)


def _get(tree, path, default=None, required=False):
    node = tree
    walked = []
    for part in path.split("."):
        walked.append(part)
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ConfigError(f"missing config entry '{'.'.join(walked)}'")
            return default
        node = node[part]
    return node


def _number(tree, path, default=None, required=False, minimum=None):
    raw = _get(tree, path, default=default, required=required)
    if raw is None:
        return None
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"config entry '{path}' is not a number: {raw!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"config entry '{path}' must be >= {minimum}")
    return value


def parse_config(tree: dict) -> ExperimentConfig:
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping")
    cav = CavityPair.from_hz(
        omega_r0_hz=_number(tree, "device.omega_r0_hz", required=True),
        tunnel_rate_hz=_number(tree, "device.tunnel_rate_hz", required=True),
        kappa_plus_hz=_number(tree, "device.kappa_plus_hz", required=True),
        kappa_minus_hz=_number(tree, "device.kappa_minus_hz", required=True),
        kappa_e_plus_hz=_number(tree, "device.kappa_e_plus_hz", required=True),
        kappa_e_minus_hz=_number(tree, "device.kappa_e_minus_hz", required=True),
        n_bath_plus=_number(tree, "device.n_bath_plus", default=0.0, minimum=0.0),
    )
    mech = MechMode.from_hz(
        omega_m_hz=_number(tree, "mech.omega_m_hz", required=True),
        gamma_i_hz=_number(tree, "mech.gamma_i_hz", required=True),
        n_bath_m=_number(tree, "mech.n_bath_m", default=0.0, minimum=0.0),
    )
    dets = _get(tree, "drive.detunings_plus_hz", required=True)
    if not isinstance(dets, (list, tuple)) or len(dets) < 1:
        raise ConfigError("config entry 'drive.detunings_plus_hz' must be a "
                          "non-empty list")
    try:
        dets = tuple(float(d) for d in dets)
    except (TypeError, ValueError):
        raise ConfigError("config entry 'drive.detunings_plus_hz' has a "
                          "non-numeric element")
    n_drive = _number(tree, "drive.n_photons", default=None, minimum=0.0)
    if n_drive is None:
        power_dbm = _number(tree, "drive.power_dbm", required=True)
        attenuation_db = _number(tree, "drive.attenuation_db", required=True)
        if attenuation_db > 0:
            raise ConfigError("config entry 'drive.attenuation_db' must be "
                              "negative (it attenuates)")
        from .core import intracavity_photons
        drive = DriveConfig(power_dbm, attenuation_db,
                            cav.omega_plus - hz_to_rad(dets[0]),
                            hz_to_rad(_number(tree, "coupling.g0_pm_hz",
                                              required=True)))
        n_drive = intracavity_photons(drive, cav)
    shape = _get(tree, "jitter.shape", default="gaussian")
    jitter = JitterKernel(_number(tree, "jitter.fwhm_hz", default=0.0,
                                  minimum=0.0), shape)
    points = _get(tree, "grid.points", default=6001)
    if int(points) < 2:
        raise ConfigError("config entry 'grid.points' must be >= 2")
    rd_nd = _get(tree, "ringdown.photon_numbers", default=())
    try:
        rd_nd = tuple(float(x) for x in rd_nd)
    except (TypeError, ValueError):
        raise ConfigError("config entry 'ringdown.photon_numbers' has a "
                          "non-numeric element")
    return ExperimentConfig(
        cav=cav,
        mech=mech,
        g0_pm=hz_to_rad(_number(tree, "coupling.g0_pm_hz", required=True,
                                minimum=0.0)),
        drive_detunings_hz=dets,
        n_drive=n_drive,
        grid_start_hz=_number(tree, "grid.start_hz", required=True),
        grid_stop_hz=_number(tree, "grid.stop_hz", required=True),
        grid_points=int(points),
        jitter=jitter,
        noise_sigma=_number(tree, "noise.sigma", default=0.0, minimum=0.0),
        seed=int(_get(tree, "seed", default=0)),
        ringdown_photon_numbers=rd_nd,
        ringdown_t_stop_s=_number(tree, "ringdown.t_stop_s", default=0.02,
                                  minimum=0.0),
        ringdown_points=int(_get(tree, "ringdown.points", default=2001)),
        ringdown_snr=_number(tree, "ringdown.snr", default=100.0, minimum=1.0),
        ringdown_cavity_amplitude=_number(tree, "ringdown.cavity_amplitude",
                                          default=0.3, minimum=0.0),
        heating=_get(tree, "heating", default={}) or {},
        npsd=_get(tree, "npsd", default={}) or {},
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            tree = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}")
    return parse_config(tree)
