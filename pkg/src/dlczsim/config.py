"""Strict section-structured run configuration for the command line.

INI-style files parsed with configparser. Every key carries its unit in the
name; values are converted to SI on load. Unknown sections or keys are
fatal, so a figure-reproduction recipe can't silently drift. All values are
validated through the domain types before any command runs.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

from .calibration import default_calibration, load_calibration_json
from .model import DecayModel, DetectionChain, SourceParams, total_detection_efficiency
from .montecarlo import SeedSpec, SequenceConfig
from .repeater import RepeaterParams

_DETECTION_KEYS = ("t_ocm", "cavity_loss", "eta_smf", "eta_filter",
                   "eta_mmf", "eta_det", "eta_fc")

# schema: section -> key -> (converter to SI / parsed value)
_SCHEMA = {
    "source": {
        "chi": float,
        "p_noise": float,
        "werner_p0": float,
        "vis_tau_gauss_ms": float,
        "vis_tau_exp_ms": float,
        "phase_write_rad": float,
        "phase_read_rad": float,
        "calibration_json": str,
    },
    "decay": {"r0": float, "tau0_ms": float},
    "detection.write": {k: float for k in _DETECTION_KEYS},
    "detection.read": {k: float for k in _DETECTION_KEYS},
    "sequence": {
        "prep_ms": float,
        "run_ms": float,
        "write_ns": float,
        "read_ns": float,
        "clean_ns": float,
        "post_read_gap_ns": float,
        "trial_period_ns": float,
        "storage_us": float,
    },
    "repeater": {
        "nest_level": int,
        "mode_count": int,
        "memory_lifetime_s": float,
        "eta_td": float,
        "eta_fc": float,
        "chi": float,
        "l_att_km": float,
        "r0": float,
        "r0_compare": float,
        "fiber_speed_m_per_s": float,
        "link_convention": str,
        "pr_exponent": str,
    },
    "output": {"seed": int},
}


def _defaults() -> dict:
    cal = default_calibration()
    det = dict(t_ocm=0.20, cavity_loss=0.13, eta_smf=0.71, eta_filter=0.56,
               eta_mmf=0.92, eta_det=0.68, eta_fc=1.0)
    return {
        "source": {
            "chi": 0.02,
            "p_noise": 1e-4,
            "werner_p0": cal["bell"]["werner_p0"],
            "vis_tau_gauss_ms": cal["bell"]["vis_tau_gauss_s"] * 1e3,
            "vis_tau_exp_ms": cal["bell"]["vis_tau_exp_s"] * 1e3,
            "phase_write_rad": 0.0,
            "phase_read_rad": 0.0,
            "calibration_json": "",
        },
        "decay": {"r0": cal["decay"]["r0"],
                  "tau0_ms": cal["decay"]["tau0_s"] * 1e3},
        "detection.write": dict(det),
        "detection.read": dict(det),
        "sequence": {
            "prep_ms": 42.0, "run_ms": 8.0, "write_ns": 300.0,
            "read_ns": 300.0, "clean_ns": 200.0, "post_read_gap_ns": 1300.0,
            "trial_period_ns": 2000.0, "storage_us": 1.0,
        },
        "repeater": {
            "nest_level": 4, "mode_count": 1000, "memory_lifetime_s": 16.0,
            "eta_td": 0.90, "eta_fc": 0.33, "chi": 0.02, "l_att_km": 22.0,
            "r0": 0.77, "r0_compare": 0.58, "fiber_speed_m_per_s": 2.0e8,
            "link_convention": "L_over_n",
            "pr_exponent": "total_elapsed_time",
        },
        "output": {"seed": 20260808},
    }


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration consumed by the CLI commands."""

    source: SourceParams
    decay: DecayModel
    detection_write: DetectionChain
    detection_read: DetectionChain
    sequence: SequenceConfig
    repeater: RepeaterParams
    repeater_r0_compare: float
    seed: SeedSpec

    @property
    def write_eta(self) -> float:
        return total_detection_efficiency(self.detection_write)

    @property
    def read_eta(self) -> float:
        return total_detection_efficiency(self.detection_read)


def _parse_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise ValueError(f"config file {path!r} not found or unreadable")
    raw: dict = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"unknown config section [{section}]")
        raw[section] = {}
        for key, text in parser[section].items():
            if key not in _SCHEMA[section]:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            conv = _SCHEMA[section][key]
            try:
                raw[section][key] = conv(text)
            except ValueError as exc:
                raise ValueError(
                    f"bad value for [{section}] {key}: {text!r}") from exc
    return raw


def load_config(path=None, seed_override=None) -> RunConfig:
    """Build a validated RunConfig from defaults plus an optional file.

    ``calibration_json`` in [source], when set, loads fitted source and
    decay parameters from a calibration file; explicit keys in the config
    file still win over it.
    """
    cfg = _defaults()
    overrides: dict = {}
    if path is not None:
        overrides = _parse_file(path)

    cal_path = overrides.get("source", {}).get("calibration_json", "")
    if cal_path:
        cal = load_calibration_json(cal_path)
        if "bell" in cal:
            cfg["source"]["werner_p0"] = cal["bell"]["werner_p0"]
            cfg["source"]["vis_tau_gauss_ms"] = cal["bell"]["vis_tau_gauss_s"] * 1e3
            cfg["source"]["vis_tau_exp_ms"] = cal["bell"]["vis_tau_exp_s"] * 1e3
        if "decay" in cal:
            cfg["decay"]["r0"] = cal["decay"]["r0"]
            cfg["decay"]["tau0_ms"] = cal["decay"]["tau0_s"] * 1e3

    for section, kv in overrides.items():
        for key, value in kv.items():
            if key != "calibration_json":
                cfg[section][key] = value

    if seed_override is not None:
        cfg["output"]["seed"] = seed_override

    src = cfg["source"]
    seq = cfg["sequence"]
    rep = cfg["repeater"]
    return RunConfig(
        source=SourceParams(
            chi=src["chi"], p_noise=src["p_noise"],
            werner_p0=src["werner_p0"],
            vis_tau_gauss=src["vis_tau_gauss_ms"] * 1e-3,
            vis_tau_exp=src["vis_tau_exp_ms"] * 1e-3,
            phase_write=src["phase_write_rad"],
            phase_read=src["phase_read_rad"]),
        decay=DecayModel(r0=cfg["decay"]["r0"],
                         tau0=cfg["decay"]["tau0_ms"] * 1e-3),
        detection_write=DetectionChain(**cfg["detection.write"]),
        detection_read=DetectionChain(**cfg["detection.read"]),
        sequence=SequenceConfig(
            prep_duration=seq["prep_ms"] * 1e-3,
            run_duration=seq["run_ms"] * 1e-3,
            write_pulse=seq["write_ns"] * 1e-9,
            read_pulse=seq["read_ns"] * 1e-9,
            clean_pulse=seq["clean_ns"] * 1e-9,
            post_read_gap=seq["post_read_gap_ns"] * 1e-9,
            trial_period=seq["trial_period_ns"] * 1e-9,
            storage_time=seq["storage_us"] * 1e-6),
        repeater=RepeaterParams(
            nest_level=rep["nest_level"], mode_count=rep["mode_count"],
            memory_lifetime=rep["memory_lifetime_s"], eta_td=rep["eta_td"],
            eta_fc=rep["eta_fc"], chi=rep["chi"],
            attenuation_length=rep["l_att_km"], r0=rep["r0"],
            fiber_speed=rep["fiber_speed_m_per_s"],
            link_convention=rep["link_convention"],
            pr_exponent=rep["pr_exponent"]),
        repeater_r0_compare=rep["r0_compare"],
        seed=SeedSpec(cfg["output"]["seed"]),
    )
