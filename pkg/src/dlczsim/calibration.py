"""Deterministic fits tying the model's free parameters to measured points.

Two fitters: the retrieval-efficiency decay (amplitude and lifetime) and
the CHSH-decay model (zero-delay mixing parameter plus the two visibility
decay constants). Both use a fixed starting grid followed by bounded
least-squares refinement, so repeated runs give identical parameters; the
resulting calibration is stored as JSON and shipped as a package fixture.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import FitConvergenceError
from .model import DecayModel, SourceParams, TSIRELSON_BOUND, retrieval_efficiency


@dataclass(frozen=True)
class DataPoint:
    """One calibration sample: time (s), measured value, standard error."""

    t: float
    value: float
    sigma: float

    def __post_init__(self) -> None:
        if self.t < 0.0:
            raise ValueError("time must be >= 0")
        if not (self.sigma > 0.0):
            raise ValueError("sigma must be positive")


def _decay_shape(t: np.ndarray, tau: float) -> np.ndarray:
    x = t / tau
    return (np.exp(-x * x) + np.exp(-x)) / 2.0


def _best_amplitude(shape: np.ndarray, y: np.ndarray, w: np.ndarray,
                    upper: float = np.inf) -> float:
    denom = float(np.sum(w * shape * shape))
    if denom <= 0.0:
        return 0.0
    return float(np.clip(np.sum(w * shape * y) / denom, 0.0, upper))


@dataclass(frozen=True)
class DecayFit:
    model: DecayModel
    residuals: tuple
    converged: bool


def fit_decay(points: Sequence[DataPoint], max_nfev: int = 400) -> DecayFit:
    """Least-squares fit of the retrieval-efficiency decay law.

    Needs at least three points at distinct times. The amplitude enters
    linearly, so each trial lifetime from a fixed log-spaced grid gets its
    closed-form amplitude before the joint refinement; this keeps the fit
    deterministic and start-point independent.
    """
    points = list(points)
    if len(points) < 3:
        raise ValueError("need at least three calibration points")
    ts = np.array([p.t for p in points])
    if np.unique(ts).size < 3:
        raise ValueError("calibration points must cover three distinct times")
    ys = np.array([p.value for p in points])
    ws = np.array([1.0 / p.sigma ** 2 for p in points])

    span = max(ts.max(), 1e-9)
    taus = np.geomspace(span / 30.0, span * 30.0, 40)
    best = None
    for tau in taus:
        shape = _decay_shape(ts, tau)
        r0 = _best_amplitude(shape, ys, ws, upper=1.0)
        chi2 = float(np.sum(ws * (r0 * shape - ys) ** 2))
        if best is None or chi2 < best[0]:
            best = (chi2, r0, tau)

    def resid(x):
        r0, log_tau = x
        return np.sqrt(ws) * (r0 * _decay_shape(ts, math.exp(log_tau)) - ys)

    sol = least_squares(resid, [best[1], math.log(best[2])],
                        bounds=([0.0, math.log(span / 1e3)],
                                [1.0, math.log(span * 1e3)]),
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    model = DecayModel(r0=float(sol.x[0]), tau0=float(math.exp(sol.x[1])))
    res = tuple(float(v) for v in
                (retrieval_efficiency(ts, model) - ys))
    if not sol.success:
        raise FitConvergenceError("decay fit did not converge",
                                  best=DecayFit(model, res, False))
    return DecayFit(model=model, residuals=res, converged=True)


@dataclass(frozen=True)
class BellFit:
    """Calibrated CHSH-decay parameters with per-point residuals."""

    werner_p0: float
    vis_tau_gauss: float
    vis_tau_exp: float
    residuals: tuple
    converged: bool
    decay_constrained: bool = True


def bell_curve(t, p0: float, tau_g: float, tau_e: float, dm: DecayModel,
               readout_eta: float, p_noise: float):
    """Model CHSH value: Tsirelson bound times mixing times background dilution."""
    t = np.asarray(t, dtype=float)
    q = retrieval_efficiency(t, dm) * readout_eta
    dilution = np.where(q + p_noise > 0.0, q / (q + p_noise), 0.0)
    xg = t / tau_g
    h = (np.exp(-xg * xg) + np.exp(-t / tau_e)) / 2.0
    return TSIRELSON_BOUND * p0 * h * dilution


def fit_bell_model(points: Sequence[DataPoint], dm: DecayModel,
                   readout_eta: float, p_noise: float,
                   max_nfev: int = 600) -> BellFit:
    """Fit the mixing parameter and its two decay constants to CHSH data.

    With points at several distinct times the three parameters are fitted
    jointly from a fixed grid of decay-constant pairs (the mixing parameter
    enters linearly and gets its closed-form value per pair). When every
    point sits at zero delay only the mixing parameter is identifiable; the
    decay constants are then reported unconstrained at their defaults.
    """
    points = list(points)
    if not points:
        raise ValueError("need at least one calibration point")
    ts = np.array([p.t for p in points])
    ys = np.array([p.value for p in points])
    ws = np.array([1.0 / p.sigma ** 2 for p in points])

    q = retrieval_efficiency(ts, dm) * readout_eta
    dilution = np.where(q + p_noise > 0.0, q / (q + p_noise), 0.0)
    scale = TSIRELSON_BOUND * dilution  # S = scale * p0 * h(t)

    if np.all(ts == 0.0):
        # only the zero-delay mixing parameter is identifiable
        p0 = _best_amplitude(scale, ys, ws, upper=1.0)
        res = tuple(float(v) for v in scale * p0 - ys)
        return BellFit(werner_p0=p0, vis_tau_gauss=1.0, vis_tau_exp=1.0,
                       residuals=res, converged=True, decay_constrained=False)

    span = max(ts.max(), 1e-9)
    grid = np.geomspace(span / 20.0, span * 20.0, 14)
    best = None
    for tg in grid:
        for te in grid:
            xg = ts / tg
            h = (np.exp(-xg * xg) + np.exp(-ts / te)) / 2.0
            p0 = _best_amplitude(scale * h, ys, ws, upper=1.0)
            chi2 = float(np.sum(ws * (scale * h * p0 - ys) ** 2))
            if best is None or chi2 < best[0]:
                best = (chi2, p0, tg, te)

    def resid(x):
        p0, ltg, lte = x
        return np.sqrt(ws) * (bell_curve(ts, p0, math.exp(ltg),
                                         math.exp(lte), dm, readout_eta,
                                         p_noise) - ys)

    lo = math.log(span / 1e3)
    hi = math.log(span * 1e3)
    sol = least_squares(resid, [best[1], math.log(best[2]), math.log(best[3])],
                        bounds=([0.0, lo, lo], [1.0, hi, hi]),
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    p0, tg, te = float(sol.x[0]), math.exp(sol.x[1]), math.exp(sol.x[2])
    res = tuple(float(v) for v in
                bell_curve(ts, p0, tg, te, dm, readout_eta, p_noise) - ys)
    fit = BellFit(werner_p0=p0, vis_tau_gauss=tg, vis_tau_exp=te,
                  residuals=res, converged=bool(sol.success))
    if not sol.success:
        raise FitConvergenceError("Bell-model fit did not converge", best=fit)
    return fit


# -- calibration files ------------------------------------------------------

def read_datapoints_csv(path) -> list:
    """Read calibration points from a ``t_s,value,sigma`` CSV file."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["t_s", "value", "sigma"]
        if reader.fieldnames != expected:
            raise ValueError(f"expected CSV header {','.join(expected)!r}, "
                             f"got {reader.fieldnames!r}")
        return [DataPoint(float(row["t_s"]), float(row["value"]),
                          float(row["sigma"])) for row in reader]


def calibration_to_dict(decay: Optional[DecayFit] = None,
                        bell: Optional[BellFit] = None) -> dict:
    out: dict = {}
    if decay is not None:
        out["decay"] = {
            "r0": decay.model.r0,
            "tau0_s": decay.model.tau0,
            "residuals": list(decay.residuals),
        }
    if bell is not None:
        out["bell"] = {
            "werner_p0": bell.werner_p0,
            "vis_tau_gauss_s": bell.vis_tau_gauss,
            "vis_tau_exp_s": bell.vis_tau_exp,
            "residuals": list(bell.residuals),
            "decay_constrained": bell.decay_constrained,
        }
    return out


def write_calibration_json(path, decay: Optional[DecayFit] = None,
                           bell: Optional[BellFit] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(calibration_to_dict(decay, bell), fh, indent=2,
                  sort_keys=True)
        fh.write("\n")


def load_calibration_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def default_calibration() -> dict:
    """Packaged calibration fixture (decay and Bell parameters)."""
    payload = resources.files("dlczsim").joinpath(
        "data/calibration_default.json").read_text(encoding="utf-8")
    return json.loads(payload)


def default_decay_model() -> DecayModel:
    cal = default_calibration()["decay"]
    return DecayModel(r0=cal["r0"], tau0=cal["tau0_s"])


def default_source_params(chi: float = 0.02,
                          p_noise: float = 1e-4) -> SourceParams:
    cal = default_calibration()["bell"]
    return SourceParams(chi=chi, werner_p0=cal["werner_p0"],
                        vis_tau_gauss=cal["vis_tau_gauss_s"],
                        vis_tau_exp=cal["vis_tau_exp_s"], p_noise=p_noise)
