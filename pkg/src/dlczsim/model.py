"""Closed-form model of a cavity-enhanced atom-photon entanglement source.

Pure functions only: retrieval-efficiency decay, detection-chain budgets,
polarization-correlation probabilities for the heralded photon pair, CHSH
statistics, and the intrinsic-retrieval estimators. Everything here is
deterministic and safe to call from any number of threads.

Conventions
-----------
* SI units internally (seconds, meters, Hz); analysis angles in degrees at
  the API surface, radians in the arithmetic.
* The effective two-photon state is a Werner mixture: a maximally entangled
  polarization pair with relative phase ``phase_write + phase_read``, mixed
  with white noise. Its mixing parameter decays in time with the same
  Gaussian-plus-exponential family used for the retrieval efficiency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InsufficientStatisticsError

# Spec'd physical constants: vacuum light speed for cavity arithmetic,
# fiber group velocity for communication times.
SPEED_OF_LIGHT_VACUUM = 2.998e8  # m/s
FIBER_LIGHT_SPEED = 2.0e8  # m/s

TWO_PI = 2.0 * math.pi
TSIRELSON_BOUND = 2.0 * math.sqrt(2.0)


def _check_unit_interval(name: str, value: float, *, lo_open: bool = False,
                         hi_open: bool = False) -> None:
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    if value < 0.0 or value > 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    if lo_open and value == 0.0:
        raise ValueError(f"{name} must be > 0")
    if hi_open and value == 1.0:
        raise ValueError(f"{name} must be < 1")


@dataclass(frozen=True)
class SourceParams:
    """Per-trial source parameters of the write/read entanglement source.

    chi            per-trial probability of creating an entangled pair
    phase_write    relative phase between the two write-out field paths
    phase_read     relative phase between the two readout field paths
    werner_p0      zero-delay mixing parameter of the effective pair state
    vis_tau_gauss  Gaussian visibility-decay constant (s)
    vis_tau_exp    exponential visibility-decay constant (s)
    p_noise        uncorrelated background probability per read pulse
    """

    chi: float
    phase_write: float = 0.0
    phase_read: float = 0.0
    werner_p0: float = 1.0
    vis_tau_gauss: float = 1.0
    vis_tau_exp: float = 1.0
    p_noise: float = 0.0

    def __post_init__(self) -> None:
        _check_unit_interval("chi", self.chi, hi_open=True)
        _check_unit_interval("werner_p0", self.werner_p0)
        _check_unit_interval("p_noise", self.p_noise, hi_open=True)
        for name in ("vis_tau_gauss", "vis_tau_exp"):
            v = getattr(self, name)
            if not (v > 0.0) or not np.isfinite(v):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")
        object.__setattr__(self, "phase_write", self.phase_write % TWO_PI)
        object.__setattr__(self, "phase_read", self.phase_read % TWO_PI)

    @property
    def phase_total(self) -> float:
        """Combined pair phase; zero when the compensator is active."""
        return (self.phase_write + self.phase_read) % TWO_PI


@dataclass(frozen=True)
class DecayModel:
    """Zero-delay intrinsic retrieval efficiency and its decay constant."""

    r0: float
    tau0: float

    def __post_init__(self) -> None:
        _check_unit_interval("r0", self.r0)
        if not (self.tau0 > 0.0) or not np.isfinite(self.tau0):
            raise ValueError(f"tau0 must be positive and finite, got {self.tau0!r}")


@dataclass(frozen=True)
class DetectionChain:
    """Per-stage efficiencies of one detection channel.

    The cavity escape factor is derived from the output-coupler transmission
    and the round-trip loss; the remaining factors multiply directly. The
    frequency-conversion factor defaults to 1 (no telecom interface).
    """

    t_ocm: float
    cavity_loss: float
    eta_smf: float
    eta_filter: float
    eta_mmf: float
    eta_det: float
    eta_fc: float = 1.0

    def __post_init__(self) -> None:
        for name in ("t_ocm", "cavity_loss", "eta_smf", "eta_filter",
                     "eta_mmf", "eta_det", "eta_fc"):
            _check_unit_interval(name, getattr(self, name))
        if self.t_ocm + self.cavity_loss <= 0.0:
            raise ValueError("t_ocm + cavity_loss must be > 0")


@dataclass(frozen=True)
class MeasurementSettings:
    """Polarization analysis angles for the two detection channels, degrees."""

    theta_s: float
    theta_as: float

    def __post_init__(self) -> None:
        for name in ("theta_s", "theta_as"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")


#: CHSH settings used throughout: (theta_s, theta_as) in degrees, ordered as
#: (a,b), (a,b'), (a',b), (a',b').
CANONICAL_SETTINGS = (
    MeasurementSettings(0.0, 22.5),
    MeasurementSettings(0.0, 67.5),
    MeasurementSettings(45.0, 22.5),
    MeasurementSettings(45.0, 67.5),
)


@dataclass(frozen=True)
class CoincidenceCounts:
    """Detector-pair coincidences plus herald singles for one angle setting.

    ``c13`` counts coincidences between the herald detector D1 and readout
    detector D3, and so on; ``s1``/``s2`` are the herald singles. At most one
    herald per trial, so ``s1 + s2 <= n_trials``.
    """

    c13: int
    c14: int
    c23: int
    c24: int
    s1: int
    s2: int
    n_trials: int = -1

    def __post_init__(self) -> None:
        fields = ("c13", "c14", "c23", "c24", "s1", "s2")
        for name in fields:
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.n_trials == -1:
            object.__setattr__(self, "n_trials", self.s1 + self.s2)
        if not isinstance(self.n_trials, (int, np.integer)) or self.n_trials < 0:
            raise ValueError(f"n_trials must be a non-negative integer, got {self.n_trials!r}")
        object.__setattr__(self, "n_trials", int(self.n_trials))
        if self.c13 + self.c14 > self.s1:
            raise ValueError("c13 + c14 exceeds the D1 herald singles")
        if self.c23 + self.c24 > self.s2:
            raise ValueError("c23 + c24 exceeds the D2 herald singles")
        if self.s1 + self.s2 > self.n_trials:
            raise ValueError("s1 + s2 exceeds n_trials (one herald at most per trial)")

    @property
    def coincidences(self) -> int:
        return self.c13 + self.c14 + self.c23 + self.c24

    def scaled(self, k: int) -> "CoincidenceCounts":
        """Counts with every entry multiplied by a positive integer factor."""
        if k <= 0:
            raise ValueError("scale factor must be positive")
        return CoincidenceCounts(self.c13 * k, self.c14 * k, self.c23 * k,
                                 self.c24 * k, self.s1 * k, self.s2 * k,
                                 self.n_trials * k)


@dataclass(frozen=True)
class CavityParams:
    """Ring-cavity geometry; the stated length is the full round trip."""

    length: float
    finesse_left: float = 16.9
    finesse_right: float = 17.0

    def __post_init__(self) -> None:
        if not (self.length > 0.0):
            raise ValueError(f"cavity length must be positive, got {self.length!r}")
        for name in ("finesse_left", "finesse_right"):
            if not (getattr(self, name) > 1.0):
                raise ValueError(f"{name} must exceed 1")


def retrieval_efficiency(t, model: DecayModel):
    """Intrinsic retrieval efficiency after a storage time ``t`` (seconds).

    Evaluates ``r0 * (exp(-t^2/tau0^2) + exp(-t/tau0)) / 2``; accepts a
    scalar or an array of times. Monotone non-increasing, bounded by
    ``[0, r0]``. Negative times are rejected.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0) or not np.all(np.isfinite(t_arr)):
        raise ValueError("storage time must be finite and >= 0")
    x = t_arr / model.tau0
    out = model.r0 * (np.exp(-x * x) + np.exp(-x)) / 2.0
    return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out


def escape_efficiency(chain: DetectionChain) -> float:
    """Probability that an intracavity photon leaves through the output coupler."""
    denom = chain.t_ocm + chain.cavity_loss
    if denom <= 0.0:
        raise ValueError("t_ocm + cavity_loss must be > 0")
    return chain.t_ocm / denom


def total_detection_efficiency(chain: DetectionChain) -> float:
    """End-to-end detection efficiency of one channel.

    Product of the cavity escape factor, fiber couplings, spectral filter,
    detector quantum efficiency, and (when modeling a telecom node) the
    frequency-conversion efficiency.
    """
    return (escape_efficiency(chain) * chain.eta_smf * chain.eta_filter
            * chain.eta_mmf * chain.eta_det * chain.eta_fc)


def visibility(sp: SourceParams, t: float) -> float:
    """Werner mixing parameter of the pair state after a storage time ``t``."""
    if t < 0.0:
        raise ValueError("storage time must be >= 0")
    xg = t / sp.vis_tau_gauss
    xe = t / sp.vis_tau_exp
    return sp.werner_p0 * (math.exp(-xg * xg) + math.exp(-xe)) / 2.0


def _correlation_kernel(settings: MeasurementSettings, phase: float) -> float:
    # <A(theta_s) B(theta_as)> for the pure pair state with relative phase.
    ts = math.radians(settings.theta_s)
    tas = math.radians(settings.theta_as)
    return (math.cos(2 * ts) * math.cos(2 * tas)
            + math.cos(phase) * math.sin(2 * ts) * math.sin(2 * tas))


class JointProbabilities(NamedTuple):
    """Per-herald probabilities of the four detector-pair coincidences."""

    p13: float
    p14: float
    p23: float
    p24: float

    @property
    def total(self) -> float:
        return self.p13 + self.p14 + self.p23 + self.p24


def werner_joint_projections(p: float, settings: MeasurementSettings,
                             phase: float = 0.0) -> JointProbabilities:
    """Joint projection probabilities of a Werner pair onto the four outcomes.

    ``p`` is the mixing parameter; the four entries sum to 1. Computed in
    closed form; the brute-force density-matrix route lives in the tests.
    """
    _check_unit_interval("werner mixing parameter", p)
    c = _correlation_kernel(settings, phase)
    same = (1.0 + p * c) / 4.0
    cross = (1.0 - p * c) / 4.0
    return JointProbabilities(same, cross, cross, same)


def coincidence_probabilities(sp: SourceParams, dm: DecayModel, t: float,
                              readout_eta: float,
                              settings: MeasurementSettings) -> JointProbabilities:
    """Per-herald coincidence probabilities at one angle setting.

    Combines the Werner-state projections (scaled by the probability that
    the stored excitation is retrieved and detected) with a flat background
    that fires within the read gate. Each entry is clipped to [0, 1]; the
    four entries sum to at most ``q_s + p_noise``.
    """
    _check_unit_interval("readout_eta", readout_eta)
    q_s = retrieval_efficiency(t, dm) * readout_eta
    w = werner_joint_projections(visibility(sp, t), settings, sp.phase_total)
    bg = sp.p_noise / 4.0  # (p_noise / 2 per readout detector) x (1/2 herald marginal)
    return JointProbabilities(*(min(1.0, q_s * wij + bg) for wij in w))


def expected_correlation(sp: SourceParams, dm: DecayModel, t: float,
                         readout_eta: float,
                         settings: MeasurementSettings) -> float:
    """Correlation function implied by the model at one angle setting."""
    p = coincidence_probabilities(sp, dm, t, readout_eta, settings)
    denom = p.total
    if denom <= 0.0:
        raise InsufficientStatisticsError(
            "model assigns zero probability to every coincidence outcome")
    return (p.p13 + p.p24 - p.p14 - p.p23) / denom


def expected_bell(sp: SourceParams, dm: DecayModel, t: float,
                  readout_eta: float,
                  settings=CANONICAL_SETTINGS) -> float:
    """CHSH parameter implied by the model at the four given settings."""
    e = [expected_correlation(sp, dm, t, readout_eta, s) for s in settings]
    return bell_parameter(*e)


def correlation_E(counts: CoincidenceCounts) -> float:
    """Polarization correlation function from measured coincidences.

    ``(c13 + c24 - c14 - c23) / (c13 + c24 + c14 + c23)``; raises
    InsufficientStatisticsError when every coincidence count is zero rather
    than silently returning 0.
    """
    total = counts.coincidences
    if total <= 0:
        raise InsufficientStatisticsError(
            "all four coincidence counts are zero; E is undefined")
    return (counts.c13 + counts.c24 - counts.c14 - counts.c23) / total


def bell_parameter(e1: float, e2: float, e3: float, e4: float) -> float:
    """CHSH combination ``|e1 - e2 + e3 + e4|`` of four correlation values."""
    for e in (e1, e2, e3, e4):
        if abs(e) > 1.0 + 1e-12:
            raise ValueError(f"correlation value {e!r} lies outside [-1, 1]")
    return abs(e1 - e2 + e3 + e4)


def fidelity_from_bell(s: float) -> float:
    """Entanglement fidelity of a Werner pair inferred from its CHSH value.

    Inverts the one-parameter family linking the mixing parameter to both
    quantities: S = 2*sqrt(2)*p and F = (3p + 1)/4, hence
    F = (3*S/(2*sqrt(2)) + 1)/4. Values above the Tsirelson bound are
    rejected.
    """
    if s < 0.0:
        raise ValueError("Bell parameter must be >= 0")
    if s > TSIRELSON_BOUND + 1e-12:
        raise ValueError(f"Bell parameter {s!r} exceeds the Tsirelson bound")
    return (3.0 * s / TSIRELSON_BOUND + 1.0) / 4.0


class Estimate(NamedTuple):
    """Point estimate with a 1-sigma standard error."""

    value: float
    error: float


@dataclass(frozen=True)
class RetrievalEstimates:
    """Intrinsic retrieval efficiencies for the qubit and each memory mode."""

    qubit: Estimate
    left: Estimate
    right: Estimate


def _ratio_estimate(x: int, singles: int, eta_td: float) -> Estimate:
    # Poisson propagation; a zero numerator gets unit absolute uncertainty
    # so degenerate datasets still report a finite error bar.
    value = x / (eta_td * singles)
    sx = math.sqrt(x) if x > 0 else 1.0
    var = sx * sx + (x / singles) ** 2 * singles
    return Estimate(value, math.sqrt(var) / (eta_td * singles))


def estimate_intrinsic_retrieval(counts: CoincidenceCounts,
                                 eta_td: float) -> RetrievalEstimates:
    """Intrinsic retrieval efficiencies with detection losses divided out.

    Expects counts taken with both analysis angles at 0 degrees. The qubit
    estimate pools both polarization-matched coincidence channels; the
    per-mode estimates use one channel each. Errors are Poissonian.
    """
    if eta_td <= 0.0 or eta_td > 1.0:
        raise ValueError(f"eta_td must lie in (0, 1], got {eta_td!r}")
    if counts.s1 <= 0 or counts.s2 <= 0:
        raise InsufficientStatisticsError(
            "herald singles are zero; retrieval efficiency is undefined")
    return RetrievalEstimates(
        qubit=_ratio_estimate(counts.c13 + counts.c24, counts.s1 + counts.s2, eta_td),
        left=_ratio_estimate(counts.c13, counts.s1, eta_td),
        right=_ratio_estimate(counts.c24, counts.s2, eta_td),
    )


def cavity_fsr(cav: CavityParams) -> float:
    """Free spectral range (Hz) of the ring cavity: c over the round trip."""
    return SPEED_OF_LIGHT_VACUUM / cav.length
