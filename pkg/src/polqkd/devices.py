"""Parametric instrument models: source, modulators, fiber with drift, detector.

The detector is calibrated directly in count-rate space.  Optical power is
tracked separately (see :mod:`polqkd.optics`) for the link-budget scenario
only; no efficiency constant links the two.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from polqkd.errors import ContractViolation, InvalidParameter
from polqkd.optics import (
    PolarizationPhase,
    PowerLevel,
    db_to_linear,
    fiber_loss_db,
    pbs_h_probability,
    pbs_v_probability,
    phase_for_voltage,
    sample_poisson,
)

OPEN = "open"
CLOSED = "closed"


@dataclass(frozen=True)
class SourceSpec:
    cw_power: PowerLevel = PowerLevel(0.0)
    wavelength_nm: float = 1550.0

    def __post_init__(self):
        if not self.wavelength_nm > 0:
            raise InvalidParameter("source.wavelength_nm must be > 0")


@dataclass(frozen=True)
class ModulatorSpec:
    """Intensity modulator gate.

    The gate is open for the first ``gate_open_fraction`` of every clock
    cycle (clock signal low) and suppresses light by ``extinction_db``
    for the rest.
    """

    extinction_db: float = 30.0
    gate_open_fraction: float = 0.5

    def __post_init__(self):
        if not self.extinction_db > 0:
            raise InvalidParameter("modulator.extinction_db must be > 0")
        if not 0 < self.gate_open_fraction < 1:
            raise InvalidParameter("modulator.gate_open_fraction must be in (0, 1)")


@dataclass(frozen=True)
class DetectorSpec:
    """H-arm count rates (counts/s) at the calibrated baseline.

    ``signal_rate_h`` is seen for a pure H pulse, ``leak_rate_v`` for a V
    pulse (residual H/V fidelity error plus dark counts) and ``dark_rate``
    with the gate closed.
    """

    signal_rate_h: float = 2.0e4
    leak_rate_v: float = 7.5e3
    dark_rate: float = 2.5e3

    def __post_init__(self):
        if not (self.signal_rate_h > self.leak_rate_v > self.dark_rate >= 0):
            raise InvalidParameter(
                "detector rates must satisfy signal_rate_h > leak_rate_v > dark_rate >= 0, "
                f"got ({self.signal_rate_h}, {self.leak_rate_v}, {self.dark_rate})"
            )


@dataclass(frozen=True)
class DriftProcess:
    """Polarization drift: zero until ``t_stable_s``, then a clamped Wiener walk."""

    t_stable_s: float = 150.0
    sigma_rad_per_sqrt_s: float = 2.0e-2
    theta_max: float = math.pi / 4

    def __post_init__(self):
        if self.t_stable_s < 0:
            raise InvalidParameter("drift.t_stable_s must be >= 0")
        if self.sigma_rad_per_sqrt_s < 0:
            raise InvalidParameter("drift.sigma_rad_per_sqrt_s must be >= 0")
        if not self.theta_max > 0:
            raise InvalidParameter("drift.theta_max must be > 0")


@dataclass(frozen=True)
class ChannelSpec:
    """Fiber link.

    Detector rates are calibrated at ``reference_length_km``; any other
    length shifts them by the difference in fiber loss.
    """

    length_km: float = 5.0
    alpha_db_per_km: float = 0.141
    drift: DriftProcess = field(default_factory=DriftProcess)
    reference_length_km: float = 5.0

    def __post_init__(self):
        if self.length_km < 0:
            raise InvalidParameter("channel.length_km must be >= 0")
        if self.alpha_db_per_km < 0:
            raise InvalidParameter("channel.alpha_db_per_km must be >= 0")
        if self.reference_length_km < 0:
            raise InvalidParameter("channel.reference_length_km must be >= 0")

    @property
    def loss_db(self) -> float:
        return fiber_loss_db(self.length_km, self.alpha_db_per_km)

    @property
    def extra_db(self) -> float:
        """Loss relative to the calibrated baseline (negative if shorter)."""
        return self.alpha_db_per_km * (self.length_km - self.reference_length_km)


@dataclass(frozen=True)
class OpticalPulse:
    emission_time_s: float
    rate: float
    phi: PolarizationPhase = PolarizationPhase(0.0)


def im_transmission(t: float, clock, spec: ModulatorSpec) -> float:
    """Power transmission of the intensity modulator at time ``t``."""
    if t < 0:
        raise InvalidParameter(f"time must be >= 0, got {t}")
    phase = math.fmod(t * clock.frequency_hz, 1.0)
    if phase < spec.gate_open_fraction:
        return 1.0
    return float(db_to_linear(spec.extinction_db))


def pm_apply(pulse: OpticalPulse, v: float, v_pi: float) -> OpticalPulse:
    return dataclasses.replace(pulse, phi=phase_for_voltage(v, v_pi, 0.0))


class DriftWalk:
    """Stateful sampler of the misalignment angle for one drift process.

    Queries must come at non-decreasing times.  Each query after
    ``t_stable_s`` advances the walk by a Gaussian step of variance
    ``sigma**2 * dt``, then clamps to ``+-theta_max``.
    """

    def __init__(self, process: DriftProcess, rng: np.random.Generator):
        self.process = process
        self.rng = rng
        self.t = 0.0
        self.theta = 0.0

    def angle(self, t: float) -> float:
        if t < self.t:
            raise ContractViolation(f"drift queried at t={t} after t={self.t}")
        p = self.process
        start = max(self.t, p.t_stable_s)
        if t > start and p.sigma_rad_per_sqrt_s > 0:
            step = p.sigma_rad_per_sqrt_s * math.sqrt(t - start) * self.rng.standard_normal()
            self.theta = min(p.theta_max, max(-p.theta_max, self.theta + step))
        self.t = t
        return self.theta

    def angles(self, times) -> np.ndarray:
        return np.array([self.angle(float(t)) for t in times])


def drift_angle(t: float, walk: DriftWalk) -> float:
    return walk.angle(t)


def expected_h_rate(phi, theta, gate_state, spec: DetectorSpec, channel_extra_db=0.0):
    """Mean H-detector count rate in counts/s.

    With the gate closed only dark counts arrive.  With it open the signal
    and leak excess over dark are mixed by the PBS probabilities and scaled
    by any loss beyond the calibrated baseline.
    """
    if gate_state not in (OPEN, CLOSED):
        raise InvalidParameter(f"gate_state must be 'open' or 'closed', got {gate_state!r}")
    if gate_state == CLOSED:
        rate = np.full(np.shape(phi), spec.dark_rate)
    else:
        scale = db_to_linear(channel_extra_db)
        rate = (
            spec.dark_rate
            + scale * (spec.signal_rate_h - spec.dark_rate) * pbs_h_probability(phi, theta)
            + scale * (spec.leak_rate_v - spec.dark_rate) * pbs_v_probability(phi, theta)
        )
    if np.ndim(rate) == 0:
        return float(rate)
    return rate


def detect_counts(rate, window_s: float, rng: np.random.Generator):
    if not window_s > 0:
        raise InvalidParameter(f"window must be > 0 s, got {window_s}")
    return sample_poisson(np.asarray(rate, dtype=float) * window_s, rng)
