"""Polarization algebra, dB arithmetic and photon-counting statistics.

Polarization is a single phase ``phi`` between the H and V components,

    |psi> = cos(phi/2) |H> + sin(phi/2) |V>,

plus a scalar misalignment ``theta`` of the analyzer against the
preparation basis.  ``theta = 0`` means perfectly adjusted polarization
controllers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from polqkd.errors import InvalidParameter

TWO_PI = 2.0 * math.pi

# Linear-space pmf recurrence underflows past exp(-745).
_LINEAR_PMF_MAX_MEAN = 700.0


def _wrap(phi):
    out = np.mod(phi, TWO_PI)
    # mod of a tiny negative number rounds up to exactly 2*pi
    return np.where(out >= TWO_PI, 0.0, out)


class PolarizationPhase(float):
    """Phase in radians, always reduced into [0, 2*pi)."""

    def __new__(cls, phi: float) -> "PolarizationPhase":
        return super().__new__(cls, float(_wrap(float(phi))))

    def __repr__(self) -> str:
        return f"PolarizationPhase({float(self)!r})"


# Signed analyzer misalignment in radians.  Kept as a plain float alias:
# it carries no invariant beyond being real.
AlignmentError = float


class StateAmplitudes(NamedTuple):
    a_h: float
    a_v: float


@dataclass(frozen=True)
class PowerLevel:
    value_dbm: float

    @classmethod
    def from_mw(cls, mw: float) -> "PowerLevel":
        if mw <= 0:
            raise InvalidParameter(f"power must be positive, got {mw} mW")
        return cls(10.0 * math.log10(mw))

    @property
    def mw(self) -> float:
        return 10.0 ** (self.value_dbm / 10.0)

    @property
    def uw(self) -> float:
        return 1e3 * self.mw


def db_to_linear(db):
    """Power transmission factor of a ``db`` loss."""
    return 10.0 ** (-np.asarray(db, dtype=float) / 10.0)


def phase_for_voltage(v, v_pi, v_offset=0.0):
    """Phase imposed by the phase modulator at drive voltage ``v``.

    Linear in voltage with a half-wave voltage ``v_pi``: 0 V gives H
    (phi = 0) and ``v_pi`` gives V (phi = pi) when ``v_offset`` is 0.
    Array input gives an array of phases.
    """
    if not v_pi > 0:
        raise InvalidParameter(f"v_pi must be positive, got {v_pi}")
    phi = math.pi * (np.asarray(v, dtype=float) - v_offset) / v_pi
    if np.ndim(phi) == 0:
        return PolarizationPhase(float(phi))
    return _wrap(phi)


def state_amplitudes(phi) -> StateAmplitudes:
    return StateAmplitudes(math.cos(phi / 2.0), math.sin(phi / 2.0))


def pbs_h_probability(phi, misalign=0.0):
    """Probability that the state exits the H arm of the PBS."""
    return np.cos(np.asarray(phi) / 2.0 + misalign) ** 2


def pbs_v_probability(phi, misalign=0.0):
    return np.sin(np.asarray(phi) / 2.0 + misalign) ** 2


def apply_attenuation(power: PowerLevel, atten_db: float) -> PowerLevel:
    if atten_db < 0:
        raise InvalidParameter(f"attenuation must be >= 0 dB, got {atten_db}")
    return PowerLevel(power.value_dbm - atten_db)


def fiber_loss_db(length_km: float, alpha_db_per_km: float) -> float:
    if length_km < 0:
        raise InvalidParameter(f"fiber length must be >= 0, got {length_km}")
    if alpha_db_per_km < 0:
        raise InvalidParameter(f"attenuation coefficient must be >= 0, got {alpha_db_per_km}")
    return length_km * alpha_db_per_km


def sample_poisson(mean, rng: np.random.Generator):
    """Poisson draw(s) with the given mean, from an explicit stream."""
    mean = np.asarray(mean, dtype=float)
    if np.any(mean < 0) or np.any(np.isnan(mean)):
        raise InvalidParameter("Poisson mean must be >= 0")
    out = rng.poisson(mean)
    if np.ndim(out) == 0:
        return int(out)
    return out


def _pmf_iter(mean: float):
    """Yield Poisson pmf values p(0), p(1), ... by recurrence."""
    if mean == 0:
        yield 1.0
        while True:
            yield 0.0
    if mean <= _LINEAR_PMF_MAX_MEAN:
        p = math.exp(-mean)
        k = 0
        while True:
            yield p
            k += 1
            p *= mean / k
    else:
        logp = -mean
        log_mean = math.log(mean)
        k = 0
        while True:
            yield math.exp(logp)
            k += 1
            logp += log_mean - math.log(k)


def poisson_tail(mean: float, threshold: int) -> float:
    """P(K >= threshold) for K ~ Poisson(mean), by direct pmf summation.

    Sums whichever side of the distribution is shorter so that tiny tails
    keep their relative precision.  Independent of the sampler, so it
    serves as the reference for classification error rates.
    """
    if mean < 0:
        raise InvalidParameter(f"Poisson mean must be >= 0, got {mean}")
    if threshold <= 0:
        return 1.0
    if mean == 0:
        return 0.0
    pmfs = _pmf_iter(mean)
    if threshold <= mean:
        below = 0.0
        for _ in range(threshold):
            below += next(pmfs)
        return max(0.0, 1.0 - below)
    for _ in range(threshold):
        next(pmfs)
    total = 0.0
    k = threshold
    for p in pmfs:
        total += p
        k += 1
        if p <= 1e-18 * total or (total == 0.0 and k > mean + 50 * math.sqrt(mean) + 50):
            break
    return min(1.0, total)


def poisson_cdf(mean: float, k: int) -> float:
    """P(K <= k).  Summed from below, accurate when the value is small."""
    if mean < 0:
        raise InvalidParameter(f"Poisson mean must be >= 0, got {mean}")
    if k < 0:
        return 0.0
    if k + 1 > mean:
        return 1.0 - poisson_tail(mean, k + 1)
    pmfs = _pmf_iter(mean)
    return min(1.0, sum(next(pmfs) for _ in range(k + 1)))
