"""Shared physical and statistical models.

Units: every quadrature value in this package is expressed in shot-noise
units (SNU) of the heterodyne output, i.e. a vacuum input produces unit
variance per quadrature.  Excess noise and electronic noise given as mean
photon numbers add to that per-quadrature variance one-to-one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Waveform",
    "PhaseTrace",
    "LaserPair",
    "ChannelParams",
    "UkfState",
    "phase_increment_variance",
    "wiener_phase_noise",
    "measurement_model",
]


@dataclass(frozen=True)
class Waveform:
    """Sample stream with its sample rate.

    ``samples`` is complex for baseband/IF records and real for single-quadrature
    records.  ``start`` is the time of the first sample in seconds; it keeps the
    time base of derived waveforms aligned with the record they came from.
    """

    samples: np.ndarray
    rate: float
    start: float = 0.0

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ValueError(f"sample rate must be positive and finite, got {self.rate}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def time(self) -> np.ndarray:
        return self.start + np.arange(len(self.samples)) / self.rate

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        return Waveform(samples, self.rate, self.start)


@dataclass(frozen=True)
class PhaseTrace:
    """Unwrapped phase trajectory in radians, sampled at ``rate``."""

    values: np.ndarray
    rate: float

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class LaserPair:
    """Transmitter and local-oscillator lasers.

    ``frequency_offset`` is the carrier offset between transmitter and LO in
    Hz; the detected pilot beat sits at ``pilot_freq + frequency_offset``.
    """

    tx_linewidth: float = 100.0
    lo_linewidth: float = 100.0
    frequency_offset: float = 200e6

    def __post_init__(self):
        for name in ("tx_linewidth", "lo_linewidth"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")

    @property
    def combined_linewidth(self) -> float:
        return self.tx_linewidth + self.lo_linewidth


FIBRE_20KM = 10 ** (-0.2 * 20 / 10)


@dataclass(frozen=True)
class ChannelParams:
    """Ground-truth channel.

    ``eta`` is the fibre transmittance; ``detector_efficiency`` is the trusted
    receiver loss applied on top of it.  ``excess_photons`` is the excess noise
    seen at the detector output, ``electronic_noise_photons`` the trusted
    electronic noise ``t``; both in SNU per quadrature.
    """

    eta: float = FIBRE_20KM
    excess_photons: float = 0.0
    lasers: LaserPair = field(default_factory=LaserPair)
    electronic_noise_photons: float = 0.0
    detector_efficiency: float = 1.0

    def __post_init__(self):
        if not (0 < self.eta <= 1):
            raise ValueError(f"transmittance eta must lie in (0, 1], got {self.eta}")
        if not (0 < self.detector_efficiency <= 1):
            raise ValueError(
                f"detector efficiency must lie in (0, 1], got {self.detector_efficiency}"
            )
        if self.excess_photons < 0 or self.electronic_noise_photons < 0:
            raise ValueError("noise photon numbers must be >= 0")

    @property
    def total_transmittance(self) -> float:
        """Channel times detector efficiency, the eta seen in Bob's data."""
        return self.eta * self.detector_efficiency


@dataclass(frozen=True)
class UkfState:
    """Gaussian belief over the carrier phase plus the model it lives in.

    ``freq_offset`` is the residual beat in radians per sample (Δω·T_s),
    ``process_noise`` is the Wiener increment variance per sample.
    """

    mean: float
    variance: float
    process_noise: float
    measurement_noise: float
    pilot_amplitude: float
    freq_offset: float = 0.0
    sample_period: float = 2e-8
    ut_params: tuple[float, float, float] = (1.0, 2.0, 0.0)

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"belief variance must be > 0, got {self.variance}")
        if not self.process_noise >= 0:
            raise ValueError(f"process noise must be >= 0, got {self.process_noise}")
        if not self.measurement_noise > 0:
            raise ValueError(f"measurement noise must be > 0, got {self.measurement_noise}")


def phase_increment_variance(linewidth: float, sample_period: float) -> float:
    """Variance of one Wiener step, 2π·Δν·T_s, for a Lorentzian laser."""
    if not (math.isfinite(linewidth) and linewidth >= 0):
        raise ValueError(f"linewidth must be finite and >= 0, got {linewidth}")
    if not (math.isfinite(sample_period) and sample_period > 0):
        raise ValueError(f"sample period must be finite and > 0, got {sample_period}")
    return 2 * math.pi * linewidth * sample_period


def wiener_phase_noise(n: int, linewidth: float, sample_period: float, seed: int) -> PhaseTrace:
    """Random-walk laser phase with θ_0 = 0.

    Increments are i.i.d. N(0, 2π·linewidth·sample_period).
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    var = phase_increment_variance(linewidth, sample_period)
    rate = 1.0 / sample_period
    if n == 0:
        return PhaseTrace(np.zeros(0), rate)
    rng = np.random.default_rng(seed)
    steps = np.empty(n)
    steps[0] = 0.0
    steps[1:] = rng.standard_normal(n - 1) * math.sqrt(var)
    return PhaseTrace(np.cumsum(steps), rate)


def measurement_model(theta, k, state: UkfState):
    """Noiseless pilot sample A·sin(Δω·k·T_s + θ).

    Works elementwise on arrays of ``theta`` and ``k``.
    """
    return state.pilot_amplitude * np.sin(state.freq_offset * k + theta)
