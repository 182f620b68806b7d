"""Fibre channel plus heterodyne receiver noise."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dsp import DetectionError, bandpass_mask, detect_tone
from .model import ChannelParams, PhaseTrace, Waveform, wiener_phase_noise

__all__ = [
    "ReceptionRecord",
    "apply_channel",
    "noise_record",
    "noise_variance",
    "snr_pilot",
    "snr_from_power",
    "electronic_noise_from_clearance",
    "SNR_FLOOR_DB",
]

SNR_FLOOR_DB = -100.0


@dataclass(frozen=True)
class ReceptionRecord:
    waveform: Waveform
    true_phase: PhaseTrace
    channel: ChannelParams
    seed: int


def noise_variance(params: ChannelParams, vacuum: bool = True) -> float:
    """Per-quadrature variance added at the receiver, in SNU."""
    return (1.0 if vacuum else 0.0) + params.excess_photons + params.electronic_noise_photons


def electronic_noise_from_clearance(clearance_db: float) -> float:
    """Electronic noise variance for a given shot-noise clearance (variance ratio)."""
    return 10 ** (-clearance_db / 10)


def _complex_noise(rng, n, var):
    if var == 0:
        return np.zeros(n, complex)
    z = rng.standard_normal((2, n)) * math.sqrt(var)
    return z[0] + 1j * z[1]


def apply_channel(
    wave: Waveform, params: ChannelParams, seed: int, vacuum: bool = True
) -> ReceptionRecord:
    """Loss, carrier offset, laser phase noise and additive receiver noise.

    The phase walk runs at the sample rate with the combined linewidth.  Noise is
    white over the full record bandwidth, so its per-quadrature variance is the
    same before and after unit-energy matched filtering.  ``vacuum=False``
    drops the shot noise, leaving only excess and electronic noise.
    """
    if len(wave) == 0:
        raise ValueError("cannot transmit an empty waveform")
    if not (0 < params.eta <= 1):
        raise ValueError(f"transmittance eta must lie in (0, 1], got {params.eta}")
    phase_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    n = len(wave)
    theta = wiener_phase_noise(
        n,
        params.lasers.combined_linewidth,
        1.0 / wave.rate,
        int(phase_seed.generate_state(1)[0]),
    )
    t = wave.time
    rotation = np.exp(1j * (2 * np.pi * params.lasers.frequency_offset * t + theta.values))
    out = math.sqrt(params.total_transmittance) * np.asarray(wave.samples) * rotation
    rng = np.random.default_rng(noise_seed)
    out = out + _complex_noise(rng, n, noise_variance(params, vacuum))
    return ReceptionRecord(wave.with_samples(out), theta, params, seed)


def noise_record(
    n: int, rate: float, params: ChannelParams, seed: int, electronic: bool = True
) -> Waveform:
    """Receiver output with the signal blocked: vacuum plus optional electronic noise."""
    rng = np.random.default_rng(seed)
    var = 1.0 + (params.electronic_noise_photons if electronic else 0.0)
    return Waveform(_complex_noise(rng, n, var), rate)


def snr_pilot(
    record: ReceptionRecord,
    bandwidth: float,
    center: float | None = None,
    quantum_band: tuple[float, float] | None = None,
    spectrum: np.ndarray | None = None,
) -> float:
    """Pilot power over in-band noise power for a band-pass of the given width, in dB.

    The noise level is the calibrated white floor 2(1 + e + t) per unit of
    normalized bandwidth; the pilot power is the measured in-band power minus
    that floor.  ``center`` defaults to the strongest spectral line;
    ``spectrum`` may carry a precomputed FFT of the record.
    """
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
    wave = record.waveform
    if center is None:
        try:
            center = detect_tone(wave)
        except DetectionError:
            return SNR_FLOOR_DB
    if quantum_band is not None:
        lo, hi = quantum_band
        if center - bandwidth / 2 < hi and center + bandwidth / 2 > lo:
            raise ValueError(
                f"pilot band {center:g} ± {bandwidth / 2:g} Hz overlaps the quantum band"
            )
    x = np.asarray(wave.samples)
    n = len(x)
    X = np.fft.fft(x) if spectrum is None else spectrum
    mask = bandpass_mask(np.fft.fftfreq(n, 1 / wave.rate), center, bandwidth)
    return snr_from_power(np.abs(X) ** 2, mask, noise_variance(record.channel))


def snr_from_power(power: np.ndarray, mask: np.ndarray, noise_var: float) -> float:
    """SNR in dB from a record's |FFT|², a band mask and the white noise variance.

    In-band power within three standard errors of the noise floor counts as
    no pilot and returns the floor value.
    """
    n = len(power)
    m2 = mask**2
    in_band = float(np.sum(power * m2)) / n**2
    noise = 2 * noise_var * float(np.sum(m2)) / n
    pilot = in_band - noise
    # each periodogram bin of white noise is exponential, so its std equals its mean
    se = 2 * noise_var * math.sqrt(float(np.sum(m2 * m2))) / n
    if not pilot > 3 * se:
        return SNR_FLOOR_DB
    return max(10 * math.log10(pilot / noise), SNR_FLOOR_DB)
