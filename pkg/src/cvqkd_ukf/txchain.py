"""Transmitter: Gaussian symbols, CAZAC header, pilot tone, single-sideband frame."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal

from .dsp import rrc_kernel
from .model import Waveform

__all__ = [
    "FrameConfig",
    "SymbolFrame",
    "generate_symbols",
    "cazac_sequence",
    "frame_header",
    "synthesize_frame",
    "write_waveform",
    "read_waveform",
    "WAVEFORM_MAGIC",
]


@dataclass(frozen=True)
class FrameConfig:
    """Frame layout and transmitter settings (rates in Hz, amplitudes in SNU)."""

    symbol_rate: float = 50e6
    dac_rate: float = 500e6
    adc_rate: float = 1e9
    quantum_shift: float = 60e6
    pilot_freq: float = 130e6
    rrc_rolloff: float = 0.4
    rrc_taps: int = 129
    frame_symbols: int = 100_000
    cazac_symbols: int = 10_000
    cazac_root: int = 1
    modulation_variance: float = 1.0
    mean_photons: float = 2.73
    pilot_amplitude: float = 0.82

    def __post_init__(self):
        if not 0 < self.rrc_rolloff <= 1:
            raise ValueError(f"rrc_rolloff must lie in (0, 1], got {self.rrc_rolloff}")
        for name in ("dac_rate", "adc_rate"):
            ratio = getattr(self, name) / self.symbol_rate
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 2:
                raise ValueError(f"{name} must be an integer multiple (>= 2) of symbol_rate")
        if self.frame_symbols < 1 or self.cazac_symbols < 0:
            raise ValueError("frame_symbols must be >= 1 and cazac_symbols >= 0")
        lo, hi = self.quantum_band
        if lo <= self.pilot_freq <= hi:
            raise ValueError(
                f"pilot at {self.pilot_freq:g} Hz overlaps quantum band [{lo:g}, {hi:g}] Hz"
            )
        nyquist = self.adc_rate / 2
        if max(abs(lo), abs(hi), abs(self.pilot_freq)) >= nyquist:
            raise ValueError("quantum band or pilot beyond the ADC Nyquist frequency")

    @property
    def quantum_band(self) -> tuple[float, float]:
        half = (1 + self.rrc_rolloff) * self.symbol_rate / 2
        return self.quantum_shift - half, self.quantum_shift + half

    @property
    def dac_sps(self) -> int:
        return int(round(self.dac_rate / self.symbol_rate))

    @property
    def adc_sps(self) -> int:
        return int(round(self.adc_rate / self.symbol_rate))

    @property
    def total_symbols(self) -> int:
        return self.cazac_symbols + self.frame_symbols


@dataclass(frozen=True)
class SymbolFrame:
    """Alice's quantum symbols (I + jQ, each quadrature unit variance by default)."""

    alice_symbols: np.ndarray
    seed: int


def generate_symbols(config: FrameConfig, seed: int) -> SymbolFrame:
    if config.frame_symbols <= 0:
        raise ValueError("cannot generate an empty frame")
    rng = np.random.default_rng(seed)
    iq = rng.standard_normal((2, config.frame_symbols)) * math.sqrt(config.modulation_variance)
    return SymbolFrame(iq[0] + 1j * iq[1], seed)


def cazac_sequence(length: int, root: int = 1) -> np.ndarray:
    """Zadoff-Chu sequence of the given length and root."""
    if length <= 0:
        raise ValueError(f"length must be positive, got {length}")
    if math.gcd(root, length) != 1:
        raise ValueError(f"root {root} is not coprime with length {length}")
    k = np.arange(length, dtype=np.float64)
    # k(k+1) and k^2 overflow float precision for long sequences unless reduced mod 2L
    if length % 2:
        arg = np.mod(root * k * (k + 1), 2 * length)
    else:
        arg = np.mod(root * k * k, 2 * length)
    return np.exp(-1j * np.pi * arg / length)


def frame_header(config: FrameConfig) -> np.ndarray:
    """Header symbols at the same per-quadrature power as the Gaussian symbols."""
    if config.cazac_symbols == 0:
        return np.zeros(0, complex)
    zc = cazac_sequence(config.cazac_symbols, config.cazac_root)
    return zc * math.sqrt(2 * config.modulation_variance)


def synthesize_frame(config: FrameConfig, frame: SymbolFrame) -> Waveform:
    """Header + symbols -> RRC shaping -> ADC-rate SSB waveform with pilot.

    The quantum part is scaled so that unit-energy matched filtering at the ADC
    rate returns symbols with per-quadrature variance ``mean_photons``.
    """
    if len(frame.alice_symbols) != config.frame_symbols:
        raise ValueError(
            f"frame has {len(frame.alice_symbols)} symbols, config expects {config.frame_symbols}"
        )
    symbols = np.concatenate([frame_header(config), frame.alice_symbols])
    symbols = symbols * math.sqrt(config.mean_photons / config.modulation_variance)

    sps = config.dac_sps
    upsampled = np.zeros(len(symbols) * sps, complex)
    upsampled[::sps] = symbols
    shaped = signal.oaconvolve(
        upsampled, rrc_kernel(config.rrc_rolloff, sps, (config.rrc_taps - 1) / sps), mode="same"
    )

    ratio = Fraction(config.adc_rate / config.dac_rate).limit_denominator(1000)
    baseband = signal.resample_poly(
        shaped, ratio.numerator, ratio.denominator, window=("kaiser", 10.0)
    )
    baseband /= math.sqrt(ratio)

    t = np.arange(len(baseband)) / config.adc_rate
    wave = baseband * np.exp(2j * np.pi * config.quantum_shift * t)
    if config.pilot_amplitude:
        wave += config.pilot_amplitude * np.exp(2j * np.pi * config.pilot_freq * t)
    return Waveform(wave, config.adc_rate)


WAVEFORM_MAGIC = b"CVQKDWAV"
_HEADER = struct.Struct("<8sIdQ4x")
_VERSION = 1


def write_waveform(path, wave: Waveform) -> None:
    """Binary export: 32-byte header then interleaved little-endian f64 I/Q."""
    samples = np.asarray(wave.samples, dtype=np.complex128)
    iq = np.empty(2 * len(samples), dtype="<f8")
    iq[0::2] = samples.real
    iq[1::2] = samples.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(WAVEFORM_MAGIC, _VERSION, float(wave.rate), len(samples)))
        fh.write(iq.tobytes())


def read_waveform(path) -> Waveform:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: too short for a waveform header")
    magic, version, rate, count = _HEADER.unpack_from(data)
    if magic != WAVEFORM_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported waveform version {version}")
    payload = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if len(payload) != 2 * count:
        raise ValueError(f"{path}: header says {count} samples, payload has {len(payload) // 2}")
    return Waveform(payload[0::2] + 1j * payload[1::2], rate)
