"""Receiver DSP: filtering, frequency estimation, whitening, synchronization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy import fft as sfft
from scipy import signal

from .model import PhaseTrace, Waveform

if TYPE_CHECKING:
    from .txchain import FrameConfig

__all__ = [
    "FilterSpec",
    "SyncResult",
    "NoiseSpectrum",
    "DetectionError",
    "SyncError",
    "rrc_kernel",
    "bandpass_mask",
    "apply_filter",
    "bandpass",
    "detect_tone",
    "tone_from_spectrum",
    "estimate_frequency_offset",
    "hilbert_phase",
    "linear_fit",
    "detrend",
    "shift_to_baseband",
    "matched_filter",
    "whiten",
    "synchronize",
    "bulk_phase",
    "downsample_to_symbols",
]

EDGE_FRACTION = 0.05


class DetectionError(RuntimeError):
    """No usable tone in the record."""


class SyncError(RuntimeError):
    """Header correlation too weak to trust."""


@dataclass(frozen=True)
class FilterSpec:
    center: float
    bandwidth: float
    kind: str = "band-pass"
    rolloff: float = 0.0
    resolution: int | None = None

    def __post_init__(self):
        if self.kind not in ("band-pass", "low-pass", "rrc"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")


@dataclass(frozen=True)
class SyncResult:
    sample_offset: int
    bulk_phase: float
    peak_metric: float


@dataclass(frozen=True)
class NoiseSpectrum:
    """Two-sided noise PSD sampled at ``freqs`` (Hz, ascending)."""

    freqs: np.ndarray
    psd: np.ndarray


def rrc_kernel(rolloff: float, samples_per_symbol: int, span_symbols: float) -> np.ndarray:
    """Unit-energy root-raised-cosine taps spanning ``span_symbols`` symbols."""
    if not 0 < rolloff <= 1:
        raise ValueError(f"rolloff must lie in (0, 1], got {rolloff}")
    if samples_per_symbol < 2:
        raise ValueError(f"need at least 2 samples per symbol, got {samples_per_symbol}")
    half = int(round(span_symbols * samples_per_symbol / 2))
    t = np.arange(-half, half + 1) / samples_per_symbol
    b = rolloff
    h = np.empty_like(t)
    at_zero = np.isclose(t, 0.0)
    at_sing = np.isclose(np.abs(t), 1 / (4 * b))
    regular = ~(at_zero | at_sing)
    tr = t[regular]
    h[regular] = (
        np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))
    ) / (np.pi * tr * (1 - (4 * b * tr) ** 2))
    h[at_zero] = 1 - b + 4 * b / np.pi
    h[at_sing] = (b / math.sqrt(2)) * (
        (1 + 2 / np.pi) * math.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * math.cos(np.pi / (4 * b))
    )
    return h / np.sqrt(np.sum(h * h))


def bandpass_mask(freqs, center: float, bandwidth: float, edge_fraction: float = EDGE_FRACTION):
    """Brick-wall mask with raised-cosine edges, -6 dB at center ± bandwidth/2."""
    d = np.abs(np.asarray(freqs) - center)
    w = edge_fraction * bandwidth
    inner = bandwidth / 2 - w / 2
    mask = np.zeros(d.shape)
    mask[d <= inner] = 1.0
    edge = (d > inner) & (d < inner + w)
    mask[edge] = 0.5 * (1 + np.cos(np.pi * (d[edge] - inner) / w))
    return mask


def _spectrum(wave: Waveform):
    x = np.asarray(wave.samples)
    spec = sfft.fft(x)
    freqs = sfft.fftfreq(len(x), 1 / wave.rate)
    return spec, freqs


def apply_filter(wave: Waveform, spec: FilterSpec) -> Waveform:
    """Zero-phase filtering in the frequency domain."""
    if spec.kind == "rrc":
        sps = int(round(wave.rate / spec.bandwidth))
        taps = rrc_kernel(spec.rolloff, sps, spec.resolution or 12)
        return wave.with_samples(signal.oaconvolve(wave.samples, taps, mode="same"))
    nyq = wave.rate / 2
    if spec.kind == "band-pass" and abs(spec.center) + spec.bandwidth / 2 > nyq:
        raise ValueError("band edges beyond Nyquist")
    X, freqs = _spectrum(wave)
    center = 0.0 if spec.kind == "low-pass" else spec.center
    mask = bandpass_mask(freqs, center, spec.bandwidth)
    y = sfft.ifft(X * mask)
    if np.isrealobj(wave.samples):
        y = y.real
    return wave.with_samples(y)


def bandpass(wave: Waveform, center: float, bandwidth: float) -> Waveform:
    return apply_filter(wave, FilterSpec(center, bandwidth))


def detect_tone(wave: Waveform, search: tuple[float, float] | None = None) -> float:
    """Frequency of the strongest spectral line, in Hz.

    A line counts as detected when its periodogram bin is more than 3 dB above
    the level the largest pure-noise bin would reach in the searched band.
    """
    X, freqs = _spectrum(wave)
    return tone_from_spectrum(X, freqs, search, one_sided=np.isrealobj(wave.samples))


def tone_from_spectrum(X, freqs, search=None, one_sided: bool = False) -> float:
    """``detect_tone`` on an already computed FFT."""
    power = np.abs(X) ** 2
    keep = freqs >= 0 if one_sided else np.ones(len(freqs), bool)
    if search is not None:
        keep &= (freqs >= search[0]) & (freqs <= search[1])
    if not keep.any():
        raise DetectionError("no detectable tone: empty search band")
    p = power[keep]
    f = freqs[keep]
    mean_bin = np.median(p) / math.log(2)
    floor = mean_bin * max(math.log(len(p)), 1.0)
    peak = int(np.argmax(p))
    if not p[peak] > 2 * floor:
        raise DetectionError("no detectable tone")
    return float(f[peak])


def hilbert_phase(real_wave: Waveform) -> PhaseTrace:
    """Unwrapped atan2(H(y), y) of a real record.

    A constant input has a zero Hilbert transform, giving phase 0 (positive DC)
    or π (negative DC).
    """
    y = np.asarray(real_wave.samples)
    if np.iscomplexobj(y):
        raise ValueError("hilbert_phase expects a real-valued record")
    analytic = signal.hilbert(y)
    return PhaseTrace(np.unwrap(np.angle(analytic)), real_wave.rate)


def linear_fit(phase: np.ndarray, t: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and intercept of ``phase`` against ``t``."""
    tm = t.mean()
    tc = t - tm
    slope = float(np.dot(tc, phase - phase.mean()) / np.dot(tc, tc))
    intercept = float(phase.mean() - slope * tm)
    return slope, intercept


def detrend(phase: np.ndarray, t: np.ndarray) -> np.ndarray:
    slope, intercept = linear_fit(phase, t)
    return phase - (slope * t + intercept)


def estimate_frequency_offset(
    pilot_wave: Waveform,
    bandwidth: float,
    coarse_bandwidth: float | None = None,
    search: tuple[float, float] | None = None,
) -> float:
    """Pilot beat frequency in Hz from a Hilbert phase fit.

    Pass one filters ``coarse_bandwidth`` around the spectral peak; pass two
    re-filters at ``bandwidth`` around the coarse estimate.
    """
    f0 = detect_tone(pilot_wave, search)
    coarse_bandwidth = coarse_bandwidth or bandwidth
    t = pilot_wave.time
    f = f0
    for bw in (coarse_bandwidth, bandwidth):
        filtered = bandpass(pilot_wave, f, bw)
        phase = hilbert_phase(Waveform(np.real(filtered.samples), pilot_wave.rate, pilot_wave.start))
        slope, _ = linear_fit(phase.values, t)
        f = slope / (2 * np.pi)
    return f


def shift_to_baseband(wave: Waveform, freq: float) -> Waveform:
    if freq == 0:
        return wave
    return wave.with_samples(wave.samples * np.exp(-2j * np.pi * freq * wave.time))


def matched_filter(wave: Waveform, config: "FrameConfig", span_symbols: float | None = None) -> Waveform:
    """RRC matched filter, zero delay, matching the transmit pulse span."""
    sps = int(round(wave.rate / config.symbol_rate))
    if span_symbols is None:
        span_symbols = (config.rrc_taps - 1) / config.dac_sps
    taps = rrc_kernel(config.rrc_rolloff, sps, span_symbols)
    return wave.with_samples(signal.oaconvolve(wave.samples, taps, mode="same"))


def whiten(wave: Waveform, noise_spectrum: NoiseSpectrum) -> Waveform:
    """Divide the spectrum of ``wave`` by √PSD, interpolated onto its FFT grid."""
    psd = np.asarray(noise_spectrum.psd, float)
    if np.any(~(psd > 0)):
        raise ValueError("noise PSD must be strictly positive in every bin")
    X, freqs = _spectrum(wave)
    order = np.argsort(noise_spectrum.freqs)
    gain = np.interp(freqs, np.asarray(noise_spectrum.freqs)[order], psd[order])
    y = sfft.ifft(X / np.sqrt(gain))
    if np.isrealobj(wave.samples):
        y = y.real
    return wave.with_samples(y)


def _chunk_correlation(x, header, sps, search, chunk):
    """Per-chunk header correlation for lags 0..search-1, shape (chunks, search)."""
    out = []
    for j0 in range(0, len(header), chunk):
        h = header[j0 : j0 + chunk]
        tmpl = np.zeros((len(h) - 1) * sps + 1, complex)
        tmpl[::sps] = h
        seg = x[j0 * sps : j0 * sps + len(tmpl) + search - 1]
        out.append(signal.correlate(seg, tmpl, mode="valid", method="fft")[:search])
    return np.array(out)


def synchronize(
    wave: Waveform,
    header: np.ndarray,
    config: "FrameConfig",
    search: int | None = None,
    chunk: int | None = None,
    threshold: float = 0.5,
) -> SyncResult:
    """Locate the header in a matched-filtered baseband record.

    The record should already be roughly carrier-corrected (the pipeline
    derotates with the pilot phase first).  With ``chunk`` set, per-chunk
    correlations are combined non-coherently, which tolerates residual phase
    drift but widens the peak of a chirp-like header by about
    ``len(header) / chunk`` symbols.  The metric is one minus the largest
    correlation more than two symbols from the peak, relative to the peak.
    ``bulk_phase`` is the angle of the coherent sum at the peak.
    """
    sps = int(round(wave.rate / config.symbol_rate))
    x = np.asarray(wave.samples, complex)
    span = (len(header) - 1) * sps + 1
    max_search = len(x) - span + 1
    if max_search < 1:
        raise SyncError("sync not found: record shorter than header")
    search = max_search if search is None else min(search, max_search)
    chunk = chunk or len(header)
    corr = _chunk_correlation(x, np.asarray(header, complex), sps, search, chunk)
    metric_curve = np.abs(corr).sum(axis=0)
    peak = int(np.argmax(metric_curve))
    guard = 2 * sps
    off = np.ones(search, bool)
    off[max(0, peak - guard) : peak + guard + 1] = False
    peak_value = metric_curve[peak]
    if peak_value <= 0:
        raise SyncError("sync not found")
    if off.any():
        metric = 1.0 - float(metric_curve[off].max() / peak_value)
    else:
        # no room for sidelobes: fall back to the correlation coefficient
        seg = x[peak : peak + span : sps]
        metric = float(abs(np.vdot(header, seg)) / (np.linalg.norm(header) * np.linalg.norm(seg)))
    if metric < threshold:
        raise SyncError(f"sync not found (peak metric {metric:.3f} < {threshold})")
    phase = float(np.angle(corr[:, peak].sum()))
    return SyncResult(peak, phase, metric)


def bulk_phase(symbols: np.ndarray, header: np.ndarray) -> float:
    """Angle of the correlation between received and known header symbols."""
    return float(np.angle(np.vdot(header, symbols[: len(header)])))


def downsample_to_symbols(
    wave: Waveform, config: "FrameConfig", sync: SyncResult, include_header: bool = False
) -> np.ndarray:
    """One sample per symbol at the matched-filter optimum set by ``sync``."""
    sps = int(round(wave.rate / config.symbol_rate))
    first = 0 if include_header else config.cazac_symbols
    idx = sync.sample_offset + sps * np.arange(first, config.total_symbols)
    if sync.sample_offset < 0 or idx[-1] >= len(wave.samples):
        raise ValueError(
            f"sample offset {sync.sample_offset} leaves the frame outside the record"
        )
    return np.asarray(wave.samples)[idx]
