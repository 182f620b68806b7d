"""Experiment configuration, the per-frame receiver pipeline and the runners."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import fft as sfft
from scipy import signal

from .channel import ReceptionRecord, apply_channel, noise_record, noise_variance, snr_from_power
from .dsp import (
    DetectionError,
    NoiseSpectrum,
    SyncError,
    bandpass_mask,
    bulk_phase,
    downsample_to_symbols,
    linear_fit,
    matched_filter,
    synchronize,
    tone_from_spectrum,
    whiten,
)
from .model import FIBRE_20KM, ChannelParams, LaserPair, PhaseTrace, Waveform
from .recovery import TrackingError, UkfConfig, compensate, reference_track, ukf_track
from .secrecy import KeyRateInputs, estimate_covariance, infer_channel, secret_key_rate
from .txchain import FrameConfig, frame_header, generate_symbols, synthesize_frame

__all__ = [
    "ExperimentConfig",
    "SweepRow",
    "FrameResult",
    "SWEEP_COLUMNS",
    "CONVERGENCE_COLUMNS",
    "default_bandwidths",
    "simulate_frame",
    "Receiver",
    "process_frame",
    "run_sweep",
    "sweep_csv",
    "run_convergence",
    "convergence_csv",
    "run_calibration",
    "replay",
    "load_config",
    "apply_overrides",
    "config_sections",
    "config_to_ini",
]

METHODS = ("reference", "ukf")
FRAME_ERRORS = (DetectionError, SyncError, TrackingError, ValueError, np.linalg.LinAlgError)


def default_bandwidths() -> tuple[float, ...]:
    """Eight pilot filter widths, about 26 dB down to 3.5 dB pilot SNR."""
    return tuple(float(b) for b in np.geomspace(281.17e3, 50e6, 8))


def _sweep_channel() -> ChannelParams:
    return ChannelParams(
        eta=FIBRE_20KM,
        excess_photons=1e-3,
        lasers=LaserPair(100.0, 100.0, 200e6),
        electronic_noise_photons=0.022,
        detector_efficiency=0.84,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    frame_config: FrameConfig = field(default_factory=FrameConfig)
    channel: ChannelParams = field(default_factory=_sweep_channel)
    ukf: UkfConfig = field(default_factory=UkfConfig)
    sweep_bandwidths: tuple[float, ...] = field(default_factory=default_bandwidths)
    frames_per_point: int = 50
    methods: tuple[str, ...] = METHODS
    seed_base: int = 0
    output_path: str = "sweep.csv"
    beta: float = 0.95
    coarse_bandwidth: float = 2e6
    calibration: str = "ideal"
    workers: int = 1
    full_scale_frames: int = 1000
    convergence_guesses: tuple[float, ...] = (20.0, 200.0, 2e3, 2e4, 2e5)
    convergence_linewidth: float = 2e3
    convergence_bandwidth: float = 40e6
    convergence_snr_db: float = 26.0
    convergence_initial_phase: float = 1.0
    convergence_initial_variance: float = 1.0
    convergence_stride: int = 100

    def __post_init__(self):
        if self.frames_per_point < 2:
            raise ValueError("frames_per_point must be >= 2 for error bars")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ValueError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        if self.calibration not in ("ideal", "measured"):
            raise ValueError(f"calibration must be 'ideal' or 'measured', got {self.calibration!r}")
        if not self.sweep_bandwidths or min(self.sweep_bandwidths) <= 0:
            raise ValueError("sweep_bandwidths must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class FrameResult:
    bandwidth: float
    method: str
    e_hat: float
    eta_hat: float
    phase_rms: float
    snr_db: float


@dataclass(frozen=True)
class SweepRow:
    bandwidth_hz: float
    snr_pilot_db: float
    method: str
    e_mean: float
    e_std: float
    eta_mean: float
    key_rate: float
    key_rate_clamped: float
    phase_rms: float
    frames: int
    frames_failed: int
    seed_base: int


SWEEP_COLUMNS = tuple(f.name for f in dataclasses.fields(SweepRow))
CONVERGENCE_COLUMNS = ("guess", "symbol_index", "theta_hat", "posterior_std", "theta_true")


def _seeds(seed: int, count: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def simulate_frame(frame_config: FrameConfig, channel: ChannelParams, seed: int, vacuum: bool = True):
    """Symbols, transmitted waveform and received record for one frame seed."""
    sym_seed, ch_seed, cal_seed = _seeds(seed, 3)
    frame = generate_symbols(frame_config, sym_seed)
    wave = synthesize_frame(frame_config, frame)
    record = apply_channel(wave, channel, ch_seed, vacuum=vacuum)
    return frame, wave, record, cal_seed


class Receiver:
    """DSP state shared by every bandwidth and method for one received record.

    The pilot is acquired at its spectral peak and its frequency fitted over
    ``coarse_bandwidth``, which must stay narrow enough for a slip-free unwrap.
    Phases returned by ``track`` live in a common frame: the quantum signal
    after shifting by quantum_shift plus that carrier offset estimate.
    """

    def __init__(self, record_wave: Waveform, frame_config: FrameConfig, coarse_bandwidth: float,
                 calibration: Waveform | None = None):
        self.config = frame_config
        self.wave = record_wave
        self.fs = record_wave.rate
        self.sps = frame_config.adc_sps
        x = np.asarray(record_wave.samples, complex)
        self.n = len(x)
        self.t = record_wave.time
        self.X = sfft.fft(x)
        self.freqs = sfft.fftfreq(self.n, 1 / self.fs)
        self._masks = {}
        self._power = None
        f0 = tone_from_spectrum(self.X, self.freqs)
        wide = sfft.ifft(self.X * bandpass_mask(self.freqs, f0, coarse_bandwidth))
        phase = np.unwrap(np.angle(wide))
        slope, intercept = linear_fit(phase, self.t)
        self.f_coarse = slope / (2 * np.pi)
        self.wide_phase = phase - (slope * self.t + intercept)
        self.carrier_offset = self.f_coarse - frame_config.pilot_freq
        self.cal_power = None
        if calibration is not None:
            self.cal_power = np.abs(sfft.fft(calibration.samples)) ** 2

    def mask(self, bandwidth: float) -> np.ndarray:
        if bandwidth not in self._masks:
            self._masks[bandwidth] = bandpass_mask(self.freqs, self.f_coarse, bandwidth)
        return self._masks[bandwidth]

    def band(self, bandwidth: float) -> np.ndarray:
        """Pilot band-passed at full rate (analytic, one-sided)."""
        return sfft.ifft(self.X * self.mask(bandwidth))

    def band_at(self, bandwidth: float, offset: int) -> np.ndarray:
        """The band-passed pilot at samples offset + k·sps only.

        Decimating after the inverse FFT equals an inverse FFT of the
        spectrum folded into sps aliases, which is sps times cheaper.
        """
        m = self.n // self.sps
        if m * self.sps != self.n:
            return self.band(bandwidth)[offset :: self.sps]
        Y = self.X * self.mask(bandwidth)
        if offset:
            Y = Y * np.exp(2j * np.pi * np.arange(self.n) * offset / self.n)
        folded = Y.reshape(self.sps, m).sum(axis=0)
        return sfft.ifft(folded) * (m / self.n)

    def snr_db(self, record: ReceptionRecord, bandwidth: float) -> float:
        if self._power is None:
            self._power = np.abs(self.X) ** 2
        return snr_from_power(self._power, self.mask(bandwidth), noise_variance(record.channel))

    def measurement_noise(self, bandwidth: float) -> float:
        """UKF measurement noise from the band-passed calibration record.

        The per-quadrature variance is scaled to the symbol rate: a band
        narrower than the symbol rate leaves noise correlated across symbols,
        and the filter needs the white-equivalent level, PSD × symbol rate.
        """
        if self.cal_power is None:
            raise ValueError("measurement noise needs a calibration record")
        mask2 = self.mask(bandwidth) ** 2
        var = float(np.sum(self.cal_power * mask2)) / self.n**2 / 2
        enbw = float(np.sum(mask2)) * self.fs / self.n
        return var * max(1.0, self.config.symbol_rate / enbw)

    def quantum_symbols(self, whitening: NoiseSpectrum | None = None, snu_scale: float = 1.0):
        """Matched-filtered, synchronized symbols (header included) and the sync result."""
        cfg = self.config
        wave = self.wave if whitening is None else whiten(self.wave, whitening)
        shift = cfg.quantum_shift + self.carrier_offset
        bb = wave.with_samples(np.asarray(wave.samples) * np.exp(-2j * np.pi * shift * self.t))
        mf = matched_filter(bb, cfg)
        header = self.header
        derotated = mf.with_samples(mf.samples * np.exp(-1j * self.wide_phase))
        sync = synchronize(derotated, header, cfg)
        symbols = downsample_to_symbols(mf, cfg, sync, include_header=True) / math.sqrt(snu_scale)
        self.sample_index = sync.sample_offset + self.sps * np.arange(cfg.total_symbols)
        return symbols, sync

    @property
    def header(self):
        cfg = self.config
        return frame_header(cfg) * math.sqrt(cfg.mean_photons / cfg.modulation_variance)

    def track(self, bandwidth: float, method: str, ukf: UkfConfig, offset: int) -> np.ndarray:
        """Per-symbol carrier phase from the pilot filtered at ``bandwidth``."""
        total = self.config.total_symbols
        idx = offset + self.sps * np.arange(total)
        tk = self.t[idx]
        if method == "reference":
            ref = reference_track(Waveform(self.band(bandwidth), self.fs), self.sps, offset)
            ramp = 2 * np.pi * (ref.frequency_offset - self.f_coarse) * tk
            return ref.phase.values[:total] + ramp
        y = self.band_at(bandwidth, offset)[:total] * np.exp(-2j * np.pi * self.f_coarse * tk)
        cfg = replace(
            ukf,
            measurement_noise=self.measurement_noise(bandwidth),
            symbol_period=1 / self.config.symbol_rate,
        )
        return ukf_track(y, cfg).phase.values

    def true_phase(self, record: ReceptionRecord) -> np.ndarray:
        """Ground-truth carrier phase of the quantum symbols in the common frame."""
        idx = self.sample_index
        drift = record.channel.lasers.frequency_offset - self.carrier_offset
        return record.true_phase.values[idx] + 2 * np.pi * drift * self.t[idx]


def _circular_rms(diff):
    z = np.exp(1j * diff)
    return float(np.sqrt(np.mean(np.angle(z * np.conj(z.mean())) ** 2)))


def _calibration(config: ExperimentConfig, n: int, rate: float, seed: int):
    """Noise-only records: vacuum+electronic for R and whitening, vacuum for SNU."""
    el_seed, vac_seed = _seeds(seed, 2)
    cal = noise_record(n, rate, config.channel, el_seed, electronic=True)
    if config.calibration == "ideal":
        return cal, None, 1.0
    freqs, psd = signal.welch(cal.samples, fs=rate, nperseg=4096, return_onesided=False, detrend=False)
    order = np.argsort(freqs)
    freqs, psd = freqs[order], psd[order]
    lo, hi = config.frame_config.quantum_band
    shift = config.channel.lasers.frequency_offset
    band = (freqs >= lo + shift) & (freqs <= hi + shift)
    spectrum = NoiseSpectrum(freqs, psd / psd[band].mean())
    vac = noise_record(n, rate, config.channel, vac_seed, electronic=False)
    # whitened vacuum is flat, so the full-band variance gives the shot-noise
    # level with n degrees of freedom instead of the quantum band's n·B/fs
    snu = float(np.var(whiten(vac, spectrum).samples)) / 2
    return cal, spectrum, snu


def process_frame(config: ExperimentConfig, seed: int) -> tuple[list[FrameResult], list[tuple[float, str]]]:
    """Run every (bandwidth, method) on one frame; returns results and failures."""
    cfg = config.frame_config
    frame, _, record, cal_seed = simulate_frame(cfg, config.channel, seed)
    results, failures = [], []
    combos = [(b, m) for b in config.sweep_bandwidths for m in config.methods]
    try:
        cal, spectrum, snu = _calibration(config, len(record.waveform), record.waveform.rate, cal_seed)
        rx = Receiver(record.waveform, cfg, config.coarse_bandwidth, cal)
        symbols, sync = rx.quantum_symbols(spectrum, snu)
    except FRAME_ERRORS:
        return [], combos
    truth = rx.true_phase(record)
    L = cfg.cazac_symbols
    alice = frame.alice_symbols * math.sqrt(2 * cfg.mean_photons / cfg.modulation_variance)
    t_trusted = config.channel.electronic_noise_photons
    for bandwidth in config.sweep_bandwidths:
        snr = rx.snr_db(record, bandwidth)
        for method in config.methods:
            try:
                phase = rx.track(bandwidth, method, config.ukf, sync.sample_offset)
                comp = compensate(symbols, PhaseTrace(phase, cfg.symbol_rate))
                bulk = bulk_phase(comp, rx.header)
                bob = comp[L:] * np.exp(-1j * bulk)
                est = infer_channel(estimate_covariance(alice, bob, cfg.mean_photons), t_trusted)
                rms = _circular_rms((phase + bulk - truth)[L:])
            except FRAME_ERRORS:
                failures.append((bandwidth, method))
                continue
            results.append(
                FrameResult(bandwidth, method, est.e_hat_minus_trusted, est.eta_hat, rms, snr)
            )
    return results, failures


def _process(args):
    config, seed = args
    return process_frame(config, seed)


def key_rate_for(config: ExperimentConfig, eta: float, e: float):
    ch = config.channel
    inputs = KeyRateInputs(
        config.frame_config.mean_photons,
        min(max(eta, 1e-12), ch.detector_efficiency),
        max(e, 0.0),
        config.beta,
        ch.detector_efficiency,
        ch.electronic_noise_photons,
    )
    return secret_key_rate(inputs)


def run_sweep(config: ExperimentConfig) -> list[SweepRow]:
    """Pilot-bandwidth sweep; each frame is shared by all bandwidths and methods."""
    seeds = [config.seed_base + i for i in range(config.frames_per_point)]
    jobs = [(config, s) for s in seeds]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            outcomes = list(pool.map(_process, jobs))
    else:
        outcomes = [_process(j) for j in jobs]

    rows = []
    for bandwidth in config.sweep_bandwidths:
        for method in sorted(config.methods):
            got = [r for res, _ in outcomes for r in res if r.bandwidth == bandwidth and r.method == method]
            failed = sum(1 for _, fails in outcomes for f in fails if f == (bandwidth, method))
            if got:
                e = np.array([r.e_hat for r in got])
                eta = float(np.mean([r.eta_hat for r in got]))
                e_mean = float(e.mean())
                e_std = float(e.std(ddof=1)) if len(e) > 1 else 0.0
                kr = key_rate_for(config, eta, e_mean)
                key, clamped = kr.key_rate, kr.clamped
                snr = float(np.mean([r.snr_db for r in got]))
                rms = float(np.sqrt(np.mean([r.phase_rms**2 for r in got])))
            else:
                e_mean = e_std = eta = key = clamped = snr = rms = float("nan")
            rows.append(
                SweepRow(bandwidth, snr, method, e_mean, e_std, eta, key, clamped, rms,
                         len(got), failed, config.seed_base)
            )
    rows.sort(key=lambda r: (r.bandwidth_hz, r.method))
    return rows


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else "nan"
    return str(value)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def sweep_csv(rows: list[SweepRow]) -> str:
    return _csv(SWEEP_COLUMNS, [dataclasses.astuple(r) for r in rows])


@dataclass(frozen=True)
class ConvergenceTrace:
    guess: float
    theta_hat: np.ndarray
    posterior_std: np.ndarray
    theta_true: np.ndarray
    converged_at: int | None

    def rms(self, last: int = 10_000) -> float:
        d = (self.theta_hat - self.theta_true)[-last:]
        return float(np.sqrt(np.mean(d**2)))


def run_convergence(config: ExperimentConfig, guesses=None) -> list[ConvergenceTrace]:
    """UKF on one noiseless-channel frame for a list of linewidth guesses.

    The pilot is extracted through the receiver chain at
    ``convergence_bandwidth``, then white measurement noise at
    ``convergence_snr_db`` per symbol is added at symbol rate, so the filter
    sees the Wiener phase through exactly its own measurement model.  R is
    the variance of that noise, known to the filter.
    """
    guesses = tuple(config.convergence_guesses if guesses is None else guesses)
    if not guesses or min(guesses) <= 0:
        raise ValueError("linewidth guesses must be positive")
    cfg = config.frame_config
    half = config.convergence_linewidth / 2
    channel = ChannelParams(
        eta=1.0,
        lasers=LaserPair(half, half, config.channel.lasers.frequency_offset),
    )
    frame, _, record, noise_seed = simulate_frame(cfg, channel, config.seed_base, vacuum=False)
    phi0 = config.convergence_initial_phase
    rx_wave = record.waveform.with_samples(record.waveform.samples * np.exp(1j * phi0))
    rx = Receiver(rx_wave, cfg, config.coarse_bandwidth)

    B = config.convergence_bandwidth
    idx = rx.sps * np.arange(cfg.total_symbols)
    tk = rx.t[idx]
    y = rx.band_at(B, 0)[: cfg.total_symbols] * np.exp(-2j * np.pi * rx.f_coarse * tk)
    A = float(np.median(np.abs(y)))
    R = A * A / (2 * 10 ** (config.convergence_snr_db / 10))
    rng = np.random.default_rng(noise_seed)
    y = y + math.sqrt(R) * (rng.standard_normal(len(y)) + 1j * rng.standard_normal(len(y)))
    drift = cfg.pilot_freq + channel.lasers.frequency_offset - rx.f_coarse
    truth = record.true_phase.values[idx] + 2 * np.pi * drift * tk + phi0

    out = []
    for g in guesses:
        ukf = replace(
            config.ukf,
            linewidth_guess=g,
            measurement_noise=R,
            pilot_amplitude=A,
            symbol_period=1 / cfg.symbol_rate,
            initial_variance=config.convergence_initial_variance,
            adapt_noise=False,
        )
        res = ukf_track(y, ukf)
        theta = res.phase.values
        # the filter state is an unwrapped phase; align the truth to the same turn
        turns = np.round(np.mean(theta[-1000:] - truth[-1000:]) / (2 * np.pi))
        out.append(
            ConvergenceTrace(g, theta, res.posterior_std, truth + 2 * np.pi * turns, res.converged_at)
        )
    return out


def convergence_csv(traces: list[ConvergenceTrace], stride: int = 100) -> str:
    rows = []
    for tr in traces:
        for k in range(0, len(tr.theta_hat), stride):
            rows.append((float(tr.guess), k, float(tr.theta_hat[k]), float(tr.posterior_std[k]),
                         float(tr.theta_true[k])))
    return _csv(CONVERGENCE_COLUMNS, rows)


def run_calibration(config: ExperimentConfig, n: int | None = None) -> dict:
    """Noise-only records, their PSDs, SNU scale and whitening flatness."""
    cfg = config.frame_config
    n = n or cfg.total_symbols * cfg.adc_sps
    rate = cfg.adc_rate
    el_seed, vac_seed = _seeds(config.seed_base, 2)
    vac = noise_record(n, rate, config.channel, vac_seed, electronic=False)
    vel = noise_record(n, rate, config.channel, el_seed, electronic=True)
    kw = dict(fs=rate, nperseg=4096, return_onesided=False, detrend=False)
    freqs, psd_vac = signal.welch(vac.samples, **kw)
    _, psd_vel = signal.welch(vel.samples, **kw)
    order = np.argsort(freqs)
    freqs, psd_vac, psd_vel = freqs[order], psd_vac[order], psd_vel[order]
    spectrum = NoiseSpectrum(freqs, psd_vel / psd_vel.mean())
    white = whiten(vac, spectrum)
    _, psd_white = signal.welch(white.samples, **kw)
    # flatness over 64 sub-bands, so single-bin scatter does not dominate
    bands = psd_white[np.argsort(freqs)].reshape(64, -1).mean(axis=1)
    db = 10 * np.log10(bands / bands.mean())
    vac_var = float(np.var(vac.samples)) / 2
    vel_var = float(np.var(vel.samples)) / 2
    return {
        "freqs_hz": freqs,
        "psd_vacuum": psd_vac,
        "psd_vacuum_electronic": psd_vel,
        "vacuum_variance": vac_var,
        "vacuum_electronic_variance": vel_var,
        "electronic_noise_photons": config.channel.electronic_noise_photons,
        "snu_scale": vac_var,
        "whitened_flatness_db": float(db.max() - db.min()),
        "samples": n,
        "seed_base": config.seed_base,
    }


def replay(wave: Waveform, config: ExperimentConfig, bandwidth: float | None = None):
    """Carrier recovery on a recorded waveform; per-symbol phases and symbols."""
    cfg = config.frame_config
    bandwidth = bandwidth or config.sweep_bandwidths[0]
    cal = noise_record(len(wave), wave.rate, config.channel, config.seed_base)
    rx = Receiver(wave, cfg, config.coarse_bandwidth, cal)
    symbols, sync = rx.quantum_symbols()
    rows = []
    L = cfg.cazac_symbols
    for method in config.methods:
        phase = rx.track(bandwidth, method, config.ukf, sync.sample_offset)
        comp = compensate(symbols, PhaseTrace(phase, cfg.symbol_rate))
        bulk = bulk_phase(comp, rx.header)
        comp = comp * np.exp(-1j * bulk)
        for k in range(L, len(comp)):
            rows.append((method, k - L, float(phase[k] + bulk), float(comp[k].real), float(comp[k].imag)))
    return _csv(("method", "symbol_index", "phase_rad", "i", "q"), rows)


# configuration files

def config_sections(config: ExperimentConfig) -> dict:
    """Section name -> dataclass instance, as laid out in the INI file."""
    return {
        "frame": config.frame_config,
        "channel": config.channel,
        "lasers": config.channel.lasers,
        "ukf": config.ukf,
        "experiment": config,
    }


_NESTED = {"frame_config", "channel", "ukf", "lasers"}


def _scalar_fields(obj):
    return [f for f in dataclasses.fields(obj) if f.name not in _NESTED]


def _parse(text: str, annotation: str, current):
    text = text.strip()
    if "None" in annotation and text.lower() in ("none", ""):
        return None
    if annotation.startswith("bool"):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if annotation.startswith("tuple"):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if "str" in annotation:
            return tuple(parts)
        return tuple(float(p) for p in parts)
    if annotation.startswith("int"):
        return int(float(text)) if float(text).is_integer() else int(text)
    if annotation.startswith("str"):
        return text
    return float(text)


def apply_overrides(config: ExperimentConfig, values: dict) -> ExperimentConfig:
    """Apply ``{section: {field: text}}`` overrides, validating through the dataclasses."""
    sections = config_sections(config)
    updated = {}
    for name, obj in sections.items():
        given = values.get(name, {})
        known = {f.name: f for f in _scalar_fields(obj)}
        unknown = set(given) - set(known)
        if unknown:
            raise ValueError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
        changes = {k: _parse(v, str(known[k].type), getattr(obj, k)) for k, v in given.items()}
        updated[name] = changes
    extra = set(values) - set(sections)
    if extra:
        raise ValueError(f"unknown section(s): {', '.join(sorted(extra))}")
    lasers = replace(config.channel.lasers, **updated["lasers"])
    channel = replace(config.channel, lasers=lasers, **updated["channel"])
    return replace(
        config,
        frame_config=replace(config.frame_config, **updated["frame"]),
        channel=channel,
        ukf=replace(config.ukf, **updated["ukf"]),
        **updated["experiment"],
    )


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    values = {s: dict(parser.items(s)) for s in parser.sections()}
    return apply_overrides(base or ExperimentConfig(), values)


def _unparse(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return _fmt(value) if not isinstance(value, bool) else str(value).lower()


def config_to_ini(config: ExperimentConfig) -> str:
    parser = configparser.ConfigParser()
    for name, obj in config_sections(config).items():
        parser[name] = {f.name: _unparse(getattr(obj, f.name)) for f in _scalar_fields(obj)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
