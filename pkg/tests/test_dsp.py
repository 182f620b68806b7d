import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvqkd_ukf.dsp import (
    DetectionError,
    FilterSpec,
    NoiseSpectrum,
    SyncError,
    apply_filter,
    bandpass,
    bandpass_mask,
    detect_tone,
    downsample_to_symbols,
    estimate_frequency_offset,
    hilbert_phase,
    linear_fit,
    matched_filter,
    rrc_kernel,
    shift_to_baseband,
    synchronize,
    whiten,
)
from cvqkd_ukf.model import Waveform
from cvqkd_ukf.txchain import FrameConfig, frame_header, generate_symbols, synthesize_frame


def _tone(freq, n=20000, rate=1e9, amp=1.0, phase=0.0):
    t = np.arange(n) / rate
    return Waveform(amp * np.exp(1j * (2 * np.pi * freq * t + phase)), rate)


def test_rrc_unit_energy_and_symmetry():
    h = rrc_kernel(0.4, 10, 12)
    assert np.sum(h * h) == pytest.approx(1.0)
    assert np.allclose(h, h[::-1])


def test_rrc_cascade_isi_below_1e3():
    h = rrc_kernel(0.4, 10, 24)
    rc = np.convolve(h, h)
    mid = len(rc) // 2
    lags = rc[mid % 10 :: 10]
    peak = rc[mid]
    others = np.delete(lags, mid // 10)
    assert np.max(np.abs(others)) / peak < 1e-3


def test_rrc_handles_singular_points():
    # 1/(4β) lands on the sample grid for β = 0.25, sps = 4
    h = rrc_kernel(0.25, 4, 8)
    assert np.all(np.isfinite(h))


def test_rrc_rejects_bad_rolloff():
    with pytest.raises(ValueError):
        rrc_kernel(0.0, 10, 12)


def test_bandpass_mask_half_amplitude_at_edges():
    f = np.array([100.0 - 5.0, 100.0, 100.0 + 5.0, 100.0 + 20.0])
    m = bandpass_mask(f, 100.0, 10.0)
    assert m.tolist() == pytest.approx([0.5, 1.0, 0.5, 0.0])


@given(
    center=st.floats(-100.0, 100.0),
    bw=st.floats(0.5, 50.0),
    f=st.lists(st.floats(-200.0, 200.0), min_size=1, max_size=30),
)
@settings(max_examples=60, deadline=None)
def test_bandpass_mask_is_bounded(center, bw, f):
    m = bandpass_mask(np.array(f), center, bw)
    assert np.all((m >= 0) & (m <= 1))
    assert np.all(m[np.abs(np.array(f) - center) > bw * 0.53] == 0)


def test_bandpass_rejects_out_of_band_tone():
    out = bandpass(_tone(300e6), 130e6, 10e6)
    assert np.sqrt(np.mean(np.abs(out.samples) ** 2)) < 1e-10


def test_bandpass_keeps_in_band_tone():
    n, rate = 20000, 1e9
    f = 130e6 - (130e6 % (rate / n))
    out = bandpass(_tone(f, n, rate), 130e6, 10e6)
    assert np.allclose(out.samples, _tone(f, n, rate).samples, atol=1e-12)


def test_bandpass_beyond_nyquist_is_an_error():
    with pytest.raises(ValueError, match="Nyquist"):
        apply_filter(_tone(1e6), FilterSpec(480e6, 100e6))


def test_detect_tone_finds_known_line():
    rng = np.random.default_rng(1)
    w = _tone(130e6, amp=0.3)
    noisy = w.with_samples(w.samples + (rng.standard_normal(len(w)) + 1j * rng.standard_normal(len(w))))
    assert detect_tone(noisy) == pytest.approx(130e6, abs=1e9 / len(w))


def test_detect_tone_on_noise_raises():
    rng = np.random.default_rng(2)
    n = 20000
    noise = Waveform(rng.standard_normal(n) + 1j * rng.standard_normal(n), 1e9)
    with pytest.raises(DetectionError, match="no detectable tone"):
        detect_tone(noise)


def _sine(phase0, n=4000, rate=1e9, f=10e6):
    t = np.arange(n) / rate
    return Waveform(np.sin(2 * np.pi * f * t + phase0), rate), t


def test_hilbert_phase_slope_of_sine():
    w, t = _sine(0.0)
    core = slice(200, -200)
    slope, _ = linear_fit(hilbert_phase(w).values[core], t[core])
    assert slope == pytest.approx(2 * np.pi * 10e6, rel=1e-9)


def test_hilbert_phase_intercept_follows_injected_constant():
    core = slice(200, -200)
    w0, t = _sine(0.0)
    w1, _ = _sine(0.3)
    _, c0 = linear_fit(hilbert_phase(w0).values[core], t[core])
    _, c1 = linear_fit(hilbert_phase(w1).values[core], t[core])
    # atan2(H(y), y) of sin(x) is x - π/2, so compare against the unshifted sine
    assert c0 == pytest.approx(-np.pi / 2, abs=1e-3)
    assert c1 - c0 == pytest.approx(0.3, abs=1e-3)


def test_hilbert_phase_of_constant():
    assert np.all(hilbert_phase(Waveform(np.full(64, 2.0), 1.0)).values == 0)
    assert np.allclose(np.abs(hilbert_phase(Waveform(np.full(64, -2.0), 1.0)).values), np.pi)


def test_hilbert_phase_rejects_complex():
    with pytest.raises(ValueError):
        hilbert_phase(_tone(1e6, n=64))


@given(slope=st.floats(-1e3, 1e3), intercept=st.floats(-10, 10))
@settings(max_examples=50, deadline=None)
def test_linear_fit_recovers_line(slope, intercept):
    t = np.linspace(0, 1, 101)
    s, c = linear_fit(slope * t + intercept, t)
    assert s == pytest.approx(slope, abs=1e-9)
    assert c == pytest.approx(intercept, abs=1e-9)


def test_frequency_offset_of_clean_tone():
    n = 2_500_000
    t = np.arange(n) / 1e9
    real = Waveform(np.cos(2 * np.pi * 200e6 * t), 1e9)
    assert estimate_frequency_offset(real, 1e6, coarse_bandwidth=4e6) == pytest.approx(200e6, abs=1.0)


def test_frequency_offset_at_20db_snr():
    n = 250_000
    t = np.arange(n) / 1e9
    errors = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        # tone power 0.5, noise variance 0.005
        y = np.cos(2 * np.pi * 199.7e6 * t + rng.uniform(0, 2 * np.pi))
        y += rng.standard_normal(n) * math.sqrt(0.005)
        errors.append(estimate_frequency_offset(Waveform(y, 1e9), 1e6, coarse_bandwidth=4e6) - 199.7e6)
    errors = np.array(errors)
    assert abs(errors.mean()) + 3 * errors.std() < 500.0


def test_frequency_offset_without_pilot():
    rng = np.random.default_rng(5)
    with pytest.raises(DetectionError, match="no detectable tone"):
        estimate_frequency_offset(Waveform(rng.standard_normal(20000), 1e9), 1e6)


def test_shift_to_baseband():
    n, rate = 4096, 1e9
    f = 37 * rate / n
    w = _tone(f, n, rate, amp=1.3, phase=0.2)
    shifted = shift_to_baseband(w, f)
    assert int(np.argmax(np.abs(np.fft.fft(shifted.samples)))) == 0
    assert shift_to_baseband(w, 0.0).samples.tobytes() == w.samples.tobytes()
    e0 = np.sum(np.abs(w.samples) ** 2)
    assert np.sum(np.abs(shifted.samples) ** 2) == pytest.approx(e0, rel=1e-12)


def test_filter_is_linear():
    rng = np.random.default_rng(6)
    n = 4096
    x = Waveform(rng.standard_normal(n) + 1j * rng.standard_normal(n), 1e9)
    y = Waveform(rng.standard_normal(n) + 1j * rng.standard_normal(n), 1e9)
    spec = FilterSpec(130e6, 10e6)
    lhs = apply_filter(x.with_samples(2.0 * x.samples - 0.5j * y.samples), spec).samples
    rhs = 2.0 * apply_filter(x, spec).samples - 0.5j * apply_filter(y, spec).samples
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_rrc_cascade_matches_raised_cosine_response():
    sps, beta = 10, 0.4
    rc = np.convolve(rrc_kernel(beta, sps, 24), rrc_kernel(beta, sps, 24))
    nfft = 8192
    H = np.abs(np.fft.rfft(rc, nfft))
    H /= H[0]
    f = np.fft.rfftfreq(nfft, 1 / sps)  # in units of the symbol rate
    ideal = np.where(
        f <= (1 - beta) / 2,
        1.0,
        np.where(f >= (1 + beta) / 2, 0.0, 0.5 * (1 + np.cos(np.pi / beta * (f - (1 - beta) / 2)))),
    )
    assert np.max(np.abs(H - ideal)) < 0.02
    # the cascade is at -6 dB (half amplitude) at half the symbol rate
    assert np.interp(0.5, f, H) == pytest.approx(0.5, abs=0.01)


def test_whiten_flattens_coloured_noise():
    rng = np.random.default_rng(3)
    n = 2**16
    rate = 1.0
    white = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    freqs = np.fft.fftfreq(n, 1 / rate)
    psd = 1.0 + 3.0 * np.exp(-((freqs / 0.1) ** 2))
    coloured = np.fft.ifft(np.fft.fft(white) * np.sqrt(psd))
    out = whiten(Waveform(coloured, rate), NoiseSpectrum(freqs, psd))
    assert np.allclose(out.samples, white, atol=1e-9)


def test_whiten_flat_psd_scales_uniformly():
    rng = np.random.default_rng(7)
    x = rng.standard_normal(256) + 1j * rng.standard_normal(256)
    freqs = np.fft.fftfreq(256)
    out = whiten(Waveform(x, 1.0), NoiseSpectrum(freqs, np.full(256, 4.0)))
    assert np.allclose(out.samples, x / 2.0, atol=1e-12)


def test_whiten_shaped_noise_is_flat_within_1db():
    from scipy import signal

    rng = np.random.default_rng(8)
    n = 2**18
    taps = rrc_kernel(0.4, 10, 12)
    shaped = signal.oaconvolve(rng.standard_normal(n) + 1j * rng.standard_normal(n), taps, mode="same")
    # vacuum floor plus a shaped excess contribution
    shaped = shaped * 3.0 + rng.standard_normal(n) + 1j * rng.standard_normal(n)
    freqs = np.fft.fftfreq(n)
    psd = 2.0 + 18.0 * np.abs(np.fft.fft(taps, n)) ** 2
    out = whiten(Waveform(shaped, 1.0), NoiseSpectrum(freqs, psd))
    f, p = signal.welch(out.samples, nperseg=1024, return_onesided=False, detrend=False)
    band = np.abs(f) < 0.3
    assert 10 * np.log10(p[band].max() / p[band].min()) < 1.0


def test_whiten_rejects_zero_bin():
    with pytest.raises(ValueError):
        whiten(Waveform(np.ones(8, complex), 1.0), NoiseSpectrum(np.arange(8.0), np.zeros(8)))


CFG = FrameConfig(frame_symbols=3000, cazac_symbols=500, pilot_amplitude=0.0)


def _baseband(seed=0, delay=0, rotation=0.0, cfg=CFG):
    wave = synthesize_frame(cfg, generate_symbols(cfg, seed))
    t = wave.time
    x = wave.samples * np.exp(-2j * np.pi * cfg.quantum_shift * t) * np.exp(1j * rotation)
    x = np.concatenate([np.zeros(delay, complex), x])
    return matched_filter(Waveform(x, wave.rate), cfg)


def test_sync_finds_delay_and_rotation():
    sync = synchronize(_baseband(delay=1234, rotation=0.7), frame_header(CFG), CFG)
    assert sync.sample_offset == 1234
    assert sync.bulk_phase == pytest.approx(0.7, abs=1e-3)
    assert sync.peak_metric > 0.5


def test_sync_without_header_raises():
    rng = np.random.default_rng(4)
    noise = Waveform(rng.standard_normal(80000) + 1j * rng.standard_normal(80000), 1e9)
    with pytest.raises(SyncError, match="sync not found"):
        synchronize(noise, frame_header(CFG), CFG)


def test_loopback_symbols_match():
    cfg = FrameConfig(frame_symbols=3000, cazac_symbols=500, pilot_amplitude=0.0, rrc_taps=201)
    base = _baseband(seed=9, cfg=cfg)
    sync = synchronize(base, frame_header(cfg), cfg)
    got = downsample_to_symbols(base, cfg, sync) / math.sqrt(cfg.mean_photons)
    sent = generate_symbols(cfg, 9).alice_symbols
    core = slice(20, -20)
    err = np.sqrt(np.mean(np.abs(got[core] - sent[core]) ** 2) / np.mean(np.abs(sent[core]) ** 2))
    assert len(got) == cfg.frame_symbols
    assert err < 1e-3


def test_decimation_preserves_mean_phase():
    cfg = FrameConfig(frame_symbols=2000, cazac_symbols=0)
    n = cfg.total_symbols * cfg.adc_sps
    rng = np.random.default_rng(10)
    phase = 0.4 + 0.01 * rng.standard_normal(n)
    wave = Waveform(np.exp(1j * phase), cfg.adc_rate)
    from cvqkd_ukf.dsp import SyncResult

    sym = downsample_to_symbols(wave, cfg, SyncResult(0, 0.0, 1.0))
    assert np.angle(np.mean(sym)) == pytest.approx(np.angle(np.mean(wave.samples)), abs=2e-3)


def test_downsample_offset_out_of_range():
    from cvqkd_ukf.dsp import SyncResult

    cfg = FrameConfig(frame_symbols=100, cazac_symbols=0)
    wave = Waveform(np.ones(100 * cfg.adc_sps, complex), cfg.adc_rate)
    with pytest.raises(ValueError, match="outside"):
        downsample_to_symbols(wave, cfg, SyncResult(25, 0.0, 1.0))
