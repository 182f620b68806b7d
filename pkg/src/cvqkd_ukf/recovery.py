"""Carrier recovery: Hilbert/detrend reference and the unscented Kalman filter."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numba
import numpy as np

from .dsp import hilbert_phase, linear_fit
from .model import PhaseTrace, UkfState, Waveform, phase_increment_variance

__all__ = [
    "UkfConfig",
    "TrackResult",
    "InnovationHistory",
    "TrackingError",
    "reference_track",
    "ukf_predict",
    "ukf_update",
    "ukf_track",
    "adapt_noise_step",
    "compensate",
    "converged_index",
]

# Prior wider than this puts the outer sigma points a full turn apart, where
# they alias onto the same pilot sample and the gain is identically zero.
DEFAULT_INITIAL_VARIANCE = math.pi**2 / 3
VARIANCE_FLOOR = 1e-15


class TrackingError(RuntimeError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class UkfConfig:
    """UKF settings.

    ``measurement`` selects the pilot model: ``"iq"`` uses both quadratures of
    the baseband pilot, ``"real"`` uses only A·sin(Δω·k + θ).  ``pilot_amplitude``
    of None estimates A from the input power.
    """

    linewidth_guess: float = 200.0
    measurement_noise: float = 1e-3
    ut_params: tuple[float, float, float] = (1.0, 2.0, 0.0)
    initial_mean: float = 0.0
    initial_variance: float = DEFAULT_INITIAL_VARIANCE
    adapt_noise: bool = False
    symbol_period: float = 2e-8
    measurement: str = "iq"
    pilot_amplitude: float | None = None
    freq_offset: float = 0.0
    adapt_window: int = 1000
    adapt_interval: int = 100
    adapt_measurement_noise: bool = False
    adapt_seed: int = 0

    def __post_init__(self):
        if not self.linewidth_guess > 0:
            raise ValueError(f"linewidth_guess must be > 0, got {self.linewidth_guess}")
        if not self.initial_variance > 0:
            raise ValueError(f"initial_variance must be > 0, got {self.initial_variance}")
        if not self.measurement_noise > 0:
            raise ValueError(f"measurement_noise must be > 0, got {self.measurement_noise}")
        if self.measurement not in ("iq", "real"):
            raise ValueError(f"measurement must be 'iq' or 'real', got {self.measurement!r}")
        if self.adapt_window < 100:
            raise ValueError("adapt_window must be >= 100 symbols")

    @property
    def process_noise(self) -> float:
        return phase_increment_variance(self.linewidth_guess, self.symbol_period)


@dataclass(frozen=True)
class TrackResult:
    phase: PhaseTrace
    posterior_std: np.ndarray
    converged_at: int | None
    process_noise: np.ndarray | None = None
    frequency_offset: float | None = None


@dataclass(frozen=True)
class InnovationHistory:
    """Per-symbol innovations and local measurement slopes dh/dθ.

    ``prior_mean`` is the predicted phase, so ``prior_mean + innovation/slope``
    is a pseudo-measurement of the phase that does not depend on the filter's Q.
    """

    innovation: np.ndarray
    slope: np.ndarray
    prior_mean: np.ndarray


def reference_track(pilot_wave: Waveform, samples_per_symbol: int = 1, offset: int = 0) -> TrackResult:
    """Hilbert phase of the filtered pilot, linearly detrended, one value per symbol.

    A real record goes through the Hilbert transform; a complex one is taken
    to be the analytic signal already (a one-sided band-pass output).  The
    removed slope is reported as ``frequency_offset`` in Hz.
    """
    y = np.asarray(pilot_wave.samples)
    if np.iscomplexobj(y):
        phase = np.unwrap(np.angle(y))
    else:
        phase = hilbert_phase(Waveform(y, pilot_wave.rate, pilot_wave.start)).values
    t = pilot_wave.time
    slope, intercept = linear_fit(phase, t)
    residual = phase - (slope * t + intercept)
    per_symbol = residual[offset::samples_per_symbol]
    return TrackResult(
        PhaseTrace(per_symbol, pilot_wave.rate / samples_per_symbol),
        np.empty(0),
        0,
        frequency_offset=slope / (2 * np.pi),
    )


def ukf_predict(state: UkfState) -> UkfState:
    """Random-walk transition: mean kept, variance grows by Q."""
    if state.process_noise == 0:
        return state
    return replace(state, variance=state.variance + state.process_noise)


def _weights(ut_params):
    alpha, beta, kappa = ut_params
    n = 1
    lam = alpha**2 * (n + kappa) - n
    wm0 = lam / (n + lam)
    wc0 = wm0 + 1 - alpha**2 + beta
    wi = 1 / (2 * (n + lam))
    return n + lam, np.array([wm0, wi, wi]), np.array([wc0, wi, wi])


def ukf_update(state: UkfState, y_k, k: int) -> tuple[UkfState, float]:
    """Unscented measurement update with one pilot sample.

    A complex ``y_k`` is read as the pair A·(cos φ, sin φ) with φ = Δω·k + θ;
    a real one as A·sin φ.
    """
    if not np.isfinite(y_k):
        raise TrackingError(f"non-finite pilot sample at symbol {k}", k)
    scale, wm, wc = _weights(state.ut_params)
    m, P = state.mean, state.variance
    spread = math.sqrt(scale * P)
    chi = np.array([m, m + spread, m - spread])
    phi = state.freq_offset * k + chi
    A = state.pilot_amplitude
    if np.iscomplexobj(y_k):
        Z = A * np.vstack([np.cos(phi), np.sin(phi)])
        y = np.array([y_k.real, y_k.imag])
    else:
        Z = A * np.sin(phi)[None, :]
        y = np.array([float(y_k)])
    mu = Z @ wm
    dz = Z - mu[:, None]
    S = (dz * wc) @ dz.T + state.measurement_noise * np.eye(len(y))
    C = (wc * (chi - m)) @ dz.T
    gain = np.linalg.solve(S, C)
    mean = m + gain @ (y - mu)
    var = max(P - gain @ S @ gain, VARIANCE_FLOOR)
    if not (math.isfinite(mean) and math.isfinite(var)):
        raise TrackingError(f"non-finite UKF state at symbol {k}", k)
    new = replace(state, mean=float(mean), variance=float(var))
    return new, new.mean


@numba.njit(cache=True)
def _track_kernel(y_re, y_im, use_iq, k0, m, P, Q, R, A, dw, scale, wm0, wi, wc0,
                  out_mean, out_var, out_innov, out_slope, out_prior):
    """Predict/update loop; returns -1 on success or the failing symbol index."""
    n = len(y_re)
    for j in range(n):
        k = k0 + j
        P = P + Q
        s = math.sqrt(scale * P)
        chi0 = m
        chi1 = m + s
        chi2 = m - s
        p0 = dw * k + chi0
        p1 = dw * k + chi1
        p2 = dw * k + chi2
        if use_iq:
            a0 = A * math.cos(p0)
            a1 = A * math.cos(p1)
            a2 = A * math.cos(p2)
            b0 = A * math.sin(p0)
            b1 = A * math.sin(p1)
            b2 = A * math.sin(p2)
            mu_a = wm0 * a0 + wi * (a1 + a2)
            mu_b = wm0 * b0 + wi * (b1 + b2)
            da0 = a0 - mu_a
            da1 = a1 - mu_a
            da2 = a2 - mu_a
            db0 = b0 - mu_b
            db1 = b1 - mu_b
            db2 = b2 - mu_b
            saa = wc0 * da0 * da0 + wi * (da1 * da1 + da2 * da2) + R
            sbb = wc0 * db0 * db0 + wi * (db1 * db1 + db2 * db2) + R
            sab = wc0 * da0 * db0 + wi * (da1 * db1 + da2 * db2)
            ca = wi * (s * da1 - s * da2)
            cb = wi * (s * db1 - s * db2)
            det = saa * sbb - sab * sab
            ka = (ca * sbb - cb * sab) / det
            kb = (cb * saa - ca * sab) / det
            ra = y_re[j] - mu_a
            rb = y_im[j] - mu_b
            m_new = m + ka * ra + kb * rb
            P_new = P - (ka * (saa * ka + sab * kb) + kb * (sab * ka + sbb * kb))
            # tangential innovation; the slope of h along θ has magnitude A
            out_innov[j] = -math.sin(p0) * ra + math.cos(p0) * rb
            out_slope[j] = A
        else:
            z0 = A * math.sin(p0)
            z1 = A * math.sin(p1)
            z2 = A * math.sin(p2)
            mu = wm0 * z0 + wi * (z1 + z2)
            d0 = z0 - mu
            d1 = z1 - mu
            d2 = z2 - mu
            S = wc0 * d0 * d0 + wi * (d1 * d1 + d2 * d2) + R
            c = wi * (s * d1 - s * d2)
            g = c / S
            r = y_re[j] - mu
            m_new = m + g * r
            P_new = P - g * S * g
            out_innov[j] = r
            out_slope[j] = A * math.cos(p0)
        out_prior[j] = m
        if P_new < 1e-15:
            P_new = 1e-15
        if not (math.isfinite(m_new) and math.isfinite(P_new)):
            return j
        m = m_new
        P = P_new
        out_mean[j] = m
        out_var[j] = P
    return -1


@numba.njit(cache=True)
def _window_loglik(z, zvar, Q):
    """Exact scalar random-walk Kalman log-likelihood of pseudo-phase measurements."""
    m = z[0]
    P = zvar[0]
    ll = 0.0
    for i in range(1, len(z)):
        P = P + Q
        S = P + zvar[i]
        r = z[i] - m
        ll -= 0.5 * (math.log(2 * math.pi * S) + r * r / S)
        g = P / S
        m = m + g * r
        P = (1 - g) * P
    return ll


def converged_index(posterior_std: np.ndarray, tail_fraction: float = 0.1) -> int | None:
    """First index where the std drops below twice its median over the final stretch."""
    if len(posterior_std) == 0:
        return None
    tail = max(1, int(len(posterior_std) * tail_fraction))
    steady = np.median(posterior_std[-tail:])
    below = np.nonzero(posterior_std < 2 * steady)[0]
    return int(below[0]) if len(below) else None


def adapt_noise_step(
    state: UkfState,
    innovation_history: InnovationHistory,
    enabled: bool = True,
    rng: np.random.Generator | None = None,
    steps: int = 20,
    proposal_scale: float = 0.3,
    adapt_measurement_noise: bool = False,
) -> UkfState:
    """Metropolis-Hastings refresh of (Q, R) from a window of innovations.

    Each innovation becomes a pseudo-measurement of the phase with variance
    R/slope².  Proposals are log-normal random walks; the target is the exact
    Kalman likelihood of the window under a flat prior on log Q (and log R).
    The returned Q, R are the geometric means of the chain.
    """
    if not enabled:
        return state
    slope = np.asarray(innovation_history.slope, float)
    usable = np.abs(slope) > 1e-3 * max(np.abs(slope).max(initial=0.0), 1e-300)
    if usable.sum() < 100:
        return state
    slope = slope[usable]
    z = innovation_history.prior_mean[usable] + innovation_history.innovation[usable] / slope
    inv_slope2 = 1.0 / slope**2
    rng = rng or np.random.default_rng(0)

    q, r = state.process_noise, state.measurement_noise
    if q <= 0:
        return state
    ll = _window_loglik(z, r * inv_slope2, q)
    log_q, log_r = [], []
    for _ in range(steps):
        q_new = q * math.exp(proposal_scale * rng.standard_normal())
        r_new = r * math.exp(proposal_scale * rng.standard_normal()) if adapt_measurement_noise else r
        ll_new = _window_loglik(z, r_new * inv_slope2, q_new)
        if math.log(rng.random()) < ll_new - ll:
            q, r, ll = q_new, r_new, ll_new
        log_q.append(math.log(q))
        log_r.append(math.log(r))
    return replace(
        state,
        process_noise=math.exp(float(np.mean(log_q))),
        measurement_noise=math.exp(float(np.mean(log_r))),
    )


def ukf_track(pilot_baseband_symbols, config: UkfConfig) -> TrackResult:
    """Run the UKF over one pilot sample per symbol.

    Complex input uses the two-quadrature model when ``config.measurement`` is
    "iq"; otherwise the imaginary part, A·sin(Δω·k + θ), is the measurement.
    """
    y = np.asarray(pilot_baseband_symbols)
    if y.size == 0:
        raise TrackingError("empty pilot input")
    bad = np.nonzero(~np.isfinite(y))[0]
    if len(bad):
        raise TrackingError(f"non-finite pilot sample at symbol {bad[0]}", int(bad[0]))
    use_iq = np.iscomplexobj(y) and config.measurement == "iq"
    if np.iscomplexobj(y):
        y_re, y_im = (y.real, y.imag) if use_iq else (y.imag, y.imag)
    else:
        y_re = y_im = y.astype(float)
    y_re = np.ascontiguousarray(y_re, float)
    y_im = np.ascontiguousarray(y_im, float)

    R = config.measurement_noise
    A = config.pilot_amplitude
    if A is None:
        if use_iq:
            a2 = float(np.mean(y_re**2 + y_im**2)) - 2 * R
        else:
            a2 = 2 * (float(np.mean(y_re**2)) - R)
        if not a2 > 0:
            raise TrackingError("pilot power does not exceed the measurement noise")
        A = math.sqrt(a2)

    scale, wm, wc = _weights(config.ut_params)
    state = UkfState(
        config.initial_mean, config.initial_variance, config.process_noise, R, A,
        config.freq_offset, config.symbol_period, config.ut_params,
    )
    n = len(y_re)
    mean = np.empty(n)
    var = np.empty(n)
    innov = np.empty(n)
    slope = np.empty(n)
    prior = np.empty(n)
    q_trace = np.empty(n) if config.adapt_noise else None
    rng = np.random.default_rng(config.adapt_seed)

    step = config.adapt_interval if config.adapt_noise else n
    m, P = state.mean, state.variance
    for start in range(0, n, step):
        stop = min(n, start + step)
        sl = slice(start, stop)
        status = _track_kernel(
            y_re[sl], y_im[sl], use_iq, start, m, P, state.process_noise,
            state.measurement_noise, A, config.freq_offset, scale, wm[0], wm[1], wc[0],
            mean[sl], var[sl], innov[sl], slope[sl], prior[sl],
        )
        if status >= 0:
            raise TrackingError(f"non-finite UKF state at symbol {start + status}", start + status)
        m, P = mean[stop - 1], var[stop - 1]
        if config.adapt_noise:
            q_trace[sl] = state.process_noise
            if stop >= config.adapt_window:
                w = slice(stop - config.adapt_window, stop)
                state = adapt_noise_step(
                    state,
                    InnovationHistory(innov[w], slope[w], prior[w]),
                    rng=rng,
                    adapt_measurement_noise=config.adapt_measurement_noise,
                )

    std = np.sqrt(var)
    return TrackResult(
        PhaseTrace(mean, 1.0 / config.symbol_period),
        std,
        converged_index(std),
        q_trace,
    )


def compensate(symbols: np.ndarray, phase: PhaseTrace) -> np.ndarray:
    """Rotate each symbol by minus its phase estimate."""
    symbols = np.asarray(symbols)
    if len(symbols) != len(phase.values):
        raise ValueError(f"{len(symbols)} symbols but {len(phase.values)} phase values")
    return symbols * np.exp(-1j * np.asarray(phase.values))
