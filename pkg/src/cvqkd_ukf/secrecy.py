"""Parameter estimation and asymptotic key rate for Gaussian-modulated CV-QKD.

Conventions, shared by every function here:

* Quadratures are in SNU of the heterodyne output, vacuum variance 1.
* Alice's symbols carry per-quadrature variance 2N; Bob's heterodyne output
  has variance N·η + e + t + 1 per quadrature and covariance N·√(2η) with
  Alice's.  ``e`` is excess noise at Bob's detector output, ``t`` trusted
  electronic noise.
* The entanglement-based picture uses an EPR state of variance V = 2N + 1
  in quadrature units (vacuum = 1).  Excess noise e per heterodyne
  quadrature is 2e in these units.
* A trusted detector of efficiency η_d is a beam splitter that mixes Bob's
  input mode with one arm of an EPR pair of variance v = 1 + 2t/(1-η_d);
  the other arm and the splitter's output stay out of Eve's reach.  Eve acts
  on the channel alone, with transmittance η/η_d and excess e/η_d referred
  to the channel output.
* Reverse reconciliation: S = S(E) - S(E|B) = S(AB0) - S(A F G | B).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CovarianceEstimate",
    "ChannelEstimate",
    "KeyRateInputs",
    "KeyRate",
    "estimate_covariance",
    "infer_channel",
    "forward_covariance",
    "kappa",
    "untrusted_phase_noise",
    "cloner_w",
    "excess_from_cloner",
    "g",
    "symplectic_eigenvalues",
    "von_neumann_entropy",
    "mutual_information",
    "holevo_bound",
    "secret_key_rate",
    "PhysicalityError",
]


class PhysicalityError(ValueError):
    """Covariance matrix violates the uncertainty principle."""


@dataclass(frozen=True)
class CovarianceEstimate:
    n_mean_photons: float
    z_hat: float
    y_hat: float
    frames: int = 1


@dataclass(frozen=True)
class ChannelEstimate:
    eta_hat: float
    e_hat: float
    e_hat_minus_trusted: float


@dataclass(frozen=True)
class KeyRateInputs:
    N: float
    eta: float
    e: float
    beta: float = 0.95
    trusted_detector_efficiency: float = 1.0
    trusted_electronic_photons: float = 0.0

    def __post_init__(self):
        if not self.N >= 0:
            raise ValueError(f"N must be >= 0, got {self.N}")
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if not self.e >= 0:
            raise ValueError(f"excess noise must be >= 0, got {self.e}")
        if not 0 <= self.beta <= 1:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0 < self.trusted_detector_efficiency <= 1:
            raise ValueError("trusted detector efficiency must lie in (0, 1]")
        if not self.trusted_electronic_photons >= 0:
            raise ValueError("trusted electronic noise must be >= 0")


@dataclass(frozen=True)
class KeyRate:
    key_rate: float
    mutual_information: float
    holevo: float

    @property
    def clamped(self) -> float:
        return max(self.key_rate, 0.0)


def estimate_covariance(alice: np.ndarray, bob: np.ndarray, N: float) -> CovarianceEstimate:
    """ẑ from the I/Q cross-covariances, ŷ from Bob's per-quadrature variance.

    ``alice`` must already be scaled so each quadrature has variance 2N.
    """
    alice = np.asarray(alice)
    bob = np.asarray(bob)
    if len(alice) != len(bob):
        raise ValueError(f"length mismatch: {len(alice)} vs {len(bob)}")
    if len(alice) == 0:
        raise ValueError("no symbols")
    z = 0.5 * (np.cov(alice.real, bob.real)[0, 1] + np.cov(alice.imag, bob.imag)[0, 1])
    y = 0.5 * (np.var(bob.real, ddof=1) + np.var(bob.imag, ddof=1))
    return CovarianceEstimate(float(N), float(z), float(y))


def forward_covariance(N: float, eta: float, e: float) -> CovarianceEstimate:
    """Expected (ẑ, ŷ) for a given channel."""
    return CovarianceEstimate(N, N * math.sqrt(2 * eta), N * eta + e + 1)


def infer_channel(cov: CovarianceEstimate, trusted_t: float = 0.0) -> ChannelEstimate:
    """η̂ = ẑ²/2N², ê = ŷ - ẑ²/2N - 1; ê is left unclipped."""
    N = cov.n_mean_photons
    if not N > 0:
        raise ValueError("N must be > 0 to infer the channel")
    eta = cov.z_hat**2 / (2 * N**2)
    e = cov.y_hat - cov.z_hat**2 / (2 * N) - 1
    return ChannelEstimate(eta, e, e - trusted_t)


def kappa(sigma_pn: float) -> float:
    """Covariance shrinkage exp(-σ²/2) from Gaussian residual phase noise."""
    return math.exp(-(sigma_pn**2) / 2)


def untrusted_phase_noise(eta: float, e: float, N: float, kappa: float) -> tuple[float, float]:
    """Map residual phase noise onto loss and excess noise."""
    k2 = kappa**2
    return k2 * eta, e + (1 - k2) * N * eta


def cloner_w(e: float, eta: float) -> float:
    """Thermal photons Eve injects to produce excess noise e."""
    if eta == 1:
        if e > 0:
            raise ValueError("a lossless channel cannot carry excess noise in the cloner model")
        return 0.0
    return e / (1 - eta)


def excess_from_cloner(w: float, eta: float) -> float:
    return w * (1 - eta)


def g(nu):
    """Entropy of a thermal mode with symplectic eigenvalue ν (vacuum ν = 1)."""
    nu = np.asarray(nu, float)
    a = (nu + 1) / 2
    b = (nu - 1) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a * np.log2(a) - np.where(b > 0, b * np.log2(np.where(b > 0, b, 1)), 0.0)
    return out if out.ndim else float(out)


def _omega(modes):
    w = np.array([[0.0, 1.0], [-1.0, 0.0]])
    return np.kron(np.eye(modes), w)


def symplectic_eigenvalues(gamma: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    gamma = np.asarray(gamma, float)
    modes = gamma.shape[0] // 2
    ev = np.sort(np.abs(np.linalg.eigvals(1j * _omega(modes) @ gamma)))
    nu = ev[::2]
    if np.any(nu < 1 - tol):
        raise PhysicalityError(f"symplectic eigenvalue {nu.min():.12f} < 1")
    return np.maximum(nu, 1.0)


def von_neumann_entropy(gamma: np.ndarray) -> float:
    return float(np.sum(g(symplectic_eigenvalues(gamma))))


def _heterodyne_condition(gamma: np.ndarray, mode: int) -> np.ndarray:
    """Covariance of the other modes after heterodyning ``mode``."""
    idx = np.arange(gamma.shape[0])
    b = idx[2 * mode : 2 * mode + 2]
    rest = np.setdiff1d(idx, b)
    ga = gamma[np.ix_(rest, rest)]
    gb = gamma[np.ix_(b, b)]
    c = gamma[np.ix_(rest, b)]
    return ga - c @ np.linalg.inv(gb + np.eye(2)) @ c.T


def _channel_state(N, T, e_ch):
    V = 2 * N + 1
    c = math.sqrt(T * (V * V - 1))
    b = T * (V - 1) + 1 + 2 * e_ch
    Z = np.diag([1.0, -1.0])
    I = np.eye(2)
    return np.block([[V * I, c * Z], [c * Z, b * I]])


def holevo_bound(
    N: float,
    eta: float,
    e: float,
    detector_efficiency: float = 1.0,
    electronic_noise: float = 0.0,
) -> float:
    """Eve's Holevo information on Bob's heterodyne data, per symbol.

    ``eta`` and ``e`` are as seen at Bob's detector output; with a trusted
    detector they include its efficiency and ``electronic_noise`` is excluded
    from ``e``.
    """
    eta_d, t = detector_efficiency, electronic_noise
    if eta > eta_d * (1 + 1e-12):
        raise ValueError(f"eta={eta} exceeds the trusted detector efficiency {eta_d}")
    if eta_d == 1 and t > 0:
        raise ValueError("trusted electronic noise needs a detector efficiency below 1")
    T = min(eta / eta_d, 1.0)
    gamma_ab0 = _channel_state(N, T, e / eta_d)
    s_ab0 = von_neumann_entropy(gamma_ab0)
    if eta_d == 1:
        s_cond = von_neumann_entropy(_heterodyne_condition(gamma_ab0, 1))
    else:
        v = 1 + 2 * t / (1 - eta_d)
        cf = math.sqrt(v * v - 1)
        Z = np.diag([1.0, -1.0])
        I = np.eye(2)
        # modes A, B0, F0, G
        full = np.zeros((8, 8))
        full[:4, :4] = gamma_ab0
        full[4:, 4:] = np.block([[v * I, cf * Z], [cf * Z, v * I]])
        r, s = math.sqrt(eta_d), math.sqrt(1 - eta_d)
        bs = np.eye(8)
        bs[2:6, 2:6] = np.block([[r * I, s * I], [-s * I, r * I]])
        mixed = bs @ full @ bs.T
        # mode order now A, B, F, G; condition on B
        s_cond = von_neumann_entropy(_heterodyne_condition(mixed, 1))
    return max(s_ab0 - s_cond, 0.0)


def mutual_information(N: float, eta: float, e_total: float) -> float:
    """Alice-Bob information for heterodyne detection, both quadratures."""
    return math.log2((eta * N + e_total + 1) / (e_total + 1))


def secret_key_rate(inputs: KeyRateInputs) -> KeyRate:
    """K = β·I - S with trusted detector loss and electronic noise.

    Bob's information uses the full η and e + t; Eve's uses the channel
    transmittance η/η_d and only the untrusted excess noise.
    """
    i_ab = mutual_information(
        inputs.N, inputs.eta, inputs.e + inputs.trusted_electronic_photons
    )
    s = holevo_bound(
        inputs.N,
        inputs.eta,
        inputs.e,
        inputs.trusted_detector_efficiency,
        inputs.trusted_electronic_photons,
    )
    return KeyRate(inputs.beta * i_ab - s, i_ab, s)
