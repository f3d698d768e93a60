"""BPSK over AWGN and the reliability densities built on it.

The analysis convention is the all-zero codeword, so a received value is
``R = 1 + W`` with ``W ~ N(0, N0/2)`` and the reliability is ``A = |R|``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

# exponential tail fit Q(x) ~ exp(a x^2 + b x + c) for x >= 0
Q_POLY_COEFFS = (-0.385, -0.765, -0.695)


@dataclass(frozen=True)
class ChannelParams:
    """Noise level of the channel; ``snr_db = 10 log10(2 / N0)``."""

    N0: float

    def __post_init__(self):
        if not self.N0 > 0:
            raise ValueError(f"N0 must be positive, got {self.N0}")

    @classmethod
    def from_snr_db(cls, snr_db: float) -> "ChannelParams":
        return cls(2.0 / 10 ** (snr_db / 10.0))

    @property
    def snr_db(self) -> float:
        return 10.0 * np.log10(2.0 / self.N0)

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.N0 / 2.0))

    @property
    def alpha_max(self) -> float:
        """Upper end of the reliability integration range (mean plus 8 sigma)."""
        return 1.0 + 8.0 * self.sigma


@dataclass(frozen=True, eq=False)
class ReceivedFrame:
    r: np.ndarray
    y: np.ndarray
    alpha: np.ndarray
    truth_c: np.ndarray | None = None


def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    """Independent stream for one trial: SeedSequence(master_seed, spawn_key=(trial_index,))."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(trial_index,)))


def hard_decision(r: np.ndarray) -> np.ndarray:
    return (np.asarray(r) < 0).astype(np.uint8)


def transmit(c: np.ndarray, params: ChannelParams, rng: np.random.Generator) -> ReceivedFrame:
    """Send codeword bits ``c`` as ``(-1)^c`` through Gaussian noise."""
    c = np.asarray(c, dtype=np.uint8)
    s = 1.0 - 2.0 * c
    r = s + rng.normal(0.0, params.sigma, size=c.shape)
    return ReceivedFrame(r, hard_decision(r), np.abs(r), c)


def q_function(x, mode: str = "Exact"):
    """Gaussian tail probability Q(x).

    ``PolyApprox`` uses the exponential fit for ``x >= 0`` and the reflection
    ``Q(-x) = 1 - Q(x)`` otherwise; its absolute error stays below about 0.01
    on the whole line.
    """
    x = np.asarray(x, dtype=np.float64)
    if mode == "Exact":
        out = 0.5 * special.erfc(x / np.sqrt(2.0))
    elif mode == "PolyApprox":
        a, b, c = Q_POLY_COEFFS
        ax = np.abs(x)
        tail = np.exp(a * ax * ax + b * ax + c)
        tail = np.minimum(tail, 0.5)
        out = np.where(x >= 0, tail, 1.0 - tail)
    else:
        raise ValueError(f"unknown Q-function mode {mode!r}")
    return out if out.ndim else float(out)


def density_r(x, params: ChannelParams):
    """Density of a received value under the all-zero convention."""
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-((x - 1.0) ** 2) / params.N0) / np.sqrt(np.pi * params.N0)


def reliability_pdf(alpha, params: ChannelParams):
    a = np.asarray(alpha, dtype=np.float64)
    out = np.where(a >= 0, density_r(a, params) + density_r(-a, params), 0.0)
    return out if out.ndim else float(out)


def reliability_cdf(alpha, params: ChannelParams):
    a = np.asarray(alpha, dtype=np.float64)
    s = params.sigma
    val = 1.0 - q_function((a + 1.0) / s) - q_function((a - 1.0) / s)
    out = np.where(a >= 0, np.clip(val, 0.0, 1.0), 0.0)
    return out if out.ndim else float(out)


def reliability_sf(alpha, params: ChannelParams):
    """``1 - F_A`` computed without cancellation in the upper tail."""
    a = np.asarray(alpha, dtype=np.float64)
    s = params.sigma
    val = q_function((a + 1.0) / s) + q_function((a - 1.0) / s)
    out = np.where(a >= 0, np.clip(val, 0.0, 1.0), 1.0)
    return out if out.ndim else float(out)


def bit_error_given_reliability(alpha, params: ChannelParams):
    """Pe(u | alpha_u) = f_R(-a) / (f_R(-a) + f_R(a)) = 1 / (1 + exp(4a/N0))."""
    a = np.asarray(alpha, dtype=np.float64)
    return special.expit(-4.0 * a / params.N0)


def log_bit_error_given_reliability(alpha, params: ChannelParams):
    """(log Pe, log(1 - Pe)) without underflow."""
    a = np.asarray(alpha, dtype=np.float64)
    z = 4.0 * a / params.N0
    return -np.logaddexp(0.0, z), -np.logaddexp(0.0, -z)


def raw_bit_error_prob(params: ChannelParams) -> float:
    """Hard-decision error probability Q(sqrt(2/N0))."""
    return float(q_function(np.sqrt(2.0 / params.N0)))
