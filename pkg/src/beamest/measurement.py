"""Compressed pilot observations ``y = Phi h_B + n``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ZeroChannel
from .linalg import apply


@dataclass(frozen=True)
class MeasurementModel:
    Phi: np.ndarray
    snr_db: float
    sigma2: float

    @property
    def K(self):
        return self.Phi.shape[0]

    @property
    def P(self):
        return self.Phi.shape[1]


@dataclass(frozen=True)
class Observation:
    y: np.ndarray
    h_B_true: np.ndarray
    noise_realization: np.ndarray
    model: MeasurementModel


def bernoulli_matrix(K, P, rng):
    """``K x P`` matrix of equiprobable ``+-1/sqrt(K)`` entries.

    Returned as a real float64 array; every routine that consumes it accepts
    real or complex matrices.
    """
    if K < 1 or P < 1:
        raise ValueError("K and P must be >= 1")
    signs = rng.integers(0, 2, size=(K, P), dtype=np.int8)
    return (2.0 * signs - 1.0) / math.sqrt(K)


def coherence(Phi):
    """Largest ``|<Phi_i, Phi_j>|`` over distinct column pairs."""
    Phi = np.asarray(Phi)
    if Phi.shape[1] < 2:
        raise ValueError("coherence needs at least two columns")
    G = np.abs(Phi.conj().T @ Phi)
    np.fill_diagonal(G, 0.0)
    return float(G.max())


def noise_power(signal_energy, K, snr_db):
    """Per-entry noise variance for a given received signal energy."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return signal_energy / (K * 10.0 ** (snr_db / 10.0))


def observe(Phi, h_B, snr_db, rng):
    """Noisy compressed observation of ``h_B``.

    SNR is the received signal energy ``||Phi h_B||^2`` over the expected
    noise energy ``K sigma2``.  ``snr_db = inf`` gives a noiseless
    observation and draws nothing from ``rng``.
    """
    Phi = np.asarray(Phi)
    h_B = np.asarray(h_B, dtype=np.complex128)
    K, P = Phi.shape
    if h_B.shape != (P,):
        raise DimensionMismatch(f"h_B has shape {h_B.shape}, expected ({P},)")
    if not np.any(h_B):
        raise ZeroChannel("beam-domain channel is identically zero")
    signal = apply(Phi, h_B)
    sigma2 = noise_power(float(np.vdot(signal, signal).real), K, snr_db)
    if sigma2 == 0.0:
        noise = np.zeros(K, dtype=np.complex128)
    else:
        noise = math.sqrt(sigma2 / 2.0) * (rng.standard_normal(K) + 1j * rng.standard_normal(K))
    return Observation(
        y=signal + noise,
        h_B_true=h_B,
        noise_realization=noise,
        model=MeasurementModel(Phi=Phi, snr_db=snr_db, sigma2=sigma2),
    )
