"""Binary antipodal transmission over an AWGN channel.

SNR convention: unit-amplitude symbols (0 -> -1, 1 -> +1) with noise
variance ``2 / SNR_linear``, so that the hard-decision BER is
``Q(sqrt(SNR_linear / 2))``. At 10 dB that is 1.27e-2, the operating point
quoted for the training SNR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .seqgen import BitSequence, Provenance

GAUSSIAN_ALGORITHM = "numpy-PCG64-ziggurat"


@dataclass(frozen=True)
class AwgnConfig:
    snr_db: float
    rng_seed: int

    def __post_init__(self):
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError(f"snr_db must be finite or +inf, got {self.snr_db}")

    @property
    def sigma(self) -> float:
        return noise_sigma(self.snr_db)


@dataclass(frozen=True)
class ReceivedSequence:
    samples: np.ndarray
    snr_db: float
    source: BitSequence

    def __len__(self) -> int:
        return int(self.samples.size)


def noise_sigma(snr_db: float) -> float:
    if snr_db == math.inf:
        return 0.0
    return math.sqrt(2.0 / 10.0 ** (snr_db / 10.0))


def modulate_binary(bits: BitSequence | np.ndarray) -> np.ndarray:
    b = bits.bits if isinstance(bits, BitSequence) else np.asarray(bits)
    return 2.0 * b.astype(np.float64) - 1.0


def gaussian_noise(n: int, rng_seed: int) -> np.ndarray:
    """Standard normal samples; the same seed always gives the same draw."""
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    return rng.standard_normal(n)


def add_awgn(signal: np.ndarray, cfg: AwgnConfig, source: BitSequence | None = None) -> ReceivedSequence:
    signal = np.asarray(signal, dtype=np.float64)
    if signal.size == 0:
        raise ValueError("signal is empty")
    sigma = cfg.sigma
    samples = signal + sigma * gaussian_noise(signal.size, cfg.rng_seed) if sigma > 0 else signal.copy()
    if source is None:
        source = BitSequence((signal > 0).astype(np.uint8), Provenance("unknown"))
    return ReceivedSequence(samples, cfg.snr_db, source)


def hard_decide(received: ReceivedSequence | np.ndarray) -> BitSequence:
    samples = received.samples if isinstance(received, ReceivedSequence) else np.asarray(received)
    prov = received.source.provenance if isinstance(received, ReceivedSequence) else Provenance("decided")
    return BitSequence((samples >= 0).astype(np.uint8), prov)


def qfunc(x):
    """Gaussian tail probability ``Q(x) = 0.5 * erfc(x / sqrt(2))``."""
    return 0.5 * erfc(np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


def theoretical_ber(snr_db: float) -> float:
    """Hard-decision BER of the channel at `snr_db`."""
    if snr_db == math.inf:
        return 0.0
    return float(qfunc(math.sqrt(10.0 ** (snr_db / 10.0) / 2.0)))
