"""PAM4 intensity-modulation / direct-detection link.

PAM4 levels are equally spaced in detected intensity, {0, 1/3, 2/3, 1},
i.e. field amplitudes are their square roots; ``level_spacing="field"``
selects equally spaced field amplitudes instead.

Chain: raised-cosine shaping of the optical field, chromatic dispersion as
an all-pass quadratic-phase filter, square-law photodetection, then real
Gaussian noise referenced to the detected signal power. Every stage works
on the whole burst cyclically (DFT based), which is exact for bursts made
of whole pattern periods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channel import gaussian_noise
from .seqgen import SymbolSequence

SPEED_OF_LIGHT = 299_792_458.0
PAM4_LEVELS = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
RC_SPAN_SYMBOLS = 16


@dataclass(frozen=True)
class ImddConfig:
    baud_rate: float = 32e9
    samples_per_symbol: int = 2
    rolloff: float = 0.95
    fiber_km: float = 10.0
    dispersion_ps_nm_km: float = 17.0
    wavelength_nm: float = 1550.0
    snr_db: float = math.inf
    rng_seed: int = 0
    level_spacing: str = "intensity"

    def __post_init__(self):
        if self.level_spacing not in ("intensity", "field"):
            raise ValueError(f"unknown level_spacing {self.level_spacing!r}")
        if self.samples_per_symbol < 2:
            raise ValueError("samples_per_symbol must be >= 2")
        if not 0.0 <= self.rolloff <= 1.0:
            raise ValueError("rolloff must lie in [0, 1]")
        if self.fiber_km < 0:
            raise ValueError("fiber_km must be >= 0")

    @property
    def sample_rate(self) -> float:
        return self.baud_rate * self.samples_per_symbol

    @property
    def field_levels(self) -> np.ndarray:
        if self.level_spacing == "field":
            return PAM4_LEVELS.copy()
        return np.sqrt(PAM4_LEVELS)

    @property
    def intensity_levels(self) -> np.ndarray:
        return self.field_levels**2

    @property
    def beta2(self) -> float:
        """Group-velocity dispersion in s^2/m (negative for standard SMF)."""
        d = self.dispersion_ps_nm_km * 1e-12 / (1e-9 * 1e3)
        lam = self.wavelength_nm * 1e-9
        return -d * lam**2 / (2.0 * math.pi * SPEED_OF_LIGHT)

    def with_snr(self, snr_db: float, rng_seed: int | None = None) -> "ImddConfig":
        return replace(self, snr_db=snr_db, rng_seed=self.rng_seed if rng_seed is None else rng_seed)


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: float

    def __len__(self) -> int:
        return int(self.samples.size)


def raised_cosine(t: np.ndarray, rolloff: float) -> np.ndarray:
    """Raised-cosine impulse response at times `t` given in symbol periods."""
    t = np.asarray(t, dtype=np.float64)
    h = np.sinc(t)
    if rolloff == 0:
        return h
    denom = 1.0 - (2.0 * rolloff * t) ** 2
    singular = np.isclose(denom, 0.0, atol=1e-12)
    safe = np.where(singular, 1.0, denom)
    h = h * np.cos(math.pi * rolloff * t) / safe
    return np.where(singular, math.pi / 4.0 * np.sinc(1.0 / (2.0 * rolloff)), h)


def raised_cosine_taps(cfg: ImddConfig, span: int = RC_SPAN_SYMBOLS) -> np.ndarray:
    sps = cfg.samples_per_symbol
    t = np.arange(-span * sps, span * sps + 1) / sps
    return raised_cosine(t, cfg.rolloff)


def _circular_filter(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Circular convolution with a centred odd-length FIR."""
    n = x.size
    half = taps.size // 2
    if taps.size > n:
        kernel = np.zeros(n)
        for k, v in enumerate(taps):
            kernel[(k - half) % n] += v
    else:
        kernel = np.zeros(n)
        kernel[: half + 1] = taps[half:]
        kernel[n - half :] = taps[:half]
    return np.fft.ifft(np.fft.fft(x) * np.fft.fft(kernel))


def shape_pulses(symbols: SymbolSequence | np.ndarray, cfg: ImddConfig) -> Waveform:
    """Map PAM4 symbols to field levels and shape them with raised-cosine pulses.

    The centre of symbol ``k`` sits at sample ``k * samples_per_symbol``.
    """
    idx = symbols.symbols if isinstance(symbols, SymbolSequence) else np.asarray(symbols)
    if idx.size == 0:
        raise ValueError("no symbols to shape")
    sps = cfg.samples_per_symbol
    up = np.zeros(idx.size * sps)
    up[::sps] = cfg.field_levels[idx]
    field = _circular_filter(up, raised_cosine_taps(cfg))
    return Waveform(field.real.astype(np.complex128), cfg.sample_rate)


def dispersion_transfer(n: int, sample_rate: float, beta2: float, length_m: float) -> np.ndarray:
    f = np.fft.fftfreq(n, d=1.0 / sample_rate)
    return np.exp(1j * 2.0 * math.pi**2 * beta2 * length_m * f**2)


def apply_dispersion(field: Waveform, cfg: ImddConfig, beta2: float | None = None) -> Waveform:
    """Propagate the field over ``cfg.fiber_km`` of fibre (linear, lossless)."""
    x = field.samples
    if not np.iscomplexobj(x):
        raise TypeError("apply_dispersion expects a complex field waveform")
    if cfg.fiber_km == 0:
        return Waveform(x.copy(), field.sample_rate)
    b2 = cfg.beta2 if beta2 is None else beta2
    h = dispersion_transfer(x.size, field.sample_rate, b2, cfg.fiber_km * 1e3)
    return Waveform(np.fft.ifft(np.fft.fft(x) * h), field.sample_rate)


def square_law_detect(field: Waveform) -> Waveform:
    x = field.samples
    return Waveform(x.real**2 + x.imag**2, field.sample_rate)


def detected_waveform(symbols: SymbolSequence | np.ndarray, cfg: ImddConfig) -> Waveform:
    """Noiseless photocurrent: shaping, dispersion and square-law detection."""
    return square_law_detect(apply_dispersion(shape_pulses(symbols, cfg), cfg))


def add_detector_noise(signal: Waveform, snr_db: float, rng_seed: int) -> Waveform:
    """Add real AWGN with variance ``mean(signal**2) / SNR_linear``."""
    x = signal.samples
    if snr_db == math.inf:
        return Waveform(x.copy(), signal.sample_rate)
    sigma = math.sqrt(float(np.mean(x**2)) / 10.0 ** (snr_db / 10.0))
    return Waveform(x + sigma * gaussian_noise(x.size, rng_seed), signal.sample_rate)


def imdd_link(symbols: SymbolSequence | np.ndarray, cfg: ImddConfig) -> Waveform:
    clean = detected_waveform(symbols, cfg)
    return add_detector_noise(clean, cfg.snr_db, cfg.rng_seed)


def centre_samples(received: Waveform, cfg: ImddConfig) -> np.ndarray:
    return received.samples[:: cfg.samples_per_symbol]


def level_thresholds(cfg: ImddConfig) -> np.ndarray:
    """Midpoints between the nominal detected levels."""
    levels = cfg.intensity_levels
    return 0.5 * (levels[1:] + levels[:-1])


def fit_level_thresholds(intensities: np.ndarray, symbols: np.ndarray) -> np.ndarray:
    """Midpoints between the mean received intensity of each transmitted level.

    Dispersion moves the average detected level of each symbol away from its
    nominal value; calibrating on labelled data keeps the threshold receiver
    from being needlessly pessimistic.
    """
    symbols = np.asarray(symbols)
    means = np.array([np.mean(intensities[symbols == k]) for k in range(4)])
    return 0.5 * (means[1:] + means[:-1])


def decide_levels(intensities: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Threshold decision; returns symbol indices 0..3."""
    return np.searchsorted(np.sort(thresholds), intensities, side="right")
