"""Waveform containers, DFT magnitude spectra, spectral subtraction and
fundamental-frequency extraction.

All functions are pure: they never mutate their inputs and hold no state.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.io import wavfile

from wingbeat.errors import BinMismatch, EmptyBand, EmptyInput, InvalidInput, NoPeak

MIN_SAMPLE_RATE_HZ = 4000
DEFAULT_SAMPLE_RATE_HZ = 8000
DEFAULT_BAND_HZ = (100.0, 2000.0)
DEFAULT_FLOOR_BETA = 0.02
DEFAULT_OVERSUBTRACTION = 1.5

# relative slack when comparing bin centres against band edges
_EDGE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Uniformly sampled mono waveform.

    Attributes
    ----------
    samples : ndarray, shape (n,)
        Amplitudes in [-1, 1].
    sample_rate_hz : int
        Sampling rate; at least 4000 Hz so Nyquist covers the 2 kHz band edge.
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidInput(f"expected mono samples, got shape {samples.shape}")
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz < MIN_SAMPLE_RATE_HZ:
            raise InvalidInput(
                f"sample rate must be an integer >= {MIN_SAMPLE_RATE_HZ} Hz, got {self.sample_rate_hz}"
            )
        if not np.all(np.isfinite(samples)):
            raise InvalidInput("samples must be finite")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise InvalidInput("samples must lie in [-1, 1]")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True, eq=False)
class Spectrum:
    """One-sided DFT magnitude vector.

    ``magnitudes[i]`` sits at ``start_hz + i * bin_width_hz``.
    """

    magnitudes: np.ndarray
    bin_width_hz: float
    start_hz: float = 0.0

    def __post_init__(self):
        mags = np.asarray(self.magnitudes, dtype=np.float64)
        if mags.ndim != 1:
            raise InvalidInput("magnitudes must be a vector")
        if not np.all(np.isfinite(mags)) or np.any(mags < 0):
            raise InvalidInput("magnitudes must be finite and non-negative")
        if not self.bin_width_hz > 0:
            raise InvalidInput("bin_width_hz must be positive")
        mags.setflags(write=False)
        object.__setattr__(self, "magnitudes", mags)
        object.__setattr__(self, "bin_width_hz", float(self.bin_width_hz))
        object.__setattr__(self, "start_hz", float(self.start_hz))

    def __len__(self) -> int:
        return self.magnitudes.size

    @property
    def frequencies(self) -> np.ndarray:
        return self.start_hz + self.bin_width_hz * np.arange(self.magnitudes.size)

    @property
    def geometry(self) -> tuple[int, float, float]:
        return (self.magnitudes.size, self.bin_width_hz, self.start_hz)

    def same_geometry(self, other: "Spectrum") -> bool:
        return same_geometry(self.geometry, other.geometry)


def same_geometry(a: tuple[int, float, float], b: tuple[int, float, float]) -> bool:
    """Compare (n_bins, bin_width_hz, start_hz) triples with float slack."""
    return (
        a[0] == b[0]
        and np.isclose(a[1], b[1], rtol=1e-9, atol=0.0)
        and np.isclose(a[2], b[2], rtol=0.0, atol=1e-9 * max(a[1], 1.0))
    )


def check_geometry(a: Spectrum, b: Spectrum) -> None:
    if not a.same_geometry(b):
        raise BinMismatch(f"spectrum geometry {a.geometry} != {b.geometry}")


@dataclass(frozen=True, eq=False)
class NoiseProfile:
    """Background magnitude estimate aligned with a clip's one-sided DFT bins."""

    mean_magnitudes: np.ndarray
    bin_width_hz: float

    def __post_init__(self):
        mags = np.asarray(self.mean_magnitudes, dtype=np.float64)
        if mags.ndim != 1 or not np.all(np.isfinite(mags)) or np.any(mags < 0):
            raise InvalidInput("mean_magnitudes must be a finite non-negative vector")
        mags.setflags(write=False)
        object.__setattr__(self, "mean_magnitudes", mags)
        object.__setattr__(self, "bin_width_hz", float(self.bin_width_hz))

    @classmethod
    def zeros_for(cls, clip: AudioClip) -> "NoiseProfile":
        n = len(clip)
        return cls(np.zeros(n // 2 + 1), clip.sample_rate_hz / n)

    def scaled(self, factor: float) -> "NoiseProfile":
        return NoiseProfile(self.mean_magnitudes * factor, self.bin_width_hz)


def compute_spectrum(clip: AudioClip, dft_length: int | None = None) -> Spectrum:
    """Magnitude of the one-sided DFT of ``clip``.

    The clip is zero-padded or truncated to ``dft_length`` samples (default: the
    clip length); bins ``0 .. dft_length // 2`` are returned.
    """
    if len(clip) == 0:
        raise EmptyInput("cannot take the spectrum of an empty clip")
    n = len(clip) if dft_length is None else int(dft_length)
    if n < 2:
        raise InvalidInput("dft_length must be >= 2")
    mags = np.abs(np.fft.rfft(clip.samples, n=n))
    return Spectrum(mags, clip.sample_rate_hz / n, 0.0)


def band_mask(frequencies: np.ndarray, lo_hz: float, hi_hz: float, bin_width_hz: float) -> np.ndarray:
    tol = _EDGE_TOL * bin_width_hz
    return (frequencies >= lo_hz - tol) & (frequencies <= hi_hz + tol)


def truncate_band(
    spec: Spectrum, lo_hz: float = DEFAULT_BAND_HZ[0], hi_hz: float = DEFAULT_BAND_HZ[1]
) -> Spectrum:
    """Keep exactly the bins whose centre frequency lies in ``[lo_hz, hi_hz]``."""
    if not lo_hz < hi_hz:
        raise InvalidInput(f"band must satisfy lo < hi, got [{lo_hz}, {hi_hz}]")
    idx = np.flatnonzero(band_mask(spec.frequencies, lo_hz, hi_hz, spec.bin_width_hz))
    if idx.size == 0:
        raise EmptyBand(f"no bins of {spec.geometry} fall inside [{lo_hz}, {hi_hz}] Hz")
    return Spectrum(spec.magnitudes[idx[0] : idx[-1] + 1], spec.bin_width_hz, spec.frequencies[idx[0]])


def band_spectrum(
    clip: AudioClip,
    dft_length: int | None = None,
    band: tuple[float, float] = DEFAULT_BAND_HZ,
) -> Spectrum:
    """``truncate_band(compute_spectrum(clip))``: the feature used for distances."""
    return truncate_band(compute_spectrum(clip, dft_length), *band)


def spectral_subtract(
    clip: AudioClip,
    noise: NoiseProfile,
    floor_beta: float = DEFAULT_FLOOR_BETA,
    oversubtraction: float = DEFAULT_OVERSUBTRACTION,
) -> AudioClip:
    """Magnitude-domain spectral subtraction over one analysis frame.

    The whole clip is one frame (no window). For every bin the cleaned magnitude is
    ``max(|X| - oversubtraction * N, floor_beta * N)``; the phase of ``X`` is kept and
    the result is resynthesised to the original length. Output is clipped to [-1, 1].

    Parameters
    ----------
    clip : AudioClip
    noise : NoiseProfile
        Must have ``len(clip) // 2 + 1`` bins at ``sample_rate / len(clip)`` Hz spacing.
    floor_beta : float
        Spectral floor as a fraction of the noise magnitude, in [0, 1).
    oversubtraction : float
        Multiplier applied to the noise estimate before subtraction (>= 1 suppresses
        the residual left by bins where the realisation exceeds its mean).
    """
    if len(clip) == 0:
        raise EmptyInput("cannot denoise an empty clip")
    if not 0.0 <= floor_beta < 1.0:
        raise InvalidInput("floor_beta must lie in [0, 1)")
    if oversubtraction < 0:
        raise InvalidInput("oversubtraction must be non-negative")
    n = len(clip)
    n_bins = n // 2 + 1
    if noise.mean_magnitudes.size != n_bins or not np.isclose(
        noise.bin_width_hz, clip.sample_rate_hz / n, rtol=1e-9, atol=0.0
    ):
        raise BinMismatch(
            f"noise profile has {noise.mean_magnitudes.size} bins at {noise.bin_width_hz} Hz; "
            f"clip needs {n_bins} bins at {clip.sample_rate_hz / n} Hz"
        )
    if not np.any(noise.mean_magnitudes):
        return clip
    spec = np.fft.rfft(clip.samples)
    mag = np.abs(spec)
    n_mag = noise.mean_magnitudes
    cleaned = np.maximum(mag - oversubtraction * n_mag, floor_beta * n_mag)
    phase = np.exp(1j * np.angle(spec))
    out = np.fft.irfft(cleaned * phase, n=n)
    return AudioClip(np.clip(out, -1.0, 1.0), clip.sample_rate_hz)


def estimate_noise_profile(segments: Sequence[AudioClip], dft_length: int | None = None) -> NoiseProfile:
    """Average magnitude spectrum of background-only segments."""
    if not segments:
        raise EmptyInput("need at least one background segment")
    specs = [compute_spectrum(s, dft_length) for s in segments]
    first = specs[0]
    for s in specs[1:]:
        check_geometry(first, s)
    return NoiseProfile(np.mean([s.magnitudes for s in specs], axis=0), first.bin_width_hz)


def fundamental_frequency(
    spec: Spectrum, lo_hz: float = DEFAULT_BAND_HZ[0], hi_hz: float = DEFAULT_BAND_HZ[1]
) -> float:
    """Centre frequency of the highest bin in ``[lo_hz, hi_hz]``; ties go low."""
    band = truncate_band(spec, lo_hz, hi_hz)
    if not np.any(band.magnitudes > 0):
        raise NoPeak(f"no energy in [{lo_hz}, {hi_hz}] Hz")
    # np.argmax returns the first maximum, i.e. the lowest frequency
    return float(band.frequencies[int(np.argmax(band.magnitudes))])


def read_wav(path: str | Path) -> AudioClip:
    """Load a mono WAV (16-bit PCM or 32-bit float)."""
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise InvalidInput(f"{path}: only mono WAV is supported (got {data.shape[1]} channels)")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise InvalidInput(f"{path}: unsupported sample format {data.dtype}")
    return AudioClip(samples, rate)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write ``clip`` as a 32-bit float mono WAV."""
    wavfile.write(str(path), clip.sample_rate_hz, clip.samples.astype(np.float32))
