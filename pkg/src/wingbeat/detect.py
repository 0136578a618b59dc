"""Sliding-window insect|non-insect detection and snippet extraction.

A window is a candidate when its in-band energy clears a gate, and a positive
when its nearest exemplar is an insect exemplar rather than a background one.
Exemplars are compared by Euclidean distance between band-truncated spectra,
by default after reducing each to its sorted unit-norm magnitude profile. Positive windows close in
time form one event; each event is cut out, centred on its loudest window and
zero-padded to one second.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import median_filter

from wingbeat.errors import BinMismatch, InvalidInput, NotEnoughBackground
from wingbeat.signal import (
    DEFAULT_BAND_HZ,
    AudioClip,
    NoiseProfile,
    Spectrum,
    band_mask,
)

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_MS = 100.0
DEFAULT_HOP_MS = 10.0
DEFAULT_MERGE_MS = 150.0
DEFAULT_GATE_DB = 6.0
DEFAULT_ROLLING_S = 10.0
REPRESENTATIONS = ("profile", "raw")


def magnitude_profile(mags: np.ndarray) -> np.ndarray:
    """Unit-norm band magnitudes sorted in descending order.

    Invariant to where the peaks sit, so ten exemplars cover every wingbeat
    frequency: a harmonic stack is a few large values, noise is a flat tail.
    """
    mags = np.atleast_2d(mags)
    norm = np.linalg.norm(mags, axis=1, keepdims=True)
    unit = np.divide(mags, norm, out=np.zeros_like(mags), where=norm > 0)
    return -np.sort(-unit, axis=1)


def _band_index(n_win: int, sample_rate: int, band: tuple[float, float]) -> np.ndarray:
    width = sample_rate / n_win
    freqs = width * np.arange(n_win // 2 + 1)
    idx = np.flatnonzero(band_mask(freqs, band[0], band[1], width))
    if idx.size == 0:
        raise InvalidInput(f"band {band} has no bins at {width} Hz resolution")
    return idx


def window_features(
    samples: np.ndarray, n_win: int, n_hop: int, sample_rate: int, band: tuple[float, float]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Band magnitudes and band energy for every full window.

    Returns ``(starts, magnitudes, energies)``; energy is the mean squared band
    magnitude per sample so it does not depend on the window length's scaling.
    """
    if samples.size < n_win:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 0)), np.zeros(0)
    idx = _band_index(n_win, sample_rate, band)
    frames = sliding_window_view(samples, n_win)[::n_hop]
    starts = np.arange(frames.shape[0], dtype=np.int64) * n_hop
    mags = np.empty((frames.shape[0], idx.size))
    for lo in range(0, frames.shape[0], 4096):
        mags[lo : lo + 4096] = np.abs(np.fft.rfft(frames[lo : lo + 4096], axis=1))[:, idx]
    energies = np.einsum("ij,ij->i", mags, mags) / n_win
    return starts, mags, energies


@dataclass(frozen=True, eq=False)
class DetectorModel:
    """1-NN insect|background detector over band-truncated window spectra.

    Attributes
    ----------
    insect_exemplars, background_exemplars : ndarray, shape (m, n_bins)
    energy_gate : float
        Absolute minimum band energy for a window to be considered.
    sample_rate_hz : int
    window_samples : int
    band : (lo_hz, hi_hz)
    """

    insect_exemplars: np.ndarray
    background_exemplars: np.ndarray
    energy_gate: float
    sample_rate_hz: int
    window_samples: int
    band: tuple[float, float] = DEFAULT_BAND_HZ
    representation: str = "profile"

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise InvalidInput(f"unknown representation {self.representation!r}")
        ins = np.atleast_2d(np.asarray(self.insect_exemplars, dtype=np.float64))
        bg = np.atleast_2d(np.asarray(self.background_exemplars, dtype=np.float64))
        if ins.shape[0] == 0 or bg.shape[0] == 0 or ins.size == 0 or bg.size == 0:
            raise InvalidInput("detector needs at least one insect and one background exemplar")
        n_bins = _band_index(self.window_samples, self.sample_rate_hz, self.band).size
        if ins.shape[1] != n_bins or bg.shape[1] != n_bins:
            raise BinMismatch(f"exemplars must have {n_bins} bins for this window/band")
        object.__setattr__(self, "insect_exemplars", ins)
        object.__setattr__(self, "background_exemplars", bg)

    @property
    def bin_width_hz(self) -> float:
        return self.sample_rate_hz / self.window_samples

    @property
    def insect_spectra(self) -> list[Spectrum]:
        start = _band_index(self.window_samples, self.sample_rate_hz, self.band)[0] * self.bin_width_hz
        return [Spectrum(m, self.bin_width_hz, start) for m in self.insect_exemplars]

    @property
    def background_spectra(self) -> list[Spectrum]:
        start = _band_index(self.window_samples, self.sample_rate_hz, self.band)[0] * self.bin_width_hz
        return [Spectrum(m, self.bin_width_hz, start) for m in self.background_exemplars]

    @classmethod
    def from_window_clips(
        cls,
        insect: Sequence[AudioClip],
        background: Sequence[AudioClip],
        band: tuple[float, float] = DEFAULT_BAND_HZ,
        gate_db: float = DEFAULT_GATE_DB,
        representation: str = "profile",
    ) -> "DetectorModel":
        """Build from window-length example clips (all of one length and rate)."""
        clips = list(insect) + list(background)
        if not insect or not background:
            raise InvalidInput("need insect and background example clips")
        rate, n_win = clips[0].sample_rate_hz, len(clips[0])
        if any(c.sample_rate_hz != rate or len(c) != n_win for c in clips):
            raise BinMismatch("example clips must share sample rate and length")
        feats = [window_features(c.samples, n_win, n_win, rate, band) for c in clips]
        mags = np.stack([f[1][0] for f in feats])
        bg_energy = np.array([f[2][0] for f in feats[len(insect) :]])
        gate = float(np.median(bg_energy) * 10 ** (gate_db / 10.0))
        return cls(mags[: len(insect)], mags[len(insect) :], gate, rate, n_win, band, representation)

    def classify_windows(self, mags: np.ndarray) -> np.ndarray:
        """True where the nearest exemplar is an insect (ties go to insect)."""
        ex = np.vstack([self.insect_exemplars, self.background_exemplars])
        if self.representation == "profile":
            ex, mags = magnitude_profile(ex), magnitude_profile(mags)
        out = np.zeros(mags.shape[0], dtype=bool)
        for lo in range(0, mags.shape[0], 2048):
            m = mags[lo : lo + 2048]
            d2 = ((m[:, None, :] - ex[None, :, :]) ** 2).sum(axis=2)
            out[lo : lo + 2048] = np.argmin(d2, axis=1) < self.insect_exemplars.shape[0]
        return out

    def to_dict(self) -> dict:
        return {
            "insect_exemplars": self.insect_exemplars.tolist(),
            "background_exemplars": self.background_exemplars.tolist(),
            "energy_gate": self.energy_gate,
            "sample_rate_hz": self.sample_rate_hz,
            "window_samples": self.window_samples,
            "band": list(self.band),
            "representation": self.representation,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DetectorModel":
        return cls(
            np.asarray(data["insect_exemplars"]),
            np.asarray(data["background_exemplars"]),
            float(data["energy_gate"]),
            int(data["sample_rate_hz"]),
            int(data["window_samples"]),
            tuple(data.get("band", DEFAULT_BAND_HZ)),
            data.get("representation", "profile"),
        )


@dataclass(frozen=True, eq=False)
class EventSnippet:
    """One detected flight sound, centred in a zero-padded one-second clip.

    ``span_samples`` is the number of source samples copied in (the rest is
    padding); ``event_offset_s`` is the event centre in the source recording.
    """

    clip: AudioClip
    event_offset_s: float
    source_id: str
    span_samples: int
    band_energy: float


def _rolling_median(energies: np.ndarray, step: int, size: int) -> np.ndarray:
    """Median over roughly ``size`` windows, estimated on every ``step``-th one."""
    coarse = energies[::step]
    width = max(1, min(size // step, coarse.size))
    med = median_filter(coarse, size=width, mode="nearest")
    return np.repeat(med, step)[: energies.size]


def detect_events(
    recording: AudioClip,
    model: DetectorModel,
    window_ms: float = DEFAULT_WINDOW_MS,
    hop_ms: float = DEFAULT_HOP_MS,
    *,
    merge_ms: float = DEFAULT_MERGE_MS,
    gate_db: float = DEFAULT_GATE_DB,
    rolling_s: float = DEFAULT_ROLLING_S,
    source_id: str = "",
) -> list[EventSnippet]:
    """Find insect flight sounds in a continuous recording.

    A window is positive when its band energy exceeds both ``model.energy_gate``
    and ``gate_db`` above the rolling median band energy, and its nearest exemplar
    is an insect. Positive windows whose starts are within ``merge_ms`` of each
    other form one event, centred on its highest-energy window. Events whose
    centres fall within half a second of a stronger event are dropped, so emitted
    snippets never overlap by more than 50%.
    """
    rate = recording.sample_rate_hz
    n_win = int(round(window_ms * rate / 1000.0))
    n_hop = max(1, int(round(hop_ms * rate / 1000.0)))
    if rate != model.sample_rate_hz or n_win != model.window_samples:
        raise BinMismatch(
            f"recording at {rate} Hz / {n_win}-sample windows does not match detector "
            f"({model.sample_rate_hz} Hz / {model.window_samples})"
        )
    if len(recording) <= n_win:
        raise InvalidInput("recording must be longer than one detection window")
    starts, mags, energies = window_features(recording.samples, n_win, n_hop, rate, model.band)
    step = max(1, n_win // n_hop)
    background = _rolling_median(energies, step, int(rolling_s * rate / n_hop))
    gate = np.maximum(model.energy_gate, background * 10 ** (gate_db / 10.0))
    cand = np.flatnonzero((energies > gate) & (energies > 0))
    if cand.size == 0:
        return []
    positive = cand[model.classify_windows(mags[cand])]
    if positive.size == 0:
        return []

    merge = int(round(merge_ms * rate / 1000.0))
    groups: list[np.ndarray] = np.split(positive, np.flatnonzero(np.diff(starts[positive]) > merge) + 1)
    events = []
    for g in groups:
        best = g[np.argmax(energies[g])]
        centre = int(starts[best]) + n_win // 2
        events.append((float(energies[best]), centre, int(starts[g[0]]), int(starts[g[-1]]) + n_win))
    # strongest first; suppress weaker events centred within half a second
    events.sort(key=lambda e: (-e[0], e[1]))
    kept: list[tuple[float, int, int, int]] = []
    half = rate // 2
    for ev in events:
        if all(abs(ev[1] - k[1]) >= half for k in kept):
            kept.append(ev)
    kept.sort(key=lambda e: e[1])
    return [_cut_snippet(recording, energy, centre, lo, hi, source_id) for energy, centre, lo, hi in kept]


def _cut_snippet(recording: AudioClip, energy: float, centre: int, lo: int, hi: int, source_id: str) -> EventSnippet:
    rate = recording.sample_rate_hz
    out = np.zeros(rate)
    # source span limited to the half-second either side of the centre
    lo = max(lo, centre - rate // 2, 0)
    hi = min(hi, centre - rate // 2 + rate, len(recording))
    dest = rate // 2 - (centre - lo)
    out[dest : dest + (hi - lo)] = recording.samples[lo:hi]
    return EventSnippet(AudioClip(out, rate), centre / rate, source_id, hi - lo, energy)


def refresh_background(
    model: DetectorModel,
    recording: AudioClip,
    every_s: float,
    n_exemplars: int = 10,
    gate_db: float = DEFAULT_GATE_DB,
) -> DetectorModel:
    """New model whose background exemplars are the quietest windows of the last
    ``every_s`` seconds of ``recording`` (the whole recording if shorter)."""
    if recording.sample_rate_hz != model.sample_rate_hz:
        raise BinMismatch("recording rate does not match detector")
    n_win = model.window_samples
    tail = recording.samples[-int(round(every_s * recording.sample_rate_hz)) :] if every_s > 0 else recording.samples
    _, mags, energies = window_features(tail, n_win, n_win, model.sample_rate_hz, model.band)
    if energies.size < n_exemplars:
        raise NotEnoughBackground(f"need {n_exemplars} windows of background, found {energies.size}")
    quiet = np.argsort(energies, kind="stable")[:n_exemplars]
    gate = float(np.median(energies[quiet]) * 10 ** (gate_db / 10.0))
    return DetectorModel(
        model.insect_exemplars, mags[np.sort(quiet)], gate, model.sample_rate_hz, n_win, model.band, model.representation
    )


def background_profile(recording: AudioClip, dft_length: int | None = None, quantile: float = 0.25) -> NoiseProfile | None:
    """Mean magnitude spectrum of the quietest one-second stretches of a recording.

    Returns ``None`` when the recording is shorter than one segment.
    """
    n = recording.sample_rate_hz if dft_length is None else dft_length
    if len(recording) < n:
        return None
    segs = recording.samples[: (len(recording) // n) * n].reshape(-1, n)
    energy = np.einsum("ij,ij->i", segs, segs)
    keep = max(1, int(np.ceil(quantile * segs.shape[0])))
    quiet = np.sort(np.argsort(energy, kind="stable")[:keep])
    mags = np.abs(np.fft.rfft(segs[quiet], axis=1)).mean(axis=0)
    return NoiseProfile(mags, recording.sample_rate_hz / n)


def snippet_profile(profile: NoiseProfile, span_samples: int, segment_samples: int) -> NoiseProfile:
    """Rescale a full-segment noise profile to a snippet holding ``span_samples``
    of source audio (noise magnitude grows with the square root of its length)."""
    return profile.scaled(np.sqrt(span_samples / segment_samples))
