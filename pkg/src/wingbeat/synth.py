"""Synthetic wingbeat data for desk-scale verification.

Everything here is a modelling choice, not measured insect data: a wingbeat
sound is a raised-cosine burst of harmonics ``sum_h a_h sin(2 pi h f0 t)`` with
``f0`` drawn per insect from a species Gaussian, and the per-species harmonic
profiles ("timbre") are invented so that the spectrum carries information the
fundamental alone does not. All generators are deterministic given a seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from wingbeat.bayes import class_label
from wingbeat.dataset import Dataset
from wingbeat.detect import DetectorModel
from wingbeat.errors import InvalidInput
from wingbeat.features import (
    MINUTES_PER_DAY,
    CircadianRhythm,
    learn_rhythm,
    uniform_rhythm,
    wrap_minutes,
)
from wingbeat.signal import (
    DEFAULT_BAND_HZ,
    DEFAULT_SAMPLE_RATE_HZ,
    AudioClip,
    band_spectrum,
    compute_spectrum,
    fundamental_frequency,
)

logger = logging.getLogger(__name__)

DEFAULT_HARMONICS = (1.0, 0.5, 0.25, 0.12)
F0_LIMITS_HZ = (100.0, 2000.0)
SLOT_JITTER_S = 0.25

CX_STIGMATOSOMA_F = class_label("Cx. stigmatosoma", "female")
AE_AEGYPTI_F = class_label("Ae. aegypti", "female")
AE_AEGYPTI_M = class_label("Ae. aegypti", "male")
CX_TARSALIS_M = class_label("Cx. tarsalis", "male")


@dataclass(frozen=True, eq=False)
class SpeciesSpec:
    """Generative model of one class.

    Attributes
    ----------
    label : str
    mean_hz, std_hz : float
        Gaussian of the fundamental (wingbeat) frequency.
    harmonic_amplitudes : tuple of float
        Relative amplitude of harmonics 1..H.
    rhythm : CircadianRhythm or None
        Time-of-day activity; ``None`` means uniform.
    duration_ms : (mean, jitter)
        Burst length is uniform on ``mean +/- jitter``.
    amplitude_jitter : float
        Log-scale s.d. of per-insect scatter applied to each harmonic amplitude.
    """

    label: str
    mean_hz: float
    std_hz: float
    harmonic_amplitudes: tuple[float, ...] = DEFAULT_HARMONICS
    rhythm: CircadianRhythm | None = None
    duration_ms: tuple[float, float] = (100.0, 20.0)
    amplitude_jitter: float = 0.0

    def __post_init__(self):
        if not 100.0 <= self.mean_hz <= 1000.0:
            raise InvalidInput(f"{self.label}: mean_hz {self.mean_hz} outside the mosquito range [100, 1000]")
        if not self.std_hz > 0:
            raise InvalidInput(f"{self.label}: std_hz must be positive")
        amps = tuple(float(a) for a in self.harmonic_amplitudes)
        if not amps or amps[0] <= 0 or any(a < 0 for a in amps):
            raise InvalidInput(f"{self.label}: harmonic amplitudes must be non-negative with the first > 0")
        object.__setattr__(self, "harmonic_amplitudes", amps)
        if self.duration_ms[0] - self.duration_ms[1] <= 0:
            raise InvalidInput(f"{self.label}: burst duration must stay positive")

    @property
    def activity(self) -> CircadianRhythm:
        return self.rhythm if self.rhythm is not None else uniform_rhythm()


# ---------------------------------------------------------------------------
# Rhythm shapes
# ---------------------------------------------------------------------------


def bump_rhythm(
    peaks: Sequence[tuple[float, float, float]] = (),
    baseline: float = 0.1,
    plateaus: Sequence[tuple[float, float, float]] = (),
    bin_minutes: int = 1,
) -> CircadianRhythm:
    """Smooth activity curve: a baseline, circular Gaussian peaks
    ``(centre_min, width_min, height)`` and flat ``(start_min, end_min, height)``
    plateaus with 20-minute soft edges."""
    t = (np.arange(MINUTES_PER_DAY // bin_minutes) + 0.5) * bin_minutes
    level = np.full(t.shape, float(baseline))
    for centre, width, height in peaks:
        d = np.abs(t - centre)
        d = np.minimum(d, MINUTES_PER_DAY - d)
        level += height * np.exp(-0.5 * (d / width) ** 2)
    for start, end, height in plateaus:
        rise = 1.0 / (1.0 + np.exp(-(t - start) / 20.0))
        fall = 1.0 / (1.0 + np.exp((t - end) / 20.0))
        level += height * rise * fall
    return CircadianRhythm(level / level.sum(), bin_minutes, "learned")


# ---------------------------------------------------------------------------
# Clips
# ---------------------------------------------------------------------------


def _draw_f0(spec: SpeciesSpec, rng: np.random.Generator) -> float:
    for _ in range(1000):
        f0 = rng.normal(spec.mean_hz, spec.std_hz)
        if F0_LIMITS_HZ[0] <= f0 <= F0_LIMITS_HZ[1]:
            return float(f0)
    return float(np.clip(spec.mean_hz, *F0_LIMITS_HZ))


def raised_cosine(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * (np.arange(n) + 0.5) / n)


def _burst(spec: SpeciesSpec, rng: np.random.Generator, sample_rate: int) -> tuple[np.ndarray, float]:
    """Unit-scale harmonic burst (no noise) and its fundamental."""
    f0 = _draw_f0(spec, rng)
    mean, jitter = spec.duration_ms
    dur_ms = mean + (rng.uniform(-jitter, jitter) if jitter > 0 else 0.0)
    n = max(int(round(dur_ms * sample_rate / 1000.0)), 8)
    amps = np.asarray(spec.harmonic_amplitudes)
    if spec.amplitude_jitter > 0:
        amps = amps * np.exp(spec.amplitude_jitter * rng.standard_normal(amps.size))
        # keep the fundamental the strongest partial so the spectral peak is the wingbeat frequency
        amps[1:] = np.minimum(amps[1:], 0.9 * amps[0])
    phases = rng.uniform(0.0, 2.0 * np.pi, amps.size)
    t = np.arange(n) / sample_rate
    wave = np.zeros(n)
    for h, (a, phi) in enumerate(zip(amps, phases), start=1):
        if h * f0 < sample_rate / 2:
            wave += a * np.sin(2.0 * np.pi * h * f0 * t + phi)
    return wave * raised_cosine(n), f0


def gen_wingbeat_clip(
    spec: SpeciesSpec,
    seed,
    sample_rate: int = DEFAULT_SAMPLE_RATE_HZ,
    snr_db: float | None = None,
    normalize: str = "energy",
    level: float = 0.15,
) -> tuple[AudioClip, float]:
    """One centred, zero-padded 1-s wingbeat snippet and its true fundamental.

    White noise at ``snr_db`` (relative to the burst's mean power) is added over the
    burst extent only, so the padding stays exactly zero.

    With ``normalize="energy"`` every clip carries the energy of a 100 ms burst of
    RMS ``level``, so spectra differ in shape but not in overall norm (scaled down
    further only if the peak would exceed 1). With ``normalize="peak"`` the clip
    is scaled to a peak magnitude of ``level``.
    """
    if normalize not in ("energy", "peak"):
        raise InvalidInput(f"normalize must be 'energy' or 'peak', got {normalize!r}")
    rng = np.random.default_rng(seed)
    burst, f0 = _burst(spec, rng, sample_rate)
    if snr_db is not None:
        noise_sd = math.sqrt(np.mean(burst**2) / 10 ** (snr_db / 10.0))
        burst = burst + noise_sd * rng.standard_normal(burst.size)
    out = np.zeros(sample_rate)
    start = sample_rate // 2 - burst.size // 2
    out[start : start + burst.size] = burst
    if normalize == "energy":
        target = level**2 * 0.1 * sample_rate
        out *= math.sqrt(target / np.sum(out**2))
        top = np.max(np.abs(out))
        if top > 1.0:
            out /= top
    else:
        out *= level / np.max(np.abs(out))
    return AudioClip(out, sample_rate), f0


@dataclass(frozen=True, eq=False)
class SyntheticExemplar:
    index: int
    label: str
    clip: AudioClip
    f0_hz: float
    minutes: float


def iter_exemplars(
    specs: Sequence[SpeciesSpec],
    n_per_class: int,
    seed: int,
    sample_rate: int = DEFAULT_SAMPLE_RATE_HZ,
    snr_db: float | None = 20.0,
) -> Iterator[SyntheticExemplar]:
    """Class-major stream of labelled snippets with times drawn from each rhythm."""
    index = 0
    for c, spec in enumerate(specs):
        times = spec.activity.sample(n_per_class, np.random.default_rng([seed, c, 1]))
        for i in range(n_per_class):
            clip, f0 = gen_wingbeat_clip(spec, [seed, c, 0, i], sample_rate, snr_db)
            yield SyntheticExemplar(index, spec.label, clip, f0, float(times[i]))
            index += 1


def gen_dataset(
    specs: Sequence[SpeciesSpec],
    n_per_class: int,
    seed: int,
    sample_rate: int = DEFAULT_SAMPLE_RATE_HZ,
    snr_db: float | None = 20.0,
    band: tuple[float, float] = DEFAULT_BAND_HZ,
) -> Dataset:
    """Featurise ``n_per_class`` synthetic snippets per species.

    ``wingbeat_hz`` holds the fundamental measured from each spectrum (not the
    generating value), so Gaussian fits see the same data the kNN does.
    """
    rows, labels, minutes, wingbeat = [], [], [], []
    geometry = None
    for ex in iter_exemplars(specs, n_per_class, seed, sample_rate, snr_db):
        full = compute_spectrum(ex.clip)
        spec = band_spectrum(ex.clip, band=band)
        geometry = spec.geometry
        rows.append(spec.magnitudes)
        labels.append(ex.label)
        minutes.append(ex.minutes)
        wingbeat.append(fundamental_frequency(full, *band))
    return Dataset(np.stack(rows), tuple(labels), geometry, np.array(minutes), None, np.array(wingbeat))


# ---------------------------------------------------------------------------
# Species presets
# ---------------------------------------------------------------------------


def three_species_replica() -> list[SpeciesSpec]:
    """Three-species stand-in for the classic wingbeat-histogram example.

    Only the first fundamental (365 +/- 41 Hz) echoes a measured value; the other
    two fundamentals, all harmonic profiles and all rhythms are invented. One pair
    overlaps heavily in fundamental, the outer pair barely.
    """
    stig_rhythm = bump_rhythm(peaks=[(6 * 60, 25, 1.0), (19 * 60, 25, 1.0)], baseline=0.02)
    tarsalis_rhythm = bump_rhythm(peaks=[(6 * 60 + 15, 30, 1.0), (19 * 60 + 20, 30, 0.9)], baseline=0.02)
    aegypti_rhythm = bump_rhythm(
        peaks=[(6 * 60 + 30, 40, 0.825), (17 * 60 + 30, 40, 0.4)], baseline=0.02, plateaus=[(8 * 60, 17 * 60, 0.4)]
    )
    return [
        SpeciesSpec(CX_STIGMATOSOMA_F, 365.0, 41.0, (1.0, 0.5, 0.25, 0.12), stig_rhythm, amplitude_jitter=0.25),
        SpeciesSpec(AE_AEGYPTI_F, 465.0, 35.0, (1.0, 0.75, 0.4, 0.3), aegypti_rhythm, amplitude_jitter=0.25),
        SpeciesSpec(CX_TARSALIS_M, 550.0, 40.0, (1.0, 0.3, 0.45, 0.1), tarsalis_rhythm, amplitude_jitter=0.25),
    ]


def sexing_replica() -> list[SpeciesSpec]:
    """Female/male pair of one species; rhythms shared.

    The female's even harmonics are weak so that low-pitched females do not line
    up with the male fundamental an octave above, and the bursts are short so
    that the spectral peaks of tail exemplars still overlap their own class.
    """
    rhythm = bump_rhythm(peaks=[(6 * 60 + 30, 40, 0.35), (18 * 60 + 30, 40, 0.45)], baseline=0.04,
                         plateaus=[(7 * 60, 18 * 60, 0.35)])
    return [
        SpeciesSpec(AE_AEGYPTI_F, 470.0, 30.0, (1.0, 0.1, 0.45, 0.05), rhythm, (60.0, 12.0), 0.25),
        SpeciesSpec(AE_AEGYPTI_M, 740.0, 45.0, (1.0, 0.6, 0.3, 0.2), rhythm, (60.0, 12.0), 0.25),
    ]


# ---------------------------------------------------------------------------
# Continuous recordings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """Sensor background: white noise plus optional mains hum with harmonics."""

    rms: float = 0.01
    hum_amplitude: float = 0.0
    hum_hz: float = 60.0
    hum_harmonics: tuple[float, ...] = (1.0, 0.6, 0.4)


@dataclass(frozen=True)
class PlantedEvent:
    offset_s: float
    label: str
    f0_hz: float
    minutes: float


def background_noise(n: int, sample_rate: int, noise: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    out = noise.rms * rng.standard_normal(n) if noise.rms > 0 else np.zeros(n)
    if noise.hum_amplitude > 0:
        t = np.arange(n) / sample_rate
        for h, a in enumerate(noise.hum_harmonics, start=1):
            out += noise.hum_amplitude * a * np.sin(2 * np.pi * h * noise.hum_hz * t + rng.uniform(0, 2 * np.pi))
    return out


def _scaled_burst(spec: SpeciesSpec, rng, sample_rate: int, noise: NoiseSpec, snr_db: float):
    burst, f0 = _burst(spec, rng, sample_rate)
    ref_power = noise.rms**2 if noise.rms > 0 else 1e-4
    scale = math.sqrt(ref_power * 10 ** (snr_db / 10.0) / np.mean(burst**2))
    return burst * scale, f0


def _place_times(candidates: np.ndarray, lo: float, hi: float, spacing: float) -> list[float]:
    """Keep candidate times (in order) that respect ``spacing`` from earlier picks."""
    kept: list[float] = []
    for t in candidates:
        if lo <= t <= hi and all(abs(t - k) >= spacing for k in kept):
            kept.append(float(t))
    return sorted(kept)


def gen_recording(
    specs: Sequence[SpeciesSpec],
    duration_s: float,
    seed,
    *,
    n_events: int | None = None,
    events_per_day: float | None = None,
    start_minutes: float = 0.0,
    noise: NoiseSpec = NoiseSpec(),
    snr_db: float = 15.0,
    sample_rate: int = DEFAULT_SAMPLE_RATE_HZ,
    min_spacing_s: float = 1.0,
    margin_s: float = 0.6,
) -> tuple[AudioClip, list[PlantedEvent]]:
    """Continuous background with wingbeat bursts planted at known times.

    With ``n_events`` the burst centres are spread uniformly over the recording and
    each burst's species is drawn in proportion to the species' activity at that time
    of day; candidates closer than ``min_spacing_s`` are dropped. With
    ``events_per_day`` the recording is cut into slots of ``min_spacing_s + 0.5`` s and
    each slot holds a burst with probability equal to the expected count there
    (``events_per_day`` times the summed rhythm densities), so recordings made at
    different times of day sample the rhythms without spacing bias.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    samples = background_noise(n, sample_rate, noise, rng)
    lo, hi = margin_s, duration_s - margin_s
    rhythms = [s.activity for s in specs]

    def intensity(t_s: np.ndarray) -> np.ndarray:
        # events per second for each species, shape (n_species, len(t_s))
        minutes = (start_minutes + t_s / 60.0) % MINUTES_PER_DAY
        return np.stack(
            [r.density[np.minimum((minutes // r.bin_minutes).astype(int), r.n_bins - 1)] / (r.bin_minutes * 60.0) for r in rhythms]
        )

    times: list[float] = []
    if n_events and hi > lo:
        cand = rng.uniform(lo, hi, size=20 * n_events)
        times = _place_times(cand, lo, hi, min_spacing_s)[:n_events]
        if len(times) < n_events:
            logger.warning("only %d of %d events fit with %.2f s spacing", len(times), n_events, min_spacing_s)
        species_weights = intensity(np.array(times)) if times else None
    elif events_per_day and hi > lo:
        # one Bernoulli trial per slot: the event rate follows the rhythm exactly
        # while the slot layout guarantees the minimum spacing
        slot = min_spacing_s + 2 * SLOT_JITTER_S
        centres = np.arange(lo + slot / 2, hi - slot / 2 + 1e-9, slot)
        p = events_per_day * intensity(centres).sum(axis=0) * slot
        if centres.size and p.max() > 1.0:
            logger.warning("event rate saturates %d slots; lower events_per_day", int(np.sum(p > 1.0)))
        keep = rng.random(centres.size) < p
        times = (centres[keep] + rng.uniform(-SLOT_JITTER_S, SLOT_JITTER_S, int(keep.sum()))).tolist()
        species_weights = intensity(np.array(times)) if times else None

    events: list[PlantedEvent] = []
    for j, t in enumerate(times):
        w = species_weights[:, j]
        s_idx = int(rng.choice(len(specs), p=w / w.sum()))
        burst, f0 = _scaled_burst(specs[s_idx], rng, sample_rate, noise, snr_db)
        centre = int(round(t * sample_rate))
        start = centre - burst.size // 2
        samples[start : start + burst.size] += burst
        events.append(PlantedEvent(t, specs[s_idx].label, f0, wrap_minutes(start_minutes + t / 60.0)))
    top = np.max(np.abs(samples)) if n else 0.0
    if top > 1.0:
        logger.warning("recording clipped (peak %.2f); lower snr_db or noise rms", top)
        samples = np.clip(samples, -1.0, 1.0)
    return AudioClip(samples, sample_rate), events


def synth_detector(
    specs: Sequence[SpeciesSpec],
    seed,
    *,
    noise: NoiseSpec = NoiseSpec(),
    snr_db: float = 15.0,
    sample_rate: int = DEFAULT_SAMPLE_RATE_HZ,
    window_ms: float = 100.0,
    n_exemplars: int = 10,
    band: tuple[float, float] = DEFAULT_BAND_HZ,
) -> DetectorModel:
    """Detector trained on ten synthetic flight windows and ten background windows."""
    rng = np.random.default_rng(seed)
    win = int(round(window_ms * sample_rate / 1000.0))
    insects, backgrounds = [], []
    for i in range(n_exemplars):
        spec = specs[i % len(specs)]
        burst, _ = _scaled_burst(spec, rng, sample_rate, noise, snr_db)
        seg = background_noise(win, sample_rate, noise, rng)
        m = min(win, burst.size)
        off = (win - m) // 2
        b0 = (burst.size - m) // 2
        seg[off : off + m] += burst[b0 : b0 + m]
        insects.append(AudioClip(np.clip(seg, -1, 1), sample_rate))
        backgrounds.append(AudioClip(np.clip(background_noise(win, sample_rate, noise, rng), -1, 1), sample_rate))
    return DetectorModel.from_window_clips(insects, backgrounds, band=band)


# ---------------------------------------------------------------------------
# Geographic sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeoBump:
    label: str
    center: tuple[float, float]
    cov: tuple[tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        c = np.asarray(self.cov, dtype=float)
        if c.shape != (2, 2) or not np.allclose(c, c.T) or np.any(np.linalg.eigvalsh(c) <= 0):
            raise InvalidInput(f"{self.label}: covariance must be symmetric positive-definite")


@dataclass(frozen=True)
class SensorSite:
    name: str
    center: tuple[float, float]
    half_width: float

    def __post_init__(self):
        if not self.half_width > 0:
            raise InvalidInput(f"sensor {self.name}: capture square must have positive size")

    def contains(self, points: np.ndarray) -> np.ndarray:
        d = np.abs(points - np.asarray(self.center))
        return np.all(d <= self.half_width, axis=1)


@dataclass(frozen=True)
class GeoScenario:
    bumps: tuple[GeoBump, ...]
    sensors: tuple[SensorSite, ...]

    @classmethod
    def from_dict(cls, data: Mapping) -> "GeoScenario":
        bumps = tuple(GeoBump(b["label"], tuple(b["center"]), tuple(map(tuple, b["cov"]))) for b in data["bumps"])
        sensors = tuple(SensorSite(s["name"], tuple(s["center"]), float(s["half_width"])) for s in data["sensors"])
        return cls(bumps, sensors)

    def to_dict(self) -> dict:
        return {
            "bumps": [{"label": b.label, "center": list(b.center), "cov": [list(r) for r in b.cov]} for b in self.bumps],
            "sensors": [{"name": s.name, "center": list(s.center), "half_width": s.half_width} for s in self.sensors],
        }


def gen_geo_samples(scenario: GeoScenario, n_per_species: int, seed) -> dict[str, list[tuple[str, np.ndarray]]]:
    """Scatter ``n_per_species`` insects per species and keep those inside each
    sensor's capture square. Returns ``{sensor: [(label, point), ...]}``."""
    rng = np.random.default_rng(seed)
    draws = [(b.label, rng.multivariate_normal(b.center, b.cov, size=n_per_species)) for b in scenario.bumps]
    out: dict[str, list[tuple[str, np.ndarray]]] = {}
    for site in scenario.sensors:
        caught = []
        for label, pts in draws:
            caught.extend((label, p) for p in pts[site.contains(pts)])
        out[site.name] = caught
    return out


def capture_counts(samples: Mapping[str, Sequence[tuple[str, np.ndarray]]], labels: Sequence[str]) -> dict[str, dict[str, int]]:
    return {site: {c: sum(1 for lab, _ in caught if lab == c) for c in labels} for site, caught in samples.items()}


def two_bump_scenario(near: str = CX_STIGMATOSOMA_F, far: str = AE_AEGYPTI_F) -> GeoScenario:
    """Two species bumps with one sensor near each centre and one in between."""
    return GeoScenario(
        bumps=(
            GeoBump(near, (0.0, 0.0), ((1.0, 0.0), (0.0, 1.0))),
            GeoBump(far, (4.0, 0.0), ((0.8, 0.0), (0.0, 0.8))),
        ),
        sensors=(
            SensorSite("S1", (0.3, 0.0), 0.3),
            SensorSite("S2", (2.1, 0.0), 0.3),
            SensorSite("S3", (3.9, 0.0), 0.35),
        ),
    )


def observation_log(spec: SpeciesSpec, n: int, seed) -> np.ndarray:
    """Intercept times (minutes) from a long observation campaign of one species."""
    return spec.activity.sample(n, np.random.default_rng(seed))


def learned_rhythms(specs: Sequence[SpeciesSpec], n_observations: int, seed, bin_minutes: int = 1) -> dict[str, CircadianRhythm]:
    """Rhythms learned from a separate observation log per species."""
    return {
        s.label: learn_rhythm(observation_log(s, n_observations, [seed, i]), bin_minutes)
        for i, s in enumerate(specs)
    }
