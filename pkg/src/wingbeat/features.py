"""Class-conditional models for time-of-intercept and location-of-intercept.

A :class:`CircadianRhythm` is a normalised histogram over the day; looking up
the bin that contains an intercept time gives ``P(time | class)``. Rhythms can
be learned from observed timestamps, compiled from a coarse low/medium/high
activity template, borrowed from a related species, or left uniform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, time
from typing import Iterable, Mapping, Sequence

import numpy as np

from wingbeat.errors import EmptyInput, InvalidInput, InvalidTemplate, UnknownClass

MINUTES_PER_DAY = 1440
DEFAULT_EPSILON = 1e-6
PROVENANCES = ("learned", "proxy_taxon", "text_template", "uniform")

# dawn/dusk windows (minutes since midnight) used by the built-in templates
DAWN = (5 * 60, 7 * 60)
DUSK = (18 * 60, 20 * 60)


def wrap_minutes(t: float) -> float:
    """Map any time in minutes onto [0, 1440)."""
    w = math.fmod(float(t), MINUTES_PER_DAY)
    if w < 0:
        w += MINUTES_PER_DAY
    # fmod of a value just below a multiple of 1440 can round up to 1440
    return 0.0 if w >= MINUTES_PER_DAY else w


def to_minutes(value: str | datetime | time | float) -> float:
    """Minutes since local midnight for an ISO-8601 string, datetime, time or number."""
    if isinstance(value, (int, float)):
        return wrap_minutes(value)
    if isinstance(value, str):
        text = value.strip()
        try:
            value = datetime.fromisoformat(text)
        except ValueError:
            value = time.fromisoformat(text)
    return value.hour * 60 + value.minute + value.second / 60 + value.microsecond / 6e7


@dataclass(frozen=True, eq=False)
class CircadianRhythm:
    """Normalised time-of-day activity density.

    ``density[i]`` is the probability of an intercept falling in
    ``[i * bin_minutes, (i + 1) * bin_minutes)``.
    """

    density: np.ndarray
    bin_minutes: int = 1
    provenance: str = "learned"

    def __post_init__(self):
        d = np.asarray(self.density, dtype=np.float64)
        if MINUTES_PER_DAY % self.bin_minutes:
            raise InvalidInput(f"bin_minutes must divide 1440, got {self.bin_minutes}")
        if d.shape != (MINUTES_PER_DAY // self.bin_minutes,):
            raise InvalidInput(f"density must have {MINUTES_PER_DAY // self.bin_minutes} bins, got {d.shape}")
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise InvalidInput("density must be finite and strictly positive")
        if abs(d.sum() - 1.0) > 1e-9:
            raise InvalidInput(f"density must sum to 1 (got {d.sum()!r})")
        if self.provenance not in PROVENANCES:
            raise InvalidInput(f"unknown provenance {self.provenance!r}")
        d.setflags(write=False)
        object.__setattr__(self, "density", d)

    @property
    def n_bins(self) -> int:
        return self.density.size

    def bin_of(self, t: float) -> int:
        return min(int(wrap_minutes(t) // self.bin_minutes), self.n_bins - 1)

    def as_proxy(self) -> "CircadianRhythm":
        return replace(self, provenance="proxy_taxon")

    def rebinned(self, bin_minutes: int) -> "CircadianRhythm":
        """Aggregate into coarser bins (``bin_minutes`` a multiple of the current width)."""
        if bin_minutes % self.bin_minutes or MINUTES_PER_DAY % bin_minutes:
            raise InvalidInput("new bin width must be a multiple of the old one and divide 1440")
        factor = bin_minutes // self.bin_minutes
        coarse = self.density.reshape(-1, factor).sum(axis=1)
        return CircadianRhythm(coarse / coarse.sum(), bin_minutes, self.provenance)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` intercept times (minutes), uniform within each chosen bin."""
        bins = rng.choice(self.n_bins, size=n, p=self.density)
        return (bins + rng.random(n)) * self.bin_minutes


def _floor_normalise(p: np.ndarray, epsilon: float) -> np.ndarray:
    p = np.maximum(p, epsilon)
    return p / p.sum()


def uniform_rhythm(bin_minutes: int = 1) -> CircadianRhythm:
    n = MINUTES_PER_DAY // bin_minutes
    return CircadianRhythm(np.full(n, 1.0 / n), bin_minutes, "uniform")


def learn_rhythm(
    timestamps: Iterable[float],
    bin_minutes: int = 1,
    smoothing_epsilon: float = DEFAULT_EPSILON,
) -> CircadianRhythm:
    """Histogram intercept times into a rhythm.

    Bin frequencies are floored at ``smoothing_epsilon`` (Laplacian correction) and
    renormalised, so a class never gets zero probability at any time of day.
    """
    t = np.array([wrap_minutes(x) for x in timestamps], dtype=np.float64)
    if t.size == 0:
        raise EmptyInput("learn_rhythm needs at least one timestamp")
    if smoothing_epsilon <= 0:
        raise InvalidInput("smoothing_epsilon must be positive")
    n_bins = MINUTES_PER_DAY // bin_minutes
    idx = np.minimum((t // bin_minutes).astype(int), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(np.float64)
    return CircadianRhythm(_floor_normalise(counts / t.size, smoothing_epsilon), bin_minutes, "learned")


@dataclass(frozen=True)
class ActivityTemplateSpec:
    """Piecewise-constant activity levels (1 low, 2 medium, 3 high) over the day.

    Each interval is ``(start_min, end_min, level)``; an interval with
    ``end < start`` wraps past midnight. Intervals must tile the day exactly.
    """

    intervals: tuple[tuple[float, float, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "intervals", tuple((float(a), float(b), int(lv)) for a, b, lv in self.intervals))

    def segments(self) -> list[tuple[float, float, int]]:
        """Non-wrapping pieces sorted by start; raises InvalidTemplate on gaps/overlaps."""
        pieces = []
        for start, end, level in self.intervals:
            if level not in (1, 2, 3):
                raise InvalidTemplate(f"activity level must be 1, 2 or 3, got {level}")
            if not (0 <= start < MINUTES_PER_DAY and 0 <= end <= MINUTES_PER_DAY):
                raise InvalidTemplate(f"interval ({start}, {end}) outside the day")
            if start == end:
                raise InvalidTemplate(f"empty interval at {start}")
            if end > start:
                pieces.append((start, end, level))
            else:
                pieces.append((start, float(MINUTES_PER_DAY), level))
                if end > 0:
                    pieces.append((0.0, end, level))
        pieces.sort()
        cursor = 0.0
        for start, end, _ in pieces:
            if start != cursor:
                kind = "gap" if start > cursor else "overlap"
                raise InvalidTemplate(f"{kind} in template coverage at minute {min(start, cursor)}")
            cursor = end
        if cursor != MINUTES_PER_DAY:
            raise InvalidTemplate(f"gap in template coverage at minute {cursor}")
        return pieces

    @classmethod
    def from_dict(cls, data: Sequence[Mapping]) -> "ActivityTemplateSpec":
        """Build from ``[{"start": "05:00", "end": "07:00", "level": 3}, ...]``."""
        return cls(tuple((to_minutes(d["start"]) if isinstance(d["start"], str) else d["start"],
                          _end_minutes(d["end"]), d["level"]) for d in data))


def _end_minutes(value) -> float:
    if isinstance(value, str) and value.strip() in ("24:00", "24:00:00"):
        return float(MINUTES_PER_DAY)
    return to_minutes(value) if isinstance(value, str) else float(value)


def crepuscular_template(dawn=DAWN, dusk=DUSK) -> ActivityTemplateSpec:
    """High at dawn and dusk, low otherwise."""
    return ActivityTemplateSpec(((dawn[0], dawn[1], 3), (dawn[1], dusk[0], 1), (dusk[0], dusk[1], 3), (dusk[1], dawn[0], 1)))


def diurnal_crepuscular_template(dawn=DAWN, dusk=DUSK) -> ActivityTemplateSpec:
    """High at dawn and dusk, medium through the day, low at night."""
    return ActivityTemplateSpec(((dawn[0], dawn[1], 3), (dawn[1], dusk[0], 2), (dusk[0], dusk[1], 3), (dusk[1], dawn[0], 1)))


def diurnal_template(dawn=DAWN, dusk=DUSK) -> ActivityTemplateSpec:
    return ActivityTemplateSpec(((dawn[0], dusk[1], 3), (dusk[1], dawn[0], 1)))


def nocturnal_template(dawn=DAWN, dusk=DUSK) -> ActivityTemplateSpec:
    return ActivityTemplateSpec(((dusk[1], dawn[0], 3), (dawn[0], dusk[1], 1)))


TEMPLATES = {
    "crepuscular": crepuscular_template,
    "diurnal-crepuscular": diurnal_crepuscular_template,
    "diurnal": diurnal_template,
    "nocturnal": nocturnal_template,
}


def template_rhythm(
    spec: ActivityTemplateSpec,
    bin_minutes: int = 1,
    smoothing_epsilon: float = DEFAULT_EPSILON,
) -> CircadianRhythm:
    """Compile an activity template into a normalised rhythm.

    Bins straddling an interval boundary get the time-weighted mean level.
    """
    n_bins = MINUTES_PER_DAY // bin_minutes
    edges = np.arange(n_bins + 1, dtype=np.float64) * bin_minutes
    mass = np.zeros(n_bins)
    for start, end, level in spec.segments():
        overlap = np.clip(np.minimum(edges[1:], end) - np.maximum(edges[:-1], start), 0.0, None)
        mass += level * overlap
    return CircadianRhythm(_floor_normalise(mass / mass.sum(), smoothing_epsilon), bin_minutes, "text_template")


def rhythm_density(rhythm: CircadianRhythm, t: float) -> float:
    """``P(time = t | class)`` per minute: the mass of the bin holding ``t`` over its width.

    Dividing by the bin width keeps rhythms of different resolutions comparable
    when they are used side by side in one classifier.
    """
    return float(rhythm.density[rhythm.bin_of(t)]) / rhythm.bin_minutes


@dataclass(frozen=True)
class GeoModel:
    """Relative abundance of each class at one sensor site.

    Only ratios between weights matter to the classifier.
    """

    weights: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        w = {str(k): float(v) for k, v in self.weights.items()}
        if any(not (v > 0 and math.isfinite(v)) for v in w.values()):
            raise InvalidInput("geo weights must be finite and > 0")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, classes: Iterable[str]) -> "GeoModel":
        return cls({c: 1.0 for c in classes})

    @classmethod
    def from_counts(cls, counts: Mapping[str, float], pseudocount: float = 1.0) -> "GeoModel":
        """Trap counts with an additive Laplacian pseudocount."""
        return cls({c: n + pseudocount for c, n in counts.items()})


def geo_ratio(model: GeoModel, label: str) -> float:
    try:
        return model.weights[label]
    except KeyError:
        raise UnknownClass(f"class {label!r} not in geo model") from None
