"""In-memory labelled feature table shared by the evaluation harnesses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from wingbeat.errors import InvalidInput
from wingbeat.signal import Spectrum, check_geometry


@dataclass(frozen=True, eq=False)
class Dataset:
    """Band-truncated spectra plus the auxiliary features of each exemplar.

    Attributes
    ----------
    features : ndarray, shape (n, n_bins)
    labels : tuple of str
    geometry : (n_bins, bin_width_hz, start_hz) of every row
    minutes : ndarray, shape (n,)
        Time of intercept in minutes since midnight; NaN where unknown.
    sensors : tuple of str or None
    wingbeat_hz : ndarray, shape (n,)
        Measured fundamental frequency; NaN where not computed.
    sources : ndarray of int, shape (n,)
        Identity of the underlying recording; rows sharing a source are copies.
    """

    features: np.ndarray
    labels: tuple[str, ...]
    geometry: tuple[int, float, float]
    minutes: np.ndarray | None = None
    sensors: tuple[str | None, ...] | None = None
    wingbeat_hz: np.ndarray | None = None
    sources: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        n = X.shape[0]
        if X.ndim != 2 or len(self.labels) != n:
            raise InvalidInput("features must be (n, bins) with one label per row")
        minutes = np.full(n, np.nan) if self.minutes is None else np.asarray(self.minutes, dtype=np.float64)
        sensors = (None,) * n if self.sensors is None else tuple(self.sensors)
        wingbeat = np.full(n, np.nan) if self.wingbeat_hz is None else np.asarray(self.wingbeat_hz, dtype=np.float64)
        sources = np.arange(n) if self.sources is None else np.asarray(self.sources, dtype=np.int64)
        if not (minutes.shape == wingbeat.shape == sources.shape == (n,) and len(sensors) == n):
            raise InvalidInput("auxiliary columns must have one entry per row")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", tuple(str(c) for c in self.labels))
        object.__setattr__(self, "minutes", minutes)
        object.__setattr__(self, "sensors", sensors)
        object.__setattr__(self, "wingbeat_hz", wingbeat)
        object.__setattr__(self, "sources", sources)

    @classmethod
    def from_spectra(cls, spectra: Sequence[Spectrum], labels: Sequence[str], **columns) -> "Dataset":
        if not spectra:
            raise InvalidInput("empty dataset")
        for s in spectra[1:]:
            check_geometry(spectra[0], s)
        return cls(np.stack([s.magnitudes for s in spectra]), tuple(labels), spectra[0].geometry, **columns)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.labels)))

    @property
    def label_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=object)

    def spectrum(self, i: int) -> Spectrum:
        _, width, start = self.geometry
        return Spectrum(self.features[i], width, start)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Dataset(
            self.features[idx],
            tuple(self.labels[i] for i in idx),
            self.geometry,
            self.minutes[idx],
            tuple(self.sensors[i] for i in idx),
            self.wingbeat_hz[idx],
            self.sources[idx],
        )

    def with_labels(self, labels: Sequence[str]) -> "Dataset":
        return Dataset(self.features, tuple(labels), self.geometry, self.minutes, self.sensors, self.wingbeat_hz, self.sources)

    def with_minutes(self, minutes) -> "Dataset":
        return Dataset(self.features, self.labels, self.geometry, minutes, self.sensors, self.wingbeat_hz, self.sources)

    def of_classes(self, classes: Sequence[str]) -> "Dataset":
        keep = set(classes)
        return self.subset(np.array([c in keep for c in self.labels], dtype=bool))
