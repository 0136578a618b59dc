"""Naive Bayes classification over an open-ended set of features.

The posterior for class ``c`` is ``prior[c] * prod_j L_j[c]`` renormalised, where
each ``L_j`` is the class-conditional likelihood of one observed feature. Feature
providers in this module cover the truncated spectrum (kNN density estimate),
scalar wingbeat frequency (Gaussian), time of intercept (circadian rhythm) and
sensor location (relative abundance). A provider returns ``None`` when its
feature was not observed, and the feature is then simply left out of the product.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from wingbeat.errors import (
    BinMismatch,
    DegeneratePosterior,
    InvalidInput,
    NotEnoughData,
    NotEnoughVariance,
    UnknownClass,
)
from wingbeat.features import CircadianRhythm, GeoModel, rhythm_density
from wingbeat.signal import DEFAULT_BAND_HZ, Spectrum, check_geometry, fundamental_frequency, same_geometry

logger = logging.getLogger(__name__)

UNKNOWN = "Unknown"
LIKELIHOOD_FLOOR = 1e-12


def class_label(species: str, sex: str | None = None) -> str:
    """Canonical label string; sexes of one species are distinct classes."""
    return species if not sex else f"{species}/{sex}"


# ---------------------------------------------------------------------------
# Per-class vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ClassVector:
    """Non-negative values indexed by class label, classes kept in sorted order."""

    classes: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        classes = tuple(str(c) for c in self.classes)
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (len(classes),):
            raise InvalidInput(f"{len(classes)} classes but values of shape {values.shape}")
        if len(set(classes)) != len(classes):
            raise InvalidInput("class labels must be unique")
        if list(classes) != sorted(classes):
            order = np.argsort(classes, kind="stable")
            classes = tuple(classes[i] for i in order)
            values = values[order]
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InvalidInput("values must be finite and non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "values", values)
        self._validate()

    def _validate(self) -> None:
        pass

    @classmethod
    def from_dict(cls, mapping: Mapping[str, float]):
        return cls(tuple(mapping), np.array(list(mapping.values()), dtype=np.float64))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.classes, self.values.tolist()))

    def __getitem__(self, label: str) -> float:
        try:
            return float(self.values[self.classes.index(label)])
        except ValueError:
            raise UnknownClass(f"class {label!r} not present") from None

    def __len__(self) -> int:
        return len(self.classes)

    def argmax(self) -> str:
        # classes are sorted, so the first maximum is the lexicographically smallest
        return self.classes[int(np.argmax(self.values))]


class _Normalised(ClassVector):
    def _validate(self) -> None:
        if abs(self.values.sum() - 1.0) > 1e-9:
            raise InvalidInput(f"{type(self).__name__} must sum to 1, got {self.values.sum()!r}")


class PriorVector(_Normalised):
    @classmethod
    def uniform(cls, classes: Iterable[str]) -> "PriorVector":
        classes = sorted(set(classes))
        return cls(tuple(classes), np.full(len(classes), 1.0 / len(classes)))

    @classmethod
    def from_counts(cls, labels: Iterable[str]) -> "PriorVector":
        classes, counts = np.unique(np.asarray(list(labels), dtype=object), return_counts=True)
        return cls(tuple(classes), counts / counts.sum())


class PosteriorVector(_Normalised):
    pass


class LikelihoodVector(ClassVector):
    def floored(self, floor: float = LIKELIHOOD_FLOOR) -> "LikelihoodVector":
        return LikelihoodVector(self.classes, np.maximum(self.values, floor))


def _aligned(vec: ClassVector, classes: tuple[str, ...]) -> np.ndarray:
    if vec.classes != classes:
        raise InvalidInput(f"class sets differ: {vec.classes} vs {classes}")
    return vec.values


def combine_posterior(prior: ClassVector, likelihoods: Sequence[LikelihoodVector | None]) -> PosteriorVector:
    """Multiply ``prior`` by every present likelihood and renormalise.

    ``None`` entries mark missing features and contribute no factor.
    """
    product = np.array(prior.values, dtype=np.float64)
    for lik in likelihoods:
        if lik is None:
            continue
        product = product * _aligned(lik, prior.classes)
    total = product.sum()
    if not total > 0:
        raise DegeneratePosterior("all classes have zero posterior mass; floor the likelihoods")
    return PosteriorVector(prior.classes, product / total)


def update_posterior(current: PosteriorVector, new_feature: LikelihoodVector | None) -> PosteriorVector:
    """Fold one more feature into an existing posterior."""
    return combine_posterior(current, [new_feature])


# ---------------------------------------------------------------------------
# Decisions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecisionPolicy:
    """How a posterior becomes a label.

    ``mode="argmax"`` picks the most probable class. ``mode="threshold"`` picks
    ``target`` whenever its posterior is at least ``threshold`` and otherwise the
    most probable remaining class. Optional Unknown rules: ``tau`` (minimum
    acceptable max-posterior) and ``d_max`` (maximum nearest-neighbour distance).
    """

    mode: str = "argmax"
    target: str | None = None
    threshold: float = 0.5
    tau: float | None = None
    d_max: float | None = None

    def __post_init__(self):
        if self.mode not in ("argmax", "threshold"):
            raise InvalidInput(f"unknown decision mode {self.mode!r}")
        if self.mode == "threshold":
            if self.target is None:
                raise InvalidInput("threshold mode needs a target class")
            if not 0.0 < self.threshold < 1.0:
                raise InvalidInput("threshold must lie in (0, 1)")
        if self.tau is not None and not 0.0 <= self.tau < 1.0:
            raise InvalidInput("tau must lie in [0, 1)")
        if self.d_max is not None and not self.d_max >= 0:
            raise InvalidInput("d_max must be non-negative")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "target": self.target, "threshold": self.threshold, "tau": self.tau, "d_max": self.d_max}


def decide(posterior: ClassVector, policy: DecisionPolicy = DecisionPolicy(), nn_distance: float | None = None) -> str:
    """Label for ``posterior`` under ``policy``; may return :data:`UNKNOWN`."""
    values = posterior.values
    if policy.tau is not None and values.max() < policy.tau:
        return UNKNOWN
    if policy.d_max is not None and nn_distance is not None and nn_distance > policy.d_max:
        return UNKNOWN
    if policy.mode == "argmax":
        return posterior.argmax()
    t_idx = posterior.classes.index(policy.target) if policy.target in posterior.classes else None
    if t_idx is None:
        raise UnknownClass(f"target class {policy.target!r} not in posterior")
    if values[t_idx] >= policy.threshold:
        return policy.target
    rest = values.copy()
    rest[t_idx] = -1.0
    if len(values) == 1:
        return policy.target
    return posterior.classes[int(np.argmax(rest))]


# ---------------------------------------------------------------------------
# Spectrum kNN density estimate
# ---------------------------------------------------------------------------


def spectrum_distance(a: Spectrum, b: Spectrum) -> float:
    """Euclidean distance between two band-truncated magnitude spectra."""
    check_geometry(a, b)
    diff = a.magnitudes - b.magnitudes
    return float(np.sqrt(np.dot(diff, diff)))


@dataclass(frozen=True, eq=False)
class KnnSpectrumModel:
    """Training spectra (one row each) with labels and the neighbour count ``k``."""

    features: np.ndarray
    labels: tuple[str, ...]
    k: int
    geometry: tuple[int, float, float]

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != len(self.labels):
            raise InvalidInput("features must be (n_exemplars, n_bins) and match labels")
        if X.shape[0] == 0:
            raise NotEnoughData("kNN model needs at least one exemplar")
        if X.shape[1] != self.geometry[0]:
            raise BinMismatch("feature width does not match geometry")
        if not 1 <= self.k <= X.shape[0]:
            raise InvalidInput(f"k must lie in [1, {X.shape[0]}], got {self.k}")
        X.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", tuple(str(c) for c in self.labels))
        classes = tuple(sorted(set(self.labels)))
        object.__setattr__(self, "classes", classes)
        lookup = {c: i for i, c in enumerate(classes)}
        y = np.array([lookup[c] for c in self.labels], dtype=np.int64)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "_sq", np.einsum("ij,ij->i", X, X))

    @classmethod
    def from_spectra(cls, spectra: Sequence[Spectrum], labels: Sequence[str], k: int = 8) -> "KnnSpectrumModel":
        if not spectra:
            raise NotEnoughData("kNN model needs at least one exemplar")
        first = spectra[0]
        for s in spectra[1:]:
            check_geometry(first, s)
        return cls(np.stack([s.magnitudes for s in spectra]), tuple(labels), k, first.geometry)

    def with_k(self, k: int) -> "KnnSpectrumModel":
        return KnnSpectrumModel(self.features, self.labels, k, self.geometry)

    def check_query(self, spec: Spectrum) -> None:
        if not same_geometry(spec.geometry, self.geometry):
            raise BinMismatch(f"query geometry {spec.geometry} != model geometry {self.geometry}")

    def neighbors(self, queries: np.ndarray, k: int | None = None, query_groups=None, groups=None):
        """Exact k nearest training rows for each query row.

        Returns ``(indices, distances)``, both of shape ``(m, k)``. Ties at equal
        distance go to the lower training index. When ``query_groups`` and
        ``groups`` are given, training rows sharing the query's group are skipped
        (leave-one-out, or leave-duplicates-out after resampling).
        """
        return nearest_neighbors(self.features, queries, self.k if k is None else k, query_groups, groups, self._sq)

    def counts(self, queries: np.ndarray, k: int | None = None, query_groups=None, groups=None):
        """Per-class neighbour counts ``(m, n_classes)`` and nearest distances ``(m,)``."""
        k = self.k if k is None else k
        idx, dist = self.neighbors(queries, k, query_groups, groups)
        labels = self.y[idx]
        counts = np.zeros((idx.shape[0], len(self.classes)), dtype=np.int64)
        for c in range(len(self.classes)):
            counts[:, c] = np.count_nonzero(labels == c, axis=1)
        return counts, dist[:, 0]

    def nn_distance_quantile(self, q: float = 0.99) -> float:
        """Quantile of each exemplar's distance to its nearest other exemplar."""
        if self.features.shape[0] < 2:
            raise NotEnoughData("need two exemplars for within-training distances")
        g = np.arange(self.features.shape[0])
        _, dist = self.neighbors(self.features, 1, g, g)
        return float(np.quantile(dist[:, 0], q))


def nearest_neighbors(X, Q, k, query_groups=None, groups=None, sq=None, chunk=256):
    """Exact kNN by Euclidean distance with index tie-breaking.

    Candidates are screened with the Gram-matrix expansion, then re-ranked with
    directly summed squared differences so that ties and near-ties resolve
    exactly as a brute-force sort would.
    """
    X = np.asarray(X, dtype=np.float64)
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    n = X.shape[0]
    if Q.shape[1] != X.shape[1]:
        raise BinMismatch(f"query width {Q.shape[1]} != training width {X.shape[1]}")
    if sq is None:
        sq = np.einsum("ij,ij->i", X, X)
    use_groups = query_groups is not None and groups is not None
    if use_groups:
        query_groups = np.asarray(query_groups)
        groups = np.asarray(groups)
    out_idx = np.empty((Q.shape[0], k), dtype=np.int64)
    out_dist = np.empty((Q.shape[0], k), dtype=np.float64)
    sq_max = sq.max() if n else 0.0
    for lo in range(0, Q.shape[0], chunk):
        q = Q[lo : lo + chunk]
        sq_q = np.einsum("ij,ij->i", q, q)
        d2 = sq_q[:, None] + sq[None, :] - 2.0 * (q @ X.T)
        np.maximum(d2, 0.0, out=d2)
        if use_groups:
            d2[query_groups[lo : lo + chunk, None] == groups[None, :]] = np.inf
        available = np.isfinite(d2).sum(axis=1)
        if np.any(available < k):
            raise NotEnoughData(f"fewer than k={k} eligible training exemplars")
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
        slack = 1e-8 * (sq_q + sq_max) + 1e-300
        for r in range(q.shape[0]):
            cand = np.flatnonzero(d2[r] <= kth[r] + slack[r])
            diff = X[cand] - q[r]
            exact = np.einsum("ij,ij->i", diff, diff)
            order = np.lexsort((cand, exact))[:k]
            out_idx[lo + r] = cand[order]
            out_dist[lo + r] = np.sqrt(exact[order])
    return out_idx, out_dist


def knn_likelihood(query: Spectrum, model: KnnSpectrumModel) -> LikelihoodVector:
    """Fraction of the ``k`` nearest training spectra carrying each class."""
    model.check_query(query)
    counts, _ = model.counts(query.magnitudes[None, :])
    return LikelihoodVector(model.classes, counts[0] / model.k)


def select_k(
    spectra,
    labels: Sequence[str],
    candidates: Sequence[int],
    validation_fraction: float = 0.3,
    seed: int = 0,
) -> int:
    """Pick the ``k`` with the best hold-out accuracy; ties go to the smaller ``k``.

    ``spectra`` is a list of :class:`Spectrum` or an ``(n, bins)`` array. The split
    is a seeded random permutation; priors are training-split class frequencies.
    """
    candidates = sorted({int(k) for k in candidates})
    if not candidates:
        raise InvalidInput("select_k needs at least one candidate k")
    if any(k < 1 for k in candidates):
        raise InvalidInput("candidate k must be positive")
    if len(candidates) == 1:
        return candidates[0]
    X = np.stack([s.magnitudes for s in spectra]) if not isinstance(spectra, np.ndarray) else spectra
    labels = np.asarray(labels, dtype=object)
    n = X.shape[0]
    n_val = int(round(validation_fraction * n))
    if n_val < 1 or n - n_val < max(candidates):
        raise NotEnoughData(f"cannot hold out {validation_fraction:.0%} of {n} exemplars for k up to {max(candidates)}")
    perm = np.random.default_rng(seed).permutation(n)
    val, train = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    model = KnnSpectrumModel(X[train], tuple(labels[train]), max(candidates), (X.shape[1], 1.0, 0.0))
    prior = PriorVector.from_counts(model.labels)
    prior_vals = np.array([prior[c] if c in prior.classes else 0.0 for c in model.classes])
    idx, _ = model.neighbors(X[val], max(candidates))
    truth = labels[val]
    best_k, best_acc = candidates[0], -1.0
    for k in candidates:
        neigh = model.y[idx[:, :k]]
        counts = np.stack([np.count_nonzero(neigh == c, axis=1) for c in range(len(model.classes))], axis=1)
        scores = prior_vals * np.maximum(counts / k, LIKELIHOOD_FLOOR)
        pred = np.array(model.classes, dtype=object)[np.argmax(scores, axis=1)]
        acc = float(np.mean(pred == truth))
        logger.debug("select_k: k=%d validation accuracy %.4f", k, acc)
        if acc > best_acc:
            best_k, best_acc = k, acc
    return best_k


# ---------------------------------------------------------------------------
# Gaussian wingbeat-frequency model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianWingbeatModel:
    """Per-class normal fit ``{label: (mean_hz, std_hz)}`` to wingbeat frequency."""

    params: Mapping[str, tuple[float, float]]

    def __post_init__(self):
        params = {str(c): (float(m), float(s)) for c, (m, s) in sorted(self.params.items())}
        for c, (m, s) in params.items():
            if not (math.isfinite(m) and s > 0 and math.isfinite(s)):
                raise InvalidInput(f"invalid Gaussian parameters for {c!r}: mean={m}, std={s}")
        object.__setattr__(self, "params", params)

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(self.params)


def normal_pdf(x, mean, std):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-((x - mean) ** 2) / (2.0 * std * std)) / (std * math.sqrt(2.0 * math.pi))


def gaussian_likelihood(freq_hz: float, model: GaussianWingbeatModel) -> LikelihoodVector:
    """Normal density of ``freq_hz`` under each class's fitted Gaussian."""
    if not math.isfinite(freq_hz):
        raise InvalidInput("frequency must be finite")
    vals = [float(normal_pdf(freq_hz, m, s)) for m, s in model.params.values()]
    return LikelihoodVector(model.classes, np.array(vals))


def fit_gaussian_model(freqs: Sequence[float], labels: Sequence[str]) -> GaussianWingbeatModel:
    """Sample mean and (n - 1)-normalised standard deviation per class."""
    freqs = np.asarray(freqs, dtype=np.float64)
    labels = np.asarray(labels, dtype=object)
    if freqs.shape != labels.shape:
        raise InvalidInput("freqs and labels must have the same length")
    params = {}
    for c in sorted(set(labels.tolist())):
        x = freqs[labels == c]
        if x.size < 2:
            raise NotEnoughData(f"class {c!r} has {x.size} sample(s); need at least 2")
        std = float(np.std(x, ddof=1))
        if not std > 0:
            raise NotEnoughVariance(f"class {c!r} has zero variance")
        params[c] = (float(np.mean(x)), std)
    return GaussianWingbeatModel(params)


# ---------------------------------------------------------------------------
# Feature providers and the classifier
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Observation:
    """Everything observed about one insect; ``None`` marks a missing feature."""

    spectrum: Spectrum | None = None
    minutes: float | None = None
    sensor: str | None = None
    wingbeat_hz: float | None = None


class FeatureProvider(Protocol):
    name: str

    def likelihood(self, obs: Observation) -> LikelihoodVector | None: ...


@dataclass(frozen=True, eq=False)
class SpectrumKnnFeature:
    model: KnnSpectrumModel
    name: str = "spectrum"

    def likelihood(self, obs: Observation) -> LikelihoodVector | None:
        if obs.spectrum is None:
            return None
        return knn_likelihood(obs.spectrum, self.model)


@dataclass(frozen=True, eq=False)
class WingbeatGaussianFeature:
    model: GaussianWingbeatModel
    band: tuple[float, float] = DEFAULT_BAND_HZ
    name: str = "wingbeat"

    def likelihood(self, obs: Observation) -> LikelihoodVector | None:
        f = obs.wingbeat_hz
        if f is None and obs.spectrum is not None:
            f = fundamental_frequency(obs.spectrum, *self.band)
        return None if f is None else gaussian_likelihood(f, self.model)


@dataclass(frozen=True, eq=False)
class RhythmFeature:
    rhythms: Mapping[str, CircadianRhythm]
    name: str = "time"

    def likelihood(self, obs: Observation) -> LikelihoodVector | None:
        if obs.minutes is None:
            return None
        classes = tuple(sorted(self.rhythms))
        return LikelihoodVector(classes, np.array([rhythm_density(self.rhythms[c], obs.minutes) for c in classes]))


@dataclass(frozen=True, eq=False)
class GeoFeature:
    sites: Mapping[str, GeoModel]
    name: str = "location"

    def likelihood(self, obs: Observation) -> LikelihoodVector | None:
        if obs.sensor is None:
            return None
        site = self.sites.get(obs.sensor)
        if site is None:
            logger.debug("sensor %r has no geo weights; location ignored", obs.sensor)
            return None
        return LikelihoodVector.from_dict(site.weights)


@dataclass(frozen=True)
class Prediction:
    label: str
    posterior: PosteriorVector
    features_used: tuple[str, ...]
    nn_distance: float | None = None


@dataclass(frozen=True, eq=False)
class BayesClassifier:
    """Prior plus any number of conditionally independent feature providers."""

    prior: PriorVector
    features: Sequence[FeatureProvider] = field(default_factory=tuple)
    policy: DecisionPolicy = DecisionPolicy()
    floor: float = LIKELIHOOD_FLOOR

    def likelihoods(self, obs: Observation) -> list[tuple[str, LikelihoodVector | None]]:
        out = []
        for feat in self.features:
            lik = feat.likelihood(obs)
            if lik is not None:
                if set(lik.classes) != set(self.prior.classes):
                    missing = sorted(set(self.prior.classes) - set(lik.classes))
                    raise UnknownClass(f"feature {feat.name!r} lacks classes {missing}")
                lik = lik.floored(self.floor)
            out.append((feat.name, lik))
        return out

    def posterior(self, obs: Observation) -> tuple[PosteriorVector, tuple[str, ...]]:
        liks = self.likelihoods(obs)
        used = tuple(name for name, lik in liks if lik is not None)
        return combine_posterior(self.prior, [lik for _, lik in liks]), used

    def classify(self, obs: Observation) -> Prediction:
        post, used = self.posterior(obs)
        nn = None
        if self.policy.d_max is not None and obs.spectrum is not None:
            for feat in self.features:
                if isinstance(feat, SpectrumKnnFeature):
                    _, dist = feat.model.neighbors(obs.spectrum.magnitudes[None, :], 1)
                    nn = float(dist[0, 0])
                    break
        return Prediction(decide(post, self.policy, nn), post, used, nn)
