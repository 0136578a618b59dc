"""Bayes error, leave-one-out evaluation and the experiment drivers built on it.

The harnesses work on a :class:`~wingbeat.dataset.Dataset` and a
:class:`ClassifierSpec`. Leave-one-out is vectorised: the kNN neighbour counts
for every exemplar are computed once with the exemplar itself excluded, and the
time, location and wingbeat factors are multiplied in afterwards. Experiments
that only vary the auxiliary features (rhythm ablation, threshold sweeps) reuse
the same counts, so every variant is scored on identical folds.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from wingbeat.bayes import (
    LIKELIHOOD_FLOOR,
    UNKNOWN,
    DecisionPolicy,
    GaussianWingbeatModel,
    KnnSpectrumModel,
    PriorVector,
    normal_pdf,
)
from wingbeat.dataset import Dataset
from wingbeat.errors import BinMismatch, InvalidInput, InvalidTask, NotEnoughData, UnknownClass
from wingbeat.features import CircadianRhythm, GeoModel, wrap_minutes

logger = logging.getLogger(__name__)

DAWN_WINDOW = (5 * 60.0, 8 * 60.0)
DUSK_WINDOW = (20 * 60.0, 23 * 60.0)
FEATURE_NAMES = ("spectrum", "wingbeat", "time", "location")


# ---------------------------------------------------------------------------
# Bayes error
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteDensity:
    """Histogram over shared bin edges; ``mass`` need not be normalised."""

    edges: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        mass = np.asarray(self.mass, dtype=np.float64)
        if edges.ndim != 1 or mass.shape != (edges.size - 1,):
            raise InvalidInput("need len(edges) == len(mass) + 1")
        if np.any(np.diff(edges) <= 0):
            raise InvalidInput("bin edges must increase")
        if not np.all(np.isfinite(mass)) or np.any(mass < 0) or not mass.sum() > 0:
            raise InvalidInput("masses must be finite, non-negative and not all zero")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_samples(cls, values, edges) -> "DiscreteDensity":
        counts, _ = np.histogram(values, bins=edges)
        return cls(edges, counts.astype(np.float64))

    @property
    def probabilities(self) -> np.ndarray:
        return self.mass / self.mass.sum()


def bayes_error(densities: Sequence[DiscreteDensity], priors: PriorVector | Sequence[float]) -> float:
    """Optimal error ``1 - sum_bins max_i P(C_i) p_i(bin)`` for one discrete feature.

    Each density is normalised to unit mass first. ``priors`` is a
    :class:`PriorVector` in the same order as ``densities`` or a plain sequence.
    """
    pri = np.asarray(priors.values if isinstance(priors, PriorVector) else priors, dtype=np.float64)
    if len(densities) != pri.size or pri.size < 1:
        raise InvalidInput("one prior per density required")
    edges = densities[0].edges
    for d in densities[1:]:
        if d.edges.shape != edges.shape or not np.array_equal(d.edges, edges):
            raise BinMismatch("densities must share bin edges")
    joint = pri[:, None] * np.stack([d.probabilities for d in densities])
    return float(min(max(1.0 - joint.max(axis=0).sum(), 0.0), 1.0))


def gaussian_bayes_error(
    model: GaussianWingbeatModel,
    priors: PriorVector | None = None,
    step_hz: float = 0.25,
) -> float:
    """Bayes error of the fitted normal densities, integrated on a fine grid.

    The grid spans 6 standard deviations beyond every class. Each cell contributes
    the larger prior-weighted probability mass, computed exactly from the normal
    CDF, so the result converges as ``step_hz`` shrinks without a quadrature bias.
    """
    if len(model.classes) < 2:
        raise InvalidInput("need at least two classes")
    if not 0 < step_hz <= 1.0:
        raise InvalidInput("grid step must lie in (0, 1] Hz")
    pri = np.full(len(model.classes), 1.0 / len(model.classes)) if priors is None else _prior_values(priors, model.classes)
    means = np.array([m for m, _ in model.params.values()])
    stds = np.array([s for _, s in model.params.values()])
    lo = float(np.min(means - 6 * stds))
    hi = float(np.max(means + 6 * stds))
    edges = np.arange(lo, hi + step_hz, step_hz)
    cdf = ndtr((edges[None, :] - means[:, None]) / stds[:, None])
    cell = pri[:, None] * np.diff(cdf, axis=1)
    return float(min(max(1.0 - cell.max(axis=0).sum(), 0.0), 1.0))


def equal_sigma_bayes_error(delta_mu: float, sigma: float) -> float:
    """Closed-form Bayes error of two equal-prior normals with a common sigma."""
    return float(ndtr(-abs(delta_mu) / (2.0 * sigma)))


def _prior_values(priors: PriorVector, classes: Sequence[str]) -> np.ndarray:
    try:
        return np.array([priors[c] for c in classes])
    except UnknownClass:
        raise UnknownClass(f"priors {priors.classes} do not cover classes {tuple(classes)}") from None


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts indexed by (actual, predicted); Unknown decisions kept in their own column."""

    classes: tuple[str, ...]
    counts: np.ndarray
    unknown: np.ndarray | None = None

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.classes)
        if counts.shape != (n, n) or np.any(counts < 0):
            raise InvalidInput("confusion counts must be a non-negative square matrix")
        unknown = np.zeros(n, dtype=np.int64) if self.unknown is None else np.asarray(self.unknown, dtype=np.int64)
        if unknown.shape != (n,) or np.any(unknown < 0):
            raise InvalidInput("unknown column must have one non-negative count per class")
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "unknown", unknown)

    @classmethod
    def from_predictions(cls, classes: Sequence[str], actual: Sequence[str], predicted: Sequence[str]) -> "ConfusionMatrix":
        classes = tuple(classes)
        index = {c: i for i, c in enumerate(classes)}
        counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
        unknown = np.zeros(len(classes), dtype=np.int64)
        for a, p in zip(actual, predicted):
            if p == UNKNOWN:
                unknown[index[a]] += 1
            else:
                counts[index[a], index[p]] += 1
        return cls(classes, counts, unknown)

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1) + self.unknown

    @property
    def total(self) -> int:
        return int(self.row_totals.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    @property
    def decided(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["actual\\predicted", *self.classes, UNKNOWN])
        for c, row, unk in zip(self.classes, self.counts, self.unknown):
            w.writerow([c, *row.tolist(), int(unk)])
        return buf.getvalue()


@dataclass(frozen=True)
class ExperimentReport:
    """Aggregate outcome of one evaluation run.

    ``accuracy`` and ``error`` are fractions of the decided (non-Unknown)
    exemplars and sum to one; ``unknown_rate`` is a fraction of all exemplars.
    """

    name: str
    accuracy: float
    error: float
    unknown_rate: float
    per_class_accuracy: Mapping[str, float]
    n: int
    seed: int | None = None
    params: Mapping[str, object] = field(default_factory=dict)

    @classmethod
    def from_confusion(cls, name: str, cm: ConfusionMatrix, seed=None, params=None) -> "ExperimentReport":
        decided = cm.decided
        acc = cm.correct / decided if decided else 0.0
        per_class = {}
        for i, c in enumerate(cm.classes):
            tot = cm.row_totals[i]
            per_class[c] = float(cm.counts[i, i] / tot) if tot else float("nan")
        return cls(
            name,
            float(acc),
            float(1.0 - acc) if decided else 0.0,
            float(cm.unknown.sum() / cm.total) if cm.total else 0.0,
            per_class,
            cm.total,
            seed,
            dict(params or {}),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["experiment", self.name])
        w.writerow(["seed", "" if self.seed is None else self.seed])
        w.writerow(["n", self.n])
        w.writerow(["accuracy", repr(self.accuracy)])
        w.writerow(["error", repr(self.error)])
        w.writerow(["unknown_rate", repr(self.unknown_rate)])
        for c, a in self.per_class_accuracy.items():
            w.writerow([f"accuracy:{c}", repr(a)])
        for key in sorted(self.params):
            w.writerow([f"param:{key}", self.params[key]])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [
            f"{self.name}: accuracy {self.accuracy:.4f}, error {self.error:.4f} over {self.n} exemplars",
        ]
        if self.unknown_rate:
            lines.append(f"  flagged Unknown: {self.unknown_rate:.4f}")
        for c, a in self.per_class_accuracy.items():
            lines.append(f"  {c}: {a:.4f}")
        if self.seed is not None:
            lines.append(f"  seed {self.seed}")
        return "\n".join(lines) + "\n"


def rows_to_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """CSV text with floats written by ``repr`` so reruns are byte-identical."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_text(path: str | Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="")


# ---------------------------------------------------------------------------
# Leave-one-out posteriors
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ClassifierSpec:
    """What the evaluated classifier uses.

    Attributes
    ----------
    k : int
        Neighbour count of the spectrum kNN.
    features : tuple of str
        Subset of ``("spectrum", "wingbeat", "time", "location")``.
    priors : "empirical", "uniform" or PriorVector
        Empirical priors are recomputed from the training fold.
    rhythms : mapping of class -> CircadianRhythm, optional
        Needed when ``"time"`` is used.
    geo : mapping of sensor -> GeoModel, optional
        Needed when ``"location"`` is used.
    policy : DecisionPolicy
    floor : float
        Lower bound applied to every likelihood.
    """

    k: int = 8
    features: tuple[str, ...] = ("spectrum",)
    priors: str | PriorVector = "empirical"
    rhythms: Mapping[str, CircadianRhythm] | None = None
    geo: Mapping[str, GeoModel] | None = None
    policy: DecisionPolicy = DecisionPolicy()
    floor: float = LIKELIHOOD_FLOOR

    def __post_init__(self):
        unknown = set(self.features) - set(FEATURE_NAMES)
        if unknown:
            raise InvalidInput(f"unknown features {sorted(unknown)}")
        if "time" in self.features and self.rhythms is None:
            raise InvalidInput("the time feature needs rhythms")
        if "location" in self.features and self.geo is None:
            raise InvalidInput("the location feature needs geo weights")
        if not isinstance(self.priors, PriorVector) and self.priors not in ("empirical", "uniform"):
            raise InvalidInput(f"unknown priors {self.priors!r}")

    def replace(self, **changes) -> "ClassifierSpec":
        fields = dict(k=self.k, features=self.features, priors=self.priors, rhythms=self.rhythms,
                      geo=self.geo, policy=self.policy, floor=self.floor)
        fields.update(changes)
        return ClassifierSpec(**fields)


@dataclass(frozen=True, eq=False)
class LooScores:
    """Per-exemplar held-out posteriors."""

    classes: tuple[str, ...]
    y: np.ndarray
    posteriors: np.ndarray
    nn_distance: np.ndarray

    def predictions(self, policy: DecisionPolicy = DecisionPolicy()) -> np.ndarray:
        return decide_rows(self.posteriors, self.classes, policy, self.nn_distance)


def decide_rows(posteriors: np.ndarray, classes: Sequence[str], policy: DecisionPolicy, nn_distance=None) -> np.ndarray:
    """Vectorised :func:`wingbeat.bayes.decide` over posterior rows."""
    classes = tuple(classes)
    names = np.array(classes + (UNKNOWN,), dtype=object)
    if policy.mode == "argmax":
        pick = np.argmax(posteriors, axis=1)
    else:
        if policy.target not in classes:
            raise UnknownClass(f"target class {policy.target!r} not in {classes}")
        t = classes.index(policy.target)
        rest = posteriors.copy()
        rest[:, t] = -1.0
        pick = np.where(posteriors[:, t] >= policy.threshold, t, np.argmax(rest, axis=1))
        if len(classes) == 1:
            pick[:] = t
    if policy.tau is not None:
        pick = np.where(posteriors.max(axis=1) < policy.tau, len(classes), pick)
    if policy.d_max is not None and nn_distance is not None:
        pick = np.where(np.asarray(nn_distance) > policy.d_max, len(classes), pick)
    return names[pick]


def _class_index(dataset: Dataset) -> tuple[tuple[str, ...], np.ndarray]:
    classes = dataset.classes
    lookup = {c: i for i, c in enumerate(classes)}
    return classes, np.array([lookup[c] for c in dataset.labels], dtype=np.int64)


def knn_loo_counts(dataset: Dataset, k: int, groups=None) -> tuple[np.ndarray, np.ndarray]:
    """Neighbour counts per class for every exemplar, excluding its own group.

    ``groups`` defaults to one group per row (plain leave-one-out); passing the
    dataset's ``sources`` also drops exact copies of the query.
    """
    groups = np.arange(len(dataset)) if groups is None else np.asarray(groups)
    model = KnnSpectrumModel(dataset.features, dataset.labels, min(k, len(dataset)), dataset.geometry)
    counts, nn = model.counts(dataset.features, k, query_groups=groups, groups=groups)
    return counts, nn


def _loo_priors(spec: ClassifierSpec, classes, y) -> np.ndarray:
    n_c = len(classes)
    if spec.priors == "uniform":
        return np.full((y.size, n_c), 1.0 / n_c)
    if isinstance(spec.priors, PriorVector):
        return np.broadcast_to(_prior_values(spec.priors, classes), (y.size, n_c)).copy()
    totals = np.bincount(y, minlength=n_c).astype(np.float64)
    pri = np.broadcast_to(totals, (y.size, n_c)).copy()
    pri[np.arange(y.size), y] -= 1.0
    return pri / pri.sum(axis=1, keepdims=True)


def _loo_wingbeat(dataset: Dataset, classes, y) -> np.ndarray:
    """Gaussian wingbeat likelihood with each exemplar removed from its class fit."""
    f = dataset.wingbeat_hz
    if np.any(~np.isfinite(f)):
        raise NotEnoughData("wingbeat feature needs a measured frequency for every exemplar")
    out = np.empty((f.size, len(classes)))
    for c in range(len(classes)):
        x = f[y == c]
        n = x.size
        if n < 3:
            raise NotEnoughData(f"class {classes[c]!r} needs at least 3 exemplars for a held-out Gaussian fit")
        s1, s2 = x.sum(), np.sum(x * x)
        mean_all, std_all = s1 / n, math.sqrt(max((s2 - s1 * s1 / n) / (n - 1), 0.0))
        out[:, c] = normal_pdf(f, mean_all, std_all)
        own = np.flatnonzero(y == c)
        m_loo = (s1 - f[own]) / (n - 1)
        var_loo = np.maximum((s2 - f[own] ** 2 - (n - 1) * m_loo**2) / (n - 2), 1e-300)
        out[own, c] = normal_pdf(f[own], m_loo, np.sqrt(var_loo))
    return out


def rhythm_matrix(minutes: np.ndarray, rhythms: Mapping[str, CircadianRhythm], classes) -> np.ndarray:
    """Per-minute ``P(time | class)`` for every row; rows with unknown time get ones."""
    missing = [c for c in classes if c not in rhythms]
    if missing:
        raise UnknownClass(f"no rhythm for classes {missing}")
    out = np.ones((minutes.size, len(classes)))
    known = np.isfinite(minutes)
    wrapped = np.array([wrap_minutes(t) for t in minutes[known]])
    for c, label in enumerate(classes):
        r = rhythms[label]
        idx = np.minimum((wrapped // r.bin_minutes).astype(int), r.n_bins - 1)
        out[known, c] = r.density[idx] / r.bin_minutes
    return out


def geo_matrix(sensors: Sequence[str | None], geo: Mapping[str, GeoModel], classes) -> np.ndarray:
    out = np.ones((len(sensors), len(classes)))
    for i, s in enumerate(sensors):
        site = geo.get(s) if s is not None else None
        if site is None:
            continue
        try:
            out[i] = [site.weights[c] for c in classes]
        except KeyError as exc:
            raise UnknownClass(f"sensor {s!r} has no weight for class {exc.args[0]!r}") from None
    return out


def combine_rows(factors: Sequence[np.ndarray], floor: float) -> np.ndarray:
    """Row-wise product of prior and floored likelihood matrices, renormalised."""
    prior, *liks = factors
    post = np.array(prior, dtype=np.float64)
    for lik in liks:
        post *= np.maximum(lik, floor)
    total = post.sum(axis=1, keepdims=True)
    return post / total


def loo_scores(dataset: Dataset, spec: ClassifierSpec, counts=None, groups=None) -> LooScores:
    """Held-out posterior of every exemplar under ``spec``.

    ``counts`` may carry precomputed ``(knn_counts, nn_distance)`` from
    :func:`knn_loo_counts` so several variants share the same folds.
    """
    classes, y = _class_index(dataset)
    per_class = np.bincount(y, minlength=len(classes))
    if np.any(per_class < 2):
        thin = [classes[i] for i in np.flatnonzero(per_class < 2)]
        raise NotEnoughData(f"classes with fewer than 2 exemplars: {thin}")
    factors = [_loo_priors(spec, classes, y)]
    nn = np.full(len(dataset), np.nan)
    if "spectrum" in spec.features:
        if len(dataset) - 1 < spec.k:
            raise NotEnoughData(f"k={spec.k} exceeds the {len(dataset) - 1} exemplars left in each fold")
        knn, nn = counts if counts is not None else knn_loo_counts(dataset, spec.k, groups)
        factors.append(knn / spec.k)
    if "wingbeat" in spec.features:
        factors.append(_loo_wingbeat(dataset, classes, y))
    if "time" in spec.features:
        factors.append(rhythm_matrix(dataset.minutes, spec.rhythms, classes))
    if "location" in spec.features:
        factors.append(geo_matrix(dataset.sensors, spec.geo, classes))
    return LooScores(classes, y, combine_rows(factors, spec.floor), nn)


def leave_one_out(dataset: Dataset, spec: ClassifierSpec, seed: int | None = None, name: str = "loo",
                  counts=None) -> tuple[ExperimentReport, ConfusionMatrix]:
    """Classify each exemplar with a model trained on all the others."""
    scores = loo_scores(dataset, spec, counts)
    pred = scores.predictions(spec.policy)
    cm = ConfusionMatrix.from_predictions(scores.classes, dataset.labels, pred)
    params = {"k": spec.k, "features": "+".join(spec.features), "priors": _priors_name(spec.priors)}
    return ExperimentReport.from_confusion(name, cm, seed, params), cm


def _priors_name(priors) -> str:
    return priors if isinstance(priors, str) else "given"


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    target_missed_rate: float
    other_missed_rate: float
    target_missed: int
    other_missed: int
    n_target: int
    n_other: int


def threshold_sweep(dataset: Dataset, target: str, thresholds: Sequence[float], spec: ClassifierSpec,
                    counts=None) -> list[SweepRow]:
    """Error trade-off of the target-class threshold rule on held-out posteriors.

    For each threshold ``t`` an exemplar is called ``target`` when its posterior
    for ``target`` is at least ``t``. ``target_missed_rate`` is the fraction of
    target exemplars called the other class; ``other_missed_rate`` the fraction
    of the other class called ``target``.
    """
    classes = dataset.classes
    if len(classes) != 2:
        raise InvalidTask(f"threshold sweep needs a binary task, got {len(classes)} classes")
    if target not in classes:
        raise UnknownClass(f"target {target!r} not among {classes}")
    scores = loo_scores(dataset, spec, counts)
    t_idx = classes.index(target)
    is_target = scores.y == t_idx
    p_target = scores.posteriors[:, t_idx]
    rows = []
    for t in thresholds:
        called = p_target >= t
        tm = int(np.count_nonzero(is_target & ~called))
        om = int(np.count_nonzero(~is_target & called))
        nt, no = int(is_target.sum()), int((~is_target).sum())
        rows.append(SweepRow(float(t), tm / nt, om / no, tm, om, nt, no))
    return rows


def sweep_confusion(dataset: Dataset, target: str, threshold: float, spec: ClassifierSpec, counts=None) -> ConfusionMatrix:
    """Confusion matrix of the threshold rule at one threshold."""
    policy = DecisionPolicy("threshold", target, threshold)
    scores = loo_scores(dataset, spec, counts)
    return ConfusionMatrix.from_predictions(scores.classes, dataset.labels, scores.predictions(policy))


def class_scaling_experiment(order: Sequence[str], dataset: Dataset, spec: ClassifierSpec) -> list[tuple[int, float]]:
    """Leave-one-out accuracy over the first ``n`` classes of ``order`` for n = 2..N."""
    if len(order) < 2:
        raise InvalidInput("class scaling needs at least two classes")
    out = []
    for n in range(2, len(order) + 1):
        subset = dataset.of_classes(order[:n])
        report, _ = leave_one_out(subset, spec, name=f"scaling-{n}")
        logger.info("class scaling: %d classes, accuracy %.4f", n, report.accuracy)
        out.append((n, report.accuracy))
    return out


@dataclass(frozen=True)
class IndependenceResult:
    error: float
    errors: tuple[float, ...]
    n_per_window: int
    window_counts: tuple[int, int]
    seed: int


def _in_window(minutes: np.ndarray, window: tuple[float, float]) -> np.ndarray:
    lo, hi = wrap_minutes(window[0]), wrap_minutes(window[1])
    m = np.where(np.isfinite(minutes), minutes, -1.0)
    if lo <= hi:
        return (m >= lo) & (m < hi)
    return (m >= lo) | ((m >= 0) & (m < hi))


def independence_check(
    dataset: Dataset,
    window_a: tuple[float, float] = DAWN_WINDOW,
    window_b: tuple[float, float] = DUSK_WINDOW,
    n_resamples: int = 10,
    n_per_window: int | None = None,
    k: int = 8,
    seed: int = 0,
    min_per_window: int = 100,
) -> IndependenceResult:
    """Can the spectrum tell which time window an exemplar came from?

    Exemplars are labelled by window, ``n_per_window`` are drawn with replacement
    from each window, and the draws are classified by spectrum alone with
    leave-one-out (copies of the query's own recording are excluded from its
    neighbours). An error near 0.5 means spectrum and time are conditionally
    independent given the class.
    """
    in_a, in_b = _in_window(dataset.minutes, window_a), _in_window(dataset.minutes, window_b)
    idx_a, idx_b = np.flatnonzero(in_a), np.flatnonzero(in_b)
    if idx_a.size < min_per_window or idx_b.size < min_per_window:
        raise NotEnoughData(f"windows hold {idx_a.size} and {idx_b.size} exemplars; need {min_per_window} each")
    n = n_per_window or min(idx_a.size, idx_b.size)
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(n_resamples):
        pick = np.concatenate([rng.choice(idx_a, n, replace=True), rng.choice(idx_b, n, replace=True)])
        labels = ("a",) * n + ("b",) * n
        sample = Dataset(dataset.features[pick], labels, dataset.geometry, sources=dataset.sources[pick])
        counts = knn_loo_counts(sample, k, groups=sample.sources)
        scores = loo_scores(sample, ClassifierSpec(k=k, priors="uniform"), counts)
        pred = scores.predictions()
        errors.append(float(np.mean(pred != np.asarray(labels, dtype=object))))
    return IndependenceResult(float(np.mean(errors)), tuple(errors), n, (idx_a.size, idx_b.size), seed)


def ablation_rhythms(
    dataset: Dataset,
    variants: Mapping[str, Mapping[str, CircadianRhythm] | None],
    spec: ClassifierSpec,
) -> list[tuple[str, float]]:
    """Leave-one-out accuracy for each rhythm variant on identical folds.

    A variant maps every class to a rhythm; ``None`` drops the time feature.
    """
    base = spec.replace(features=tuple(f for f in spec.features if f != "time"), rhythms=None)
    counts = knn_loo_counts(dataset, spec.k) if "spectrum" in spec.features else None
    out = []
    for name, rhythms in variants.items():
        variant = base if rhythms is None else base.replace(features=base.features + ("time",), rhythms=rhythms)
        report, _ = leave_one_out(dataset, variant, name=f"ablation-{name}", counts=counts)
        logger.info("rhythm variant %s: accuracy %.4f", name, report.accuracy)
        out.append((name, report.accuracy))
    return out


@dataclass(frozen=True)
class GeoSimResult:
    error_without: float
    error_with: float
    n: int
    per_sensor: Mapping[str, tuple[int, float, float]]
    seed: int


def geo_simulation(
    dataset: Dataset,
    captures: Mapping[str, Sequence[str]],
    geo: Mapping[str, GeoModel],
    spec: ClassifierSpec,
    seed: int = 0,
) -> GeoSimResult:
    """Classify simulated captures with and without the location feature.

    Each captured insect ``(sensor, label)`` is given the spectrum of a random
    exemplar of its class (drawn with replacement). That exemplar is held out of
    the kNN, so both runs score exactly the same queries and folds.
    """
    rng = np.random.default_rng(seed)
    classes, y = _class_index(dataset)
    by_class = {c: np.flatnonzero(y == i) for i, c in enumerate(classes)}
    rows, sensors, labels = [], [], []
    for sensor in sorted(captures):
        for label in captures[sensor]:
            if label not in by_class:
                raise UnknownClass(f"captured class {label!r} not in dataset")
            rows.append(int(rng.choice(by_class[label])))
            sensors.append(sensor)
            labels.append(label)
    if not rows:
        raise NotEnoughData("no captures to classify")
    rows = np.array(rows)
    model = KnnSpectrumModel(dataset.features, dataset.labels, spec.k, dataset.geometry)
    knn, _ = model.counts(dataset.features[rows], spec.k, query_groups=dataset.sources[rows], groups=dataset.sources)
    prior = _fold_prior(spec, classes, y)
    base = [np.broadcast_to(prior, knn.shape), knn / spec.k]
    if "time" in spec.features:
        base.append(rhythm_matrix(dataset.minutes[rows], spec.rhythms, classes))
    truth = np.asarray(labels, dtype=object)
    names = np.array(classes, dtype=object)
    pred_without = names[np.argmax(combine_rows(base, spec.floor), axis=1)]
    pred_with = names[np.argmax(combine_rows(base + [geo_matrix(sensors, geo, classes)], spec.floor), axis=1)]
    sensors = np.asarray(sensors, dtype=object)
    per_sensor = {}
    for s in sorted(captures):
        m = sensors == s
        if m.any():
            per_sensor[s] = (int(m.sum()), float(np.mean(pred_without[m] != truth[m])), float(np.mean(pred_with[m] != truth[m])))
    return GeoSimResult(float(np.mean(pred_without != truth)), float(np.mean(pred_with != truth)), rows.size, per_sensor, seed)


def _fold_prior(spec: ClassifierSpec, classes, y) -> np.ndarray:
    if spec.priors == "uniform":
        return np.full(len(classes), 1.0 / len(classes))
    if isinstance(spec.priors, PriorVector):
        return _prior_values(spec.priors, classes)
    counts = np.bincount(y, minlength=len(classes)).astype(np.float64)
    return counts / counts.sum()
