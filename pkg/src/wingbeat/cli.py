"""The ``wingbeat`` command: synth, detect, train, classify and eval.

Data moves between commands as WAV files plus a CSV manifest with the columns
``path,label,timestamp,sensor``. A ``?`` marks an unknown value, which the
classifier treats as a missing feature. Paths in a manifest are relative to the
manifest's own directory. Models, run configurations and synthetic scenarios
are JSON files.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from wingbeat import evaluate as ev
from wingbeat import synth
from wingbeat.bayes import (
    BayesClassifier,
    DecisionPolicy,
    GaussianWingbeatModel,
    GeoFeature,
    KnnSpectrumModel,
    Observation,
    PriorVector,
    RhythmFeature,
    SpectrumKnnFeature,
    WingbeatGaussianFeature,
    fit_gaussian_model,
    select_k,
)
from wingbeat.dataset import Dataset
from wingbeat.detect import (
    DetectorModel,
    background_profile,
    detect_events,
    snippet_profile,
)
from wingbeat.errors import InvalidInput, NotEnoughData, UnknownClass, WingbeatError
from wingbeat.features import (
    TEMPLATES,
    ActivityTemplateSpec,
    CircadianRhythm,
    GeoModel,
    learn_rhythm,
    template_rhythm,
    to_minutes,
    uniform_rhythm,
)
from wingbeat.signal import (
    DEFAULT_BAND_HZ,
    Spectrum,
    band_spectrum,
    compute_spectrum,
    fundamental_frequency,
    read_wav,
    spectral_subtract,
    truncate_band,
    write_wav,
)

logger = logging.getLogger("wingbeat")

MISSING = "?"
MANIFEST_COLUMNS = ("path", "label", "timestamp", "sensor")
EXPERIMENTS = ("loo", "bayes-error", "sweep", "scaling", "ablation", "independence", "geo-sim")
MODEL_FORMAT = 1
DEFAULT_EVAL_K = 8
AUTO_D_MAX = "auto"
DETECTOR_STREAM = 1_000_000  # seed stream for detector exemplars, apart from the recordings


class CommandFailed(Exception):
    """Raised by a command to exit non-zero after finishing what it could."""


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    """One snippet; ``None`` fields were ``?`` in the file."""

    path: Path
    label: str | None = None
    timestamp: str | None = None
    sensor: str | None = None

    @property
    def minutes(self) -> float | None:
        return None if self.timestamp is None else to_minutes(self.timestamp)


def _field(value: str | None) -> str | None:
    value = (value or "").strip()
    return None if value in ("", MISSING) else value


def read_manifest(path: str | Path) -> list[ManifestRow]:
    path = Path(path)
    base = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise InvalidInput(f"{path}: manifest lacks columns {missing}")
        rows = []
        for line in reader:
            rel = _field(line["path"])
            if rel is None:
                raise InvalidInput(f"{path}: row without a path")
            rows.append(ManifestRow(base / rel, _field(line["label"]), _field(line["timestamp"]), _field(line["sensor"])))
    return rows


def write_manifest(path: str | Path, rows: Iterable[ManifestRow]) -> None:
    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in rows:
            rel = os.path.relpath(Path(r.path).resolve(), base)
            w.writerow([Path(rel).as_posix(), r.label or MISSING, r.timestamp or MISSING, r.sensor or MISSING])


def parse_recording_name(path: str | Path) -> tuple[str | None, datetime | None]:
    """Sensor id and start time from ``<sensorid>_<ISO start>.wav``.

    Both the extended (``2020-06-01T05:30:00``) and basic (``20200601T053000``)
    ISO-8601 forms are accepted. Returns ``(None, None)`` for other names.
    """
    stem = Path(path).stem
    if "_" not in stem:
        return None, None
    sensor, stamp = stem.rsplit("_", 1)
    for parse in (datetime.fromisoformat, lambda s: datetime.strptime(s, "%Y%m%dT%H%M%S")):
        try:
            return sensor or None, parse(stamp)
        except ValueError:
            continue
    return None, None


def recording_name(sensor: str, start: datetime) -> str:
    return f"{sensor}_{start.strftime('%Y%m%dT%H%M%S')}.wav"


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Every setting a command may need; unknown keys are rejected.

    Attributes mirror the JSON keys. ``rhythms`` maps a class to one of
    ``"learned"``, ``"uniform"``, ``{"template": name}``, ``{"template_spec": [...]}``
    or ``{"proxy": other_class}``; ``geo`` maps a sensor to per-class weights
    (``{"counts": {...}}`` adds a pseudocount of one).
    """

    band: tuple[float, float] = DEFAULT_BAND_HZ
    k: int | None = None
    k_candidates: tuple[int, ...] = (1, 3, 5, 7, 9, 11, 13, 15)
    priors: Any = "empirical"
    features: tuple[str, ...] = ("spectrum", "time", "location")
    rhythms: Mapping[str, Any] = field(default_factory=dict)
    rhythm_bin_minutes: int = 30
    geo: Mapping[str, Any] = field(default_factory=dict)
    policy: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    jobs: int = 1
    denoise: bool = True
    detector: str | None = None
    # eval-only settings
    manifest: str | None = None
    experiment: str | None = None
    target: str | None = None
    thresholds: tuple[float, ...] = (0.5, 0.45, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15, 0.1)
    order: tuple[str, ...] | None = None
    window_a: tuple[float, float] = ev.DAWN_WINDOW
    window_b: tuple[float, float] = ev.DUSK_WINDOW
    n_resamples: int = 10
    ablation: Mapping[str, Any] = field(default_factory=dict)
    geo_scenario: Mapping[str, Any] | None = None
    n_per_species: int = 10000

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise InvalidInput(f"unknown config keys {unknown}")
        cfg = cls(**{k: (tuple(v) if isinstance(v, list) and k not in ("geo_scenario",) else v) for k, v in data.items()})
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def validate(self) -> None:
        lo, hi = self.band
        if not 0 <= lo < hi:
            raise InvalidInput(f"band must satisfy 0 <= lo < hi, got {self.band}")
        if self.k is not None and self.k < 1:
            raise InvalidInput("k must be positive")
        if self.jobs < 1:
            raise InvalidInput("jobs must be >= 1")
        unknown = set(self.features) - set(ev.FEATURE_NAMES)
        if unknown:
            raise InvalidInput(f"unknown features {sorted(unknown)}")
        if 1440 % self.rhythm_bin_minutes:
            raise InvalidInput("rhythm_bin_minutes must divide 1440")
        if self.experiment is not None and self.experiment not in EXPERIMENTS:
            raise InvalidInput(f"unknown experiment {self.experiment!r}")
        self.decision_policy()

    def decision_policy(self, knn: KnnSpectrumModel | None = None) -> DecisionPolicy:
        """``{"d_max": "auto"}`` sets the distance cutoff to the 99th percentile of
        within-training nearest-neighbour distances of ``knn``."""
        policy = dict(self.policy)
        if policy.get("d_max") == AUTO_D_MAX:
            policy["d_max"] = None if knn is None else knn.nn_distance_quantile(0.99)
        return DecisionPolicy(**policy)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


# ---------------------------------------------------------------------------
# Loading snippets
# ---------------------------------------------------------------------------


def parallel_map(fn: Callable, items: Sequence, jobs: int) -> list:
    """Order-preserving map; each result is either a value or the exception raised."""

    def safe(item):
        try:
            return fn(item)
        except (WingbeatError, OSError, ValueError) as exc:
            return exc

    if jobs <= 1:
        return [safe(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(safe, items))


def snippet_features(path: Path, band: tuple[float, float]) -> tuple[Spectrum, float]:
    """Band spectrum and measured wingbeat frequency of one snippet."""
    clip = read_wav(path)
    full = compute_spectrum(clip, clip.sample_rate_hz)
    return truncate_band(full, *band), fundamental_frequency(full, *band)


def load_dataset(rows: Sequence[ManifestRow], band, jobs: int = 1, require_labels: bool = True) -> tuple[Dataset, list[str]]:
    """Featurise manifest rows; returns the dataset and per-row error messages."""
    results = parallel_map(lambda r: snippet_features(r.path, band), rows, jobs)
    errors = [f"{r.path}: {res}" for r, res in zip(rows, results) if isinstance(res, Exception)]
    good = [(r, res) for r, res in zip(rows, results) if not isinstance(res, Exception)]
    if not good:
        raise NotEnoughData("no readable snippets in manifest")
    if require_labels:
        unlabeled = [str(r.path) for r, _ in good if r.label is None]
        if unlabeled:
            raise InvalidInput(f"{len(unlabeled)} rows lack a label, e.g. {unlabeled[0]}")
    ds = Dataset.from_spectra(
        [res[0] for _, res in good],
        [r.label or MISSING for r, _ in good],
        minutes=np.array([np.nan if r.minutes is None else r.minutes for r, _ in good]),
        sensors=tuple(r.sensor for r, _ in good),
        wingbeat_hz=np.array([res[1] for _, res in good]),
    )
    return ds, errors


# ---------------------------------------------------------------------------
# Model building and persistence
# ---------------------------------------------------------------------------


def resolve_class(name: str, classes: Sequence[str]) -> str:
    """Exact class label, or the unique class ending in ``name`` at a word boundary.

    ``"female"`` and ``"aegypti/female"`` both pick ``"Ae. aegypti/female"`` when
    no other class ends that way.
    """
    if name in classes:
        return name
    hits = [c for c in classes if c.endswith(name) and c[-len(name) - 1] in " /."]
    if len(hits) == 1:
        return hits[0]
    raise UnknownClass(f"{name!r} matches {len(hits)} of the classes {list(classes)}")


def _rhythm_from_entry(entry, label, learned: Mapping[str, CircadianRhythm], bin_minutes: int) -> CircadianRhythm:
    if entry == "uniform":
        return uniform_rhythm(bin_minutes)
    if entry == "learned":
        if label not in learned:
            raise NotEnoughData(f"class {label!r} has no timestamps to learn a rhythm from")
        return learned[label]
    if isinstance(entry, Mapping):
        if "template" in entry:
            if entry["template"] not in TEMPLATES:
                raise InvalidInput(f"unknown template {entry['template']!r}; choose from {sorted(TEMPLATES)}")
            return template_rhythm(TEMPLATES[entry["template"]](), bin_minutes)
        if "template_spec" in entry:
            return template_rhythm(ActivityTemplateSpec.from_dict(entry["template_spec"]), bin_minutes)
        if "proxy" in entry:
            other = entry["proxy"]
            if other not in learned:
                raise NotEnoughData(f"proxy class {other!r} has no learned rhythm")
            return learned[other].as_proxy()
        if "density" in entry:
            return CircadianRhythm(np.asarray(entry["density"]), int(entry.get("bin_minutes", 1)), entry.get("provenance", "learned"))
    raise InvalidInput(f"cannot interpret rhythm setting {entry!r} for {label!r}")


def learn_class_rhythms(ds: Dataset, bin_minutes: int) -> dict[str, CircadianRhythm]:
    out = {}
    labels = ds.label_array
    for c in ds.classes:
        t = ds.minutes[(labels == c) & np.isfinite(ds.minutes)]
        if t.size:
            out[c] = learn_rhythm(t, bin_minutes)
    return out


def build_rhythms(ds: Dataset, cfg: RunConfig) -> dict[str, CircadianRhythm]:
    """Learned rhythms where timestamps exist, configured tiers elsewhere, else uniform."""
    learned = learn_class_rhythms(ds, cfg.rhythm_bin_minutes)
    out = {}
    for c in ds.classes:
        entry = cfg.rhythms.get(c)
        if entry is not None:
            out[c] = _rhythm_from_entry(entry, c, learned, cfg.rhythm_bin_minutes)
        elif c in learned:
            out[c] = learned[c]
        else:
            out[c] = uniform_rhythm(cfg.rhythm_bin_minutes)
    if not learned and not cfg.rhythms:
        logger.warning("no timestamps in the training manifest; every class gets a uniform rhythm")
    return out


def build_geo(cfg: RunConfig, classes: Sequence[str]) -> dict[str, GeoModel]:
    sites = {}
    for sensor, spec in cfg.geo.items():
        if "counts" in spec:
            counts = {c: float(spec["counts"].get(c, 0.0)) for c in classes}
            sites[sensor] = GeoModel.from_counts(counts)
        else:
            missing = [c for c in classes if c not in spec]
            if missing:
                raise InvalidInput(f"geo weights for {sensor!r} lack classes {missing}")
            sites[sensor] = GeoModel({c: spec[c] for c in classes})
    return sites


def build_priors(cfg: RunConfig, labels: Sequence[str]) -> PriorVector:
    if cfg.priors == "empirical":
        return PriorVector.from_counts(labels)
    if cfg.priors == "uniform":
        return PriorVector.uniform(labels)
    if isinstance(cfg.priors, Mapping):
        total = sum(cfg.priors.values())
        return PriorVector.from_dict({c: v / total for c, v in cfg.priors.items()})
    raise InvalidInput(f"priors must be 'empirical', 'uniform' or a mapping, got {cfg.priors!r}")


@dataclass(frozen=True, eq=False)
class TrainedModel:
    knn: KnnSpectrumModel
    gaussian: GaussianWingbeatModel
    rhythms: Mapping[str, CircadianRhythm]
    geo: Mapping[str, GeoModel]
    priors: PriorVector
    policy: DecisionPolicy
    features: tuple[str, ...]
    band: tuple[float, float]

    def classifier(self) -> BayesClassifier:
        providers = []
        if "spectrum" in self.features:
            providers.append(SpectrumKnnFeature(self.knn))
        if "wingbeat" in self.features:
            providers.append(WingbeatGaussianFeature(self.gaussian, self.band))
        if "time" in self.features:
            providers.append(RhythmFeature(self.rhythms))
        if "location" in self.features and self.geo:
            providers.append(GeoFeature(self.geo))
        return BayesClassifier(self.priors, tuple(providers), self.policy)

    def save(self, path: str | Path) -> None:
        """Write ``path`` (JSON) and the exemplar spectra next to it as ``.npz``."""
        path = Path(path)
        npz = path.with_suffix(".npz")
        np.savez(npz, features=self.knn.features)
        doc = {
            "format": MODEL_FORMAT,
            "exemplars": npz.name,
            "labels": list(self.knn.labels),
            "k": self.knn.k,
            "geometry": list(self.knn.geometry),
            "band": list(self.band),
            "features": list(self.features),
            "priors": self.priors.as_dict(),
            "gaussian": {c: list(p) for c, p in self.gaussian.params.items()},
            "rhythms": {
                c: {"bin_minutes": r.bin_minutes, "provenance": r.provenance, "density": r.density.tolist()}
                for c, r in self.rhythms.items()
            },
            "geo": {s: dict(g.weights) for s, g in self.geo.items()},
            "policy": self.policy.to_dict(),
        }
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        path = Path(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("format") != MODEL_FORMAT:
            raise InvalidInput(f"{path}: unsupported model format {doc.get('format')!r}")
        with np.load(path.parent / doc["exemplars"]) as data:
            X = data["features"]
        geometry = tuple(doc["geometry"])
        knn = KnnSpectrumModel(X, tuple(doc["labels"]), int(doc["k"]), (int(geometry[0]), float(geometry[1]), float(geometry[2])))
        return cls(
            knn,
            GaussianWingbeatModel({c: tuple(p) for c, p in doc["gaussian"].items()}),
            {c: CircadianRhythm(np.asarray(r["density"]), r["bin_minutes"], r["provenance"]) for c, r in doc["rhythms"].items()},
            {s: GeoModel(w) for s, w in doc["geo"].items()},
            PriorVector.from_dict(doc["priors"]),
            DecisionPolicy(**doc["policy"]),
            tuple(doc["features"]),
            tuple(doc["band"]),
        )


def train_model(ds: Dataset, cfg: RunConfig) -> TrainedModel:
    labels = ds.label_array
    for c in ds.classes:
        n = int(np.sum(labels == c))
        if n < 2:
            raise NotEnoughData(f"class {c!r} has {n} exemplar; need at least 2")
    if len(ds.classes) < 2:
        raise NotEnoughData("training needs at least two classes")
    k = cfg.k
    if k is None:
        k = select_k(ds.features, ds.labels, [c for c in cfg.k_candidates if c <= len(ds) // 2] or [1], seed=cfg.seed)
        logger.info("select_k chose k=%d", k)
    knn = KnnSpectrumModel(ds.features, ds.labels, k, ds.geometry)
    gaussian = fit_gaussian_model(ds.wingbeat_hz, ds.labels)
    return TrainedModel(
        knn,
        gaussian,
        build_rhythms(ds, cfg),
        build_geo(cfg, ds.classes),
        build_priors(cfg, ds.labels),
        cfg.decision_policy(knn),
        tuple(cfg.features),
        tuple(cfg.band),
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _isoformat(t: datetime) -> str:
    return t.isoformat(timespec="milliseconds")


def _detect_one(path: Path, model: DetectorModel, cfg: RunConfig, out_dir: Path) -> list[ManifestRow]:
    recording = read_wav(path)
    sensor, start = parse_recording_name(path)
    if start is None:
        logger.warning("%s: name is not <sensor>_<ISO start>.wav; timestamps left unknown", path.name)
    events = detect_events(recording, model, source_id=path.stem)
    profile = background_profile(recording) if cfg.denoise else None
    rows = []
    for i, e in enumerate(events):
        clip = e.clip
        if profile is not None:
            clip = spectral_subtract(clip, snippet_profile(profile, e.span_samples, recording.sample_rate_hz))
        name = f"{path.stem}_{i:04d}.wav"
        write_wav(out_dir / name, clip)
        stamp = None if start is None else _isoformat(start + timedelta(seconds=e.event_offset_s))
        rows.append(ManifestRow(out_dir / name, None, stamp, sensor))
    return rows


def cmd_detect(args, cfg: RunConfig) -> int:
    raw = Path(args.recordings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    detector_path = args.detector or cfg.detector
    if detector_path is None:
        raise InvalidInput("detect needs a detector model (--detector or 'detector' in the config)")
    model = DetectorModel.from_dict(json.loads(Path(detector_path).read_text(encoding="utf-8")))
    files = sorted(p for p in raw.iterdir() if p.suffix.lower() == ".wav") if raw.is_dir() else [raw]
    results = parallel_map(lambda p: _detect_one(p, model, cfg, out), files, cfg.jobs)
    rows, failed = [], 0
    for p, res in zip(files, results):
        if isinstance(res, Exception):
            logger.error("%s: %s", p, res)
            failed += 1
        else:
            rows.extend(res)
    write_manifest(out / "manifest.csv", rows)
    logger.info("%d recordings, %d snippets, %d failures", len(files), len(rows), failed)
    if failed:
        raise CommandFailed(f"{failed} of {len(files)} recordings failed")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    rows = read_manifest(args.manifest)
    ds, errors = load_dataset(rows, cfg.band, cfg.jobs)
    for e in errors:
        logger.error(e)
    model = train_model(ds, cfg)
    model.save(args.out)
    logger.info("trained on %d exemplars of %d classes, k=%d", len(ds), len(ds.classes), model.knn.k)
    if errors:
        raise CommandFailed(f"{len(errors)} snippets could not be read")
    return 0


def _classify_one(row: ManifestRow, model: TrainedModel, classifier: BayesClassifier):
    clip = read_wav(row.path)
    spec = band_spectrum(clip, band=model.band)
    model.knn.check_query(spec)
    obs = Observation(spec, row.minutes, row.sensor)
    return classifier.classify(obs)


def cmd_classify(args, cfg: RunConfig) -> int:
    model = TrainedModel.load(args.model)
    classifier = model.classifier()
    rows = read_manifest(args.manifest)
    results = parallel_map(lambda r: _classify_one(r, model, classifier), rows, cfg.jobs)
    classes = model.priors.classes
    base = Path(args.out).resolve().parent
    failed = 0
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "predicted", *(f"posterior:{c}" for c in classes), "features_used"])
        for row, res in zip(rows, results):
            rel = Path(os.path.relpath(row.path.resolve(), base)).as_posix()
            if isinstance(res, Exception):
                logger.error("%s: %s", row.path, res)
                failed += 1
                continue
            w.writerow([rel, res.label, *(repr(float(v)) for v in res.posterior.values), "+".join(res.features_used)])
    if failed:
        raise CommandFailed(f"{failed} of {len(rows)} snippets failed")
    return 0


# --- eval ------------------------------------------------------------------


def _spec_from_config(cfg: RunConfig, ds: Dataset, features=None) -> ev.ClassifierSpec:
    features = tuple(features if features is not None else cfg.features)
    if "time" in features and not np.any(np.isfinite(ds.minutes)):
        features = tuple(f for f in features if f != "time")
    geo = build_geo(cfg, ds.classes) if "location" in features else None
    if "location" in features and not geo:
        features = tuple(f for f in features if f != "location")
        geo = None
    priors = cfg.priors if isinstance(cfg.priors, str) else build_priors(cfg, ds.labels)
    return ev.ClassifierSpec(
        k=cfg.k or DEFAULT_EVAL_K,
        features=features,
        priors=priors,
        rhythms=build_rhythms(ds, cfg) if "time" in features else None,
        geo=geo,
        policy=cfg.decision_policy(KnnSpectrumModel(ds.features, ds.labels, 1, ds.geometry)
                                   if cfg.policy.get("d_max") == AUTO_D_MAX else None),
    )


def _eval_loo(ds, cfg, out: Path) -> bool:
    report, cm = ev.leave_one_out(ds, _spec_from_config(cfg, ds), seed=cfg.seed)
    ev.write_text(out / "report.csv", report.to_csv())
    ev.write_text(out / "confusion.csv", cm.to_csv())
    ev.write_text(out / "summary.txt", report.summary())
    return True


def _eval_bayes_error(ds, cfg, out: Path) -> bool:
    priors = PriorVector.from_counts(ds.labels)
    gaussian = fit_gaussian_model(ds.wingbeat_hz, ds.labels)
    g_err = ev.gaussian_bayes_error(gaussian, priors)
    edges = np.arange(np.floor(ds.wingbeat_hz.min()) - 0.5, np.ceil(ds.wingbeat_hz.max()) + 1.5, 1.0)
    labels = ds.label_array
    hist = [ev.DiscreteDensity.from_samples(ds.wingbeat_hz[labels == c], edges) for c in ds.classes]
    h_err = ev.bayes_error(hist, priors)
    report, _ = ev.leave_one_out(ds, _spec_from_config(cfg, ds, ("spectrum",)), seed=cfg.seed)
    rows = [
        ("wingbeat_gaussian_bayes_error", g_err),
        ("wingbeat_histogram_bayes_error", h_err),
        ("spectrum_knn_loo_error", report.error),
    ]
    ev.write_text(out / "bayes_error.csv", ev.rows_to_csv(["quantity", "value"], rows))
    ev.write_text(out / "summary.txt", "".join(f"{name}: {value:.4f}\n" for name, value in rows))
    return True


def _eval_sweep(ds, cfg, out: Path) -> bool:
    if cfg.target is None:
        raise InvalidInput("sweep needs --target")
    target = resolve_class(cfg.target, ds.classes)
    spec = _spec_from_config(cfg, ds)
    thresholds = sorted(cfg.thresholds, reverse=True)
    rows = ev.threshold_sweep(ds, target, thresholds, spec)
    table = [(r.threshold, r.target_missed_rate, r.other_missed_rate, r.target_missed, r.other_missed) for r in rows]
    ev.write_text(out / "sweep.csv", ev.rows_to_csv(
        ["threshold", "target_missed_rate", "other_missed_rate", "target_missed", "other_missed"], table))
    monotone = all(a.target_missed >= b.target_missed and a.other_missed <= b.other_missed for a, b in zip(rows, rows[1:]))
    lines = [f"target {target}; threshold -> target missed / other missed"]
    lines += [f"  {r.threshold:.3f}: {r.target_missed}/{r.n_target}  {r.other_missed}/{r.n_other}" for r in rows]
    lines.append(f"monotone: {monotone}")
    ev.write_text(out / "summary.txt", "\n".join(lines) + "\n")
    return monotone


def _eval_scaling(ds, cfg, out: Path) -> bool:
    order = list(cfg.order) if cfg.order else list(ds.classes)
    spec = _spec_from_config(cfg, ds, [f for f in cfg.features if f in ("spectrum", "time")])
    steps = ev.class_scaling_experiment(order, ds, spec)
    ev.write_text(out / "scaling.csv", ev.rows_to_csv(["n_classes", "accuracy", "added_class"],
                                                      [(n, acc, order[n - 1]) for n, acc in steps]))
    ok = all(acc > 1.0 / n for n, acc in steps)
    ev.write_text(out / "summary.txt", "".join(f"{n} classes: {acc:.4f}\n" for n, acc in steps) + f"above default rate: {ok}\n")
    return ok


def _eval_ablation(ds, cfg, out: Path) -> bool:
    settings = dict(cfg.ablation)
    target = resolve_class(settings.get("target") or cfg.target or ds.classes[0], ds.classes)
    learned = learn_class_rhythms(ds, cfg.rhythm_bin_minutes)
    missing = [c for c in ds.classes if c not in learned]
    if missing:
        raise NotEnoughData(f"ablation needs timestamps for every class; none for {missing}")
    proxy = resolve_class(settings["proxy"], ds.classes) if "proxy" in settings else None
    template = settings.get("template", "crepuscular")

    def with_target(r):
        d = dict(learned)
        d[target] = r
        return d

    variants = {
        "none": None,
        "uniform": with_target(uniform_rhythm(cfg.rhythm_bin_minutes)),
        "template": with_target(template_rhythm(TEMPLATES[template](), cfg.rhythm_bin_minutes)),
    }
    if proxy is not None:
        variants["proxy"] = with_target(learned[proxy].as_proxy())
    variants["learned"] = learned
    spec = _spec_from_config(cfg, ds, ("spectrum",))
    table = ev.ablation_rhythms(ds, variants, spec)
    ev.write_text(out / "ablation.csv", ev.rows_to_csv(["variant", "accuracy"], table))
    ev.write_text(out / "summary.txt", f"rhythm of {target} varied\n" + "".join(f"{n}: {a:.4f}\n" for n, a in table))
    return True


def _eval_independence(ds, cfg, out: Path) -> bool:
    if len(ds.classes) > 1:
        if cfg.target is None:
            raise InvalidInput("independence check on a multi-class manifest needs --target")
        ds = ds.of_classes([resolve_class(cfg.target, ds.classes)])
    res = ev.independence_check(ds, tuple(cfg.window_a), tuple(cfg.window_b), cfg.n_resamples, k=cfg.k or DEFAULT_EVAL_K, seed=cfg.seed)
    ev.write_text(out / "independence.csv", ev.rows_to_csv(["resample", "error"], list(enumerate(res.errors))))
    ev.write_text(out / "summary.txt", f"mean error {res.error:.4f} over {len(res.errors)} resamplings "
                                      f"of {res.n_per_window} per window (pool sizes {res.window_counts})\n")
    return True


def _eval_geo_sim(ds, cfg, out: Path) -> bool:
    scenario = synth.GeoScenario.from_dict(cfg.geo_scenario) if cfg.geo_scenario else synth.two_bump_scenario()
    labels = [b.label for b in scenario.bumps]
    missing = [c for c in labels if c not in ds.classes]
    if missing:
        raise NotEnoughData(f"manifest has no exemplars of scenario classes {missing}")
    ds = ds.of_classes(labels)
    captured = synth.gen_geo_samples(scenario, cfg.n_per_species, [cfg.seed, 0])
    traps = synth.capture_counts(synth.gen_geo_samples(scenario, cfg.n_per_species, [cfg.seed, 1]), ds.classes)
    geo = {s: GeoModel.from_counts(c) for s, c in traps.items()}
    spec = _spec_from_config(cfg, ds, ("spectrum",))
    res = ev.geo_simulation(ds, {s: [lab for lab, _ in v] for s, v in captured.items()}, geo, spec, seed=cfg.seed)
    rows = [(s, n, a, b) for s, (n, a, b) in res.per_sensor.items()] + [("all", res.n, res.error_without, res.error_with)]
    ev.write_text(out / "geo_sim.csv", ev.rows_to_csv(["sensor", "captures", "error_without_location", "error_with_location"], rows))
    ok = res.error_with <= res.error_without
    ev.write_text(out / "summary.txt", f"error without location {res.error_without:.4f}, with location {res.error_with:.4f}; "
                                      f"not worse: {ok}\n")
    return ok


EVAL_DRIVERS = {
    "loo": _eval_loo,
    "bayes-error": _eval_bayes_error,
    "sweep": _eval_sweep,
    "scaling": _eval_scaling,
    "ablation": _eval_ablation,
    "independence": _eval_independence,
    "geo-sim": _eval_geo_sim,
}


def cmd_eval(args, cfg: RunConfig) -> int:
    if cfg.experiment is None or cfg.manifest is None:
        raise InvalidInput("eval needs an experiment and a manifest")
    if cfg.k is None:
        cfg.k = DEFAULT_EVAL_K
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    rows = read_manifest(cfg.manifest)
    ds, errors = load_dataset(rows, cfg.band, cfg.jobs)
    for e in errors:
        logger.error(e)
    ok = EVAL_DRIVERS[cfg.experiment](ds, cfg, out)
    if errors:
        raise CommandFailed(f"{len(errors)} snippets could not be read")
    if not ok:
        raise CommandFailed(f"experiment {cfg.experiment} failed its checks; see {out / 'summary.txt'}")
    return 0


# --- synth -----------------------------------------------------------------


def _species_from_dict(d: Mapping) -> synth.SpeciesSpec:
    rhythm = None
    if d.get("rhythm") is not None:
        r = d["rhythm"]
        if isinstance(r, Mapping) and "peaks" in r:
            rhythm = synth.bump_rhythm(r.get("peaks", ()), r.get("baseline", 0.1), r.get("plateaus", ()))
        else:
            rhythm = _rhythm_from_entry(r, d["label"], {}, 1)
    return synth.SpeciesSpec(
        d["label"],
        float(d["mean_hz"]),
        float(d["std_hz"]),
        tuple(d.get("harmonics", synth.DEFAULT_HARMONICS)),
        rhythm,
        tuple(d.get("duration_ms", (100.0, 20.0))),
        float(d.get("amplitude_jitter", 0.0)),
    )


PRESETS = {"three-species": synth.three_species_replica, "sexing": synth.sexing_replica}


def _scenario_species(scenario: Mapping) -> list[synth.SpeciesSpec]:
    if "preset" in scenario:
        if scenario["preset"] not in PRESETS:
            raise InvalidInput(f"unknown preset {scenario['preset']!r}; choose from {sorted(PRESETS)}")
        specs = PRESETS[scenario["preset"]]()
        keep = scenario.get("classes")
        return [s for s in specs if keep is None or s.label in keep]
    return [_species_from_dict(d) for d in scenario["species"]]


def _minutes_to_iso(date: datetime, minutes: float) -> str:
    return _isoformat(date + timedelta(minutes=float(minutes)))


def cmd_synth(args, cfg: RunConfig) -> int:
    if args.scenario is None:
        raise InvalidInput("synth needs --scenario FILE (JSON)")
    scenario = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    specs = _scenario_species(scenario)
    rate = int(scenario.get("sample_rate", 8000))
    date = datetime.fromisoformat(scenario.get("date", "2020-06-01"))
    kind = scenario.get("kind", "snippets")
    if kind == "snippets":
        rows = []
        sensor = scenario.get("sensor")
        for ex in synth.iter_exemplars(specs, int(scenario.get("n_per_class", 100)), cfg.seed, rate, scenario.get("snr_db", 20.0)):
            name = f"{ex.index:06d}.wav"
            write_wav(out / name, ex.clip)
            rows.append(ManifestRow(out / name, ex.label, _minutes_to_iso(date, ex.minutes), sensor))
        write_manifest(out / "manifest.csv", rows)
    elif kind == "recordings":
        noise = synth.NoiseSpec(**scenario.get("noise", {}))
        snr = float(scenario.get("snr_db", 15.0))
        sensor = scenario.get("sensor", "S1")
        duration = float(scenario.get("duration_s", 60.0))
        truth = []
        for i in range(int(scenario.get("n_recordings", 1))):
            start = date + timedelta(minutes=float(scenario.get("start_minutes", 0.0)) + i * duration / 60.0)
            clip, events = synth.gen_recording(
                specs, duration, [cfg.seed, i],
                n_events=scenario.get("n_events"), events_per_day=scenario.get("events_per_day"),
                start_minutes=start.hour * 60 + start.minute + start.second / 60, noise=noise, snr_db=snr, sample_rate=rate,
            )
            name = recording_name(sensor, start)
            write_wav(out / name, clip)
            truth.extend((name, e.offset_s, e.label, e.f0_hz) for e in events)
        ev.write_text(out / "events.csv", ev.rows_to_csv(["recording", "offset_s", "label", "f0_hz"], truth))
        detector = synth.synth_detector(specs, [cfg.seed, DETECTOR_STREAM], noise=noise, snr_db=snr, sample_rate=rate)
        (out / "detector.json").write_text(json.dumps(detector.to_dict()) + "\n", encoding="utf-8")
    else:
        raise InvalidInput(f"unknown scenario kind {kind!r}; use 'snippets' or 'recordings'")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON)")
    common.add_argument("--seed", type=int, help="random seed (default: from config, else 0)")
    common.add_argument("--jobs", type=int, help="parallel file workers")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")

    parser = argparse.ArgumentParser(prog="wingbeat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic snippets or recordings")
    p.add_argument("--scenario", help="scenario file (JSON)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("detect", parents=[common], help="cut 1-s event snippets out of recordings")
    p.add_argument("recordings", help="directory of <sensor>_<ISO start>.wav files, or one file")
    p.add_argument("--detector", help="detector model (JSON)")
    p.add_argument("--out", required=True, help="snippet directory; manifest.csv is written there")

    p = sub.add_parser("train", parents=[common], help="build a classifier from a labelled manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="model file (JSON; spectra go to a sibling .npz)")

    p = sub.add_parser("classify", parents=[common], help="classify the snippets of a manifest")
    p.add_argument("manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="predictions CSV")

    p = sub.add_parser("eval", parents=[common], help="run an evaluation experiment")
    p.add_argument("experiment", nargs="?", choices=EXPERIMENTS)
    p.add_argument("manifest", nargs="?")
    p.add_argument("--target", help="target class for sweep/ablation/independence")
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True, help="run directory")
    return parser


def _config_for(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.command == "eval":
        if args.experiment is not None:
            cfg.experiment = args.experiment
        if args.manifest is not None:
            cfg.manifest = str(Path(args.manifest).resolve())
        if args.target is not None:
            cfg.target = args.target
        if args.k is not None:
            cfg.k = args.k
    cfg.validate()
    return cfg


COMMANDS = {"synth": cmd_synth, "detect": cmd_detect, "train": cmd_train, "classify": cmd_classify, "eval": cmd_eval}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logger.setLevel(level)
    try:
        cfg = _config_for(args)
        return COMMANDS[args.command](args, cfg)
    except CommandFailed as exc:
        logger.error("%s", exc)
        return 1
    except (WingbeatError, OSError, json.JSONDecodeError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
