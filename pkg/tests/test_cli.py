import csv
import json
import logging
from datetime import datetime
from pathlib import Path

import numpy as np
import pytest

from wingbeat.cli import (
    ManifestRow,
    RunConfig,
    TrainedModel,
    load_dataset,
    main,
    parse_recording_name,
    read_manifest,
    resolve_class,
    train_model,
    write_manifest,
)
from wingbeat.bayes import Observation
from wingbeat.errors import InvalidInput, UnknownClass
from wingbeat.signal import AudioClip, write_wav

CLASSES = ("Ae. aegypti/female", "Ae. aegypti/male", "Cx. tarsalis/male")


def write_json(path, data):
    Path(path).write_text(json.dumps(data), encoding="utf-8")
    return str(path)


@pytest.fixture(scope="module")
def snippets(tmp_path_factory):
    """Synthesised three-class snippet directory with a manifest."""
    root = tmp_path_factory.mktemp("snips")
    scenario = write_json(root / "scenario.json", {"preset": "three-species", "kind": "snippets", "n_per_class": 25, "sensor": "S1"})
    assert main(["synth", "--scenario", scenario, "--out", str(root / "data"), "--seed", "4"]) == 0
    return root / "data" / "manifest.csv"


@pytest.mark.parametrize(
    "name, sensor, start",
    [
        ("S1_2020-06-01T05:30:00.wav", "S1", datetime(2020, 6, 1, 5, 30)),
        ("trap_north_20200601T053000.wav", "trap_north", datetime(2020, 6, 1, 5, 30)),
        ("recording.wav", None, None),
        ("S1_yesterday.wav", None, None),
    ],
)
def test_recording_names(name, sensor, start):
    assert parse_recording_name(name) == (sensor, start)


def test_manifest_round_trip_keeps_unknowns(tmp_path):
    rows = [ManifestRow(tmp_path / "a.wav", "x/female", "2020-06-01T05:00:00", None), ManifestRow(tmp_path / "sub" / "b.wav")]
    write_manifest(tmp_path / "m.csv", rows)
    text = (tmp_path / "m.csv").read_text()
    assert text.splitlines()[2] == "sub/b.wav,?,?,?"
    back = read_manifest(tmp_path / "m.csv")
    assert [r.label for r in back] == ["x/female", None]
    assert back[0].minutes == 300.0 and back[1].minutes is None
    assert back[1].path == tmp_path / "sub" / "b.wav"


def test_manifest_requires_columns(tmp_path):
    (tmp_path / "m.csv").write_text("path,label\na.wav,x\n")
    with pytest.raises(InvalidInput):
        read_manifest(tmp_path / "m.csv")


def test_class_resolution():
    assert resolve_class("female", CLASSES) == "Ae. aegypti/female"
    assert resolve_class("aegypti/male", CLASSES) == "Ae. aegypti/male"
    assert resolve_class("Cx. tarsalis/male", CLASSES) == "Cx. tarsalis/male"
    with pytest.raises(UnknownClass):
        resolve_class("male", CLASSES)
    with pytest.raises(UnknownClass):
        resolve_class("emale", CLASSES)


def test_config_rejects_unknown_keys():
    with pytest.raises(InvalidInput):
        RunConfig.from_dict({"kk": 3})
    with pytest.raises(InvalidInput):
        RunConfig.from_dict({"features": ["colour"]})


def test_train_and_classify_is_independent_of_parallelism(snippets, tmp_path):
    model = tmp_path / "model.json"
    assert main(["train", str(snippets), "--out", str(model)]) == 0
    assert model.with_suffix(".npz").exists()
    outputs = []
    for jobs in ("1", "8"):
        out = tmp_path / f"pred{jobs}.csv"
        assert main(["classify", str(snippets), "--model", str(model), "--out", str(out), "--jobs", jobs]) == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]
    rows = list(csv.DictReader(outputs[0].decode().splitlines()))
    assert len(rows) == 75
    assert set(rows[0]) >= {"path", "predicted", "features_used"}
    post = np.array([[float(r[k]) for k in r if k.startswith("posterior:")] for r in rows])
    np.testing.assert_allclose(post.sum(axis=1), 1.0)
    truth = {r.path.name: r.label for r in read_manifest(snippets)}
    acc = np.mean([truth[Path(r["path"]).name] == r["predicted"] for r in rows])
    assert acc > 0.8
    assert rows[0]["features_used"] == "spectrum+time"


def test_trained_model_round_trip(snippets, tmp_path):
    cfg = tmp_path / "cfg.json"
    write_json(cfg, {"k": 3, "geo": {"S1": {"counts": {"Cx. stigmatosoma/female": 9}}}, "rhythm_bin_minutes": 60})
    assert main(["train", str(snippets), "--out", str(tmp_path / "m.json"), "--config", str(cfg)]) == 0
    model = TrainedModel.load(tmp_path / "m.json")
    assert model.knn.k == 3 and model.knn.features.shape == (75, 1901)
    assert model.geo["S1"].weights["Cx. stigmatosoma/female"] == 10.0
    assert all(r.bin_minutes == 60 for r in model.rhythms.values())


def test_saved_model_makes_the_same_decisions(snippets, tmp_path):
    cfg = tmp_path / "cfg.json"
    write_json(cfg, {"k": 5, "features": ["spectrum", "time", "location"],
                     "geo": {"S1": {"Ae. aegypti/female": 1.0, "Cx. stigmatosoma/female": 1.0,
                                     "Cx. tarsalis/male": 2.0}}})
    assert main(["train", str(snippets), "--out", str(tmp_path / "m.json"), "--config", str(cfg)]) == 0
    scenario = write_json(tmp_path / "probe.json", {"preset": "three-species", "kind": "snippets", "n_per_class": 34, "sensor": "S1"})
    assert main(["synth", "--scenario", scenario, "--out", str(tmp_path / "probes"), "--seed", "11"]) == 0
    probes, errors = load_dataset(read_manifest(tmp_path / "probes" / "manifest.csv")[:100], (100.0, 2000.0), 1, True)
    assert not errors and len(probes) == 100
    trained, _ = load_dataset(read_manifest(snippets), (100.0, 2000.0), 1, True)
    in_memory = train_model(trained, RunConfig.load(cfg)).classifier()
    loaded = TrainedModel.load(tmp_path / "m.json").classifier()
    for i in range(len(probes)):
        obs = Observation(probes.spectrum(i), float(probes.minutes[i]), "S1")
        a, b = in_memory.classify(obs), loaded.classify(obs)
        assert a.label == b.label and a.features_used == b.features_used
        np.testing.assert_allclose(a.posterior.values, b.posterior.values, rtol=1e-12)


def test_auto_distance_cutoff_is_the_training_quantile(snippets, tmp_path):
    cfg = write_json(tmp_path / "cfg.json", {"k": 3, "policy": {"d_max": "auto"}})
    assert main(["train", str(snippets), "--out", str(tmp_path / "m.json"), "--config", cfg]) == 0
    model = TrainedModel.load(tmp_path / "m.json")
    assert model.policy.d_max == pytest.approx(model.knn.nn_distance_quantile(0.99))
    assert main(["eval", "loo", str(snippets), "--config", cfg, "--out", str(tmp_path / "e")]) == 0
    report = dict(csv.reader((tmp_path / "e" / "report.csv").read_text().splitlines()))
    assert 0.0 < float(report["unknown_rate"]) < 0.1


def test_train_needs_two_exemplars_per_class(snippets, tmp_path, caplog):
    rows = read_manifest(snippets)
    thin = [r for r in rows if r.label != "Cx. tarsalis/male"] + [next(r for r in rows if r.label == "Cx. tarsalis/male")]
    write_manifest(tmp_path / "thin.csv", thin)
    with caplog.at_level(logging.ERROR):
        assert main(["train", str(tmp_path / "thin.csv"), "--out", str(tmp_path / "m.json")]) == 1
    assert "Cx. tarsalis/male" in caplog.text


def test_train_without_timestamps_warns(snippets, tmp_path, caplog):
    rows = [ManifestRow(r.path, r.label, None, r.sensor) for r in read_manifest(snippets)]
    write_manifest(tmp_path / "untimed.csv", rows)
    with caplog.at_level(logging.WARNING):
        assert main(["train", str(tmp_path / "untimed.csv"), "--out", str(tmp_path / "m.json")]) == 0
    assert "uniform" in caplog.text
    model = TrainedModel.load(tmp_path / "m.json")
    assert {r.provenance for r in model.rhythms.values()} == {"uniform"}


def test_classify_reports_bin_mismatch_per_file(snippets, tmp_path):
    model = tmp_path / "model.json"
    assert main(["train", str(snippets), "--out", str(model), "--config", write_json(tmp_path / "c.json", {"k": 3})]) == 0
    rows = read_manifest(snippets)[:3]
    write_wav(tmp_path / "short.wav", AudioClip(np.zeros(4000), 8000))  # 2 Hz bins
    write_manifest(tmp_path / "q.csv", rows + [ManifestRow(tmp_path / "short.wav")])
    out = tmp_path / "pred.csv"
    assert main(["classify", str(tmp_path / "q.csv"), "--model", str(model), "--out", str(out)]) == 1
    assert len(out.read_text().splitlines()) == 4


def test_eval_reruns_are_byte_identical(snippets, tmp_path):
    runs = []
    for name, jobs in (("a", "1"), ("b", "4")):
        out = tmp_path / name
        assert main(["eval", "loo", str(snippets), "--out", str(out), "--seed", "3", "--jobs", jobs]) == 0
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "config.json"})
    assert runs[0] == runs[1]
    cfg = json.loads((tmp_path / "a" / "config.json").read_text())
    assert cfg["seed"] == 3 and cfg["experiment"] == "loo" and cfg["k"] == 8
    assert set(runs[0]) == {"confusion.csv", "report.csv", "summary.txt"}
    again = tmp_path / "c"
    assert main(["eval", "loo", str(snippets), "--out", str(again), "--seed", "3", "--jobs", "1"]) == 0
    assert (again / "config.json").read_bytes() == (tmp_path / "a" / "config.json").read_bytes()


def test_eval_sweep_on_a_non_binary_task_fails(snippets, tmp_path):
    assert main(["eval", "sweep", str(snippets), "--target", "female", "--out", str(tmp_path / "s")]) == 1


def test_eval_geo_simulation(snippets, tmp_path):
    cfg = write_json(tmp_path / "g.json", {"n_per_species": 2000})
    assert main(["eval", "geo-sim", str(snippets), "--config", cfg, "--out", str(tmp_path / "g")]) == 0
    text = (tmp_path / "g" / "geo_sim.csv").read_text().splitlines()
    assert text[0] == "sensor,captures,error_without_location,error_with_location"
    assert text[-1].startswith("all,")


def test_detect_on_recordings(tmp_path):
    scenario = write_json(tmp_path / "rec.json", {"preset": "three-species", "kind": "recordings", "n_recordings": 2,
                                                  "duration_s": 20, "n_events": 6, "start_minutes": 330})
    assert main(["synth", "--scenario", scenario, "--out", str(tmp_path / "recs"), "--seed", "2"]) == 0
    names = sorted(p.name for p in (tmp_path / "recs").glob("*.wav"))
    assert names == ["S1_20200601T053000.wav", "S1_20200601T053020.wav"]
    truth = list(csv.DictReader((tmp_path / "recs" / "events.csv").read_text().splitlines()))
    args = ["detect", str(tmp_path / "recs"), "--detector", str(tmp_path / "recs" / "detector.json")]
    assert main(args + ["--out", str(tmp_path / "d1")]) == 0
    assert main(args + ["--out", str(tmp_path / "d2"), "--jobs", "4"]) == 0
    m1 = (tmp_path / "d1" / "manifest.csv").read_text()
    assert m1 == (tmp_path / "d2" / "manifest.csv").read_text()
    rows = read_manifest(tmp_path / "d1" / "manifest.csv")
    assert abs(len(rows) - len(truth)) <= 1
    assert all(r.sensor == "S1" and r.label is None and r.timestamp.startswith("2020-06-01T05:3") for r in rows)


def test_detect_on_empty_directory(tmp_path):
    (tmp_path / "empty").mkdir()
    det = tmp_path / "det.json"
    from wingbeat.synth import three_species_replica, synth_detector

    write_json(det, synth_detector(three_species_replica(), 0).to_dict())
    assert main(["detect", str(tmp_path / "empty"), "--detector", str(det), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "manifest.csv").read_text() == "path,label,timestamp,sensor\n"


def test_detect_continues_past_a_bad_file(tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    (raw / "S1_20200601T000000.wav").write_bytes(b"not audio")
    write_wav(raw / "S2_20200601T000000.wav", AudioClip(np.zeros(16000), 8000))
    from wingbeat.synth import three_species_replica, synth_detector

    det = write_json(tmp_path / "det.json", synth_detector(three_species_replica(), 0).to_dict())
    assert main(["detect", str(raw), "--detector", det, "--out", str(tmp_path / "o")]) == 1
    assert (tmp_path / "o" / "manifest.csv").exists()


def test_missing_detector_is_an_error(tmp_path):
    assert main(["detect", str(tmp_path), "--out", str(tmp_path / "o")]) == 1


def test_detect_recovers_five_known_events(tmp_path):
    scenario = write_json(tmp_path / "rec.json", {"preset": "three-species", "kind": "recordings", "n_recordings": 1,
                                                  "duration_s": 30, "n_events": 5, "start_minutes": 360})
    assert main(["synth", "--scenario", scenario, "--out", str(tmp_path / "recs"), "--seed", "5"]) == 0
    truth = sorted(float(r["offset_s"]) for r in csv.DictReader((tmp_path / "recs" / "events.csv").read_text().splitlines()))
    assert len(truth) == 5
    det = str(tmp_path / "recs" / "detector.json")
    assert main(["detect", str(tmp_path / "recs"), "--detector", det, "--out", str(tmp_path / "d")]) == 0
    rows = read_manifest(tmp_path / "d" / "manifest.csv")
    start = datetime(2020, 6, 1, 6, 0)
    found = sorted((datetime.fromisoformat(r.timestamp) - start).total_seconds() for r in rows)
    assert len(found) == 5
    np.testing.assert_allclose(found, truth, atol=0.05)


def test_eval_loo_on_separable_species(tmp_path):
    species = [{"label": "low/female", "mean_hz": 300, "std_hz": 20}, {"label": "high/female", "mean_hz": 700, "std_hz": 20}]
    scenario = write_json(tmp_path / "s.json", {"species": species, "kind": "snippets", "n_per_class": 60})
    assert main(["synth", "--scenario", scenario, "--out", str(tmp_path / "data"), "--seed", "1"]) == 0
    assert main(["eval", "loo", str(tmp_path / "data" / "manifest.csv"), "--out", str(tmp_path / "e")]) == 0
    report = dict(csv.reader((tmp_path / "e" / "report.csv").read_text().splitlines()))
    assert float(report["accuracy"]) >= 0.99


def test_eval_sweep_on_the_sexing_task_is_monotone(tmp_path):
    scenario = write_json(tmp_path / "s.json", {"preset": "sexing", "kind": "snippets", "n_per_class": 40})
    assert main(["synth", "--scenario", scenario, "--out", str(tmp_path / "data"), "--seed", "2"]) == 0
    assert main(["eval", "sweep", str(tmp_path / "data" / "manifest.csv"), "--target", "female", "--out", str(tmp_path / "e")]) == 0
    rows = list(csv.DictReader((tmp_path / "e" / "sweep.csv").read_text().splitlines()))
    assert len(rows) >= 2
    target = [int(r["target_missed"]) for r in rows]
    other = [int(r["other_missed"]) for r in rows]
    assert target == sorted(target, reverse=True) and other == sorted(other)
    assert (tmp_path / "e" / "summary.txt").read_text().endswith("monotone: True\n")
