from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from wingbeat.errors import InvalidInput
from wingbeat.features import crepuscular_template, learn_rhythm, rhythm_density, template_rhythm, uniform_rhythm
from wingbeat.signal import compute_spectrum, fundamental_frequency
from wingbeat.synth import (
    AE_AEGYPTI_F,
    AE_AEGYPTI_M,
    CX_STIGMATOSOMA_F,
    CX_TARSALIS_M,
    GeoScenario,
    SpeciesSpec,
    bump_rhythm,
    capture_counts,
    three_species_replica,
    two_bump_scenario,
    gen_dataset,
    gen_geo_samples,
    gen_recording,
    gen_wingbeat_clip,
    learned_rhythms,
    sexing_replica,
)

STIG = three_species_replica()[0]


def test_clip_is_deterministic_per_seed():
    a, fa = gen_wingbeat_clip(STIG, 7, snr_db=20)
    b, fb = gen_wingbeat_clip(STIG, 7, snr_db=20)
    c, _ = gen_wingbeat_clip(STIG, 8, snr_db=20)
    assert fa == fb
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_clip_is_centred_and_padded_with_zeros():
    clip, _ = gen_wingbeat_clip(STIG, 1, snr_db=10)
    nz = np.flatnonzero(clip.samples)
    assert len(clip) == 8000
    assert abs((nz[0] + nz[-1]) / 2 - 4000) <= 2
    assert nz[-1] - nz[0] < 1300  # burst of at most 120 ms plus rounding


def test_energy_normalisation():
    for seed in range(5):
        clip, _ = gen_wingbeat_clip(STIG, seed)
        assert np.sum(clip.samples**2) == pytest.approx(0.15**2 * 800, rel=1e-9)
    clip, _ = gen_wingbeat_clip(STIG, 0, normalize="peak", level=0.5)
    assert np.max(np.abs(clip.samples)) == pytest.approx(0.5)
    with pytest.raises(InvalidInput):
        gen_wingbeat_clip(STIG, 0, normalize="loud")


def test_spectral_peak_is_the_fundamental():
    for spec in three_species_replica() + sexing_replica():
        for seed in range(20):
            clip, f0 = gen_wingbeat_clip(spec, seed)
            assert abs(fundamental_frequency(compute_spectrum(clip)) - f0) <= 15.0


def test_fundamentals_follow_the_species_gaussian():
    ds = gen_dataset([STIG], 400, seed=2, snr_db=None)
    assert np.mean(ds.wingbeat_hz) == pytest.approx(365.0, abs=6.0)
    assert np.std(ds.wingbeat_hz, ddof=1) == pytest.approx(41.0, rel=0.12)


def test_dataset_times_follow_the_rhythm():
    ds = gen_dataset([STIG], 2000, seed=3)
    learned = learn_rhythm(ds.minutes, 60)
    truth = STIG.activity.rebinned(60)
    assert np.abs(learned.density - truth.density).sum() < 0.12


def test_species_validation():
    with pytest.raises(InvalidInput):
        SpeciesSpec("x", 50.0, 10.0)
    with pytest.raises(InvalidInput):
        SpeciesSpec("x", 400.0, 0.0)
    with pytest.raises(InvalidInput):
        SpeciesSpec("x", 400.0, 10.0, (0.0, 1.0))


def test_presets_carry_their_labels():
    assert [s.label for s in sexing_replica()] == [AE_AEGYPTI_F, AE_AEGYPTI_M]
    assert three_species_replica()[0].label == CX_STIGMATOSOMA_F


def test_bump_rhythm_peaks_where_asked():
    r = bump_rhythm(peaks=[(360, 20, 1.0)], baseline=0.01)
    assert abs(int(np.argmax(r.density)) - 360) <= 1
    assert r.density.sum() == pytest.approx(1.0)


def test_recording_plants_requested_events_with_spacing():
    clip, events = gen_recording(three_species_replica(), 30.0, seed=1, n_events=12)
    assert len(events) == 12
    offsets = np.array([e.offset_s for e in events])
    assert np.all(np.diff(offsets) >= 1.0)
    assert offsets.min() >= 0.6 and offsets.max() <= 29.4
    assert clip.duration_s == pytest.approx(30.0)


def test_event_rate_follows_the_rhythm():
    # crepuscular template: dawn is three times as active as midday
    spec = replace(STIG, rhythm=template_rhythm(crepuscular_template()))
    per_day = 20000.0
    counts = {}
    for name, start in (("dawn", 330.0), ("noon", 720.0)):
        n = 0
        for i in range(10):
            _, events = gen_recording([spec], 60.0, seed=[i, int(start)], events_per_day=per_day, start_minutes=start)
            n += len(events)
        counts[name] = n
    expected_noon = per_day * spec.activity.density[720] * 10 * (58.8 / 60)
    assert counts["noon"] == pytest.approx(expected_noon, rel=0.35)
    assert counts["dawn"] / counts["noon"] == pytest.approx(3.0, rel=0.35)


def test_uniform_species_needs_no_rhythm():
    spec = replace(STIG, rhythm=None)
    np.testing.assert_array_equal(spec.activity.density, uniform_rhythm().density)


def test_geo_samples_fall_inside_sensor_squares():
    scenario = two_bump_scenario()
    samples = gen_geo_samples(scenario, 2000, seed=0)
    for site in scenario.sensors:
        pts = np.array([p for _, p in samples[site.name]])
        assert np.all(np.abs(pts - site.center) <= site.half_width)
    counts = capture_counts(samples, [CX_STIGMATOSOMA_F, AE_AEGYPTI_F])
    assert counts["S1"][CX_STIGMATOSOMA_F] > 10 * max(counts["S1"][AE_AEGYPTI_F], 1) - 1
    assert counts["S3"][AE_AEGYPTI_F] > counts["S3"][CX_STIGMATOSOMA_F]


def test_geo_scenario_dict_round_trip():
    sc = two_bump_scenario()
    assert GeoScenario.from_dict(sc.to_dict()) == sc


def test_learned_rhythms_are_per_species():
    r = learned_rhythms(three_species_replica(), 5000, seed=0, bin_minutes=30)
    assert set(r) == {s.label for s in three_species_replica()}
    assert all(v.bin_minutes == 30 and v.provenance == "learned" for v in r.values())


def test_noiseless_fundamental_is_recovered_to_one_bin():
    for spec in three_species_replica() + sexing_replica():
        for seed in range(10):
            clip, f0 = gen_wingbeat_clip(spec, seed, snr_db=None)
            assert abs(fundamental_frequency(compute_spectrum(clip)) - f0) <= 1.0


def test_sensor_near_one_bump_is_dominated_by_it():
    counts = capture_counts(gen_geo_samples(two_bump_scenario(), 10_000, seed=1), [CX_STIGMATOSOMA_F, AE_AEGYPTI_F])["S1"]
    assert counts[CX_STIGMATOSOMA_F] >= 10 * max(counts[AE_AEGYPTI_F], 1)


def test_between_sensor_captures_follow_the_bump_densities():
    scenario = two_bump_scenario()
    site = scenario.sensors[1]
    n = 100_000
    counts = capture_counts(gen_geo_samples(scenario, n, seed=2), [b.label for b in scenario.bumps])[site.name]
    for bump in scenario.bumps:
        p = 1.0
        for axis in (0, 1):
            sd = np.sqrt(bump.cov[axis][axis])
            lo, hi = site.center[axis] - site.half_width, site.center[axis] + site.half_width
            p *= stats.norm.cdf(hi, bump.center[axis], sd) - stats.norm.cdf(lo, bump.center[axis], sd)
        assert abs(counts[bump.label] - n * p) <= 4 * np.sqrt(n * p * (1 - p))


def test_replica_dawn_activity_ratio():
    # at 06:00 a male Cx. tarsalis is three times as likely to be flying as a female Ae. aegypti
    r = {s.label: s.activity for s in three_species_replica()}
    ratio = rhythm_density(r[CX_TARSALIS_M], 360.0) / rhythm_density(r[AE_AEGYPTI_F], 360.0)
    assert ratio == pytest.approx(3.0, rel=0.01)
