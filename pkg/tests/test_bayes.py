import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wingbeat.bayes import (
    UNKNOWN,
    BayesClassifier,
    DecisionPolicy,
    GaussianWingbeatModel,
    GeoFeature,
    KnnSpectrumModel,
    LikelihoodVector,
    Observation,
    PosteriorVector,
    PriorVector,
    RhythmFeature,
    SpectrumKnnFeature,
    WingbeatGaussianFeature,
    class_label,
    combine_posterior,
    decide,
    fit_gaussian_model,
    gaussian_likelihood,
    knn_likelihood,
    nearest_neighbors,
    select_k,
    spectrum_distance,
    update_posterior,
)
from wingbeat.errors import DegeneratePosterior, InvalidInput, NotEnoughData, UnknownClass
from wingbeat.features import GeoModel, learn_rhythm, uniform_rhythm
from wingbeat.signal import Spectrum

ABC = ("a", "b", "c")


def vec(cls, values, classes=ABC):
    return cls(classes, np.asarray(values, dtype=float))


def test_class_label_format():
    assert class_label("Ae. aegypti", "female") == "Ae. aegypti/female"
    assert class_label("Cx. tarsalis") == "Cx. tarsalis"


def test_vectors_sort_their_classes():
    v = LikelihoodVector(("c", "a", "b"), np.array([3.0, 1.0, 2.0]))
    assert v.classes == ABC
    np.testing.assert_array_equal(v.values, [1.0, 2.0, 3.0])


def test_prior_must_be_normalised():
    with pytest.raises(InvalidInput):
        vec(PriorVector, [0.5, 0.5, 0.5])


def test_empirical_prior():
    p = PriorVector.from_counts(["a", "a", "b", "c"])
    assert p.as_dict() == {"a": 0.5, "b": 0.25, "c": 0.25}


def test_gaussian_likelihood_value():
    model = GaussianWingbeatModel({"stig": (365.0, 41.0)})
    assert gaussian_likelihood(354.0, model)["stig"] == pytest.approx(0.0093864, abs=1e-6)


def test_gaussian_fit_uses_unbiased_std():
    model = fit_gaussian_model([1.0, 3.0, 10.0, 14.0], ["a", "a", "b", "b"])
    assert model.params["a"] == pytest.approx((2.0, np.sqrt(2.0)))
    with pytest.raises(NotEnoughData):
        fit_gaussian_model([1.0, 3.0, 5.0], ["a", "a", "b"])


def test_knn_likelihood_counts_fractions():
    # one query at the origin; 8 nearest rows labelled 3 a, 1 b, 4 c; farther rows all b
    near = np.arange(1, 9, dtype=float)
    labels = ("a", "a", "a", "b", "c", "c", "c", "c") + ("b",) * 5
    X = np.zeros((13, 2))
    X[:8, 0] = near
    X[8:, 0] = 100.0
    model = KnnSpectrumModel(X, labels, 8, (2, 1.0, 100.0))
    lik = knn_likelihood(Spectrum(np.zeros(2), 1.0, 100.0), model)
    assert lik.as_dict() == {"a": 0.375, "b": 0.125, "c": 0.5}


@settings(max_examples=30, deadline=None)
@given(n=st.integers(5, 60), m=st.integers(1, 10), k=st.integers(1, 5), dim=st.integers(1, 6), seed=st.integers(0, 10**6))
def test_neighbours_match_brute_force(n, m, k, dim, seed):
    rng = np.random.default_rng(seed)
    # integer grid so exact ties are common
    X = rng.integers(0, 3, (n, dim)).astype(float)
    Q = rng.integers(0, 3, (m, dim)).astype(float)
    idx, dist = nearest_neighbors(X, Q, k)
    for r in range(m):
        d = np.sqrt(((X - Q[r]) ** 2).sum(axis=1))
        order = np.lexsort((np.arange(n), d))[:k]
        np.testing.assert_array_equal(idx[r], order)
        np.testing.assert_allclose(dist[r], d[order])


def test_neighbours_skip_own_group():
    X = np.array([[0.0], [0.1], [5.0], [6.0]])
    idx, _ = nearest_neighbors(X, X[:1], 2, query_groups=[7], groups=[7, 7, 1, 2])
    assert idx.tolist() == [[2, 3]]
    with pytest.raises(NotEnoughData):
        nearest_neighbors(X, X[:1], 3, query_groups=[7], groups=[7, 7, 1, 2])


def test_incremental_update_worked_example():
    classes = ("Ae. aegypti", "Cx. stigmatosoma")
    current = PosteriorVector(classes, np.array([0.4, 0.6]))
    location = LikelihoodVector(classes, np.array([0.5, 0.25]))
    unnormalised = current.values * location.values
    np.testing.assert_allclose(unnormalised, [0.2, 0.15])
    updated = update_posterior(current, location)
    assert updated.argmax() == "Ae. aegypti"
    np.testing.assert_allclose(updated.values, [0.2 / 0.35, 0.15 / 0.35])


@settings(max_examples=60, deadline=None)
@given(
    prior=st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3),
    liks=st.lists(st.lists(st.floats(1e-6, 10.0), min_size=3, max_size=3), min_size=1, max_size=4),
)
def test_batch_equals_incremental(prior, liks):
    p = vec(PriorVector, np.array(prior) / sum(prior))
    lv = [vec(LikelihoodVector, v) for v in liks]
    batch = combine_posterior(p, lv)
    step = PosteriorVector(p.classes, p.values)
    for v in lv:
        step = update_posterior(step, v)
    np.testing.assert_allclose(step.values, batch.values, atol=1e-12)
    assert batch.values.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    lik=st.lists(st.floats(1e-6, 10.0), min_size=3, max_size=3),
    scale=st.floats(1e-3, 1e3),
)
def test_likelihood_scaling_does_not_change_posterior(lik, scale):
    p = vec(PriorVector, [0.2, 0.3, 0.5])
    a = combine_posterior(p, [vec(LikelihoodVector, lik)])
    b = combine_posterior(p, [vec(LikelihoodVector, np.array(lik) * scale)])
    np.testing.assert_allclose(a.values, b.values, rtol=1e-12)


def test_missing_feature_contributes_nothing():
    p = vec(PriorVector, [0.2, 0.3, 0.5])
    assert np.array_equal(combine_posterior(p, [None]).values, p.values)


def test_all_zero_likelihood_is_degenerate():
    with pytest.raises(DegeneratePosterior):
        combine_posterior(vec(PriorVector, [0.5, 0.5, 0.0]), [vec(LikelihoodVector, [0.0, 0.0, 1.0])])


def test_mismatched_classes_are_rejected():
    with pytest.raises(InvalidInput):
        combine_posterior(vec(PriorVector, [0.5, 0.5], ("a", "b")), [vec(LikelihoodVector, [1, 1, 1])])


def test_argmax_tie_goes_to_first_class():
    assert decide(vec(PosteriorVector, [0.4, 0.4, 0.2])) == "a"


def test_threshold_policy():
    post = vec(PosteriorVector, [0.25, 0.45, 0.30])
    assert decide(post, DecisionPolicy("threshold", "a", 0.2)) == "a"
    assert decide(post, DecisionPolicy("threshold", "a", 0.3)) == "b"
    with pytest.raises(UnknownClass):
        decide(post, DecisionPolicy("threshold", "z", 0.3))
    with pytest.raises(InvalidInput):
        DecisionPolicy("threshold", None, 0.3)


def test_unknown_rules():
    post = vec(PosteriorVector, [0.4, 0.35, 0.25])
    assert decide(post, DecisionPolicy(tau=0.5)) == UNKNOWN
    assert decide(post, DecisionPolicy(d_max=1.0), nn_distance=2.0) == UNKNOWN
    assert decide(post, DecisionPolicy(d_max=1.0), nn_distance=0.5) == "a"


def _toy_classifier(policy=DecisionPolicy()):
    X = np.array([[1.0, 0.0], [1.1, 0.0], [0.0, 1.0], [0.0, 1.1]])
    knn = KnnSpectrumModel(X, ("a", "a", "b", "b"), 2, (2, 1.0, 100.0))
    rhythms = {"a": learn_rhythm([360.0] * 9, 60), "b": uniform_rhythm(60)}
    geo = {"S1": GeoModel({"a": 1.0, "b": 9.0})}
    features = (SpectrumKnnFeature(knn), RhythmFeature(rhythms), GeoFeature(geo))
    return BayesClassifier(PriorVector.uniform(["a", "b"]), features, policy)


def test_classifier_reports_features_used():
    clf = _toy_classifier()
    spec = Spectrum(np.array([1.05, 0.0]), 1.0, 100.0)
    pred = clf.classify(Observation(spec))
    assert pred.label == "a" and pred.features_used == ("spectrum",)
    pred = clf.classify(Observation(spec, minutes=365.0, sensor="S1"))
    assert pred.features_used == ("spectrum", "time", "location")
    # unknown sensors are ignored rather than failing
    assert clf.classify(Observation(spec, sensor="S9")).features_used == ("spectrum",)


def test_floor_keeps_other_features_alive():
    clf = _toy_classifier()
    # spectrum says only "b" (a gets 0), time strongly favours "a"
    spec = Spectrum(np.array([0.0, 1.05]), 1.0, 100.0)
    post, _ = clf.posterior(Observation(spec, minutes=365.0))
    assert 0.0 < post["a"] < 1e-6


def test_classifier_nn_distance_rule():
    clf = _toy_classifier(DecisionPolicy(d_max=0.5))
    assert clf.classify(Observation(Spectrum(np.array([5.0, 5.0]), 1.0, 100.0))).label == UNKNOWN


def test_wingbeat_feature_measures_the_spectrum_peak():
    model = GaussianWingbeatModel({"a": (102.0, 1.0), "b": (105.0, 1.0)})
    spec = Spectrum(np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0]), 1.0, 100.0)
    lik = WingbeatGaussianFeature(model, (100.0, 105.0)).likelihood(Observation(spec))
    assert lik.argmax() == "a"


def test_select_k_prefers_smaller_on_ties():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(0, 0.1, (30, 3)), rng.normal(5, 0.1, (30, 3))])
    labels = ["a"] * 30 + ["b"] * 30
    assert select_k(X, labels, [9, 3, 1, 5]) == 1
    with pytest.raises(NotEnoughData):
        select_k(X[:6], labels[:6], [1, 5])


def test_spectrum_distance_matches_elementwise_sum(rng):
    a, b = rng.uniform(0, 1, 1901), rng.uniform(0, 1, 1901)
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) ** 2
    d = spectrum_distance(Spectrum(a, 1.0, 100.0), Spectrum(b, 1.0, 100.0))
    assert d == pytest.approx(total**0.5, rel=1e-12)
    assert spectrum_distance(Spectrum(np.zeros(3), 1.0, 100.0), Spectrum(np.eye(3)[1], 1.0, 100.0)) == 1.0


def test_gaussian_fit_recovers_sampled_parameters(rng):
    freqs = rng.normal(365.0, 41.0, 1000)
    mean, std = fit_gaussian_model(freqs, ["stig"] * 1000).params["stig"]
    assert abs(mean - 365.0) <= 4.0
    assert abs(std - 41.0) <= 3.0


def test_low_threshold_keeps_an_unlikely_female():
    post = PosteriorVector(("Ae. aegypti/female", "Ae. aegypti/male"), np.array([0.12, 0.88]))
    assert decide(post) == "Ae. aegypti/male"
    assert decide(post, DecisionPolicy("threshold", "Ae. aegypti/female", 0.1)) == "Ae. aegypti/female"
