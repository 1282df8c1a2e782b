import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cascadetree.features import FeatureAlphabet, FeatureConfig, build_alphabet
from cascadetree.matrix_tree import EdgeScores, build_scores, enumerate_trees
from cascadetree.model import (
    Arborescence,
    FullConstraints,
    GoldLinks,
    TimeConstraints,
    TreeConstraints,
)
from cascadetree.train import (
    AllCascadesSkipped,
    DivergenceDetected,
    InvalidGoldTree,
    Model,
    TrainConfig,
    compile_dataset,
    contrastive_log_likelihood,
    fit,
    initial_theta,
    supervised_log_likelihood,
    total_objective_and_gradient,
)

from conftest import make_cascade

CFG = FeatureConfig()


def cascade4(offset=0, cid="x"):
    return make_cascade(
        [offset, offset + 40, offset + 700, offset + 5000],
        sites=["a", "b", "c", "b"],
        ids=[f"{cid}{k}" for k in range(4)],
        cascade_id=cid,
        language=["en", "en", "es", "en"],
        content_type=["news", "blog", "blog", "news"],
        text_tokens=[{"p", "q"}, {"p", "q", "r"}, {"s"}, {"p"}],
    )


def random_theta(alphabet, seed=0, scale=0.8):
    return np.random.default_rng(seed).normal(scale=scale, size=len(alphabet))


def brute_log_sum(scores: EdgeScores, mask):
    logs = [scores.tree_score(t) for t in enumerate_trees(mask)]
    return float(np.logaddexp.reduce(logs))


# -- per-cascade objectives ---------------------------------------------------


def test_contrastive_full_mask_is_zero():
    c = cascade4()
    alphabet = build_alphabet([c], CFG)
    theta = random_theta(alphabet)
    assert contrastive_log_likelihood(c, theta, CFG, FullConstraints(), alphabet) == 0.0


def test_contrastive_single_tree_uniform():
    c = make_cascade([0, 10, 20])
    alphabet = build_alphabet([c], CFG)
    only = TreeConstraints(GoldLinks({1: {0}, 2: {1}, 3: {2}}))
    value = contrastive_log_likelihood(c, np.zeros(len(alphabet)), CFG, only, alphabet)
    assert value == pytest.approx(math.log(1 / 16), abs=1e-12)


def test_contrastive_matches_brute_force():
    c = cascade4()
    alphabet = build_alphabet([c], CFG)
    theta = random_theta(alphabet, 4)
    full = build_scores(c, theta, CFG, FullConstraints(), alphabet)
    expected = brute_log_sum(full, TimeConstraints().mask(c)) - brute_log_sum(full, full.mask)
    got = contrastive_log_likelihood(c, theta, CFG, TimeConstraints(), alphabet)
    assert got == pytest.approx(expected, abs=1e-8)


def test_supervised_single_tree_instance_is_zero():
    c = make_cascade([7])
    alphabet = build_alphabet([c], CFG)
    value = supervised_log_likelihood(c, Arborescence({1: 0}), random_theta(alphabet), CFG, alphabet)
    assert value == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("parents", [{1: 0, 2: 0, 3: 0}, {1: 3, 2: 1, 3: 0}, {1: 0, 2: 1, 3: 2}])
def test_supervised_uniform(parents):
    c = make_cascade([0, 10, 20])
    alphabet = build_alphabet([c], CFG)
    value = supervised_log_likelihood(c, Arborescence(parents), np.zeros(len(alphabet)), CFG, alphabet)
    assert value == pytest.approx(math.log(1 / 16), abs=1e-12)


def test_supervised_matches_brute_force():
    c = cascade4()
    alphabet = build_alphabet([c], CFG)
    theta = random_theta(alphabet, 5)
    gold = Arborescence({1: 0, 2: 1, 3: 1, 4: 2})
    full = build_scores(c, theta, CFG, FullConstraints(), alphabet)
    expected = full.tree_score(gold.parent) - brute_log_sum(full, full.mask)
    assert supervised_log_likelihood(c, gold, theta, CFG, alphabet) == pytest.approx(expected, abs=1e-8)


def test_supervised_rejects_invalid_gold():
    c = make_cascade([0, 10])
    alphabet = build_alphabet([c], CFG)
    with pytest.raises(InvalidGoldTree):
        supervised_log_likelihood(c, Arborescence({1: 2, 2: 1}), np.zeros(len(alphabet)), CFG, alphabet)


# -- compiled dataset -----------------------------------------------------------


def two_cascades():
    a, b = cascade4(0, "a"), cascade4(100, "b")
    golds = [GoldLinks({1: {0}, 2: {1}, 3: {1}, 4: {2}}), GoldLinks({1: {0}, 2: {0}, 3: {2}, 4: {3}})]
    return [(a, golds[0]), (b, golds[1])]


def test_zero_theta_full_mask_objective_and_gradient_vanish():
    pairs = two_cascades()
    alphabet = build_alphabet([c for c, _ in pairs], CFG)
    data = compile_dataset(pairs, CFG, FullConstraints(), alphabet)
    obj, grad = total_objective_and_gradient(data, np.zeros(len(alphabet)))
    assert obj == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(grad, 0.0, atol=1e-12)


def test_single_cascade_dataset_matches_per_cascade_ops():
    c = cascade4()
    alphabet = build_alphabet([c], CFG)
    theta = random_theta(alphabet, 2)
    gold = Arborescence({1: 0, 2: 1, 3: 1, 4: 2})
    data = compile_dataset([(c, gold)], CFG, TimeConstraints(), alphabet)
    obj, _ = total_objective_and_gradient(data, theta)
    assert obj == pytest.approx(contrastive_log_likelihood(c, theta, CFG, TimeConstraints(), alphabet), abs=1e-10)
    obj, _ = total_objective_and_gradient(data, theta, "supervised")
    assert obj == pytest.approx(supervised_log_likelihood(c, gold, theta, CFG, alphabet), abs=1e-10)


def test_batched_matches_single_route_on_mixed_sizes(rng):
    cascades = []
    for k in range(12):
        n = int(rng.integers(1, 10))
        ts = np.sort(rng.integers(0, 9000, size=n)).tolist()
        ts[0] = 0
        cascades.append(make_cascade(ts, sites=[f"s{rng.integers(4)}" for _ in ts], cascade_id=f"k{k}"))
    alphabet = build_alphabet(cascades, CFG)
    data = compile_dataset(cascades, CFG, TimeConstraints(), alphabet)
    theta = random_theta(alphabet, 9, 0.5)
    _, _, per = data.objective_and_gradient(theta)
    expected = [contrastive_log_likelihood(c, theta, CFG, TimeConstraints(), alphabet) for c in data.cascades]
    np.testing.assert_allclose(per, expected, atol=1e-9)


@pytest.mark.parametrize("mode", ["contrastive", "supervised"])
@pytest.mark.parametrize("l2", [0.0, 0.3])
def test_gradient_matches_finite_differences(mode, l2):
    pairs = two_cascades()
    alphabet = build_alphabet([c for c, _ in pairs], CFG)
    data = compile_dataset(pairs, CFG, TimeConstraints(), alphabet)
    theta = random_theta(alphabet, 3, 0.5)
    _, grad = total_objective_and_gradient(data, theta, mode, l2)
    h = 1e-5
    fd = []
    for e in np.eye(len(theta)):
        up = total_objective_and_gradient(data, theta + h * e, mode, l2)[0]
        down = total_objective_and_gradient(data, theta - h * e, mode, l2)[0]
        fd.append((up - down) / (2 * h))
    np.testing.assert_allclose(grad, fd, atol=1e-5)


def test_parallel_matches_sequential(rng):
    cascades = [make_cascade(np.cumsum(rng.integers(1, 900, size=n)).tolist(), cascade_id=f"k{n}")
                for n in range(1, 14)]
    alphabet = build_alphabet(cascades, CFG)
    data = compile_dataset(cascades, CFG, TimeConstraints(), alphabet)
    theta = random_theta(alphabet, 1, 0.3)
    obj1, g1 = total_objective_and_gradient(data, theta, workers=1)
    obj4, g4 = total_objective_and_gradient(data, theta, workers=4)
    assert abs(obj1 - obj4) <= 1e-10
    np.testing.assert_allclose(g1, g4, atol=1e-10, rtol=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 3.0))
def test_objectives_are_non_positive(seed, scale):
    pairs = two_cascades()
    alphabet = build_alphabet([c for c, _ in pairs], CFG)
    data = compile_dataset(pairs, CFG, TimeConstraints(), alphabet)
    theta = random_theta(alphabet, seed, scale)
    _, _, per_c = data.objective_and_gradient(theta, "contrastive")
    _, _, per_s = data.objective_and_gradient(theta, "supervised")
    assert (per_c <= 1e-12).all() and (per_s <= 1e-12).all()
    # time constraints strictly shrink the tree set here
    assert (per_c < 0).all()


def test_infeasible_cascades_are_skipped():
    ok = make_cascade([0, 10], cascade_id="ok")
    late = make_cascade([0, 5000], cascade_id="late", root_window=None)
    # ties and no root edge for node 2: impossible
    bad = make_cascade([0, 0], cascade_id="bad", root_window=-1)
    alphabet = build_alphabet([ok, late, bad], CFG)
    data = compile_dataset([ok, late, bad], CFG, TimeConstraints(), alphabet)
    assert data.skipped == 1 and [c.cascade_id for c in data.cascades] == ["ok", "late"]
    with pytest.raises(AllCascadesSkipped):
        compile_dataset([bad], CFG, TimeConstraints(), alphabet)


def test_supervised_requires_gold():
    c = cascade4()
    alphabet = build_alphabet([c], CFG)
    data = compile_dataset([c], CFG, TimeConstraints(), alphabet)
    with pytest.raises(InvalidGoldTree):
        total_objective_and_gradient(data, np.zeros(len(alphabet)), "supervised")


# -- fitting -------------------------------------------------------------------


def test_zero_iterations_rejected():
    with pytest.raises(ValueError):
        TrainConfig(iterations=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(l2_lambda=-1)


def test_supervised_fit_is_monotone_towards_zero():
    # gold trees are the only constraint-valid trees
    gold = GoldLinks({1: {0}, 2: {1}, 3: {2}})
    pairs = [(make_cascade([0, 4000, 9000], cascade_id=f"k{k}", sites=["a", "b", "c"]), gold)
             for k in range(3)]
    alphabet = build_alphabet([c for c, _ in pairs], CFG)
    data = compile_dataset(pairs, CFG, TreeConstraints(gold), alphabet)
    assert data.constrained.sum() == 3 * 3
    report = fit(data, TrainConfig(mode="supervised", iterations=300, learning_rate=0.05))
    trace = np.array(report.objective_trace)
    assert len(trace) == 300
    assert (np.diff(trace) >= -1e-12).all()
    assert (trace < 0).all() and report.final_objective > trace[0] / 10


def test_fit_is_deterministic_and_reports():
    pairs = two_cascades()
    alphabet = build_alphabet([c for c, _ in pairs], CFG)
    data = compile_dataset(pairs, CFG, TimeConstraints(), alphabet)
    config = TrainConfig(iterations=20, init="uniform_small", seed=3)
    a, b = fit(data, config), fit(data, config)
    assert a.objective_trace == b.objective_trace
    np.testing.assert_array_equal(a.final_theta, b.final_theta)
    assert a.to_json()["iterations"] == 20


def test_uniform_small_init_is_seeded_and_bounded():
    alphabet = FeatureAlphabet(["a", "b", "c"]).freeze()
    t1 = initial_theta(alphabet, TrainConfig(init="uniform_small", seed=1))
    t2 = initial_theta(alphabet, TrainConfig(init="uniform_small", seed=1))
    np.testing.assert_array_equal(t1, t2)
    assert np.abs(t1).max() <= 1e-3 and t1[0] == 0
    assert not initial_theta(alphabet, TrainConfig()).any()


def test_l2_with_featureless_alphabet_keeps_theta_at_zero():
    cascades = [cascade4(0, "a"), cascade4(50, "b")]
    alphabet = FeatureAlphabet().freeze()  # every feature collapses to the unknown slot
    data = compile_dataset(cascades, CFG, TimeConstraints(), alphabet)
    report = fit(data, TrainConfig(iterations=50, l2_lambda=0.5))
    np.testing.assert_allclose(report.final_theta, 0.0, atol=1e-12)


def test_divergence_detected(monkeypatch):
    pairs = two_cascades()
    alphabet = build_alphabet([c for c, _ in pairs], CFG)
    data = compile_dataset(pairs, CFG, TimeConstraints(), alphabet)
    monkeypatch.setattr(
        type(data), "objective_and_gradient",
        lambda self, *a, **k: (float("nan"), np.zeros(len(alphabet)), np.zeros(2)),
    )
    with pytest.raises(DivergenceDetected):
        fit(data, TrainConfig(iterations=5))


def test_model_round_trip(tmp_path):
    pairs = two_cascades()
    fc = FeatureConfig(feature_set="basic", jaccard_bin_width=0.25)
    alphabet = build_alphabet([c for c, _ in pairs], fc)
    weights = random_theta(alphabet, 11) / 3
    path = tmp_path / "model.tsv"
    Model(weights, alphabet, fc).save(path)
    loaded = Model.load(path)
    np.testing.assert_array_equal(loaded.weights, weights)
    assert loaded.alphabet.names == alphabet.names
    assert loaded.feature_config == fc
    text = path.read_text()
    path.write_text(text.replace("root_edge\t", "root_edgX\t"))
    with pytest.raises(ValueError):
        Model.load(path)
