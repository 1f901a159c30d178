import numpy as np
import pytest

from oracles import brute_force, enumerate_quadrant, enumerate_topk, risk_direct
from semicomp import ConfigError
from semicomp.profiling import (CandidateSpace, Classification, LossSpec, bayes_risk_hat,
                                brute_force_minimizer, classify_quadrant, classify_samples,
                                classify_topk, full_space, loss, marginal_probabilities,
                                multi_start_minimizer, plugin_classification,
                                posterior_mode_categories, random_start, reduce_candidates,
                                sequential_minimizer, topk_count)


def posterior_thetas(rng, M, J, spread=0.4, noise=0.3):
    """Hospital-level log-normal ratio draws with heterogeneous centres."""
    centre = rng.normal(0, spread, size=(1, J))
    t1 = np.exp(centre + noise * rng.standard_normal((M, J)))
    t2 = np.exp(rng.normal(0, spread, (1, J)) + noise * rng.standard_normal((M, J)))
    return t1, t2


# -- classification functions --------------------------------------------------------


def test_topk_example():
    c = classify_topk([0.5, 0.9, 1.1, 1.4], 0.5)
    assert list(c.labels) == [1, 1, 0, 0] and not c.boundary_tie
    assert topk_count(4, 0.5) == 2


def test_topk_ties_broken_by_index():
    c = classify_topk(np.ones(6), 0.4)
    assert list(c.labels) == [1, 1, 0, 0, 0, 0]
    assert c.boundary_tie
    assert c.labels.sum() == topk_count(6, 0.4)


@pytest.mark.parametrize("J,g", [(10, 0.1), (10, 0.5), (7, 0.9), (1, 0.5), (100, 0.2)])
def test_topk_count_matches_rank_rule(J, g):
    assert classify_topk(np.random.default_rng(J).random(J), g).labels.sum() == topk_count(J, g)
    assert topk_count(J, g) == sum(1 for r in range(1, J + 1) if r < g * (J + 1))


def test_topk_permutation_invariance(rng):
    theta = rng.random(15)
    base = classify_topk(theta, 0.3).labels
    for _ in range(100):
        p = rng.permutation(15)
        lab = classify_topk(theta[p], 0.3).labels
        inv = np.empty_like(p)
        inv[p] = np.arange(15)
        assert np.array_equal(lab[inv], base)


def test_topk_rank_only(rng):
    theta = rng.gamma(2.0, size=20)
    a = classify_topk(theta, 0.25).labels
    for f in (np.log, np.sqrt, lambda x: 3 * x ** 3 + 1):
        assert np.array_equal(classify_topk(f(theta), 0.25).labels, a)


@pytest.mark.parametrize("bad", [dict(theta1=[1.0, np.nan], gamma_frac=0.5),
                                 dict(theta1=[1.0, 2.0], gamma_frac=0.0),
                                 dict(theta1=[1.0, 2.0], gamma_frac=1.0),
                                 dict(theta1=[[1.0]], gamma_frac=0.5)])
def test_topk_rejects(bad):
    with pytest.raises(ValueError):
        classify_topk(**bad)


def test_quadrant_examples():
    t1 = [1.2, 1.2, 0.8, 0.8, 1.0]
    t2 = [1.3, 0.9, 1.3, 0.9, 1.0]
    assert list(classify_quadrant(t1, t2).labels) == [1, 2, 3, 4, 4]


def test_quadrant_vs_sign_classifier(rng):
    t1 = np.exp(rng.normal(0, 0.3, 10 ** 4))
    t2 = np.exp(rng.normal(0, 0.3, 10 ** 4))
    t1[:50] = 1.0
    t2[50:100] = 1.0
    want = []
    for a, b in zip(np.sign(np.log(t1)), np.sign(np.log(t2))):
        want.append({(1, 1): 1, (1, 0): 2, (1, -1): 2, (0, 1): 3, (-1, 1): 3}.get((a, b), 4))
    assert np.array_equal(classify_quadrant(t1, t2).labels, want)


def test_classify_samples_and_plugin(rng):
    t1, t2 = posterior_thetas(rng, 30, 5)
    S = classify_samples("quadrant", t1, t2)
    assert S.shape == (30, 5)
    assert np.array_equal(S[3], classify_quadrant(t1[3], t2[3]).labels)
    S = classify_samples("topk", t1, gamma_frac=0.4)
    assert np.all(S.sum(axis=1) == topk_count(5, 0.4))
    pc = plugin_classification("quadrant", t1, t2)
    assert np.array_equal(pc.labels, classify_quadrant(np.median(t1, 0), np.median(t2, 0)).labels)
    with pytest.raises(ValueError):
        classify_samples("topk", t1)


# -- loss and risk -------------------------------------------------------------------


def test_loss_examples():
    spec = LossSpec("quadrant")
    a = np.array([1, 2, 3, 4])
    assert loss(a, a, spec) == 0.0
    assert loss(a, np.array([2, 3, 4, 4]), spec) == 0.75
    with pytest.raises(ValueError):
        loss(Classification(a, "quadrant"), Classification([0, 1, 1, 0], "topk"), spec)
    with pytest.raises(ValueError):
        loss(a, a[:3], spec)


def test_unit_loss_is_hamming(rng):
    spec = LossSpec("quadrant")
    for _ in range(10 ** 4):
        J = int(rng.integers(1, 12))
        a, b = rng.integers(1, 5, J), rng.integers(1, 5, J)
        assert loss(a, b, spec) == np.count_nonzero(a != b) / J


def test_weighted_loss_vs_double_sum(rng):
    for _ in range(200):
        W = rng.random((4, 4)) * 3
        np.fill_diagonal(W, 0)
        spec = LossSpec("quadrant", W)
        J = int(rng.integers(1, 15))
        star, truth = rng.integers(1, 5, J), rng.integers(1, 5, J)
        direct = sum(W[truth[j] - 1, star[j] - 1] for j in range(J)) / J
        assert abs(loss(star, truth, spec) - direct) < 1e-12


@pytest.mark.parametrize("bad", [np.ones((4, 4)), -np.ones((4, 4)) + np.eye(4), np.zeros((3, 3))])
def test_bad_weights(bad):
    with pytest.raises(ConfigError):
        LossSpec("quadrant", bad)
    with pytest.raises(ConfigError):
        LossSpec("topk", penalty=-1.0)


def test_bayes_risk_examples():
    spec = LossSpec("quadrant")
    star = np.array([1, 2, 3, 4])
    assert bayes_risk_hat(star, np.tile(star, (5, 1)), spec) == 0.0
    S = np.array([star, [1, 2, 4, 3]])
    assert bayes_risk_hat(star, S, spec) == 0.25


def test_bayes_risk_streaming_equals_batch(rng):
    W = rng.random((4, 4))
    np.fill_diagonal(W, 0)
    spec = LossSpec("quadrant", W)
    S = rng.integers(1, 5, (300, 9))
    star = rng.integers(1, 5, 9)
    stream = 0.0
    for m, row in enumerate(S, 1):
        stream += (loss(star, row, spec) - stream) / m
    assert abs(stream - bayes_risk_hat(star, S, spec)) < 1e-14
    assert abs(risk_direct(star, S, W, "quadrant") - bayes_risk_hat(star, S, spec)) < 1e-12
    # marginal-frequency shortcut used by the minimizers
    P = marginal_probabilities(S, spec)
    assert abs((P @ W)[np.arange(9), star - 1].sum() / 9 - bayes_risk_hat(star, S, spec)) < 1e-12


# -- brute force -----------------------------------------------------------------------


def test_brute_force_single_sample(rng):
    s = rng.integers(1, 5, (1, 6))
    res = brute_force_minimizer(s, LossSpec("quadrant"))
    assert np.array_equal(res.classification.labels, s[0]) and res.risk == 0.0


def test_brute_force_topk_vs_second_enumerator(rng):
    for _ in range(20):
        t1, _ = posterior_thetas(rng, 50, 6)
        S = classify_samples("topk", t1, gamma_frac=0.4)
        assert S[0].sum() == 2
        spec = LossSpec("topk")
        res = brute_force_minimizer(S, spec, gamma_frac=0.4)
        lab, risk = brute_force(S, spec.weights, "topk", 2)
        assert np.array_equal(res.classification.labels, lab)
        assert abs(res.risk - risk) < 1e-12


def test_brute_force_quadrant_weighted_vs_second_enumerator(rng):
    for _ in range(10):
        W = rng.random((4, 4))
        np.fill_diagonal(W, 0)
        t1, t2 = posterior_thetas(rng, 40, 5)
        S = classify_samples("quadrant", t1, t2)
        res = brute_force_minimizer(S, LossSpec("quadrant", W))
        lab, risk = brute_force(S, W, "quadrant")
        assert np.array_equal(res.classification.labels, lab) and abs(res.risk - risk) < 1e-12


def test_brute_force_unit_quadrant_is_posterior_mode(rng):
    spec = LossSpec("quadrant")
    for _ in range(20):
        t1, t2 = posterior_thetas(rng, 41, 6)
        S = classify_samples("quadrant", t1, t2)
        res = brute_force_minimizer(S, spec)
        assert np.array_equal(res.classification.labels, posterior_mode_categories(S, spec))


def test_enumerators_agree_on_order():
    space = full_space(5, "topk", 0.5)
    ours = np.vstack(list(__import__("semicomp.profiling", fromlist=["_enumerate"])
                          ._enumerate(space)))
    theirs = np.array(sorted(map(tuple, enumerate_topk(5, space.k))))
    assert np.array_equal(ours, theirs)
    q = np.vstack(list(__import__("semicomp.profiling", fromlist=["_enumerate"])
                       ._enumerate(full_space(3, "quadrant"))))
    assert np.array_equal(q, np.array(list(enumerate_quadrant(3))))


def test_size_guard():
    S = np.ones((3, 11), dtype=int)
    with pytest.raises(ValueError, match="1000000"):
        brute_force_minimizer(S, LossSpec("quadrant"))


# -- candidate reduction ----------------------------------------------------------------


def test_reduce_nothing_frozen(rng):
    S = np.array([[1, 2, 3], [2, 3, 4], [3, 4, 1], [4, 1, 2]])
    space = reduce_candidates(S, 0.01)
    assert space.fixed == {} and space.size() == 4 ** 3


def test_reduce_unanimous():
    S = np.tile([1, 3, 4, 2], (20, 1))
    space = reduce_candidates(S, 0.01)
    assert space.size() == 1
    res = brute_force_minimizer(S, LossSpec("quadrant"), space)
    assert list(res.classification.labels) == [1, 3, 4, 2]


def test_reduce_epsilon_domain():
    with pytest.raises(ValueError):
        reduce_candidates(np.ones((2, 2), int), 0.5)
    with pytest.raises(ValueError):
        reduce_candidates(np.ones((2, 2), int), 0.0)


@pytest.mark.parametrize("scheme", ["quadrant", "topk"])
def test_reduced_search_matches_full_search(rng, scheme):
    agree = checked = 0
    for _ in range(100):
        t1, t2 = posterior_thetas(rng, 200, 6, spread=1.0, noise=0.2)
        gf = 0.4 if scheme == "topk" else None
        S = classify_samples(scheme, t1, t2, gf)
        spec = LossSpec(scheme)
        full = brute_force_minimizer(S, spec, gamma_frac=gf)
        space = reduce_candidates(S, 0.01, scheme, gf)
        if not all(full.classification.labels[j] == v for j, v in space.fixed.items()):
            continue
        checked += 1
        red = brute_force_minimizer(S, spec, space, gamma_frac=gf)
        agree += np.array_equal(red.classification.labels, full.classification.labels)
    assert checked > 50 and agree == checked


def test_topk_infeasible_freeze_flagged():
    # samples select two hospitals but gamma_frac implies a top set of one
    S = np.tile([1, 1, 0], (50, 1))
    assert topk_count(3, 0.4) == 1
    space = reduce_candidates(S, 0.01, "topk", 0.4)
    assert space.infeasible_freeze and space.fixed == {} and space.size() == 3
    space = reduce_candidates(S, 0.01, "topk")
    assert space.k == 2 and not space.infeasible_freeze and space.size() == 1


# -- sequential minimizer ---------------------------------------------------------------


def test_sequential_from_optimum_stops_after_one_sweep(rng):
    t1, t2 = posterior_thetas(rng, 60, 7)
    S = classify_samples("quadrant", t1, t2)
    W = rng.random((4, 4))
    np.fill_diagonal(W, 0)
    spec = LossSpec("quadrant", W)
    opt = brute_force_minimizer(S, spec)
    res = sequential_minimizer(S, spec, opt.classification, seed=3)
    assert res.n_sweeps == 1 and res.n_updates == 0
    assert np.array_equal(res.classification.labels, opt.classification.labels)


def test_sequential_single_sample_zero_loss(rng):
    s = rng.integers(1, 5, (1, 8))
    for seed in range(5):
        start = random_start(8, "quadrant", np.random.default_rng(seed))
        res = sequential_minimizer(s, LossSpec("quadrant"), start, seed)
        assert res.risk == 0.0 and np.array_equal(res.classification.labels, s[0])


def test_sequential_monotone_and_deterministic(rng):
    t1, _ = posterior_thetas(rng, 80, 8)
    S = classify_samples("topk", t1, gamma_frac=0.4)
    spec = LossSpec("topk")
    start = random_start(8, "topk", rng, 0.4)
    a = sequential_minimizer(S, spec, start, seed=11)
    b = sequential_minimizer(S, spec, start, seed=11)
    assert np.array_equal(a.classification.labels, b.classification.labels)
    assert np.all(np.diff(a.history) < 0)
    assert a.classification.labels.sum() == start.labels.sum()


def test_multi_start_never_worse_than_plugin(rng):
    for _ in range(20):
        t1, t2 = posterior_thetas(rng, 50, 8)
        S = classify_samples("quadrant", t1, t2)
        W = rng.random((4, 4))
        np.fill_diagonal(W, 0)
        spec = LossSpec("quadrant", W)
        plug = plugin_classification("quadrant", t1, t2)
        starts = [plug] + [random_start(8, "quadrant", rng) for _ in range(4)]
        res = multi_start_minimizer(S, spec, starts, range(5))
        assert res.risk <= bayes_risk_hat(plug, S, spec) + 1e-15


def test_sequential_respects_frozen_hospitals():
    S = np.array([[1, 2, 3, 4]] * 99 + [[2, 2, 3, 4]])
    space = reduce_candidates(S, 0.05)
    start = np.array([1, 1, 3, 4])
    with pytest.raises(ValueError):
        sequential_minimizer(S, LossSpec("quadrant"), start, 0, space)
    res = sequential_minimizer(S, LossSpec("quadrant"), [1, 2, 3, 4], 0, space)
    assert list(res.classification.labels) == [1, 2, 3, 4]


def test_sequential_tie_goes_to_smallest_label():
    # two hospitals with an even split between two categories
    S = np.array([[2, 4], [3, 1]] * 5)
    spec = LossSpec("quadrant")
    for start in ([4, 4], [3, 1], [2, 4], [1, 2]):
        res = sequential_minimizer(S, spec, np.array(start), seed=0)
        assert np.array_equal(res.classification.labels, [2, 1])
        assert np.array_equal(res.classification.labels, brute_force_minimizer(S, spec)
                              .classification.labels)
