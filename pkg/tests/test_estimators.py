import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit, log_expit
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from semicomp import (BayesRiskClassifier, DataError, IllnessDeathModel, LogisticGLMM,
                      excess_ratios)
from semicomp.profiling import brute_force_minimizer, classify_samples, LossSpec


def arrays(data):
    y = np.column_stack([data.y1, data.delta1, data.y2, data.delta2])
    return data.X[0], y, data.hospital_labels[data.hospital]


@pytest.fixture(scope="module")
def fitted(small_sim):
    data, _ = small_sim
    return IllnessDeathModel(n_iter=300, burnin=100, thin=10, times=(30.0, 90.0),
                             seed=3).fit(data)


def test_params_roundtrip():
    for est in (IllnessDeathModel(K=7, seed=2), LogisticGLMM(n_iter=10),
                BayesRiskClassifier(scheme="topk", gamma_frac=0.3)):
        p = est.get_params()
        again = clone(est)
        assert again.get_params() == p
        again.set_params(seed=11)
        assert again.seed == 11 and est.get_params() == p


def test_not_fitted():
    with pytest.raises(NotFittedError):
        IllnessDeathModel().transform()
    with pytest.raises(NotFittedError):
        LogisticGLMM().predict_proba(np.zeros((1, 1)), [0])
    with pytest.raises(NotFittedError):
        BayesRiskClassifier().predict()


def test_array_and_dataset_fits_agree(small_sim, fitted):
    data, _ = small_sim
    X, y, h = arrays(data)
    other = IllnessDeathModel(n_iter=300, burnin=100, thin=10, times=(30.0, 90.0),
                              seed=3).fit(X, y, h)
    assert np.array_equal(other.samples_.theta, fitted.samples_.theta)
    assert other.dic_ == fitted.dic_ and other.lpml_ == fitted.lpml_


def test_transform_is_median_of_ratios(small_sim, fitted):
    data, _ = small_sim
    r = excess_ratios(data, fitted.samples_, (30.0, 90.0), 5)
    Z = fitted.transform()
    assert Z.shape == (data.n_hospitals, 4)
    assert np.array_equal(Z[:, :2], np.median(r.theta1, axis=0))
    assert np.array_equal(Z[:, 2:], np.median(r.theta2, axis=0))


def test_predict_probabilities(small_sim, fitted):
    data, _ = small_sim
    X, _, h = arrays(data)
    P = fitted.predict(X[:12], h[:12])
    assert P.shape == (12, 4)
    assert np.all((P >= 0) & (P <= 1))
    # cumulative in time; readmission by t cannot exceed one minus the death-first mass
    assert np.all(P[:, 1] >= P[:, 0]) and np.all(P[:, 3] >= P[:, 2])
    with pytest.raises(DataError):
        fitted.predict(X[:2], np.array([999, 999]))


def test_input_validation(small_sim):
    data, _ = small_sim
    X, y, h = arrays(data)
    m = IllnessDeathModel(n_iter=20, burnin=5, thin=1)
    with pytest.raises(DataError):
        m.fit(X, y[:, :3], h)
    with pytest.raises(DataError):
        m.fit(X, y, None)
    bad = y.copy()
    bad[0, 1] = 2
    with pytest.raises(DataError):
        m.fit(X, bad, h)


def test_glmm_estimator():
    rng = np.random.default_rng(0)
    J, n = 8, 60
    h = np.repeat(np.arange(J) * 10, n)
    X = rng.standard_normal((J * n, 1))
    V = rng.normal(0, 0.4, J)
    y = (rng.random(J * n) < expit(-0.5 + 0.8 * X[:, 0] + np.repeat(V, n))).astype(int)
    est = LogisticGLMM(n_iter=1500, burnin=500, thin=5, seed=1).fit(X, y, h)
    P = est.predict_proba(X, h)
    assert P.shape == (J * n, 2) and np.allclose(P.sum(axis=1), 1)
    assert set(est.predict(X, h)) <= {0, 1}
    assert list(est.hospital_labels_) == list(np.arange(J) * 10)
    T = est.transform()
    assert T.shape == (J, 1) and np.all(T > 0)
    assert np.array_equal(est.transform(X, y, h), T)
    # posterior mean slope near the fixed-effects maximum likelihood fit
    D = np.column_stack([np.repeat(np.eye(J), n, axis=0), X])
    nll = lambda b: -np.sum(y * (D @ b) + log_expit(-(D @ b)))
    mle = minimize(nll, np.zeros(J + 1), method="BFGS")
    se = np.sqrt(mle.hess_inv[-1, -1])
    assert abs(est.samples_.beta[:, 1].mean() - mle.x[-1]) < se
    with pytest.raises(DataError):
        est.fit(X, y[:-1], h)


def test_bayes_risk_classifier_matches_brute_force(rng):
    M, J = 400, 6
    t1 = np.exp(rng.normal(rng.normal(0, 0.3, J), 0.2, (M, J)))
    t2 = np.exp(rng.normal(rng.normal(0, 0.3, J), 0.2, (M, J)))
    clf = BayesRiskClassifier(scheme="quadrant", seed=0).fit(t1, t2)
    spec = LossSpec("quadrant")
    phi = classify_samples("quadrant", t1, t2)
    best = brute_force_minimizer(phi, spec)
    assert clf.risk_ <= best.risk + 1e-12
    assert clf.risk_ <= clf.plugin_risk_ + 1e-12
    assert clf.predict().shape == (J,)
    assert np.allclose(clf.marginals_.sum(axis=1), 1)


def test_bayes_risk_classifier_topk(rng):
    M, J = 300, 10
    t1 = np.exp(rng.normal(np.linspace(-0.5, 0.5, J), 0.1, (M, J)))
    clf = BayesRiskClassifier(scheme="topk", gamma_frac=0.2, seed=0).fit(t1)
    lab = clf.predict()
    assert set(lab) <= {0, 1}
    # label 1 marks the clearly smallest ratios; ranks below 0.2 * 11 give k = 2
    assert np.array_equal(lab, [1, 1, 0, 0, 0, 0, 0, 0, 0, 0])


def test_bayes_risk_classifier_rejections(rng):
    t = rng.random((10, 3)) + 0.5
    with pytest.raises(DataError):
        BayesRiskClassifier(scheme="quadrant").fit(t)
    with pytest.raises(DataError):
        BayesRiskClassifier(scheme="quadrant").fit(t, t[:, :2])
    with pytest.raises(ValueError):
        BayesRiskClassifier(scheme="bogus").fit(t, t)
