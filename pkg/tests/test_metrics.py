import numpy as np
import pytest

from oracles import cif_oracle, death_oracle, death_oracle_2d, ratios_oracle
from semicomp import McmcConfig, NumericalError, SimConfig, run_chain, simulate_dataset
from semicomp.metrics import (RatioSamples, _std_death, _std_death_direct, cdf_death,
                              cif_death_first, cif_from_scales, cif_readmission,
                              death_cdf_from_scales, excess_ratios, posterior_ratio_summary,
                              standardized_rate, survival_from_scales)
from semicomp.model import Dataset, ModelState, PatientRecord, TransitionParams


def make_state(alpha=(1.0, 1.0, 1.0), kappa=(1.0, 1.0, 1.0), sigma_V=None, clock="semi_markov",
               J=1, p=0):
    trans = tuple(TransitionParams(a, k, np.zeros(p)) for a, k in zip(alpha, kappa))
    S = np.zeros((3, 3)) if sigma_V is None else np.asarray(sigma_V, float)
    return ModelState(trans, np.zeros((J, 3)), S, 1.0, np.ones(1), clock)


PATIENT = PatientRecord(0, 1.0, 0, 1.0, 0)


def random_params(rng):
    """Shapes in (0.5, 2) and scales putting H_g(t) log-uniform in [1e-3, 10]."""
    a = rng.uniform(0.5, 2.0, 3)
    t = rng.uniform(5.0, 365.0)
    H = np.exp(rng.uniform(np.log(1e-3), np.log(10.0), 3))
    return t, H / t ** a, a


# -- closed forms --------------------------------------------------------------------


def test_cif_zero_time():
    s = make_state()
    assert cif_readmission(0.0, PATIENT, s) == 0.0
    assert cdf_death(0.0, PATIENT, s) == 0.0
    with pytest.raises(ValueError):
        cif_readmission(-1.0, PATIENT, s)


@pytest.mark.parametrize("t", [0.1, 0.7, 2.0, 9.0, 30.0])
def test_cif_exponential_closed_form(t):
    s = make_state()
    assert abs(cif_readmission(t, PATIENT, s, K=15) - (1 - np.exp(-2 * t)) / 2) < 1e-10


def test_default_nodes_accuracy_envelope():
    """K = 5 on unit hazards: exact to 1e-10 while H stays small, ~1e-5 deep in the tail."""
    for t in np.geomspace(0.01, 30, 25):
        e1 = abs(cif_from_scales(t, 1.0, 1.0, 1.0, 1.0) - (1 - np.exp(-2 * t)) / 2)
        f2 = (1 - np.exp(-2 * t)) - np.exp(-t) * (1 - np.exp(-t))
        e2 = abs(death_cdf_from_scales(t, 1.0, 1.0, 1.0, (1, 1, 1)) - f2)
        assert max(e1, e2) < (1e-10 if t < 1.5 else 1e-4)


@pytest.mark.parametrize("t", [0.1, 1.0, 5.0])
def test_death_without_readmission_path(t):
    # kappa_1 = 0 is outside the parameter domain; pass scales directly
    for method in ("nested", "reduced"):
        got = death_cdf_from_scales(t, 0.0, 1.0, 1.0, (1, 1, 1), K=15, method=method)
        assert abs(got - (1 - np.exp(-t))) < 1e-10


def test_death_all_exponential_closed_form():
    # unit hazards everywhere: readmission at u then death at rate 1 from u
    t = 1.7
    f_inf = (1 - np.exp(-2 * t)) / 2
    # int_0^t e^{-2u} (1 - e^{-(t-u)}) du
    f_u = (1 - np.exp(-2 * t)) / 2 - np.exp(-t) * (1 - np.exp(-t))
    for method in ("nested", "reduced"):
        got = death_cdf_from_scales(t, 1.0, 1.0, 1.0, (1, 1, 1), K=15, method=method)
        assert abs(got - (f_inf + f_u)) < 1e-10


# -- oracles -------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(6))
def test_cif_vs_dense_grid(seed):
    t, c, a = random_params(np.random.default_rng(seed))
    want = cif_oracle(t, c[0], c[1], a[0], a[1])
    got = cif_from_scales(t, c[0], c[1], a[0], a[1], K=15)
    assert abs(got - want) <= 1e-7 * want


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("clock", ["semi_markov", "markov"])
def test_death_vs_dense_grid(seed, clock):
    t, c, a = random_params(np.random.default_rng(100 + seed))
    want = death_oracle(t, *c, *a, clock=clock)
    for method in ("nested", "reduced"):
        got = death_cdf_from_scales(t, *c, a, clock, K=15, method=method)
        assert abs(got - want) < 1e-5


def test_death_vs_2d_trapezoid():
    t, c, a = random_params(np.random.default_rng(7))
    want = death_oracle_2d(t, *c, *a)
    got = death_cdf_from_scales(t, *c, a, K=15, method="nested")
    assert abs(got - want) < 1e-5


def test_nested_and_reduced_forms_agree(rng):
    for _ in range(20):
        t, c, a = random_params(rng)
        for clock in ("semi_markov", "markov"):
            n = death_cdf_from_scales(t, *c, a, clock, K=15, method="nested")
            r = death_cdf_from_scales(t, *c, a, clock, K=15, method="reduced")
            assert abs(n - r) < 1e-7


def test_plain_affine_nested_rule_is_less_accurate():
    # documents why graded panels are used: alpha < 1 singularity at 0
    c, a, t = (0.05, 0.02, 0.03), (0.6, 0.8, 0.7), 90.0
    want = death_oracle(t, *c, *a)
    plain = death_cdf_from_scales(t, *c, a, K=5, method="nested", graded=False)
    graded = death_cdf_from_scales(t, *c, a, K=5, method="nested")
    assert abs(graded - want) < abs(plain - want)


# -- properties ----------------------------------------------------------------------


def test_competing_risk_decomposition(rng):
    for _ in range(10):
        T, c, a = random_params(rng)
        ts = np.linspace(T / 20, T, 20)
        for t in ts:
            total = (cif_from_scales(t, c[0], c[1], a[0], a[1], K=15)
                     + cif_from_scales(t, c[0], c[1], a[0], a[1], K=15, which=2)
                     + survival_from_scales(t, c[0], c[1], a[0], a[1]))
            assert abs(total - 1) < 1e-8


def test_patient_level_decomposition():
    s = make_state(alpha=(1.3, 0.7, 1.1), kappa=(0.01, 0.02, 0.05))
    t = 40.0
    total = (cif_readmission(t, PATIENT, s, K=15) + cif_death_first(t, PATIENT, s, K=15)
             + float(survival_from_scales(t, 0.01, 0.02, 1.3, 0.7)))
    assert abs(total - 1) < 1e-8


def test_monotone_in_time(rng):
    # at K = 5 the panel ends move with t, so deep in the tail (H >> 8) F can
    # dip by the quadrature error (~1e-6); at K = 15 that is below rounding
    for _ in range(20):
        T, c, a = random_params(rng)
        ts = np.linspace(0, 3 * T, 120)
        F1 = [cif_from_scales(t, c[0], c[1], a[0], a[1], K=15) for t in ts]
        F2 = [death_cdf_from_scales(t, *c, a, K=15) for t in ts]
        assert np.all(np.diff(F1) >= -1e-14) and np.all(np.diff(F2) >= -1e-14)
        assert all(0 <= f <= 1 for f in F1 + F2)


def test_death_cdf_tends_to_one():
    c, a = (0.02, 0.01, 0.05), (1.0, 1.2, 0.9)
    t = 50 / min(c) ** (1 / min(a))
    assert abs(death_cdf_from_scales(t, *c, a) - 1) < 1e-3


# -- standardized rates --------------------------------------------------------------


def test_standardized_rate_degenerate_sigma():
    s = make_state(alpha=(1.2, 0.9, 1.1), kappa=(0.01, 0.02, 0.03))
    t = 30.0
    assert standardized_rate("readmission", t, PATIENT, s) == cif_readmission(t, PATIENT, s)
    assert standardized_rate("death", t, PATIENT, s) == pytest.approx(
        cdf_death(t, PATIENT, s, method="reduced"), abs=1e-15)
    with pytest.raises(ValueError):
        standardized_rate("other", t, PATIENT, s)


def test_standardized_rate_rejects_indefinite_sigma():
    s = make_state(sigma_V=[[1, 2, 0], [2, 1, 0], [0, 0, 1]])
    with pytest.raises(NumericalError, match="Sigma_V"):
        standardized_rate("death", 30.0, PATIENT, s)


def test_standardized_rate_converges_to_plugin():
    s = make_state(alpha=(1.2, 0.9, 1.1), kappa=(0.01, 0.02, 0.03))
    plug = [cif_readmission(60.0, PATIENT, s), cdf_death(60.0, PATIENT, s, method="reduced")]
    errs = []
    for v in (1e-1, 1e-2, 1e-3, 1e-4):
        sv = make_state(alpha=(1.2, 0.9, 1.1), kappa=(0.01, 0.02, 0.03),
                        sigma_V=v * np.eye(3))
        errs.append([abs(standardized_rate(k, 60.0, PATIENT, sv) - p)
                     for k, p in zip(("readmission", "death"), plug)])
    errs = np.array(errs)
    assert np.all(np.diff(errs, axis=0) < 0)
    assert np.all(errs[-1] < 1e-4)


@pytest.mark.parametrize("kind", ["readmission", "death"])
def test_standardized_rate_vs_monte_carlo(kind):
    alpha, kappa = (1.1, 0.9, 1.2), (0.004, 0.01, 0.01)
    S = np.diag([0.4, 0.3, 0.5])
    s = make_state(alpha=alpha, kappa=kappa, sigma_V=S)
    t = 90.0
    got = standardized_rate(kind, t, PATIENT, s, K=15)
    V = np.random.default_rng(2).standard_normal((10 ** 6, 3)) * np.sqrt(np.diag(S))
    c = [kappa[g] * np.exp(V[:, g]) for g in range(3)]
    if kind == "readmission":
        f = cif_from_scales(t, c[0], c[1], alpha[0], alpha[1], K=10)
    else:
        f = death_cdf_from_scales(t, *c, alpha, K=10)
    se = f.std() / np.sqrt(len(f))
    assert abs(got - f.mean()) < 3 * se


@pytest.mark.parametrize("clock", ["semi_markov", "markov"])
def test_frailty_table_matches_full_grid(rng, clock):
    S = np.array([[0.3, 0.1, 0.05], [0.1, 0.2, -0.04], [0.05, -0.04, 0.4]])
    L = np.linalg.cholesky(S)
    alpha = (0.8, 1.3, 0.7)
    # H(90) up to ~3 at V = 0; far enough from F2 = 1 that the full grid's
    # per-node clipping at 1 never triggers
    b = [np.exp(rng.uniform(-9, -5, 50)) for _ in range(3)]
    for K in (3, 5, 10):
        fast = _std_death(90.0, *b, alpha, clock, L, K)
        full = _std_death_direct(90.0, *b, alpha, clock, L, K)
        assert np.max(np.abs(fast - full)) < 1e-12


# -- excess ratios -------------------------------------------------------------------


def _single_hospital(n=20, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    y1 = rng.uniform(1, 50, n)
    return Dataset(np.zeros(n, int), y1, np.zeros(n, int), y1, np.zeros(n, int), [X] * 3)


def _state_for(data, sigma_V, V=None):
    trans = (TransitionParams(1.1, 0.004, [0.3, -0.2]), TransitionParams(0.9, 0.01, [0.1, 0.2]),
             TransitionParams(1.2, 0.02, [0.2, 0.1]))
    J = data.n_hospitals
    V = np.zeros((J, 3)) if V is None else V
    gamma = np.random.default_rng(1).gamma(2.0, 0.5, data.n_patients)
    return ModelState(trans, V, sigma_V, 0.5, gamma)


def test_ratio_one_without_hospital_variation():
    data = _single_hospital()
    r = excess_ratios(data, [_state_for(data, np.zeros((3, 3)))], times=[10.0, 30.0, 90.0])
    assert np.all(r.theta1 == 1.0) and np.all(r.theta2 == 1.0)


def test_standardized_rate_hospital_independent():
    one = _single_hospital(15, seed=3)
    X = np.vstack([one.X[0], one.X[0]])
    y = np.concatenate([one.y1, one.y1])
    data = Dataset(np.repeat([0, 1], 15), y, np.zeros(30, int), y, np.zeros(30, int), [X] * 3)
    V = np.array([[0.3, -0.2, 0.1], [-0.3, 0.2, -0.1]])
    st = _state_for(data, 0.2 * np.eye(3), V)
    st.gamma = np.tile(st.gamma[:15], 2)
    r = excess_ratios(data, [st], times=[30.0, 90.0])
    assert np.allclose(r.mu_S1[0, 0], r.mu_S1[0, 1], rtol=0, atol=1e-12)
    assert np.allclose(r.mu_S2[0, 0], r.mu_S2[0, 1], rtol=0, atol=1e-12)
    assert np.all(r.theta1[0, 0] > 1) and np.all(r.theta1[0, 1] < 1)


def test_ratios_invariant_to_patient_relabeling(small_sim):
    data, truth = small_sim
    perm = np.random.default_rng(0).permutation(data.n_patients)
    pdata = data.subset(perm)
    pstate = truth.state.copy()
    pstate.gamma = truth.state.gamma[perm]
    a = excess_ratios(data, [truth.state], times=[30.0, 90.0])
    b = excess_ratios(pdata, [pstate], times=[30.0, 90.0])
    assert np.allclose(a.theta1, b.theta1, rtol=1e-12)
    assert np.allclose(a.theta2, b.theta2, rtol=1e-12)


def test_gamma_one_switch(small_sim):
    data, truth = small_sim
    st = truth.state.copy()
    st.gamma = np.ones(data.n_patients)
    a = excess_ratios(data, [st], times=[60.0])
    b = excess_ratios(data, [truth.state], times=[60.0], gamma_one=True)
    assert np.array_equal(a.theta1, b.theta1)


def test_ratio_thread_independence(small_sim):
    data, truth = small_sim
    states = [truth.state, truth.state.copy()]
    a = excess_ratios(data, states, times=[30.0, 90.0], threads=1)
    b = excess_ratios(data, states, times=[30.0, 90.0], threads=3)
    assert np.array_equal(a.theta2, b.theta2) and np.array_equal(a.mu_S1, b.mu_S1)


def test_ratio_grid_checks(small_sim):
    data, truth = small_sim
    for bad in ([], [0.0], [30.0, 30.0], [90.0, 30.0]):
        with pytest.raises(ValueError):
            excess_ratios(data, [truth.state], times=bad)
    with pytest.raises(ValueError):
        excess_ratios(data, [], times=[30.0])


def test_ratios_vs_independent_pipeline():
    data, _ = simulate_dataset(SimConfig(J=3, n_per_hospital=10, seed=21))
    samples = run_chain(data, McmcConfig(n_iter=300, burnin=100, thin=100, seed=1))
    r = excess_ratios(data, samples, times=[90.0], K=5)
    for m in range(len(samples)):
        th1, th2 = ratios_oracle(data, samples.state(m), 90.0)
        assert np.allclose(r.theta1[m, :, 0], th1, rtol=1e-3, atol=0)
        assert np.allclose(r.theta2[m, :, 0], th2, rtol=1e-3, atol=0)


# -- summaries -----------------------------------------------------------------------


def _ratio_samples(vals):
    vals = np.asarray(vals, float).reshape(-1, 1, 1)
    ones = np.ones_like(vals)
    return RatioSamples([90.0], np.array([0]), vals, ones, vals, ones)


def test_summary_single_and_two_point():
    s = posterior_ratio_summary(_ratio_samples([1.7]))
    assert all(v[0, 0] == 1.7 for v in s["theta1"])
    s = posterior_ratio_summary(_ratio_samples([1.0, 3.0]))
    assert s["theta2"][0][0, 0] == 2.0


def test_summary_vs_sort(rng):
    x = rng.gamma(2.0, size=401)
    med, lo, hi = posterior_ratio_summary(_ratio_samples(x))["theta1"]

    def q(p):
        xs = np.sort(x)
        h = (len(xs) - 1) * p
        i = int(np.floor(h))
        return xs[i] + (h - i) * (xs[min(i + 1, len(xs) - 1)] - xs[i])

    assert abs(med[0, 0] - q(0.5)) < 1e-12
    assert abs(lo[0, 0] - q(0.025)) < 1e-12
    assert abs(hi[0, 0] - q(0.975)) < 1e-12


def test_k5_cif_with_mixed_shapes():
    # leading shape above the other one, as in many posterior draws
    rng = np.random.default_rng(31)
    t = 90.0
    for _ in range(20):
        a2 = rng.uniform(0.85, 1.2)
        a1 = a2 + rng.uniform(0.01, 0.2)
        c1 = rng.uniform(0.2, 3.0) / t ** a1
        c2 = rng.uniform(0.2, 3.0) / t ** a2
        got = cif_from_scales(t, np.array([c1]), np.array([c2]), a1, a2, K=5)[0]
        want = cif_oracle(t, c1, c2, a1, a2)
        assert abs(got / want - 1) < 1e-5
