"""scikit-learn style wrappers.

``IllnessDeathModel``
    ``fit`` runs the Bayesian sampler, ``transform`` gives posterior-median
    excess ratios per hospital and ``predict`` per-patient cumulative
    incidences averaged over the posterior.
``LogisticGLMM``
    The binary-outcome comparator with ``predict_proba``/``predict``.
``BayesRiskClassifier``
    Loss-based classification from posterior ratio draws.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import as_dataset, check_hospital, check_sample_matrix
from .exceptions import DataError
from .glmm import BinaryOutcomes, GlmmConfig, fit_glmm, glmm_excess_ratio
from .io import ProfilingConfig
from .mcmc import McmcConfig, Priors, compute_dic, compute_lpml, run_chain
from .metrics import cif_from_scales, death_cdf_from_scales, excess_ratios
from .pipeline import profile_scheme
from .profiling import SCHEMES, LossSpec, bayes_risk_hat, classify_samples


class IllnessDeathModel(BaseEstimator):
    """Hierarchical Weibull illness-death model fitted by MCMC.

    Parameters
    ----------
    n_iter, burnin, thin : int
        Chain length settings.
    h3_clock : {"semi_markov", "markov"}
    frailty : bool
        Patient-level Gamma frailty; ``False`` fixes it at 1.
    priors : Priors, optional
    times : sequence of float
        Evaluation grid for ratios and predictions.
    K : int
        Quadrature nodes per panel and per random-effect direction.
    """

    def __init__(self, n_iter=5000, burnin=1000, thin=5, h3_clock="semi_markov", frailty=True,
                 priors=None, times=(90.0,), K=5, gamma_one=False, threads=1, seed=0):
        self.n_iter = n_iter
        self.burnin = burnin
        self.thin = thin
        self.h3_clock = h3_clock
        self.frailty = frailty
        self.priors = priors
        self.times = times
        self.K = K
        self.gamma_one = gamma_one
        self.threads = threads
        self.seed = seed

    def _config(self):
        return McmcConfig(n_iter=self.n_iter, burnin=self.burnin, thin=self.thin,
                          h3_clock=self.h3_clock, frailty=self.frailty,
                          priors=self.priors if self.priors is not None else Priors(),
                          seed=self.seed).validate()

    def fit(self, X, y=None, hospital=None):
        """Fit to a ``Dataset`` or to arrays.

        ``y`` has columns (y1, delta1, y2, delta2) and ``hospital`` gives
        each row's hospital.
        """
        data = as_dataset(X, y, hospital)
        self.samples_ = run_chain(data, self._config())
        self.dataset_ = data
        self.hospital_labels_ = data.hospital_labels
        self.dic_ = compute_dic(self.samples_, data)
        self.lpml_ = compute_lpml(self.samples_, data)
        return self

    def excess_ratios(self, X=None, y=None, hospital=None):
        """Posterior draws of the ratios (``RatioSamples``)."""
        check_is_fitted(self, "samples_")
        data = self.dataset_ if X is None else as_dataset(X, y, hospital)
        if data.n_hospitals != self.dataset_.n_hospitals:
            raise DataError("hospital set differs from the fitted data")
        return excess_ratios(data, self.samples_, self.times, self.K, self.gamma_one,
                             self.threads)

    def transform(self, X=None, y=None, hospital=None):
        """Posterior-median ratios, shape (J, 2 T): theta1 at each time, then theta2."""
        r = self.excess_ratios(X, y, hospital)
        return np.concatenate([np.median(r.theta1, axis=0), np.median(r.theta2, axis=0)],
                              axis=1)

    def predict(self, X, hospital=None):
        """Posterior-mean readmission CIF and death CDF per patient, shape (N, 2 T).

        Frailties are set to 1 and hospital effects to their sampled values.
        """
        check_is_fitted(self, "samples_")
        Xs = [check_array(x, ensure_min_samples=0) for x in
              (X if isinstance(X, (list, tuple)) and len(X) == 3 else [X] * 3)]
        codes = self._codes(check_hospital(hospital, Xs[0].shape[0]))
        s = self.samples_
        M = len(s.theta)
        T = len(self.times)
        out = np.zeros((Xs[0].shape[0], 2 * T))
        for m in range(M):
            c = [s.kappa[m, g] * np.exp(Xs[g] @ s.beta[g][m] + s.V[m, codes, g]) for g in range(3)]
            for k, t in enumerate(self.times):
                out[:, k] += cif_from_scales(t, c[0], c[1], s.alpha[m, 0], s.alpha[m, 1], self.K)
                out[:, T + k] += death_cdf_from_scales(t, c[0], c[1], c[2], s.alpha[m],
                                                       s.h3_clock, self.K)
        return out / M

    def _codes(self, hospital):
        lookup = {lab: j for j, lab in enumerate(self.hospital_labels_.tolist())}
        try:
            return np.array([lookup[h] for h in hospital.tolist()], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"unknown hospital {exc.args[0]!r}") from None


class LogisticGLMM(BaseEstimator):
    """Logistic regression with Normal hospital intercepts, fitted by MCMC."""

    def __init__(self, n_iter=5000, burnin=1000, thin=5, beta_var=100.0, prec_shape=0.7,
                 prec_rate=0.7, K=5, seed=0):
        self.n_iter = n_iter
        self.burnin = burnin
        self.thin = thin
        self.beta_var = beta_var
        self.prec_shape = prec_shape
        self.prec_rate = prec_rate
        self.K = K
        self.seed = seed

    def _records(self, X, y, hospital, labels=None):
        X = check_array(X, ensure_min_samples=0, ensure_min_features=0)
        y = np.asarray(y).reshape(-1)
        h = check_hospital(hospital, X.shape[0])
        if len(y) != X.shape[0]:
            raise DataError("X and y differ in length")
        if labels is None:
            labels, codes = np.unique(h, return_inverse=True)
        else:
            lookup = {lab: j for j, lab in enumerate(labels.tolist())}
            codes = np.array([lookup[v] for v in h.tolist()], dtype=np.int64)
        try:
            return BinaryOutcomes(codes, y, X, len(labels), labels)
        except ValueError as exc:
            raise DataError(str(exc)) from None

    def fit(self, X, y, hospital=None):
        rec = self._records(X, y, hospital)
        cfg = GlmmConfig(n_iter=self.n_iter, burnin=self.burnin, thin=self.thin,
                         beta_var=self.beta_var, prec_shape=self.prec_shape,
                         prec_rate=self.prec_rate, seed=self.seed)
        self.samples_ = fit_glmm(rec, cfg)
        self.records_ = rec
        self.hospital_labels_ = rec.hospital_labels
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X, hospital=None):
        check_is_fitted(self, "samples_")
        X = check_array(X, ensure_min_samples=0, ensure_min_features=0)
        h = check_hospital(hospital, X.shape[0])
        lookup = {lab: j for j, lab in enumerate(self.hospital_labels_.tolist())}
        codes = np.array([lookup[v] for v in h.tolist()], dtype=np.int64)
        D = np.column_stack([np.ones(X.shape[0]), X])
        eta = D @ self.samples_.beta.T + self.samples_.V[:, codes].T      # (N, M)
        p1 = np.mean(1.0 / (1.0 + np.exp(-eta)), axis=1)
        return np.column_stack([1 - p1, p1])

    def predict(self, X, hospital=None):
        return (self.predict_proba(X, hospital)[:, 1] > 0.5).astype(np.int64)

    def transform(self, X=None, y=None, hospital=None):
        """Posterior-median excess ratio per hospital, shape (J, 1)."""
        check_is_fitted(self, "samples_")
        rec = self.records_ if X is None else self._records(X, y, hospital,
                                                            self.hospital_labels_)
        theta, _, _ = glmm_excess_ratio(rec, self.samples_, self.K)
        return np.median(theta, axis=0)[:, None]


class BayesRiskClassifier(BaseEstimator):
    """Classification minimizing the posterior expected loss.

    ``fit(theta1, theta2)`` takes (M, J) posterior draws of the readmission
    and (for ``quadrant``) mortality ratios.
    """

    def __init__(self, scheme="quadrant", gamma_frac=0.1, weights=None, penalty=1.0,
                 epsilon=0.01, n_starts=5, seed=0):
        self.scheme = scheme
        self.gamma_frac = gamma_frac
        self.weights = weights
        self.penalty = penalty
        self.epsilon = epsilon
        self.n_starts = n_starts
        self.seed = seed

    def fit(self, theta1, theta2=None):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        t1 = check_sample_matrix(theta1, "theta1")
        if self.scheme == "quadrant":
            if theta2 is None:
                raise DataError("the quadrant scheme needs mortality ratio draws")
            t2 = check_sample_matrix(theta2, "theta2")
            if t2.shape != t1.shape:
                raise DataError("theta1 and theta2 differ in shape")
        else:
            t2 = t1 if theta2 is None else check_sample_matrix(theta2, "theta2")
        pcfg = ProfilingConfig(gamma_frac=self.gamma_frac, epsilon=self.epsilon,
                               quadrant_weights=self.weights, penalty=self.penalty,
                               n_starts=self.n_starts, schemes=[self.scheme])
        res = profile_scheme(self.scheme, t1, t2, pcfg, np.random.SeedSequence(self.seed))
        self.labels_ = res["final"]
        self.plugin_labels_ = res["plugin"]
        self.risk_ = res["risk"]
        self.marginals_ = res["marginals"]
        self.candidate_space_ = res["space"]
        self.loss_spec_ = LossSpec(self.scheme, None if self.weights is None
                                   else np.asarray(self.weights, float), self.penalty)
        self.plugin_risk_ = bayes_risk_hat(self.plugin_labels_, self._phi(t1, t2),
                                           self.loss_spec_)
        return self

    def _phi(self, t1, t2):
        gf = self.gamma_frac if self.scheme == "topk" else None
        return classify_samples(self.scheme, t1, t2, gf)

    def predict(self, X=None):
        """Loss-based labels of the fitted hospitals."""
        check_is_fitted(self, "labels_")
        return self.labels_.copy()
