"""Logistic-Normal GLMM comparator for binary within-window outcomes.

``logit P(Y*_ji = 1) = x*_ji' beta* + V*_j`` with ``V*_j ~ N(0, sigma2_v)``.
The design gets an intercept column. Sampling: random-walk Metropolis for
``beta*`` (block) and ``V*`` (per hospital, vectorized since the hospital
effects are conditionally independent), exact Gamma draw for the precision
``1/sigma2_v``. Priors: ``beta* ~ N(0, beta_var I)``, ``1/sigma2_v ~
Gamma(shape, rate)``. Proposal scales are adapted during burn-in only.

The excess ratio of hospital j is ``mu_a / mu_s`` with
``mu_a = mean_i expit(x_i' beta + V_j)`` and
``mu_s = mean_i E_V[expit(x_i' beta + V)]`` by 1-d Gauss-Hermite quadrature.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, log_expit

from .exceptions import ConfigError
from .model import Dataset
from .quadrature import gauss_hermite_rule

TARGETS = ("readmission", "death")


@dataclass
class BinaryOutcomes:
    hospital: np.ndarray
    y: np.ndarray
    X: np.ndarray
    n_hospitals: int
    hospital_labels: Optional[np.ndarray] = None
    target: str = "readmission"
    t_window: float = 90.0

    def __post_init__(self):
        self.hospital = np.asarray(self.hospital, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] != len(self.y):
            X = X.reshape(len(self.y), -1) if X.size else X.reshape(len(self.y), 0)
        self.X = X
        if np.any((self.y != 0) & (self.y != 1)):
            raise ValueError("binary outcomes must be 0 or 1")
        if self.hospital_labels is None:
            self.hospital_labels = np.arange(self.n_hospitals)

    @property
    def n(self):
        return len(self.y)

    def design(self):
        """Design matrix with a leading intercept column."""
        return np.column_stack([np.ones(self.n), self.X])


def derive_binary_outcomes(dataset: Dataset, t_window=90.0, target="readmission"):
    """Event-within-window indicators.

    Readmission: ``delta1 == 1 and y1 <= t``; a death before readmission
    counts as 0. Death: ``delta2 == 1 and y2 <= t``. Uses the design of
    transition 1 (readmission) or 2 (death).
    """
    if not t_window > 0:
        raise ValueError("window must be positive")
    if target == "readmission":
        y = (dataset.delta1 == 1) & (dataset.y1 <= t_window)
        X = dataset.X[0]
    elif target == "death":
        y = (dataset.delta2 == 1) & (dataset.y2 <= t_window)
        X = dataset.X[1]
    else:
        raise ValueError(f"target must be one of {TARGETS}")
    return BinaryOutcomes(dataset.hospital, y.astype(np.int64), X, dataset.n_hospitals,
                          dataset.hospital_labels, target, float(t_window))


@dataclass
class GlmmConfig:
    n_iter: int = 5000
    burnin: int = 1000
    thin: int = 5
    beta_var: float = 100.0
    prec_shape: float = 0.7
    prec_rate: float = 0.7
    scale_beta: float = 1.0
    scale_V: float = 1.0
    adapt: bool = True
    seed: int = 0

    def validate(self):
        if not self.n_iter > self.burnin >= 0:
            raise ConfigError("need n_iter > burnin >= 0")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if min(self.scale_beta, self.scale_V) < 0:
            raise ConfigError("proposal scales must be non-negative")
        if min(self.beta_var, self.prec_shape, self.prec_rate) <= 0:
            raise ConfigError("prior parameters must be positive")
        return self

    @property
    def n_samples(self):
        return (self.n_iter - self.burnin) // self.thin


@dataclass
class GlmmSamples:
    beta: np.ndarray          # (M, p + 1), intercept first
    V: np.ndarray             # (M, J)
    sigma2: np.ndarray        # (M,)
    acceptance: dict

    def __len__(self):
        return len(self.sigma2)


class GlmmSampler:
    def __init__(self, records: BinaryOutcomes, config: GlmmConfig):
        self.config = config.validate()
        self.rec = records
        self.X = records.design()
        self.J = records.n_hospitals
        self.p = self.X.shape[1]
        self.rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        self.beta = np.zeros(self.p)
        self.V = np.zeros(self.J)
        self.sigma2 = 1.0
        self.xb = self.X @ self.beta
        # information at p = 1/2 as a fixed preconditioner
        info = 0.25 * self.X.T @ self.X + np.eye(self.p) / config.beta_var
        self.chol = np.linalg.cholesky(np.linalg.inv(info))
        self.scale_beta = config.scale_beta * 2.38 / np.sqrt(self.p)
        n_j = np.bincount(records.hospital, minlength=self.J)
        self.V_sd = 1.0 / np.sqrt(0.25 * n_j + 1.0)
        self.scale_V = np.full(self.J, config.scale_V * 2.4)
        self.ysum = np.bincount(records.hospital, weights=records.y, minlength=self.J)
        self.iteration = 0
        self.n_prop = {"beta": 0, "V": 0}
        self.n_acc = {"beta": 0, "V": 0}

    def _loglik_beta(self, xb):
        eta = xb + self.V[self.rec.hospital]
        return float(np.sum(self.rec.y * eta + log_expit(-eta)))

    def update_beta(self, n_adapt=0):
        prop = self.beta + self.scale_beta * (self.chol @ self.rng.standard_normal(self.p))
        xb = self.X @ prop
        var = self.config.beta_var
        lr = (self._loglik_beta(xb) - self._loglik_beta(self.xb)
              - (prop @ prop - self.beta @ self.beta) / (2 * var))
        self.n_prop["beta"] += 1
        acc = bool(np.isfinite(lr) and np.log(self.rng.random()) < lr)
        if acc:
            self.n_acc["beta"] += 1
            self.beta, self.xb = prop, xb
        if n_adapt:
            target = 0.44 if self.p == 1 else 0.23
            self.scale_beta *= np.exp(n_adapt ** -0.6 * (acc - target))
        return acc

    def _target_V(self, V):
        eta = self.xb + V[self.rec.hospital]
        ll = np.bincount(self.rec.hospital, weights=log_expit(-eta), minlength=self.J)
        return self.ysum * V + ll - 0.5 * V * V / self.sigma2

    def update_V(self, n_adapt=0):
        if self.J == 0:
            return
        prop = self.V + self.scale_V * self.V_sd * self.rng.standard_normal(self.J)
        u = self.rng.random(self.J)
        lr = self._target_V(prop) - self._target_V(self.V)
        acc = np.isfinite(lr) & (np.log(u) < lr)
        self.V = np.where(acc, prop, self.V)
        self.n_prop["V"] += self.J
        self.n_acc["V"] += int(acc.sum())
        if n_adapt:
            self.scale_V *= np.exp(n_adapt ** -0.6 * (acc - 0.44))

    def update_sigma2(self):
        cfg = self.config
        shape = cfg.prec_shape + 0.5 * self.J
        rate = cfg.prec_rate + 0.5 * float(self.V @ self.V)
        self.sigma2 = 1.0 / self.rng.gamma(shape, 1.0 / rate)

    def sweep(self):
        cfg = self.config
        self.iteration += 1
        n_adapt = self.iteration if (cfg.adapt and self.iteration <= cfg.burnin) else 0
        self.update_beta(n_adapt)
        self.update_V(n_adapt)
        self.update_sigma2()
        if self.iteration == cfg.burnin:
            self.n_prop = {"beta": 0, "V": 0}
            self.n_acc = {"beta": 0, "V": 0}

    def run(self) -> GlmmSamples:
        cfg = self.config
        M = cfg.n_samples
        out = GlmmSamples(np.zeros((M, self.p)), np.zeros((M, self.J)), np.zeros(M), {})
        while self.iteration < cfg.n_iter:
            self.sweep()
            k = self.iteration - cfg.burnin
            if k > 0 and k % cfg.thin == 0 and k // cfg.thin <= M:
                m = k // cfg.thin - 1
                out.beta[m], out.V[m], out.sigma2[m] = self.beta, self.V, self.sigma2
        out.acceptance = {b: (self.n_acc[b] / self.n_prop[b] if self.n_prop[b] else float("nan"))
                          for b in self.n_prop}
        return out


def fit_glmm(records: BinaryOutcomes, config: GlmmConfig) -> GlmmSamples:
    """Posterior draws of ``(beta*, V*, sigma2_v)``."""
    return GlmmSampler(records, config).run()


def standardized_binary_rate(xb, sigma2, K=5):
    """``E[expit(xb + V)]`` for ``V ~ N(0, sigma2)`` by K-point Gauss-Hermite, elementwise."""
    xb = np.asarray(xb, dtype=float)
    if sigma2 == 0:
        return expit(xb)
    rule = gauss_hermite_rule(K)
    v = np.sqrt(2.0 * sigma2) * rule.nodes
    return expit(xb[..., None] + v) @ (rule.weights / np.sqrt(np.pi))


def glmm_excess_ratio(records: BinaryOutcomes, samples: GlmmSamples, K=5):
    """Per-sample hospital ratios.

    Returns
    -------
    theta, mu_a, mu_s : ndarray (M, J)
    """
    X = records.design()
    h = records.hospital
    J = records.n_hospitals
    n_j = np.bincount(h, minlength=J).astype(float)
    if np.any(n_j == 0):
        raise ValueError("every hospital needs at least one patient")
    M = len(samples)
    mu_a = np.zeros((M, J))
    mu_s = np.zeros((M, J))
    for m in range(M):
        xb = X @ samples.beta[m]
        mu_a[m] = np.bincount(h, weights=expit(xb + samples.V[m][h]), minlength=J) / n_j
        mu_s[m] = np.bincount(h, weights=standardized_binary_rate(xb, samples.sigma2[m], K),
                              minlength=J) / n_j
    if np.any(mu_s <= 0):
        raise ValueError("standardized rate underflowed to zero")
    return mu_a / mu_s, mu_a, mu_s
