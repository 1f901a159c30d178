"""Synthetic cluster-correlated semi-competing risks data.

The generative model is run forward: ``V_j ~ MVN(0, Sigma_V)``,
``gamma ~ Gamma(1/theta, rate=1/theta)``, then for each patient the first
event time ``min(T1, T2)`` is drawn by inverting the total cumulative hazard
``H1 + H2`` and the cause is attributed with probability ``h1 / (h1 + h2)``
at the drawn time. After a readmission the gap to death is drawn from the
third transition's hazard under the configured clock. Administrative
censoring is applied at ``c_admin``.

Random streams: ``SeedSequence(seed).spawn(2)`` gives a hospital-effect
stream and a patient stream; the patient stream is spawned once more into one
child per hospital, so each hospital's patients depend only on the root seed
and the hospital index.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ConfigError
from .model import CLOCKS, Dataset, ModelState, TransitionParams


@dataclass
class CovariateSpec:
    name: str
    kind: str = "normal"          # "normal" or "binary"
    p: float = 0.5

    def draw(self, rng, n):
        if self.kind == "binary":
            return (rng.random(n) < self.p).astype(float)
        if self.kind == "normal":
            return rng.standard_normal(n)
        raise ConfigError(f"unknown covariate kind {self.kind!r}")


@dataclass
class SimConfig:
    """Generator settings and true parameter values.

    ``beta`` holds one coefficient vector per transition; all transitions
    share the generated design. ``frailty=False`` forces ``gamma == 1``
    (the theta -> 0 limit). An all-zero ``sigma_V`` fixes ``V == 0``.
    """

    J: int = 50
    n_per_hospital: Union[int, Tuple[int, int]] = 40
    alpha: Sequence[float] = (1.0, 1.1, 1.2)
    kappa: Sequence[float] = (0.004, 0.006, 0.01)
    beta: Sequence[Sequence[float]] = ((0.3, -0.2), (0.5, 0.3), (0.2, 0.4))
    sigma_V: Sequence[Sequence[float]] = ((0.1, 0.0, 0.0), (0.0, 0.1, 0.0), (0.0, 0.0, 0.1))
    theta: float = 0.5
    frailty: bool = True
    h3_clock: str = "semi_markov"
    covariates: List[CovariateSpec] = field(
        default_factory=lambda: [CovariateSpec("x_bin", "binary", 0.5), CovariateSpec("x_norm")])
    c_admin: float = 90.0
    seed: int = 0

    def validate(self):
        if self.J < 1:
            raise ConfigError("J must be at least 1")
        sizes = self.n_per_hospital
        lo, hi = (sizes, sizes) if np.isscalar(sizes) else tuple(sizes)
        if lo < 1 or hi < lo:
            raise ConfigError("hospital sizes must satisfy 1 <= lo <= hi")
        if not self.c_admin > 0:
            raise ConfigError("censoring time must be positive")
        if self.h3_clock not in CLOCKS:
            raise ConfigError(f"h3_clock must be one of {CLOCKS}")
        if len(self.alpha) != 3 or len(self.kappa) != 3 or len(self.beta) != 3:
            raise ConfigError("need three transitions")
        if min(self.alpha) <= 0 or min(self.kappa) <= 0:
            raise ConfigError("Weibull parameters must be positive")
        p = len(self.covariates)
        if any(len(b) != p for b in self.beta):
            raise ConfigError(f"each beta needs {p} coefficients")
        S = np.asarray(self.sigma_V, dtype=float)
        if S.shape != (3, 3) or not np.allclose(S, S.T):
            raise ConfigError("sigma_V must be a symmetric 3x3 matrix")
        if np.any(S != 0):
            try:
                np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                raise ConfigError("sigma_V must be positive definite") from None
        if self.frailty and not self.theta > 0:
            raise ConfigError("theta must be positive (set frailty=False for gamma == 1)")
        return self


@dataclass
class SimTruth:
    """True parameter values and latent draws behind a simulated dataset."""

    state: ModelState
    config: SimConfig


def _solve_total_hazard(a1, al1, a2, al2, target, n_iter=100):
    """Solve ``a1 t**al1 + a2 t**al2 = target`` for t by bisection in log t."""
    with np.errstate(divide="ignore", over="ignore"):
        hi = np.minimum((target / a1) ** (1 / al1), (target / a2) ** (1 / al2))
        lo = np.minimum((target / (2 * a1)) ** (1 / al1), (target / (2 * a2)) ** (1 / al2))
    llo, lhi = np.log(lo), np.log(hi)
    for _ in range(n_iter):
        mid = 0.5 * (llo + lhi)
        t = np.exp(mid)
        above = a1 * t ** al1 + a2 * t ** al2 > target
        lhi = np.where(above, mid, lhi)
        llo = np.where(above, llo, mid)
    return np.exp(0.5 * (llo + lhi))


def _simulate_hospital(rng, n, V, config: SimConfig, alpha, kappa, beta):
    X = np.column_stack([c.draw(rng, n) for c in config.covariates]) if config.covariates \
        else np.zeros((n, 0))
    if config.frailty:
        shape = 1.0 / config.theta
        gamma = rng.gamma(shape, 1.0 / shape, size=n)
    else:
        gamma = np.ones(n)
    e_first = rng.standard_exponential(n)
    u_cause = rng.random(n)
    e_gap = rng.standard_exponential(n)

    a = [gamma * kappa[g] * np.exp(X @ beta[g] + V[g]) for g in range(3)]
    C = config.c_admin
    H_at_C = a[0] * C ** alpha[0] + a[1] * C ** alpha[1]
    event = H_at_C > e_first
    t_first = np.full(n, C)
    if event.any():
        t_first[event] = _solve_total_hazard(a[0][event], alpha[0], a[1][event], alpha[1],
                                             e_first[event])
        t_first = np.minimum(t_first, C)
    h1 = a[0] * alpha[0] * t_first ** (alpha[0] - 1)
    h2 = a[1] * alpha[1] * t_first ** (alpha[1] - 1)
    readmit = event & (u_cause < h1 / (h1 + h2))
    death_first = event & ~readmit

    y1 = t_first.copy()
    y2 = t_first.copy()
    d1 = readmit.astype(np.int64)
    d2 = death_first.astype(np.int64)
    if readmit.any():
        t1 = t_first[readmit]
        a3 = a[2][readmit]
        if config.h3_clock == "semi_markov":
            t2 = t1 + (e_gap[readmit] / a3) ** (1 / alpha[2])
        else:
            t2 = (e_gap[readmit] / a3 + t1 ** alpha[2]) ** (1 / alpha[2])
        t2 = np.maximum(t2, np.nextafter(t1, np.inf))
        died = t2 <= C
        y2[readmit] = np.where(died, t2, C)
        d2[readmit] = died.astype(np.int64)
        # a readmission at exactly C cannot be followed by an observed gap
        at_c = y2[readmit] <= t1
        if at_c.any():
            idx = np.flatnonzero(readmit)[at_c]
            d1[idx] = 0
            d2[idx] = 0
            y1[idx] = C
            y2[idx] = C
    return X, gamma, y1, d1, y2, d2


def simulate_dataset(config: SimConfig):
    """Draw a dataset from the hierarchical illness-death model.

    Returns
    -------
    dataset : Dataset
    truth : SimTruth
        Contains the true ``ModelState`` including the drawn ``V`` and
        ``gamma``.
    """
    config.validate()
    alpha = np.asarray(config.alpha, dtype=float)
    kappa = np.asarray(config.kappa, dtype=float)
    beta = [np.asarray(b, dtype=float) for b in config.beta]
    S = np.asarray(config.sigma_V, dtype=float)

    ss_effects, ss_patients = np.random.SeedSequence(config.seed).spawn(2)
    rng_effects = np.random.default_rng(ss_effects)
    if np.any(S != 0):
        V = rng_effects.standard_normal((config.J, 3)) @ np.linalg.cholesky(S).T
    else:
        V = np.zeros((config.J, 3))
    sizes = config.n_per_hospital
    if np.isscalar(sizes):
        n_j = np.full(config.J, int(sizes))
    else:
        n_j = rng_effects.integers(sizes[0], sizes[1] + 1, size=config.J)

    parts = []
    for j, ss in enumerate(ss_patients.spawn(config.J)):
        rng = np.random.default_rng(ss)
        parts.append(_simulate_hospital(rng, int(n_j[j]), V[j], config, alpha, kappa, beta))

    X = np.vstack([p[0] for p in parts])
    gamma = np.concatenate([p[1] for p in parts])
    y1, d1, y2, d2 = (np.concatenate([p[k] for p in parts]) for k in (2, 3, 4, 5))
    hosp = np.repeat(np.arange(config.J), n_j)
    names = [c.name for c in config.covariates]
    dataset = Dataset(hosp, y1, d1, y2, d2, [X, X, X], [names] * 3,
                      hospital_labels=np.arange(config.J))
    trans = tuple(TransitionParams(alpha[g], kappa[g], beta[g]) for g in range(3))
    state = ModelState(trans, V, S, config.theta if config.frailty else 0.0, gamma,
                       config.h3_clock)
    return dataset, SimTruth(state, config)


OUTCOME_CELLS = ("readmit_and_die", "readmit_only", "die_only", "neither")


def outcome_counts(dataset: Dataset, t):
    """Counts of the four joint outcomes within ``t`` days (order of OUTCOME_CELLS)."""
    if not t > 0:
        raise ValueError("horizon must be positive")
    readmit = (dataset.delta1 == 1) & (dataset.y1 <= t)
    die = (dataset.delta2 == 1) & (dataset.y2 <= t)
    return np.array([np.sum(readmit & die), np.sum(readmit & ~die),
                     np.sum(~readmit & die), np.sum(~readmit & ~die)])


def outcome_table(dataset: Dataset, t):
    """Proportions of (readmit & die, readmit only, die only, neither) within ``t`` days."""
    counts = outcome_counts(dataset, t)
    n = max(dataset.n_patients, 1)
    return counts / n
