"""Hierarchical illness-death model with Weibull baseline hazards.

Three transitions share a patient frailty ``gamma`` and a hospital random
effect vector ``V_j``::

    h_g(t) = gamma * h0_g(u) * exp(x_g' beta_g + V_jg),   g = 1, 2, 3

with ``h0_g(u) = alpha_g * kappa_g * u**(alpha_g - 1)``. For the readmission
(g=1) and death-before-readmission (g=2) transitions ``u = t``. For death
after readmission (g=3) the clock is either ``markov`` (``u = t``) or
``semi_markov`` (``u = t - t1``).

The observed-data likelihood is the standard four-case illness-death
factorization (re-derived here; it is not written out in the source
methodology, which defers to the original model paper).
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import DataError

CLOCKS = ("markov", "semi_markov")


def _check_weibull(alpha, kappa):
    alpha = np.asarray(alpha, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    if np.any(~(alpha > 0)) or np.any(~(kappa > 0)):
        raise ValueError("Weibull shape and rate must be positive")
    return alpha, kappa


def weibull_hazard(alpha, kappa, t):
    """Weibull hazard ``alpha * kappa * t**(alpha - 1)`` for ``t > 0``."""
    alpha, kappa = _check_weibull(alpha, kappa)
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("hazard is only defined for t > 0")
    out = alpha * kappa * t ** (alpha - 1.0)
    return out if out.ndim else float(out)


def weibull_cum_hazard(alpha, kappa, t):
    """Weibull cumulative hazard ``kappa * t**alpha`` for ``t >= 0``."""
    alpha, kappa = _check_weibull(alpha, kappa)
    t = np.asarray(t, dtype=float)
    if np.any(~(t >= 0)) or np.any(~np.isfinite(t)):
        raise ValueError("cumulative hazard needs finite t >= 0")
    out = kappa * t ** alpha
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class PatientRecord:
    """One semi-competing risks observation.

    ``y1 = min(T1, T2, C)`` and ``y2 = min(T2, C)``; ``hospital_id`` is the
    zero-based hospital code used to index ``ModelState.V``.
    """

    hospital_id: int
    y1: float
    delta1: int
    y2: float
    delta2: int
    x1: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x2: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x3: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("x1", "x2", "x3"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        problem = record_problem(self.y1, self.delta1, self.y2, self.delta2)
        if problem:
            raise DataError(problem)

    def x(self, g):
        return (self.x1, self.x2, self.x3)[g - 1]


def record_problem(y1, d1, y2, d2):
    """Return a message describing why an observation is invalid, or ''."""
    y1, y2 = float(y1), float(y2)
    if d1 not in (0, 1) or d2 not in (0, 1):
        return "event indicators must be 0 or 1"
    if not (np.isfinite(y1) and np.isfinite(y2)):
        return "times must be finite"
    if y1 < 0 or y2 < 0:
        return "times must be non-negative"
    if y1 > y2:
        return f"y1={y1!r} exceeds y2={y2!r}"
    if d1 == 1 and not y1 < y2:
        return (f"readmission and death/censoring coincide (y1 = y2 = {y1!r}); "
                "the illness-death density is undefined on the diagonal, "
                "jitter y2 by a small positive amount")
    if d1 == 0 and y1 != y2:
        return "without readmission y1 must equal y2"
    if d1 == 1 and y1 == 0:
        return "readmission at time 0 is not allowed"
    if d2 == 1 and y2 == 0:
        return "death at time 0 is not allowed"
    return ""


def _design(x, n):
    x = np.asarray(x, dtype=float)
    if x.ndim == 2 and x.shape[0] == n:
        return x
    if x.size == 0:
        return x.reshape(n, x.shape[-1] if x.ndim == 2 else 0)
    return x.reshape(n, -1)


class Dataset:
    """Columnar semi-competing risks data.

    Parameters
    ----------
    hospital : array of int, shape (N,)
        Hospital labels. Stored as zero-based codes in ``hospital`` with the
        original labels in ``hospital_labels``.
    y1, delta1, y2, delta2 : arrays, shape (N,)
    X : sequence of three arrays, each (N, p_g)
        Transition-specific design matrices.
    covariate_names : sequence of three lists of str, optional
    """

    def __init__(self, hospital, y1, delta1, y2, delta2, X, covariate_names=None,
                 hospital_labels=None, validate=True):
        hospital = np.asarray(hospital)
        if hospital_labels is None:
            hospital_labels, codes = np.unique(hospital, return_inverse=True)
        else:
            hospital_labels = np.asarray(hospital_labels)
            codes = hospital.astype(np.int64)
        self.hospital = np.asarray(codes, dtype=np.int64).reshape(-1)
        self.hospital_labels = hospital_labels
        self.y1 = np.asarray(y1, dtype=float).reshape(-1)
        self.y2 = np.asarray(y2, dtype=float).reshape(-1)
        self.delta1 = np.asarray(delta1).astype(np.int64).reshape(-1)
        self.delta2 = np.asarray(delta2).astype(np.int64).reshape(-1)
        n = self.y1.shape[0]
        if len(X) != 3:
            raise DataError("need one design matrix per transition")
        self.X = tuple(_design(x, n) for x in X)
        if covariate_names is None:
            covariate_names = [[f"v{k}" for k in range(x.shape[1])] for x in self.X]
        self.covariate_names = tuple(list(c) for c in covariate_names)
        if validate:
            self.validate()

    # -- construction -------------------------------------------------------

    @classmethod
    def from_records(cls, records: Sequence[PatientRecord], n_hospitals=None):
        records = list(records)
        p = [len(records[0].x(g)) if records else 0 for g in (1, 2, 3)]
        X = [np.array([r.x(g) for r in records], dtype=float).reshape(len(records), p[g - 1])
             for g in (1, 2, 3)]
        hosp = np.array([r.hospital_id for r in records], dtype=np.int64)
        J = n_hospitals if n_hospitals is not None else (int(hosp.max()) + 1 if len(hosp) else 0)
        return cls(hosp, [r.y1 for r in records], [r.delta1 for r in records],
                   [r.y2 for r in records], [r.delta2 for r in records], X,
                   hospital_labels=np.arange(J))

    @classmethod
    def empty(cls, p=(0, 0, 0), n_hospitals=0):
        return cls(np.zeros(0, dtype=np.int64), [], [], [], [],
                   [np.zeros((0, k)) for k in p], hospital_labels=np.arange(n_hospitals))

    # -- properties ---------------------------------------------------------

    @property
    def n_patients(self):
        return self.y1.shape[0]

    @property
    def n_hospitals(self):
        return len(self.hospital_labels)

    @property
    def hospital_sizes(self):
        return np.bincount(self.hospital, minlength=self.n_hospitals)

    def __len__(self):
        return self.n_patients

    def record(self, i) -> PatientRecord:
        return PatientRecord(int(self.hospital[i]), float(self.y1[i]), int(self.delta1[i]),
                             float(self.y2[i]), int(self.delta2[i]),
                             self.X[0][i].copy(), self.X[1][i].copy(), self.X[2][i].copy())

    def records(self):
        return [self.record(i) for i in range(self.n_patients)]

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.hospital[idx], self.y1[idx], self.delta1[idx], self.y2[idx],
                       self.delta2[idx], [x[idx] for x in self.X], self.covariate_names,
                       hospital_labels=self.hospital_labels, validate=False)

    def validate(self):
        """Check every record; raise DataError naming the offending rows."""
        n = self.n_patients
        for arr in (self.delta1, self.y2, self.delta2, self.hospital):
            if arr.shape[0] != n:
                raise DataError("columns have different lengths")
        if n and (self.hospital.min() < 0 or self.hospital.max() >= self.n_hospitals):
            raise DataError("hospital code out of range")
        errors = []
        for i in range(n):
            msg = record_problem(self.y1[i], self.delta1[i], self.y2[i], self.delta2[i])
            if msg:
                errors.append(f"row {i}: {msg}")
        for g, x in enumerate(self.X, start=1):
            bad = np.flatnonzero(~np.isfinite(x).all(axis=1))
            errors.extend(f"row {i}: non-finite covariate for transition {g}" for i in bad)
        if errors:
            head = "; ".join(errors[:10])
            more = f" (+{len(errors) - 10} more)" if len(errors) > 10 else ""
            raise DataError(f"invalid records: {head}{more}")

    def equals(self, other) -> bool:
        return (np.array_equal(self.hospital_labels[self.hospital], other.hospital_labels[other.hospital])
                and np.array_equal(self.y1, other.y1) and np.array_equal(self.y2, other.y2)
                and np.array_equal(self.delta1, other.delta1)
                and np.array_equal(self.delta2, other.delta2)
                and all(np.array_equal(a, b) for a, b in zip(self.X, other.X)))


# --------------------------------------------------------------------------
# parameters


@dataclass
class TransitionParams:
    alpha: float
    kappa: float
    beta: np.ndarray

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if not (self.alpha > 0 and self.kappa > 0):
            raise ValueError("alpha and kappa must be positive")
        if not np.all(np.isfinite(self.beta)):
            raise ValueError("beta must be finite")


@dataclass
class ModelState:
    """One parameter configuration of the hierarchical model.

    ``theta == 0`` denotes the degenerate no-frailty model (``gamma == 1``).
    """

    trans: tuple
    V: np.ndarray
    sigma_V: np.ndarray
    theta: float
    gamma: np.ndarray
    h3_clock: str = "semi_markov"

    def __post_init__(self):
        self.trans = tuple(self.trans)
        self.V = np.asarray(self.V, dtype=float).reshape(-1, 3)
        self.sigma_V = np.asarray(self.sigma_V, dtype=float).reshape(3, 3)
        self.gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        if self.h3_clock not in CLOCKS:
            raise ValueError(f"h3_clock must be one of {CLOCKS}")

    @classmethod
    def initial(cls, dataset: Dataset, h3_clock="semi_markov", frailty=True):
        """Default starting point: beta=0, alpha=kappa=1, V=0, Sigma_V=I, theta=1, gamma=1."""
        trans = tuple(TransitionParams(1.0, 1.0, np.zeros(x.shape[1])) for x in dataset.X)
        return cls(trans, np.zeros((dataset.n_hospitals, 3)), np.eye(3),
                   1.0 if frailty else 0.0, np.ones(dataset.n_patients), h3_clock)

    @property
    def alpha(self):
        return np.array([tp.alpha for tp in self.trans])

    @property
    def kappa(self):
        return np.array([tp.kappa for tp in self.trans])

    @property
    def beta(self):
        return [tp.beta for tp in self.trans]

    def copy(self):
        return ModelState(tuple(TransitionParams(t.alpha, t.kappa, t.beta.copy()) for t in self.trans),
                          self.V.copy(), self.sigma_V.copy(), self.theta, self.gamma.copy(),
                          self.h3_clock)

    def check(self):
        """Raise ValueError if a state invariant is violated."""
        s = self.sigma_V
        if not np.allclose(s, s.T, rtol=0, atol=1e-12 * max(1.0, np.abs(s).max())):
            raise ValueError("sigma_V is not symmetric")
        try:
            np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            raise ValueError("sigma_V is not positive definite") from None
        if not self.theta >= 0 or not np.isfinite(self.theta):
            raise ValueError("theta must be positive (0 for the no-frailty model)")
        if np.any(~(self.gamma > 0)):
            raise ValueError("frailties must be positive")
        for tp in self.trans:
            TransitionParams(tp.alpha, tp.kappa, tp.beta)
        return self


# --------------------------------------------------------------------------
# hazards and likelihood


def transition_hazard(g, t, t1, x, state: ModelState, j, gamma=1.0):
    """Hazard of transition ``g`` at time ``t`` for a patient in hospital ``j``.

    ``t1`` (readmission time) is required for ``g == 3`` and must be < ``t``.
    """
    if g not in (1, 2, 3):
        raise ValueError("transition must be 1, 2 or 3")
    if not gamma > 0:
        raise ValueError("frailty must be positive")
    tp = state.trans[g - 1]
    u = t
    if g == 3:
        if t1 is None:
            raise ValueError("transition 3 needs the readmission time t1")
        if not t > t1:
            raise ValueError("transition 3 hazard needs t > t1")
        if state.h3_clock == "semi_markov":
            u = t - t1
    eta = float(np.dot(np.asarray(x, dtype=float), tp.beta)) + state.V[j, g - 1]
    return gamma * weibull_hazard(tp.alpha, tp.kappa, u) * np.exp(eta)


class TransitionRows:
    """Per-transition risk-set layout of a dataset.

    For each transition the patients that contribute, their event indicator,
    the time at which the baseline hazard is evaluated when the event occurs,
    and the interval ``(lo, hi]`` of the baseline clock spent at risk, so the
    cumulative baseline hazard increment is ``kappa * (hi**alpha - lo**alpha)``.
    """

    def __init__(self, dataset: Dataset, h3_clock: str):
        if h3_clock not in CLOCKS:
            raise ValueError(f"h3_clock must be one of {CLOCKS}")
        y1, y2, d1, d2 = dataset.y1, dataset.y2, dataset.delta1, dataset.delta2
        n = dataset.n_patients
        all_rows = np.arange(n)
        r3 = np.flatnonzero(d1 == 1)
        self.rows = (all_rows, all_rows, r3)
        self.event = (d1.astype(float), ((1 - d1) * d2).astype(float), d2[r3].astype(float))
        zeros = np.zeros(n)
        if h3_clock == "semi_markov":
            gap = y2[r3] - y1[r3]
            t_event3, lo3, hi3 = gap, np.zeros(len(r3)), gap
        else:
            t_event3, lo3, hi3 = y2[r3], y1[r3], y2[r3]
        t_event = (y1, y1, t_event3)
        self.lo = (zeros, zeros, lo3)
        self.hi = (y1, y1, hi3)
        with np.errstate(divide="ignore"):
            self.log_t_event = tuple(np.where(e > 0, np.log(np.where(e > 0, t, 1.0)), 0.0)
                                     for e, t in zip(self.event, t_event))
            self.log_lo = tuple(np.log(v) for v in self.lo)
            self.log_hi = tuple(np.log(v) for v in self.hi)
        self.X = tuple(x[r] for x, r in zip(dataset.X, self.rows))
        self.hospital = tuple(dataset.hospital[r] for r in self.rows)
        self.n_patients = n
        self.h3_clock = h3_clock

    def baseline(self, g, alpha, kappa):
        """Return (log baseline hazard at event rows, baseline hazard increment)."""
        i = g - 1
        log_h0 = np.log(alpha) + np.log(kappa) + (alpha - 1.0) * self.log_t_event[i]
        dH0 = kappa * (np.exp(alpha * self.log_hi[i]) - np.exp(alpha * self.log_lo[i]))
        return log_h0, dH0

    def linear_predictor(self, g, beta, V):
        i = g - 1
        return self.X[i] @ beta + V[self.hospital[i], i]


def loglik_by_patient(dataset: Dataset, state: ModelState, rows: Optional[TransitionRows] = None):
    """Vector of per-patient log-likelihood contributions at ``state``."""
    rows = rows if rows is not None else TransitionRows(dataset, state.h3_clock)
    n = dataset.n_patients
    out = np.zeros(n)
    gamma = state.gamma
    for g in (1, 2, 3):
        tp = state.trans[g - 1]
        r = rows.rows[g - 1]
        if len(r) == 0:
            continue
        log_h0, dH0 = rows.baseline(g, tp.alpha, tp.kappa)
        eta = rows.linear_predictor(g, tp.beta, state.V)
        ev = rows.event[g - 1]
        gam = gamma[r]
        with np.errstate(divide="ignore"):
            contrib = np.where(ev > 0, np.log(gam) + log_h0 + eta, 0.0) - gam * np.exp(eta) * dH0
        out += np.bincount(r, weights=contrib, minlength=n)
    return out


def log_likelihood_patient(record: PatientRecord, state: ModelState, gamma=1.0):
    """Observed-data log density of one patient given ``(gamma, V_j)``.

    Cases by (delta1, delta2)::

        (1,1): log h1(y1) + log h3(y2|y1) - H1(y1) - H2(y1) - [H3 increment]
        (1,0): log h1(y1)                 - H1(y1) - H2(y1) - [H3 increment]
        (0,1): log h2(y2) - H1(y2) - H2(y2)
        (0,0):            - H1(y2) - H2(y2)
    """
    ds = Dataset([record.hospital_id], [record.y1], [record.delta1], [record.y2], [record.delta2],
                 [record.x1[None, :], record.x2[None, :], record.x3[None, :]],
                 hospital_labels=np.arange(max(state.V.shape[0], record.hospital_id + 1)))
    st = ModelState(state.trans, state.V, state.sigma_V, state.theta, np.array([gamma]),
                    state.h3_clock)
    return float(loglik_by_patient(ds, st)[0])


def log_likelihood_total(dataset: Dataset, state: ModelState):
    """Sum of per-patient log-likelihoods (frailties taken from ``state.gamma``)."""
    if dataset.n_patients == 0:
        return 0.0
    return float(np.sum(loglik_by_patient(dataset, state)))


def integrated_hazard(dataset: Dataset, state: ModelState, rows: Optional[TransitionRows] = None,
                      unit_frailty=True):
    """Total integrated hazard per patient across all applicable transitions.

    With ``unit_frailty`` the frailty multiplier is left out, which is the
    quantity entering the frailty full conditional.
    """
    rows = rows if rows is not None else TransitionRows(dataset, state.h3_clock)
    n = dataset.n_patients
    lam = np.zeros(n)
    for g in (1, 2, 3):
        tp = state.trans[g - 1]
        r = rows.rows[g - 1]
        if len(r) == 0:
            continue
        _, dH0 = rows.baseline(g, tp.alpha, tp.kappa)
        eta = rows.linear_predictor(g, tp.beta, state.V)
        lam += np.bincount(r, weights=np.exp(eta) * dH0, minlength=n)
    return lam if unit_frailty else lam * state.gamma
