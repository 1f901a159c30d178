"""Cumulative incidence, standardized rates and cumulative excess ratios.

Notation: for a patient with frailty ``gamma`` in hospital ``j`` the
transition-g cumulative hazard is ``H_g(t) = c_g * t**alpha_g`` with scale
``c_g = gamma * kappa_g * exp(x_g' beta_g + V_jg)``. Everything below works
on arrays of scales so that many patients and random-effect nodes can be
evaluated at once.

Death by ``t`` (``F2``) splits into death without readmission (``f_inf``)
and death after a readmission at ``u`` (``f_U``)::

    F2(t) = int_0^t f_inf(s) ds + int_0^t int_0^s f_U(u, s) du ds
    f_inf(s)  = h2(s) exp(-H1(s) - H2(s))
    f_U(u, s) = h1(u) exp(-H1(u) - H2(u)) * h3(s | u) exp(-[H3(s | u) - H3(u | u)])

This density factorization is the standard illness-death construction and is
re-derived here. ``method="nested"`` evaluates the double integral with
nested Gauss-Legendre rules; ``method="reduced"`` first integrates ``s`` out
analytically, giving the identical quantity::

    int_0^t A(u) [1 - exp(-(H3(t | u) - H3(u | u)))] du,   A(u) = h1(u) exp(-H1(u) - H2(u))

which is a single integral and much cheaper inside the 3-d Gauss-Hermite
average needed for standardized death rates.

Time integrals are truncated where ``H1 + H2`` first exceeds ``H_CUTOFF``
(the neglected tail is below ``exp(-H_CUTOFF)``) and use graded
Gauss-Legendre nodes from :func:`semicomp.quadrature.interval_rule`.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .exceptions import NumericalError
from .model import Dataset, ModelState, PatientRecord
from .quadrature import _herm, _leg, hermite_grid, interval_rule

H_CUTOFF = 40.0
STATISTICS = ("mu_A1", "mu_S1", "theta1", "mu_A2", "mu_S2", "theta2")
# patients per vectorized block in the standardized-rate kernels
_CHUNK_ELEMS = 4_000_000


# ---------------------------------------------------------------------------
# scale-level kernels


def _upper(t, c1, c2, a1, a2):
    """Effective upper integration limit ``min(t, first s with H1 + H2 >= H_CUTOFF)``."""
    return np.minimum(t, _invert_cumhaz(H_CUTOFF, c1, c2, a1, a2))


def _pow(s, a):
    with np.errstate(divide="ignore"):
        return s ** a


def _invert_cumhaz(level, c1, c2, a1, a2, n_newton=8):
    """Solve ``c1 s**a1 + c2 s**a2 = level`` for s (inf when both scales are 0).

    Newton on ``log H`` as a function of ``log s``. That function is convex
    and increasing, so starting from the smaller single-term root (where
    ``H`` lies in ``[level, 2 level]``) the iterates decrease monotonically
    to the root.
    """
    c1, c2 = np.broadcast_arrays(np.asarray(c1, float), np.asarray(c2, float))
    lv = np.log(level)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r1 = np.where(c1 > 0, (lv - np.log(np.where(c1 > 0, c1, 1.0))) / a1, np.inf)
        r2 = np.where(c2 > 0, (lv - np.log(np.where(c2 > 0, c2, 1.0))) / a2, np.inf)
        ls = np.minimum(r1, r2)
        finite = np.isfinite(ls)
        l0 = np.where(finite, ls, 0.0)
        for _ in range(n_newton):
            H1 = c1 * np.exp(a1 * l0)
            H2 = c2 * np.exp(a2 * l0)
            H = H1 + H2
            l0 = l0 - (np.log(H) - lv) * H / (a1 * H1 + a2 * H2)
        return np.where(finite, np.exp(l0), np.inf)


# cumulative-hazard levels at which panels end (the last panel ends at the cutoff)
_PANEL_LEVELS = (2.0, 8.0)
# node count from which mixed shapes get the doubled first-panel grading
_STRONG_GRADING_K = 8


@lru_cache(maxsize=256)
def _templates(K, lead_alpha, right_alpha, n_panels):
    """Unit-interval nodes/weights of the panels, stacked (n_panels, K)."""
    s1, w1 = interval_rule(0.0, 1.0, K, "none")
    ts, tw = [s1] * n_panels, [w1] * n_panels
    if lead_alpha is not None:
        ts[0], tw[0] = interval_rule(0.0, 1.0, K, "left", lead_alpha)
    if right_alpha is not None:
        ts[-1], tw[-1] = interval_rule(0.0, 1.0, K, "right", right_alpha)
    ts, tw = np.stack(ts), np.stack(tw)
    ts.setflags(write=False)
    tw.setflags(write=False)
    return ts, tw


def _analytic_at_zero(*exponents):
    return all(float(a).is_integer() and a > 0 for a in exponents)


def _panel_rule(t, c1, c2, a1, a2, K, lead_alpha, right_alpha=None, truncate=True):
    """Panelled rule on ``[0, tb]`` adapted to the decay of ``exp(-H1 - H2)``.

    Panel ``i`` ends at ``e_i = max(e_{i-1}, min(s(H = level_i), (e_{i-1} + tb)/2))``
    for the levels in ``_PANEL_LEVELS``; the last panel ends at ``tb``. The
    first panel is graded toward 0 for the ``s**(lead_alpha - 1)``
    singularity and the last one toward ``tb`` when ``right_alpha`` is given.
    Nodes have shape ``c1.shape + (n_panels K,)``.
    When all exponents are integers the integrand is analytic at 0 and the
    first panel is left ungraded (grading would only cost accuracy). When a
    cumulative-hazard shape is smaller than ``lead_alpha`` and ``K >= 8``
    the grading for ``lead_alpha / 2`` is used instead. Below 8 nodes the
    stronger grading spends too many nodes near 0 and is less accurate.
    """
    if _analytic_at_zero(lead_alpha, a1, a2):
        lead_alpha = None
    elif K >= _STRONG_GRADING_K and min(a1, a2) < lead_alpha:
        # exp(-c s**a) with a smaller shape is the roughest factor; doubling the
        # grading keeps the leading power polynomial and smooths the next term
        lead_alpha = 0.5 * lead_alpha
    tb = _upper(t, c1, c2, a1, a2) if truncate else np.broadcast_to(float(t), np.shape(c1))
    ends, prev = [], np.zeros(np.shape(tb))
    for level in _PANEL_LEVELS:
        prev = np.maximum(prev, np.minimum(_invert_cumhaz(level, c1, c2, a1, a2),
                                           0.5 * (prev + tb)))
        ends.append(prev)
    ends.append(tb)
    n = len(ends)
    ts, tw = _templates(int(K), None if lead_alpha is None else float(lead_alpha),
                        None if right_alpha is None else float(right_alpha), n)
    edges = np.stack([np.zeros(np.shape(tb))] + ends, axis=-1)
    start = edges[..., :-1, None]
    length = np.diff(edges, axis=-1)[..., None]
    shape = np.shape(tb) + (n * K,)
    return (start + length * ts).reshape(shape), (length * tw).reshape(shape)


def cif_from_scales(t, c1, c2, alpha1, alpha2, K=5, which=1):
    """``int_0^t h_which(s) exp(-H1(s) - H2(s)) ds`` for arrays of scales.

    ``which=1`` gives the readmission CIF, ``which=2`` the CIF of death
    without prior readmission.
    """
    c1, c2 = np.broadcast_arrays(np.asarray(c1, float), np.asarray(c2, float))
    if t <= 0:
        return np.zeros(c1.shape)
    a_lead = alpha1 if which == 1 else alpha2
    s, w = _panel_rule(t, c1, c2, alpha1, alpha2, K, a_lead)
    H1, H2, ls = _cumhaz_pair(s, c1, c2, alpha1, alpha2)
    # h_g(s) = alpha_g H_g(s) / s; nodes are interior so s > 0
    h = alpha1 * H1 if which == 1 else alpha2 * H2
    return np.sum(w * h / s * np.exp(-(H1 + H2)), axis=-1)


def _cumhaz_pair(s, c1, c2, a1, a2):
    """``(c1 s**a1, c2 s**a2, log s)`` for nodes s with trailing axis."""
    with np.errstate(divide="ignore"):
        ls = np.log(s)
    return c1[..., None] * np.exp(a1 * ls), c2[..., None] * np.exp(a2 * ls), ls


def survival_from_scales(t, c1, c2, alpha1, alpha2):
    """Probability of neither event by ``t``: ``exp(-H1(t) - H2(t))``."""
    return np.exp(-(np.asarray(c1) * t ** alpha1 + np.asarray(c2) * t ** alpha2))


def _h3_increment(c3, alpha3, u, s, clock):
    """``H3(s | u) - H3(u | u)``."""
    if clock == "semi_markov":
        return c3 * _pow(np.maximum(s - u, 0.0), alpha3)
    return c3 * (_pow(s, alpha3) - _pow(u, alpha3))


def _readmit_quadrature(t, c1, c2, alpha, clock, K):
    """Nodes/weights for ``int_0^t A(u) g(u) du`` with g vanishing like (t-u)**a3."""
    a1, a2, a3 = alpha
    # 1 - exp(-c3 (t-u)**a3) ~ (t-u)**a3 at u -> t
    right = a3 + 1.0 if clock == "semi_markov" else None
    return _panel_rule(t, c1, c2, a1, a2, K, a1, right)


def _readmit_death_reduced(t, c1, c2, c3, alpha, clock, K):
    """``int_0^t A(u) [1 - exp(-dH3(u, t))] du`` with A the readmission density."""
    a1, a2, a3 = alpha
    u, w = _readmit_quadrature(t, c1, c2, alpha, clock, K)
    c1e, c2e, c3e = c1[..., None], c2[..., None], c3[..., None]
    A = c1e * a1 * _pow(u, a1 - 1.0) * np.exp(-(c1e * _pow(u, a1) + c2e * _pow(u, a2)))
    return np.sum(w * A * -np.expm1(-_h3_increment(c3e, a3, u, t, clock)), axis=-1)


def _readmit_death_nested(t, c1, c2, c3, alpha, clock, K, graded=True):
    """``int_0^t int_0^s f_U(u, s) du ds`` by nested Gauss-Legendre."""
    a1, a2, a3 = alpha
    c1e, c2e, c3e = c1[..., None, None], c2[..., None, None], c3[..., None, None]
    if graded:
        # the outer range cannot be truncated: death after an early readmission
        s, ws = _panel_rule(t, c1, c2, a1, a2, K, a1 + a3, truncate=False)
        half = 0.5 * s
        u_l, w_l = interval_rule(0.0, half, K, "left", a1)          # (..., 3K, K)
        if clock == "semi_markov":
            u_r, w_r = interval_rule(half, s, K, "right", a3)
        else:
            u_r, w_r = interval_rule(half, s, K, "none")
        u = np.concatenate([u_l, u_r], axis=-1)
        wu = np.concatenate([w_l, w_r], axis=-1)
    else:
        # affine maps: s = t (x + 1)/2, u = s (x' + 1)/2
        x, wl = _leg(K)
        xt = x + 1.0
        s = np.broadcast_to(t * xt / 2.0, c1.shape + (K,))
        ws = np.broadcast_to(t * wl / 2.0, c1.shape + (K,))
        u = s[..., None] * xt / 2.0
        wu = s[..., None] * wl / 2.0
    se = s[..., None]
    A = c1e * a1 * _pow(u, a1 - 1.0) * np.exp(-(c1e * _pow(u, a1) + c2e * _pow(u, a2)))
    if clock == "semi_markov":
        h3 = c3e * a3 * _pow(se - u, a3 - 1.0)
    else:
        h3 = c3e * a3 * _pow(se, a3 - 1.0) * np.ones_like(u)
    fU = A * h3 * np.exp(-_h3_increment(c3e, a3, u, se, clock))
    inner = np.sum(wu * fU, axis=-1)
    return np.sum(ws * inner, axis=-1)


def death_cdf_from_scales(t, c1, c2, c3, alpha, clock="semi_markov", K=5, method="reduced",
                          graded=True):
    """``F2(t)`` for arrays of transition scales.

    Parameters
    ----------
    alpha : sequence of three shapes
    method : {"reduced", "nested"}
    graded : bool
        Only for ``method="nested"``. ``False`` uses the plain affine maps
        ``s = t x~/2``, ``u = t x~ x~'/4`` with ``x~ = x + 1``.
    """
    c1, c2, c3 = np.broadcast_arrays(*(np.asarray(c, dtype=float) for c in (c1, c2, c3)))
    if t <= 0:
        return np.zeros(c1.shape)
    a1, a2, a3 = (float(a) for a in alpha)
    if method == "reduced":
        second = _readmit_death_reduced(t, c1, c2, c3, (a1, a2, a3), clock, K)
    elif method == "nested":
        second = _readmit_death_nested(t, c1, c2, c3, (a1, a2, a3), clock, K, graded)
    else:
        raise ValueError("method must be 'reduced' or 'nested'")
    if method == "nested" and not graded:
        x, wl = _leg(K)
        s = t * (x + 1.0) / 2.0
        c1e, c2e = c1[..., None], c2[..., None]
        f_inf = c2e * a2 * _pow(s, a2 - 1.0) * np.exp(-(c1e * _pow(s, a1) + c2e * _pow(s, a2)))
        first = np.sum(t * wl / 2.0 * f_inf, axis=-1)
    else:
        first = cif_from_scales(t, c1, c2, a1, a2, K, which=2)
    return np.clip(first + second, 0.0, 1.0)


# ---------------------------------------------------------------------------
# patient-level API


def _scales(record: PatientRecord, state: ModelState, j, gamma, V=None):
    V = state.V[j] if V is None else V
    return [gamma * tp.kappa * np.exp(float(record.x(g + 1) @ tp.beta) + V[g])
            for g, tp in enumerate(state.trans)]


def cif_readmission(t1, patient: PatientRecord, state: ModelState, j=None, gamma=1.0, K=5):
    """Cumulative incidence of readmission by ``t1`` with death as a competing risk."""
    if t1 < 0:
        raise ValueError("time must be non-negative")
    j = patient.hospital_id if j is None else j
    c = _scales(patient, state, j, gamma)
    return float(cif_from_scales(t1, c[0], c[1], state.alpha[0], state.alpha[1], K))


def cif_death_first(t, patient: PatientRecord, state: ModelState, j=None, gamma=1.0, K=5):
    """Probability of death without prior readmission by ``t``."""
    if t < 0:
        raise ValueError("time must be non-negative")
    j = patient.hospital_id if j is None else j
    c = _scales(patient, state, j, gamma)
    return float(cif_from_scales(t, c[0], c[1], state.alpha[0], state.alpha[1], K, which=2))


def cdf_death(t2, patient: PatientRecord, state: ModelState, j=None, gamma=1.0, K=5,
              method="nested", graded=True):
    """Probability of death by ``t2`` through either path."""
    if t2 < 0:
        raise ValueError("time must be non-negative")
    j = patient.hospital_id if j is None else j
    c = _scales(patient, state, j, gamma)
    return float(death_cdf_from_scales(t2, c[0], c[1], c[2], state.alpha, state.h3_clock, K,
                                       method, graded))


def _cholesky(sigma_V):
    S = np.asarray(sigma_V, dtype=float)
    if not np.any(S):
        return None
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericalError(f"Cholesky factorization of Sigma_V failed:\n{S}") from None


def _std_readmission(t, b1, b2, alpha, L, K):
    """Gauss-Hermite average over (V1, V2) of F1 for base scales b (N,)."""
    if L is None:
        return cif_from_scales(t, b1, b2, alpha[0], alpha[1], K)
    V, W = hermite_grid(L[:2, :2], K)
    e1, e2 = np.exp(V[:, 0]), np.exp(V[:, 1])
    out = np.empty(len(b1))
    step = max(1, _CHUNK_ELEMS // (len(W) * K))
    for lo in range(0, len(b1), step):
        sl = slice(lo, lo + step)
        F = cif_from_scales(t, b1[sl, None] * e1, b2[sl, None] * e2, alpha[0], alpha[1], K)
        out[sl] = F @ W
    return out


class _FrailtyMixture:
    """``g(y) = sum_b w_b (1 - exp(-exp(y + sd x_b)))`` on a table, cubic Hermite interpolation.

    ``(x_b, w_b)`` is the normalized K-point Gauss-Hermite rule, so ``g`` is
    the Hermite average over the last random-effect direction. Tabulating
    the exact derivative as well makes the interpolation error
    ``O(h**4)`` (about 1e-13 here). Outside the table ``g`` equals the
    two-term expansion ``z - z**2 / 2`` (below) or 1 (above) to double
    precision.
    """

    def __init__(self, sd, K, n_grid=8192):
        x, w = _herm(K)
        self.x, self.w = np.sqrt(2.0) * sd * x, w / np.sqrt(np.pi)
        self.lo = -20.0 - np.max(np.abs(self.x))
        self.hi = 4.0 + np.max(np.abs(self.x))
        self.h = (self.hi - self.lo) / (n_grid - 1)
        grid = self.lo + self.h * np.arange(n_grid)
        self.f, self.df = self._exact(grid)
        f0, f1 = self.f[:-1], self.f[1:]
        d0, d1 = self.h * self.df[:-1], self.h * self.df[1:]
        # cubic Hermite in Horner form: ((c3 r + c2) r + c1) r + c0
        self.coef = np.stack([f0, d0, -3 * f0 - 2 * d0 + 3 * f1 - d1,
                              2 * f0 + d0 - 2 * f1 + d1], axis=-1)
        self.m1 = float(self.w @ np.exp(self.x))
        self.m2 = float(self.w @ np.exp(2 * self.x))

    def _exact(self, y):
        z = np.exp(y[..., None] + self.x)
        e = np.exp(-z)
        return (-np.expm1(-z)) @ self.w, (z * e) @ self.w

    def __call__(self, y):
        u = (np.clip(y, self.lo, self.hi) - self.lo) / self.h
        i = np.minimum(u.astype(np.int64), len(self.coef) - 1)
        r = u - i
        c = self.coef[i]
        out = ((c[..., 3] * r + c[..., 2]) * r + c[..., 1]) * r + c[..., 0]
        below = y < self.lo
        if np.any(below):
            z = np.exp(y[below])
            out[below] = z * self.m1 - 0.5 * z * z * self.m2
        out[y > self.hi] = 1.0
        return out


def _std_death(t, b1, b2, b3, alpha, clock, L, K):
    """Gauss-Hermite average over V of F2 (reduced form) for base scales (N,).

    The node grid is ordered with the V3 direction last. H1 and H2 only vary
    over the first two axes, and along the last axis ``V3`` moves by
    ``sqrt(2) L33 x``, which enters the integrand only through
    ``y = log(c3 dH3)``. The average over that axis is therefore a fixed
    function of ``y`` (see ``_FrailtyMixture``) evaluated per (k1, k2, u).
    ``_std_death_direct`` sums the full grid instead.
    """
    if L is None:
        return death_cdf_from_scales(t, b1, b2, b3, alpha, clock, K)
    a1, a2, a3 = alpha
    V, W = hermite_grid(L[:2, :2], K)                      # (K2, 2) first two directions
    e1, e2 = np.exp(V[:, 0]), np.exp(V[:, 1])
    # mean of V3 given the first two standard-normal coordinates
    x12 = np.linalg.solve(L[:2, :2], V.T).T
    le3 = x12 @ L[2, :2]                                   # (K2,) log scale factor of c3
    g = _FrailtyMixture(L[2, 2], K)
    out = np.empty(len(b1))
    step = max(1, _CHUNK_ELEMS // (len(W) * (len(_PANEL_LEVELS) + 1) * K * 4))
    for lo in range(0, len(b1), step):
        sl = slice(lo, lo + step)
        c1, c2 = b1[sl, None] * e1, b2[sl, None] * e2        # (n, K2)
        first = cif_from_scales(t, c1, c2, a1, a2, K, which=2)
        u, w = _readmit_quadrature(t, c1, c2, alpha, clock, K)     # (n, K2, 3K)
        H1, H2, lu = _cumhaz_pair(u, c1, c2, a1, a2)
        WA = w * a1 * H1 / u * np.exp(-(H1 + H2))
        if clock == "semi_markov":
            ld = a3 * np.log(t - u)
        else:
            ld = np.log(t ** a3 - np.exp(a3 * lu))
        y = np.log(b3[sl])[:, None, None] + le3[None, :, None] + ld
        second = np.sum(WA * g(y), axis=-1)
        F = np.minimum(first + second, 1.0)
        out[sl] = F @ W
    return out


def _std_death_direct(t, b1, b2, b3, alpha, clock, L, K):
    """Full-grid version of ``_std_death`` (reference implementation).

    The node grid is ordered with the V3 direction last, so H1 and H2 only
    vary over the first two axes and are computed once per (k1, k2).
    """
    if L is None:
        return death_cdf_from_scales(t, b1, b2, b3, alpha, clock, K)
    a1, a2, a3 = alpha
    V, W = hermite_grid(L, K)
    K2 = K * K
    V = V.reshape(K2, K, 3)
    W = W.reshape(K2, K)
    e1, e2 = np.exp(V[:, 0, 0]), np.exp(V[:, 0, 1])
    e3 = np.exp(V[:, :, 2])                                  # (K2, K)
    out = np.empty(len(b1))
    step = max(1, _CHUNK_ELEMS // (K2 * K * (len(_PANEL_LEVELS) + 1) * K))
    for lo in range(0, len(b1), step):
        sl = slice(lo, lo + step)
        c1, c2 = b1[sl, None] * e1, b2[sl, None] * e2        # (n, K2)
        first = cif_from_scales(t, c1, c2, a1, a2, K, which=2)
        u, w = _readmit_quadrature(t, c1, c2, alpha, clock, K)     # (n, K2, 3K)
        c1e, c2e = c1[..., None], c2[..., None]
        WA = w * c1e * a1 * _pow(u, a1 - 1.0) * np.exp(-(c1e * _pow(u, a1) + c2e * _pow(u, a2)))
        d0 = _h3_increment(1.0, a3, u, t, clock)              # (n, K2, 3K)
        c3 = b3[sl, None, None] * e3                          # (n, K2, K)
        E = -np.expm1(-c3[..., None] * d0[:, :, None, :])     # (n, K2, K, 3K)
        second = np.einsum("nabu,nau->nab", E, WA)
        F = np.minimum(first[..., None] + second, 1.0)
        out[sl] = np.einsum("nab,ab->n", F, W)
    return out


def _base_scales(dataset: Dataset, state: ModelState, gamma):
    return [gamma * tp.kappa * np.exp(dataset.X[g] @ tp.beta) for g, tp in enumerate(state.trans)]


def standardized_rate(kind, t, patient: PatientRecord, state: ModelState, gamma=1.0, K=5):
    """Expectation of F1 (``kind="readmission"``) or F2 (``"death"``) over ``V ~ N(0, Sigma_V)``.

    Uses the Cholesky nodes ``V = sqrt(2) L x`` and weights normalized by
    ``pi**(-d/2)``; an all-zero ``Sigma_V`` is treated as ``V == 0``.
    """
    L = _cholesky(state.sigma_V)
    b = [np.array([c]) for c in _scales(patient, state, 0, gamma, V=np.zeros(3))]
    if kind == "readmission":
        return float(_std_readmission(t, b[0], b[1], state.alpha, L, K)[0])
    if kind == "death":
        return float(_std_death(t, b[0], b[1], b[2], state.alpha, state.h3_clock, L, K)[0])
    raise ValueError("kind must be 'readmission' or 'death'")


# ---------------------------------------------------------------------------
# excess ratios


@dataclass
class RatioSamples:
    """Per-sample hospital-level rates and ratios.

    Each statistic array has shape ``(M, J, T)``.
    """

    times: np.ndarray
    hospital_labels: np.ndarray
    mu_A1: np.ndarray
    mu_S1: np.ndarray
    mu_A2: np.ndarray
    mu_S2: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.theta1 = self.mu_A1 / self.mu_S1
            self.theta2 = self.mu_A2 / self.mu_S2

    @property
    def n_samples(self):
        return self.mu_A1.shape[0]

    def get(self, name):
        if name not in STATISTICS:
            raise KeyError(name)
        return getattr(self, name)

    def undefined(self):
        """Boolean mask (M, J, T) of samples where a standardized rate is zero."""
        return (self.mu_S1 <= 0) | (self.mu_S2 <= 0)


def _check_grid(times):
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size == 0 or np.any(~(times > 0)) or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be positive and strictly increasing")
    return times


def _ratio_one_sample(dataset, state: ModelState, times, K, gamma_one):
    gamma = np.ones(dataset.n_patients) if gamma_one else state.gamma
    b = _base_scales(dataset, state, gamma)
    alpha = state.alpha
    L = _cholesky(state.sigma_V)
    h = dataset.hospital
    eV = np.exp(state.V[h])
    c = [b[g] * eV[:, g] for g in range(3)]
    J = dataset.n_hospitals
    n_j = np.bincount(h, minlength=J).astype(float)
    out = np.zeros((4, J, len(times)))
    for k, t in enumerate(times):
        fA1 = cif_from_scales(t, c[0], c[1], alpha[0], alpha[1], K)
        fA2 = death_cdf_from_scales(t, c[0], c[1], c[2], alpha, state.h3_clock, K)
        fS1 = _std_readmission(t, b[0], b[1], alpha, L, K)
        fS2 = _std_death(t, b[0], b[1], b[2], alpha, state.h3_clock, L, K)
        for r, f in enumerate((fA1, fS1, fA2, fS2)):
            out[r, :, k] = np.bincount(h, weights=f, minlength=J) / n_j
    return out


def excess_ratios(dataset: Dataset, samples, times=(90.0,), K=5, gamma_one=False, threads=1):
    """Cumulative excess readmission and mortality ratios for every retained sample.

    ``mu_A`` averages each patient's CIF at the sampled ``V_j`` and ``mu_S``
    averages the Gauss-Hermite expectation over ``V ~ N(0, Sigma_V)``; both
    use the sampled frailties unless ``gamma_one``. Samples are independent
    tasks, so results do not depend on ``threads``.

    Parameters
    ----------
    samples : PosteriorSamples or sequence of ModelState
    """
    times = _check_grid(times)
    states = samples.states() if hasattr(samples, "states") else list(samples)
    if not states:
        raise ValueError("need at least one posterior sample")
    if np.any(dataset.hospital_sizes == 0):
        raise ValueError("every hospital needs at least one patient")

    def task(st):
        return _ratio_one_sample(dataset, st, times, K, gamma_one)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            res = list(ex.map(task, states))
    else:
        res = [task(st) for st in states]
    arr = np.stack(res, axis=0)                              # (M, 4, J, T)
    return RatioSamples(times, dataset.hospital_labels, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


def posterior_ratio_summary(ratios: RatioSamples, statistics=STATISTICS, level=0.95):
    """Median and central interval per (statistic, hospital, time).

    Quantiles use linear interpolation between order statistics
    (``numpy.quantile`` default). Returns a dict ``name -> (median, lo, hi)``
    with arrays of shape (J, T).
    """
    if ratios.n_samples < 1:
        raise ValueError("need at least one sample")
    q = [0.5, (1 - level) / 2, 1 - (1 - level) / 2]
    out = {}
    for name in statistics:
        med, lo, hi = np.quantile(ratios.get(name), q, axis=0)
        out[name] = (med, lo, hi)
    return out
