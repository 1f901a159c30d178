"""Hospital classification by minimizing an approximate Bayes risk.

Two schemes are supported:

``topk``
    ``Phi_j = 1{rank(theta_j1) < gamma (J + 1)}`` with ascending ranks (rank 1
    is the smallest ratio, i.e. the best performer). The number of selected
    hospitals is therefore ``k = ceil(gamma (J + 1)) - 1`` (clipped to
    ``[0, J]``) for every posterior sample and every candidate.
``quadrant``
    Category 1: both ratios > 1; 2: readmission > 1, mortality <= 1;
    3: readmission <= 1, mortality > 1; 4: both <= 1.

Loss: ``L(Phi*, Phi0) = (1/J) sum_j w(Phi0_j, Phi*_j)`` where ``w(c, c')`` is
the penalty for choosing ``c'`` when the truth is ``c``. This covers the
unit-penalty misclassification rate for ``topk`` and the weighted quadrant
loss. Because the loss is a sum over hospitals, the approximate Bayes risk
``BR(Phi*) = mean_m L(Phi*, Phi^(m))`` only depends on the per-hospital
marginal category frequencies ``P[j, c]``; all minimizers below evaluate it
through that matrix. :func:`bayes_risk_hat` keeps the direct sample average.

Ties are broken by ascending hospital index in the classifiers and toward the
lexicographically smallest label vector among candidates whose risk agrees to
``TIE_TOL``.
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import ConfigError

SCHEMES = ("topk", "quadrant")
TIE_TOL = 1e-12
MAX_ENUMERATION = 10 ** 6


@dataclass
class Classification:
    labels: np.ndarray
    scheme: str
    gamma_frac: Optional[float] = None
    boundary_tie: bool = False

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")

    @property
    def J(self):
        return len(self.labels)


@dataclass
class LossSpec:
    """Loss specification.

    For ``topk`` only the symmetric ``penalty`` is used. For ``quadrant``
    ``weights[c - 1, c' - 1] = w(c, c')``; the default is the unit-penalty
    matrix ``1 - I``.
    """

    scheme: str
    weights: Optional[np.ndarray] = None
    penalty: float = 1.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if self.scheme == "quadrant":
            W = np.ones((4, 4)) - np.eye(4) if self.weights is None else \
                np.asarray(self.weights, dtype=float)
            if W.shape != (4, 4):
                raise ConfigError("quadrant weights must be a 4x4 matrix")
        else:
            if not self.penalty >= 0:
                raise ConfigError("penalty must be non-negative")
            W = self.penalty * (np.ones((2, 2)) - np.eye(2))
        if np.any(np.diag(W) != 0) or np.any(W < 0) or not np.all(np.isfinite(W)):
            raise ConfigError("weights must be finite, non-negative with a zero diagonal")
        self.weights = W

    @property
    def n_categories(self):
        return self.weights.shape[0]

    def index(self, labels):
        """Map labels to 0-based category indices."""
        labels = np.asarray(labels, dtype=np.int64)
        return labels if self.scheme == "topk" else labels - 1

    def label(self, index):
        index = np.asarray(index, dtype=np.int64)
        return index if self.scheme == "topk" else index + 1


# ---------------------------------------------------------------------------
# classification functions


def topk_count(J, gamma_frac):
    """Number of hospitals with ``rank < gamma (J + 1)``."""
    return int(min(max(math.ceil(gamma_frac * (J + 1)) - 1, 0), J))


def _ranks(values):
    """1-based ascending ranks, ties broken by index."""
    order = np.lexsort((np.arange(len(values)), values))
    ranks = np.empty(len(values), dtype=np.int64)
    ranks[order] = np.arange(1, len(values) + 1)
    return ranks, order


def classify_topk(theta1, gamma_frac) -> Classification:
    """``Phi_j = 1`` iff the ascending rank of ``theta1_j`` is below ``gamma (J + 1)``.

    ``boundary_tie`` is set when equal values straddle the cut.
    """
    theta1 = np.asarray(theta1, dtype=float)
    if theta1.ndim != 1:
        raise ValueError("expected a vector of ratios")
    if np.any(np.isnan(theta1)):
        raise ValueError("ratios contain NaN")
    if not 0 < gamma_frac < 1:
        raise ValueError("gamma_frac must lie in (0, 1)")
    J = len(theta1)
    ranks, order = _ranks(theta1)
    labels = (ranks < gamma_frac * (J + 1)).astype(np.int64)
    k = int(labels.sum())
    tie = 0 < k < J and theta1[order[k - 1]] == theta1[order[k]]
    return Classification(labels, "topk", gamma_frac, bool(tie))


def classify_quadrant(theta1, theta2) -> Classification:
    """Joint readmission/mortality category (1-4); a ratio equal to 1 counts as ``<= 1``."""
    t1 = np.asarray(theta1, dtype=float)
    t2 = np.asarray(theta2, dtype=float)
    if t1.shape != t2.shape:
        raise ValueError("theta1 and theta2 differ in shape")
    hi1, hi2 = t1 > 1.0, t2 > 1.0
    labels = np.where(hi1, np.where(hi2, 1, 2), np.where(hi2, 3, 4))
    return Classification(labels, "quadrant")


def classify_samples(scheme, theta1, theta2=None, gamma_frac=None):
    """Apply the classification function to every posterior sample.

    ``theta1`` and ``theta2`` have shape (M, J); returns labels (M, J).
    """
    theta1 = np.atleast_2d(np.asarray(theta1, dtype=float))
    if scheme == "topk":
        if gamma_frac is None:
            raise ValueError("topk needs gamma_frac")
        return np.stack([classify_topk(row, gamma_frac).labels for row in theta1])
    if scheme == "quadrant":
        return classify_quadrant(theta1, np.atleast_2d(theta2)).labels
    raise ValueError(f"scheme must be one of {SCHEMES}")


def plugin_classification(scheme, theta1, theta2=None, gamma_frac=None) -> Classification:
    """Classification obtained by plugging in the posterior medians of the ratios."""
    m1 = np.median(np.atleast_2d(theta1), axis=0)
    if scheme == "topk":
        return classify_topk(m1, gamma_frac)
    return classify_quadrant(m1, np.median(np.atleast_2d(theta2), axis=0))


# ---------------------------------------------------------------------------
# loss and Bayes risk


def _labels_of(phi):
    if isinstance(phi, Classification):
        return phi.labels, phi.scheme
    return np.asarray(phi, dtype=np.int64), None


def loss(phi_star, phi_0, spec: LossSpec):
    """``(1/J) sum_j w(phi_0_j, phi_star_j)``."""
    a, sa = _labels_of(phi_star)
    b, sb = _labels_of(phi_0)
    for s in (sa, sb):
        if s is not None and s != spec.scheme:
            raise ValueError("classification scheme does not match the loss")
    if a.shape != b.shape:
        raise ValueError("label vectors differ in length")
    if a.size == 0:
        return 0.0
    return float(np.mean(spec.weights[spec.index(b), spec.index(a)]))


def bayes_risk_hat(phi_star, phi_samples, spec: LossSpec):
    """``(1/M) sum_m L(phi_star, phi^(m))`` evaluated sample by sample."""
    a, _ = _labels_of(phi_star)
    S = np.atleast_2d(np.asarray(phi_samples, dtype=np.int64))
    if S.shape[0] < 1:
        raise ValueError("need at least one sample")
    per_sample = spec.weights[spec.index(S), spec.index(a)[None, :]].mean(axis=1)
    return float(np.mean(per_sample))


def marginal_probabilities(phi_samples, spec: LossSpec):
    """``P[j, c]``: fraction of samples placing hospital j in category c."""
    S = spec.index(np.atleast_2d(np.asarray(phi_samples, dtype=np.int64)))
    M, J = S.shape
    C = spec.n_categories
    P = np.zeros((J, C))
    for c in range(C):
        P[:, c] = np.sum(S == c, axis=0) / M
    return P


def expected_cost(P, spec: LossSpec):
    """``cost[j, c'] = sum_c P[j, c] w(c, c') / J``; BR(phi) = sum_j cost[j, phi_j]."""
    J = P.shape[0]
    return (P @ spec.weights) / max(J, 1)


# ---------------------------------------------------------------------------
# candidate spaces


@dataclass
class CandidateSpace:
    """Hospitals frozen at a category (``fixed`` maps j -> label) and the free rest."""

    J: int
    scheme: str
    fixed: dict = field(default_factory=dict)
    k: Optional[int] = None
    infeasible_freeze: bool = False

    @property
    def free(self):
        return [j for j in range(self.J) if j not in self.fixed]

    def size(self):
        n_free = len(self.free)
        if self.scheme == "quadrant":
            return 4 ** n_free
        ones = sum(1 for v in self.fixed.values() if v == 1)
        need = self.k - ones
        return math.comb(n_free, need) if 0 <= need <= n_free else 0

    def contains(self, labels):
        labels = np.asarray(labels)
        if any(labels[j] != v for j, v in self.fixed.items()):
            return False
        return self.scheme != "topk" or int(labels.sum()) == self.k


def full_space(J, scheme, gamma_frac=None):
    k = topk_count(J, gamma_frac) if scheme == "topk" and gamma_frac is not None else None
    return CandidateSpace(J, scheme, {}, k)


def reduce_candidates(phi_samples, epsilon=0.01, scheme="quadrant", gamma_frac=None):
    """Freeze hospitals whose marginal probability of one category exceeds ``1 - epsilon``.

    For ``topk`` a freeze pattern that is inconsistent with the fixed top-set
    size cannot contain any candidate; in that case nothing is frozen and
    ``infeasible_freeze`` is set.
    """
    if not 0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    spec = LossSpec(scheme)
    S = np.atleast_2d(np.asarray(phi_samples, dtype=np.int64))
    J = S.shape[1]
    space = full_space(J, scheme, gamma_frac)
    if scheme == "topk" and gamma_frac is None:
        # recover k from the samples (every sample has the same count)
        space.k = int(S[0].sum())
    P = marginal_probabilities(S, spec)
    fixed = {}
    for j in range(J):
        c = int(np.argmax(P[j]))
        if P[j, c] > 1.0 - epsilon:
            fixed[j] = int(spec.label(c))
    space.fixed = fixed
    if scheme == "topk" and space.size() == 0:
        space.fixed = {}
        space.infeasible_freeze = True
    return space


def _enumerate(space: CandidateSpace, chunk=65536):
    """Yield arrays (n, J) of candidate label vectors in lexicographic order."""
    free = space.free
    base = np.zeros(space.J, dtype=np.int64)
    for j, v in space.fixed.items():
        base[j] = v
    if space.scheme == "quadrant":
        it = itertools.product((1, 2, 3, 4), repeat=len(free))
        while True:
            block = list(itertools.islice(it, chunk))
            if not block:
                return
            out = np.tile(base, (len(block), 1))
            if free:
                out[:, free] = np.asarray(block, dtype=np.int64)
            yield out
    else:
        need = space.k - sum(1 for v in space.fixed.values() if v == 1)
        if need < 0 or need > len(free):
            return
        # combinations of positions set to 0 among free hospitals, in order,
        # enumerates the 0/1 vectors in increasing lexicographic order
        n_zero = len(free) - need
        it = itertools.combinations(range(len(free)), n_zero)
        free_arr = np.asarray(free, dtype=np.int64)
        while True:
            block = list(itertools.islice(it, chunk))
            if not block:
                return
            out = np.tile(base, (len(block), 1))
            if free:
                vals = np.ones((len(block), len(free)), dtype=np.int64)
                if n_zero:
                    zi = np.asarray(block, dtype=np.int64)
                    np.put_along_axis(vals, zi, 0, axis=1)
                out[:, free_arr] = vals
            yield out


@dataclass
class MinimizerResult:
    classification: Classification
    risk: float
    n_sweeps: int = 0
    n_updates: int = 0
    history: list = field(default_factory=list)


def brute_force_minimizer(phi_samples, spec: LossSpec, space: Optional[CandidateSpace] = None,
                          gamma_frac=None, max_size=MAX_ENUMERATION) -> MinimizerResult:
    """Exact minimizer of the approximate Bayes risk over a candidate space.

    Refuses spaces larger than ``max_size``.
    """
    S = np.atleast_2d(np.asarray(phi_samples, dtype=np.int64))
    J = S.shape[1]
    if space is None:
        space = full_space(J, spec.scheme, gamma_frac)
        if spec.scheme == "topk" and gamma_frac is None:
            space.k = int(S[0].sum())
    size = space.size()
    if size > max_size:
        raise ValueError(f"candidate space has {size} elements, above the enumeration bound "
                         f"{max_size}")
    if size == 0:
        raise ValueError("candidate space is empty")
    cost = expected_cost(marginal_probabilities(S, spec), spec)
    best, best_risk = None, np.inf
    for block in _enumerate(space):
        idx = spec.index(block)
        r = cost[np.arange(J)[None, :], idx].sum(axis=1)
        i = int(np.argmin(r))
        # enumeration is lexicographic, so the first candidate within the
        # tolerance of the block minimum is the smallest tied vector
        i = int(np.flatnonzero(r <= r[i] + TIE_TOL)[0])
        if r[i] < best_risk - TIE_TOL:
            best, best_risk = block[i].copy(), float(r[i])
    cls = Classification(best, spec.scheme, gamma_frac)
    return MinimizerResult(cls, bayes_risk_hat(best, S, spec))


def sequential_minimizer(phi_samples, spec: LossSpec, start, seed=0,
                         space: Optional[CandidateSpace] = None, max_sweeps=10_000,
                         gamma_frac=None) -> MinimizerResult:
    """Sequential single-hospital updating of the classification.

    Each sweep visits the hospitals in a fresh random order. For ``quadrant``
    all other categories of the visited hospital are tried; for ``topk`` the
    visited hospital's label is flipped together with a randomly chosen
    partner of the opposite label so that the top-set size is kept. A move is
    accepted if it lowers the risk by more than ``TIE_TOL``; for ``quadrant``
    a move to a smaller category at equal risk (within ``TIE_TOL``) is also
    accepted, which matches the brute-force rule of returning the
    lexicographically smallest tied vector. The algorithm stops after a sweep
    without updates.
    """
    S = np.atleast_2d(np.asarray(phi_samples, dtype=np.int64))
    J = S.shape[1]
    labels, _ = _labels_of(start)
    labels = labels.copy()
    if len(labels) != J:
        raise ValueError("start classification has the wrong length")
    fixed = space.fixed if space is not None else {}
    if space is not None and not space.contains(labels):
        raise ValueError("start classification lies outside the candidate space")
    cost = expected_cost(marginal_probabilities(S, spec), spec)
    idx = spec.index(labels)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    risk = float(cost[np.arange(J), idx].sum())
    history = [risk]
    movable = np.array([j not in fixed for j in range(J)])
    n_sweeps = n_updates = 0
    while n_sweeps < max_sweeps:
        n_sweeps += 1
        updated = False
        for j in rng.permutation(J):
            if not movable[j]:
                continue
            if spec.scheme == "quadrant":
                row = cost[j]
                best = int(np.flatnonzero(row <= row.min() + TIE_TOL)[0])
                delta = row[best] - row[idx[j]]
                if delta < -TIE_TOL or (best < idx[j] and delta <= TIE_TOL):
                    idx[j] = best
                    risk += delta
                    updated = True
            else:
                partners = np.flatnonzero((idx != idx[j]) & movable)
                if len(partners) == 0:
                    continue
                p = int(partners[rng.integers(len(partners))])
                delta = (cost[j, 1 - idx[j]] - cost[j, idx[j]]
                         + cost[p, 1 - idx[p]] - cost[p, idx[p]])
                if delta < -TIE_TOL:
                    idx[j], idx[p] = 1 - idx[j], 1 - idx[p]
                    risk += delta
                    updated = True
            if updated and history[-1] != risk:
                if risk > history[-1] + TIE_TOL:
                    raise AssertionError("Bayes risk increased on an accepted move")
                if risk < history[-1]:
                    history.append(risk)
                    n_updates += 1
        if not updated:
            break
    final = spec.label(idx)
    cls = Classification(final, spec.scheme, gamma_frac)
    return MinimizerResult(cls, bayes_risk_hat(final, S, spec), n_sweeps, n_updates, history)


def multi_start_minimizer(phi_samples, spec: LossSpec, starts: Sequence, seeds: Sequence[int],
                          space: Optional[CandidateSpace] = None, gamma_frac=None):
    """Run the sequential minimizer from each (start, seed) pair; keep the lowest risk.

    Ties keep the earliest start.
    """
    best = None
    for st, sd in zip(starts, seeds):
        res = sequential_minimizer(phi_samples, spec, st, sd, space, gamma_frac=gamma_frac)
        if best is None or res.risk < best.risk - TIE_TOL:
            best = res
    return best


def random_start(J, scheme, rng, gamma_frac=None, k=None):
    """A uniformly random valid classification."""
    if scheme == "quadrant":
        return Classification(rng.integers(1, 5, size=J), scheme)
    k = topk_count(J, gamma_frac) if k is None else k
    labels = np.zeros(J, dtype=np.int64)
    labels[rng.choice(J, size=k, replace=False)] = 1
    return Classification(labels, scheme, gamma_frac)


def posterior_mode_categories(phi_samples, spec: LossSpec):
    """Per-hospital most frequent category (ties to the smallest label)."""
    P = marginal_probabilities(phi_samples, spec)
    return spec.label(np.argmax(P, axis=1))
