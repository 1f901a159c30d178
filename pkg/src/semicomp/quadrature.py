"""Gauss-Legendre and Gauss-Hermite rules and the interval maps used by the metrics.

Node and weight computation is delegated to ``numpy.polynomial``. The
Weibull integrands have an integrable endpoint singularity ``s**(alpha-1)``
when ``alpha < 1`` (and a non-smooth ``s**alpha`` factor otherwise), which
caps plain Gauss-Legendre at algebraic accuracy. ``graded_rule`` applies the
substitution ``s = a + (b - a) * w**q`` so that the mapped integrand becomes a
polynomial-like function of ``w`` near the endpoint.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.legendre import leggauss

KINDS = ("legendre", "hermite")
# grading power: q = GRADING / alpha turns w**(q*alpha - 1) into w**(GRADING - 1)
GRADING = 2.0


@dataclass(frozen=True)
class QuadratureRule:
    kind: str
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if len(self.nodes) != len(self.weights):
            raise ValueError("nodes and weights differ in length")

    @property
    def K(self):
        return len(self.nodes)


def _check_K(K):
    if int(K) != K or K < 1:
        raise ValueError("number of quadrature nodes must be a positive integer")
    return int(K)


@lru_cache(maxsize=64)
def _leg(K):
    x, w = leggauss(K)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=64)
def _herm(K):
    x, w = hermgauss(K)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre_rule(K) -> QuadratureRule:
    """K-point Gauss-Legendre rule on [-1, 1]; exact to degree 2K - 1."""
    return QuadratureRule("legendre", *_leg(_check_K(K)))


def gauss_hermite_rule(K) -> QuadratureRule:
    """K-point Gauss-Hermite rule for weight ``exp(-x**2)`` on the real line."""
    return QuadratureRule("hermite", *_herm(_check_K(K)))


def interval_rule(a, b, K, toward="none", alpha=1.0, grading=GRADING):
    """Nodes and weights for integrating over ``[a, b]``.

    Parameters
    ----------
    toward : {"none", "left", "right"}
        Endpoint to grade toward. With ``"none"`` this is the affine map of
        Gauss-Legendre.
    alpha : float
        Exponent of the leading power singularity at that endpoint,
        integrand ~ ``|s - endpoint|**(alpha - 1)``.

    Returns
    -------
    s, w : ndarray
        ``sum(w * f(s))`` approximates the integral of ``f``. ``a`` and ``b``
        may be arrays; the node axis is last.
    """
    x, wl = _leg(_check_K(K))
    v = 0.5 * (x + 1.0)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    L = b - a
    if toward == "none":
        return a + L * v, 0.5 * L * wl
    q = max(1.0, grading / alpha)
    vq = v ** q
    jac = 0.5 * wl * q * v ** (q - 1.0)
    if toward == "left":
        return a + L * vq, L * jac
    if toward == "right":
        return b - L * vq, L * jac
    raise ValueError("toward must be 'none', 'left' or 'right'")


def hermite_grid(L, K):
    """Tensor Gauss-Hermite nodes for ``V ~ N(0, L L')`` and normalized weights.

    Nodes are ``sqrt(2) * L @ x`` over the K**d product grid and the weights
    are ``prod_k w_k / pi**(d/2)`` so they sum to one.

    Returns
    -------
    V : ndarray (K**d, d)
    w : ndarray (K**d,)
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    d = L.shape[0]
    x, w = _herm(_check_K(K))
    grids = np.meshgrid(*([x] * d), indexing="ij")
    X = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([w] * d), indexing="ij")
    W = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1) / np.pi ** (d / 2)
    return np.sqrt(2.0) * X @ L.T, W
