"""Input checks shared by the estimator wrappers."""

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

from .exceptions import DataError
from .model import Dataset


def check_hospital(hospital, n=None):
    """1-d array of hospital identifiers (any hashable scalar type)."""
    if hospital is None:
        raise DataError("hospital identifiers are required")
    h = np.asarray(hospital)
    if h.ndim != 1:
        raise DataError("hospital must be one-dimensional")
    if n is not None and len(h) != n:
        raise DataError(f"hospital has {len(h)} entries, expected {n}")
    return h


def check_survival_outcomes(y):
    """``(N, 4)`` array with columns y1, delta1, y2, delta2."""
    y = check_array(y, ensure_2d=True, dtype=float, ensure_min_samples=0)
    if y.shape[1] != 4:
        raise DataError("outcomes need four columns: y1, delta1, y2, delta2")
    for k in (1, 3):
        if np.any((y[:, k] != 0) & (y[:, k] != 1)):
            raise DataError("event indicators must be 0 or 1")
    return y


def as_dataset(X, y=None, hospital=None, covariate_names=None) -> Dataset:
    """Accept a ready ``Dataset`` or build one from arrays.

    ``X`` is either one ``(N, p)`` design shared by the three transitions or
    a sequence of three designs.
    """
    if isinstance(X, Dataset):
        return X
    if isinstance(X, (list, tuple)) and len(X) == 3:
        Xs = [check_array(x, ensure_min_samples=0, ensure_min_features=0) for x in X]
    else:
        Xs = [check_array(X, ensure_min_samples=0, ensure_min_features=0)] * 3
    if y is None:
        raise DataError("outcomes y are required when X is not a Dataset")
    y = check_survival_outcomes(y)
    h = check_hospital(hospital, len(y))
    check_consistent_length(y, h, *Xs)
    names = covariate_names
    if names is not None and not isinstance(names[0], (list, tuple)):
        names = [list(names)] * 3
    return Dataset(h, y[:, 0], y[:, 1].astype(np.int64), y[:, 2], y[:, 3].astype(np.int64),
                   Xs, names)


def check_sample_matrix(theta, name="theta"):
    """``(M, J)`` finite posterior draws."""
    theta = check_array(theta, ensure_2d=False, dtype=float)
    theta = np.atleast_2d(theta)
    if theta.ndim != 2:
        raise DataError(f"{name} must be a matrix of draws (M, J)")
    return theta
