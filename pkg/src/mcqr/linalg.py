"""Small shared linear-algebra helpers."""

import numpy as np

from .errors import NumericalError

# Relative ridge added to the diagonal when a Cholesky factorization fails.
CHOLESKY_JITTER = 1e-10


def robust_cholesky(a, jitter=CHOLESKY_JITTER):
    """Lower Cholesky factor of ``a`` with a single jitter retry.

    If the plain factorization fails, ``jitter * trace(a)`` is added to the
    diagonal and the factorization is attempted once more.  A second failure
    raises :class:`NumericalError` carrying the offending matrix.
    """
    a = np.asarray(a, dtype=float)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    bumped = a + jitter * np.trace(a) * np.eye(a.shape[0])
    try:
        return np.linalg.cholesky(bumped)
    except np.linalg.LinAlgError:
        raise NumericalError(
            "matrix is not positive definite (jitter retry failed)", matrix=a
        ) from None


def is_spd(a, jitter=0.0):
    """True when ``a`` is symmetric positive definite (via Cholesky)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(a).max())):
        return False
    try:
        np.linalg.cholesky(a + jitter * np.eye(a.shape[0]))
        return True
    except np.linalg.LinAlgError:
        return False
