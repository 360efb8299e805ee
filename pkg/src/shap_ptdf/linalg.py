"""Least squares via column-pivoted QR with an explicit rank check."""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .exceptions import NumericalError


def lstsq_qr(A, b, column_names=None, rtol=None):
    """Solve ``min ||A @ coef - b||_2`` for full-column-rank ``A``.

    Raises :class:`NumericalError` naming the offending column when ``A`` is
    rank deficient.  ``b`` may be a vector or a matrix of right-hand sides.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n, k = A.shape
    names = list(column_names) if column_names is not None else [f"column {j}" for j in range(k)]
    if n < k:
        raise NumericalError(f"need at least {k} rows for {k} unknowns, got {n}")
    q, r, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if rtol is None:
        rtol = max(n, k) * np.finfo(float).eps
    rank = int(np.sum(diag > rtol * diag[0])) if k and diag[0] > 0 else 0
    if rank < k:
        bad = sorted(names[j] for j in piv[rank:])
        raise NumericalError(f"design matrix is rank deficient ({rank} < {k}); dependent: {', '.join(bad)}")
    coef_piv = scipy.linalg.solve_triangular(r, q.T @ b)
    coef = np.empty_like(coef_piv)
    coef[piv] = coef_piv
    return coef
