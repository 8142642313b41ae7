"""Shared dense linear-algebra helpers."""
from __future__ import annotations

import numpy as np
import scipy.linalg


class IndefiniteError(RuntimeError):
    """A matrix required to be positive definite failed to factorize."""


def symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def is_psd(mat: np.ndarray, tol: float = 1e-12) -> bool:
    """Check positive semidefiniteness by attempted factorization.

    A diagonal shift of `tol` times the dominant diagonal scale stands in
    for a pivot tolerance; symmetric input is assumed.
    """
    n = mat.shape[0]
    if n == 0:
        return True
    scale = max(1.0, float(np.max(np.abs(np.diag(mat)))))
    try:
        np.linalg.cholesky(mat + tol * scale * np.eye(n))
        return True
    except np.linalg.LinAlgError:
        return False


class Cholesky:
    """Lower-triangular Cholesky factor with solve support."""

    def __init__(self, factor: np.ndarray):
        self.factor = factor

    @property
    def n(self) -> int:
        return self.factor.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.n == 0:
            return np.zeros_like(rhs)
        return scipy.linalg.cho_solve((self.factor, True), rhs)


def chol_or_raise(mat: np.ndarray, reg: float, label: str) -> Cholesky:
    """Factorize `mat` (which already carries `reg` on its diagonal).

    On failure one retry is made with the regularization bumped to 10x reg;
    a second failure raises IndefiniteError.
    """
    if mat.shape[0] == 0:
        return Cholesky(np.zeros((0, 0)))
    try:
        return Cholesky(np.linalg.cholesky(mat))
    except np.linalg.LinAlgError:
        pass
    if reg > 0.0:
        bumped = mat + 9.0 * reg * np.eye(mat.shape[0])
        try:
            return Cholesky(np.linalg.cholesky(bumped))
        except np.linalg.LinAlgError:
            pass
    raise IndefiniteError(f"{label}: matrix not positive definite "
                          f"(retry with 10x regularization failed)")
