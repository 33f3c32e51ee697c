"""Small dense linear-algebra helpers shared by the estimation modules."""

from __future__ import annotations

import numpy as np
import scipy.linalg as la

from .exceptions import SingularMatrixError

MAX_CONDITION = 1e12


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def frozen(a: np.ndarray) -> np.ndarray:
    """Return a read-only float copy of ``a``."""
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def check_symmetric(a: np.ndarray, name: str, rtol: float = 1e-12) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    if np.abs(a - a.T).max() > rtol * scale:
        raise ValueError(f"{name} is not symmetric")


def as_spd(a, name: str = "matrix", max_condition: float | None = None) -> np.ndarray:
    """Validate a symmetric positive definite matrix and return it symmetrized.

    With ``max_condition`` set, matrices whose condition number exceeds it are
    rejected with :class:`SingularMatrixError` instead of being regularized.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    check_symmetric(a, name)
    a = symmetrize(a)
    evals = np.linalg.eigvalsh(a)
    if evals[0] <= 0:
        raise SingularMatrixError(f"{name} is not positive definite (min eigenvalue {evals[0]:.3e})")
    if max_condition is not None and evals[-1] / evals[0] > max_condition:
        raise SingularMatrixError(
            f"{name} is numerically singular (condition number {evals[-1] / evals[0]:.3e})"
        )
    return a


def as_psd(a, name: str = "matrix", tol: float = 1e-10) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    check_symmetric(a, name)
    a = symmetrize(a)
    evals = np.linalg.eigvalsh(a)
    top = max(evals[-1], 0.0)
    if evals[0] < -tol * max(top, 1.0):
        raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {evals[0]:.3e})")
    return a


def cholesky(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor; raises SingularMatrixError instead of LinAlgError."""
    try:
        return la.cholesky(a, lower=True, check_finite=False)
    except la.LinAlgError as exc:
        raise SingularMatrixError(f"{name} is not positive definite") from exc


def logdet(a: np.ndarray, name: str = "matrix") -> float:
    """log|A| for symmetric positive definite A via the Cholesky diagonal."""
    if a.shape[0] == 0:
        return 0.0
    c = cholesky(a, name)
    d = np.diag(c)
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise SingularMatrixError(f"{name} is singular")
    return 2.0 * float(np.sum(np.log(d)))


def spd_inverse(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    c = cholesky(a, name)
    inv = la.cho_solve((c, True), np.eye(a.shape[0]), check_finite=False)
    return symmetrize(inv)


def spd_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix."""
    evals, evecs = np.linalg.eigh(symmetrize(a))
    evals = np.clip(evals, 0.0, None)
    return symmetrize((evecs * np.sqrt(evals)) @ evecs.T)


def qr_positive(a: np.ndarray, mode: str = "reduced") -> np.ndarray:
    """Q factor of ``a`` with the sign convention diag(R) >= 0.

    Works on a single matrix or a stack ``(..., p, k)``; the fixed sign makes
    retractions deterministic.
    """
    q, r = np.linalg.qr(a, mode=mode)
    k = min(a.shape[-2], a.shape[-1])
    d = np.sign(np.diagonal(r, axis1=-2, axis2=-1)[..., :k])
    d = np.where(d == 0, 1.0, d)
    q = q.copy()
    q[..., :k] *= d[..., None, :]
    return q


def orthogonal_complement(gamma: np.ndarray) -> np.ndarray:
    """Orthonormal basis of span(gamma)^perp from a complete QR decomposition."""
    p, k = gamma.shape
    if k == 0:
        return np.eye(p)
    if k >= p:
        return np.zeros((p, 0))
    q = qr_positive(gamma, mode="complete")
    return q[:, k:]
