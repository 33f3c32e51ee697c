"""Moment-based envelope objects and objective functions.

Everything here is a pure function of its inputs. Matrices stored on the
dataclasses are read-only copies, so instances can be shared freely.

The central quantities, for a semi-orthogonal ``p x k`` basis ``G`` and a
moment pair ``(M, U)``, are

* the full-Grassmannian objective
  ``J(G) = log|G' M G| + log|G' (M + U)^{-1} G|``,
* the one-direction objective on the unit sphere
  ``phi(w) = log(w' M w) + log(w' (M + U)^{-1} w)``,
* the quasi-likelihood
  ``l(M, theta) = log|M| + tr[M^{-1} {M_hat + (theta_hat - theta)(theta_hat - theta)'}]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg as la

from . import _linalg
from ._linalg import frozen, logdet, orthogonal_complement
from .exceptions import SingularMatrixError

__all__ = [
    "EnvelopeBasis",
    "MomentPair",
    "EnvelopeFit",
    "objective_fg",
    "objective_1d_step",
    "objective_1d_gradient",
    "deflate",
    "quasi_loglik",
    "envelope_fit_from_basis",
    "subspace_distance",
]


@dataclass(frozen=True)
class EnvelopeBasis:
    """A point on the Grassmannian, stored as a semi-orthogonal ``p x k`` matrix.

    ``k = 0`` is a valid basis (the zero subspace) and is stored as a
    ``p x 0`` array.
    """

    gamma: np.ndarray
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        if g.ndim != 2:
            raise ValueError("gamma must be a p x k matrix")
        if self.check and g.shape[1] > 0:
            err = np.linalg.norm(g.T @ g - np.eye(g.shape[1]))
            if err > 1e-10:
                raise ValueError(f"basis is not semi-orthogonal (||G'G - I|| = {err:.2e})")
        object.__setattr__(self, "gamma", frozen(g))

    @classmethod
    def empty(cls, p: int) -> "EnvelopeBasis":
        return cls(np.zeros((p, 0)))

    @classmethod
    def from_span(cls, a) -> "EnvelopeBasis":
        """Orthonormalize the columns of ``a`` (assumed full column rank)."""
        a = np.asarray(a, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.shape[1] == 0:
            return cls.empty(a.shape[0])
        return cls(_linalg.qr_positive(a))

    @property
    def p(self) -> int:
        return self.gamma.shape[0]

    @property
    def k(self) -> int:
        return self.gamma.shape[1]

    @property
    def projection(self) -> np.ndarray:
        return self.gamma @ self.gamma.T

    def complement(self) -> "EnvelopeBasis":
        """An orthonormal basis of the orthogonal complement."""
        return EnvelopeBasis(orthogonal_complement(self.gamma), check=False)


@dataclass(frozen=True)
class MomentPair:
    """The sample moment pair ``(M_hat, U_hat)`` with its sample size.

    Parameters
    ----------
    m_hat : (p, p) array
        Symmetric positive definite. Rejected when its condition number
        exceeds ``1e12``.
    u_hat : (p, p) array
        Symmetric positive semidefinite.
    n : int
        Sample size, used only by the selection penalty.
    theta_hat : (p, q) array, optional
        A square root of ``u_hat``: when given, ``u_hat`` must equal
        ``theta_hat @ theta_hat.T``. Needed by the quasi-likelihood.
    beta_hat : (p, r) array, optional
        The standard coefficient estimate that the envelope projection is
        applied to. Defaults to ``theta_hat``. For families where ``U_hat``
        is a weighted outer product of the coefficients (response envelopes,
        GLMs) the two differ by a right factor but share a column space.
    """

    m_hat: np.ndarray
    u_hat: np.ndarray
    n: int
    theta_hat: Optional[np.ndarray] = None
    beta_hat: Optional[np.ndarray] = None

    def __post_init__(self):
        m = _linalg.as_spd(self.m_hat, "m_hat", max_condition=_linalg.MAX_CONDITION)
        u = _linalg.as_psd(self.u_hat, "u_hat")
        if m.shape != u.shape:
            raise ValueError(f"m_hat {m.shape} and u_hat {u.shape} differ in shape")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        object.__setattr__(self, "m_hat", frozen(m))
        object.__setattr__(self, "u_hat", frozen(u))
        object.__setattr__(self, "n", int(self.n))
        if self.theta_hat is not None:
            t = np.asarray(self.theta_hat, dtype=float)
            if t.ndim == 1:
                t = t[:, None]
            if t.shape[0] != m.shape[0]:
                raise ValueError("theta_hat must have p rows")
            tt = t @ t.T
            scale = max(np.linalg.norm(u), np.linalg.norm(tt), 1e-300)
            if np.linalg.norm(u - tt) > 1e-10 * scale:
                raise ValueError("u_hat must equal theta_hat @ theta_hat.T")
            object.__setattr__(self, "theta_hat", frozen(t))
        beta = self.beta_hat if self.beta_hat is not None else self.theta_hat
        if beta is not None:
            beta = np.asarray(beta, dtype=float)
            if beta.ndim == 1:
                beta = beta[:, None]
            if beta.shape[0] != m.shape[0]:
                raise ValueError("beta_hat must have p rows")
            object.__setattr__(self, "beta_hat", frozen(beta))

    @classmethod
    def from_theta(cls, m_hat, theta_hat, n: int) -> "MomentPair":
        """Build the pair with ``U_hat = theta_hat theta_hat'``."""
        t = np.asarray(theta_hat, dtype=float)
        if t.ndim == 1:
            t = t[:, None]
        return cls(m_hat, t @ t.T, n, theta_hat=t)

    @property
    def dim(self) -> int:
        return self.m_hat.shape[0]

    @property
    def q(self) -> int:
        return 0 if self.theta_hat is None else self.theta_hat.shape[1]

    @cached_property
    def mu_hat(self) -> np.ndarray:
        """``M_hat + U_hat``."""
        return frozen(self.m_hat + self.u_hat)

    @cached_property
    def a_inv(self) -> np.ndarray:
        """``(M_hat + U_hat)^{-1}``."""
        return frozen(_linalg.spd_inverse(self.mu_hat, "m_hat + u_hat"))

    @cached_property
    def floor(self) -> float:
        """``log|M_hat| - log|M_hat + U_hat|``, the objective value at ``k = p``."""
        return logdet(self.m_hat, "m_hat") - logdet(self.mu_hat, "m_hat + u_hat")

    def scaled(self, c: float) -> "MomentPair":
        t = None if self.theta_hat is None else np.sqrt(c) * self.theta_hat
        return MomentPair(c * self.m_hat, c * self.u_hat, self.n, theta_hat=t, beta_hat=self.beta_hat)


@dataclass(frozen=True)
class EnvelopeFit:
    """Plug-in estimators at a fixed envelope basis.

    ``m_env`` is the constrained minimizer ``G Omega G' + G0 Omega0 G0'`` of
    the quasi-likelihood, with ``Omega = G' M_hat G`` and
    ``Omega0 = G0' (M_hat + U_hat) G0``. The theta-dependent fields are
    ``None`` when the moment pair carries no ``theta_hat``.
    """

    basis: EnvelopeBasis
    omega_hat: np.ndarray
    omega0_hat: np.ndarray
    m_env: np.ndarray
    objective: float
    eta_hat: Optional[np.ndarray] = None
    theta_env: Optional[np.ndarray] = None
    beta_env: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return self.basis.k


def _basis_matrix(basis) -> np.ndarray:
    if isinstance(basis, EnvelopeBasis):
        return basis.gamma
    g = np.asarray(basis, dtype=float)
    return g[:, None] if g.ndim == 1 else g


def objective_fg(basis, mp: MomentPair) -> float:
    """Full-Grassmannian objective ``J_n`` at ``basis``.

    Returns 0 for the empty basis and ``log|M| - log|M + U|`` for ``k = p``.
    A numerically singular restriction ``G' M G`` raises
    :class:`SingularMatrixError`.
    """
    g = _basis_matrix(basis)
    p, k = g.shape
    if p != mp.dim:
        raise ValueError(f"basis has {p} rows, moment pair has dimension {mp.dim}")
    if k == 0:
        return 0.0
    if k == p:
        return mp.floor
    return logdet(g.T @ mp.m_hat @ g, "G' M G") + logdet(g.T @ mp.a_inv @ g, "G' (M+U)^-1 G")


def _check_unit(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float).ravel()
    nrm = np.linalg.norm(w)
    if nrm == 0 or not np.isfinite(nrm):
        raise ValueError("direction w must be a nonzero finite vector")
    if abs(nrm - 1.0) > 1e-10:
        raise ValueError(f"direction w must have unit norm, got {nrm!r}")
    return w


def objective_1d_step(w, m_k: np.ndarray, a_k_inv: np.ndarray) -> float:
    """``phi(w) = log(w' M_k w) + log(w' A w)`` with ``A = (M_k + U_k)^{-1}``."""
    w = _check_unit(w)
    wm = float(w @ m_k @ w)
    wa = float(w @ a_k_inv @ w)
    if wm <= 0 or wa <= 0:
        raise SingularMatrixError("quadratic form is not positive")
    return float(np.log(wm) + np.log(wa))


def objective_1d_gradient(w, m_k: np.ndarray, a_k_inv: np.ndarray) -> np.ndarray:
    """Euclidean gradient of ``phi`` at ``w``; callers project onto the tangent space."""
    w = _check_unit(w)
    mw = m_k @ w
    aw = a_k_inv @ w
    return 2.0 * mw / float(w @ mw) + 2.0 * aw / float(w @ aw)


def deflate(mp: MomentPair, g) -> tuple[np.ndarray, np.ndarray, EnvelopeBasis]:
    """Restrict ``(M_hat, U_hat)`` to the orthogonal complement of ``g``.

    Returns ``(M_k, U_k, G0)`` with ``M_k = G0' M_hat G0`` and
    ``U_k = G0' U_hat G0``.
    """
    gm = _basis_matrix(g)
    p, k = gm.shape
    if p != mp.dim:
        raise ValueError("dimension mismatch between basis and moment pair")
    if k >= p:
        raise ValueError("cannot deflate a full basis: the complement is empty")
    g0 = orthogonal_complement(gm)
    m_k = _linalg.symmetrize(g0.T @ mp.m_hat @ g0)
    u_k = _linalg.symmetrize(g0.T @ mp.u_hat @ g0)
    return m_k, u_k, EnvelopeBasis(g0, check=False)


def quasi_loglik(m, theta, mp: MomentPair) -> float:
    """``log|M| + tr[M^{-1} {M_hat + (theta_hat - theta)(theta_hat - theta)'}]``."""
    if mp.theta_hat is None:
        raise ValueError("quasi-likelihood needs a moment pair with theta_hat")
    m = np.asarray(m, dtype=float)
    theta = np.asarray(theta, dtype=float).reshape(mp.theta_hat.shape)
    if m.shape != mp.m_hat.shape:
        raise ValueError("M has the wrong shape")
    c = _linalg.cholesky(_linalg.symmetrize(m), "M")
    d = mp.theta_hat - theta
    inner = mp.m_hat + d @ d.T
    tr = float(np.trace(la.cho_solve((c, True), inner, check_finite=False)))
    return 2.0 * float(np.sum(np.log(np.diag(c)))) + tr


def envelope_fit_from_basis(basis: EnvelopeBasis, mp: MomentPair) -> EnvelopeFit:
    """Minimize the quasi-likelihood over ``(Omega, Omega0, eta)`` at a fixed basis."""
    g = _basis_matrix(basis)
    if not isinstance(basis, EnvelopeBasis):
        basis = EnvelopeBasis(g)
    p, k = g.shape
    if p != mp.dim:
        raise ValueError("dimension mismatch between basis and moment pair")
    g0 = orthogonal_complement(g)
    omega = _linalg.symmetrize(g.T @ mp.m_hat @ g)
    omega0 = _linalg.symmetrize(g0.T @ mp.mu_hat @ g0)
    m_env = _linalg.symmetrize(g @ omega @ g.T + g0 @ omega0 @ g0.T)
    eta = theta_env = beta_env = None
    if mp.theta_hat is not None:
        eta = g.T @ mp.theta_hat
        theta_env = g @ eta
    if mp.beta_hat is not None:
        beta_env = g @ (g.T @ mp.beta_hat)
    return EnvelopeFit(
        basis=basis,
        omega_hat=frozen(omega),
        omega0_hat=frozen(omega0),
        m_env=frozen(m_env),
        objective=objective_fg(g, mp),
        eta_hat=None if eta is None else frozen(eta),
        theta_env=None if theta_env is None else frozen(theta_env),
        beta_env=None if beta_env is None else frozen(beta_env),
    )


def subspace_distance(a, b) -> float:
    """Frobenius distance between the orthogonal projections onto two subspaces."""
    ga, gb = _basis_matrix(a), _basis_matrix(b)
    if ga.shape[0] != gb.shape[0]:
        raise ValueError("subspaces live in different ambient dimensions")
    return float(np.linalg.norm(ga @ ga.T - gb @ gb.T))
