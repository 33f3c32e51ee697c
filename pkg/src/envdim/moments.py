"""Standard estimators and the sample moment pairs built from them.

Every constructor returns a :class:`~envdim.core.MomentPair` whose
``theta_hat`` satisfies ``U_hat = theta_hat theta_hat'`` and whose
``beta_hat`` is the coefficient estimate that an envelope fit projects.

Conventions
-----------
* Covariances use the divisor ``n``.
* Intercepts are removed by centering ``x`` and ``y`` (the logistic fit
  keeps an explicit intercept instead, since centering a binary response
  is not a valid model).
* Response envelopes follow ``Y = alpha + beta X + error`` with
  ``y`` of shape ``(n, p)`` and ``x`` of shape ``(n, q)``; ``beta`` is
  ``p x q``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg as la
from scipy.special import expit

from . import _linalg
from .core import MomentPair
from .exceptions import ConvergenceError, SeparationError, SingularMatrixError

__all__ = [
    "RegressionData",
    "StandardFit",
    "standard_linear_fit",
    "standard_logistic_fit",
    "standard_cox_fit",
    "response_envelope_moments",
    "predictor_envelope_moments",
    "partial_envelope_moments",
    "glm_envelope_moments",
    "cox_envelope_moments",
    "cox_partial_loglik",
    "logistic_loglik",
]


@dataclass(frozen=True)
class RegressionData:
    """A sample ``(y_i, x_i)``, plus event flags for censored survival data.

    Parameters
    ----------
    x : (n, q) array
        Predictors. A 1-d array is read as a single column.
    y : (n, p) array
        Responses (``p = 1`` allowed). For survival data this is the
        observed time.
    censoring : (n,) array of {0, 1}, optional
        Event indicators, ``1`` when the failure time is observed.
    """

    x: np.ndarray
    y: np.ndarray
    censoring: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        x = x[:, None] if x.ndim == 1 else x
        y = y[:, None] if y.ndim == 1 else y
        if x.ndim != 2 or y.ndim != 2:
            raise ValueError("x and y must be 1-d or 2-d arrays")
        n = x.shape[0]
        if y.shape[0] != n:
            raise ValueError(f"x has {n} rows but y has {y.shape[0]}")
        if n <= max(x.shape[1], y.shape[1]) + 1:
            raise ValueError(f"need n > max(p, q) + 1 observations, got n={n}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("x and y must be finite")
        object.__setattr__(self, "x", _linalg.frozen(x))
        object.__setattr__(self, "y", _linalg.frozen(y))
        if self.censoring is not None:
            c = np.asarray(self.censoring, dtype=float).ravel()
            if c.shape[0] != n:
                raise ValueError("censoring must have one flag per row")
            if not np.all((c == 0) | (c == 1)):
                raise ValueError("censoring flags must be 0 or 1")
            object.__setattr__(self, "censoring", _linalg.frozen(c.astype(int)))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    @property
    def q(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class StandardFit:
    """A standard (non-envelope) coefficient estimate.

    ``asymptotic_cov`` estimates the covariance of ``sqrt(n) (beta_hat - beta)``.
    For the linear family it is over ``vec(beta_hat)`` (columns stacked);
    for the logistic and Cox families ``beta_hat`` is a column and the
    covariance is ``q x q``.
    """

    beta_hat: np.ndarray
    asymptotic_cov: np.ndarray
    family: str
    intercept: Optional[np.ndarray] = None
    fitted: Optional[np.ndarray] = None
    iterations: int = 0


def _cov(a: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    b = a if b is None else b
    return a.T @ b / a.shape[0]


def _centered(a: np.ndarray) -> np.ndarray:
    return a - a.mean(axis=0)


def _check_full_rank(xc: np.ndarray, name: str = "design") -> None:
    s = np.linalg.svd(xc, compute_uv=False)
    if s.size == 0 or s[-1] <= s[0] * xc.shape[0] * np.finfo(float).eps * 10:
        raise SingularMatrixError(f"{name} is rank deficient after centering")


def _ols(xc: np.ndarray, yc: np.ndarray) -> np.ndarray:
    """Least-squares coefficients ``p x q`` of centered ``yc`` on ``xc``."""
    _check_full_rank(xc)
    coef, *_ = la.lstsq(xc, yc, check_finite=False)
    return coef.T


def standard_linear_fit(data: RegressionData) -> StandardFit:
    """Ordinary least squares on centered data."""
    xc, yc = _centered(data.x), _centered(data.y)
    beta = _ols(xc, yc)
    resid = yc - xc @ beta.T
    s_x = _cov(xc)
    s_res = _linalg.symmetrize(_cov(resid))
    avar = np.kron(_linalg.spd_inverse(s_x, "S_X"), s_res)
    return StandardFit(beta_hat=beta, asymptotic_cov=_linalg.symmetrize(avar), family="linear", fitted=xc @ beta.T)


# --- logistic ---------------------------------------------------------------


def logistic_loglik(coef: np.ndarray, design: np.ndarray, y: np.ndarray) -> float:
    """Bernoulli log-likelihood with success probability ``expit(design @ coef)``."""
    eta = design @ coef
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _binary_response(data: RegressionData) -> np.ndarray:
    if data.p != 1:
        raise ValueError("a binary family needs a single response column")
    y = data.y[:, 0]
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("response must be coded 0/1")
    if y.min() == y.max():
        raise SeparationError("response takes a single value; the fit diverges")
    return y


def standard_logistic_fit(data: RegressionData, max_iterations: int = 100, tol: float = 1e-8) -> StandardFit:
    """Logistic regression by iteratively reweighted least squares.

    The model has an intercept, which is not part of ``beta_hat``. Newton
    steps are halved when they fail to raise the log-likelihood. A fit in
    which some fitted probability reaches 0 or 1 to within ``1e-10`` is
    taken as (quasi-)separation and rejected.

    Raises
    ------
    SeparationError
        Fitted probabilities saturate, so the maximum likelihood estimate
        does not exist.
    ConvergenceError
        The gradient norm is still above ``tol`` after ``max_iterations``.
    """
    y = _binary_response(data)
    xc = _centered(data.x)
    _check_full_rank(xc)
    design = np.column_stack([np.ones(data.n), xc])
    coef = np.zeros(design.shape[1])
    ll = logistic_loglik(coef, design, y)
    for it in range(max_iterations + 1):
        prob = expit(design @ coef)
        grad = design.T @ (y - prob)
        if np.linalg.norm(grad) <= tol:
            break
        if it == max_iterations:
            raise ConvergenceError(f"logistic fit did not converge in {max_iterations} iterations")
        w = prob * (1.0 - prob)
        info = design.T @ (design * w[:, None])
        try:
            step = la.solve(info, grad, assume_a="pos", check_finite=False)
        except (la.LinAlgError, ValueError) as exc:
            raise SeparationError("Fisher information became singular") from exc
        t = 1.0
        while True:
            cand = coef + t * step
            ll_new = logistic_loglik(cand, design, y)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        coef, ll = cand, ll_new
        if not np.all(np.isfinite(coef)):
            raise SeparationError("coefficients diverged")
    prob = expit(design @ coef)
    w = prob * (1.0 - prob)
    if w.min() < 1e-10:
        raise SeparationError("fitted probabilities reached 0 or 1; the data are separable")
    info = design.T @ (design * w[:, None])
    avar = data.n * _linalg.spd_inverse(info, "Fisher information")[1:, 1:]
    return StandardFit(
        beta_hat=coef[1:, None],
        asymptotic_cov=_linalg.symmetrize(avar),
        family="logistic",
        intercept=np.array([coef[0]]),
        fitted=prob,
        iterations=it,
    )


# --- Cox --------------------------------------------------------------------


def _risk_sets(time: np.ndarray):
    order = np.argsort(time, kind="stable")
    t_sorted = time[order]
    # risk set of an event at time t is every subject with time >= t (Breslow)
    start = np.searchsorted(t_sorted, t_sorted, side="left")
    return order, start


def _cox_terms(beta, x, event, order, start, hessian=True):
    xs, ev = x[order], event[order]
    eta = xs @ beta
    shift = eta.max()
    r = np.exp(eta - shift)
    s0 = np.cumsum(r[::-1])[::-1][start]
    s1 = np.cumsum((r[:, None] * xs)[::-1], axis=0)[::-1][start]
    d = ev == 1
    ll = float(np.sum(eta[d]) - np.sum(np.log(s0[d]) + shift))
    mean = s1[d] / s0[d, None]
    grad = xs[d].sum(axis=0) - mean.sum(axis=0)
    if not hessian:
        return ll, grad, None
    outer = r[:, None, None] * xs[:, :, None] * xs[:, None, :]
    s2 = np.cumsum(outer[::-1], axis=0)[::-1][start]
    info = (s2[d] / s0[d, None, None]).sum(axis=0) - mean.T @ mean
    return ll, grad, _linalg.symmetrize(info)


def _cox_inputs(data: RegressionData):
    if data.censoring is None:
        raise ValueError("the Cox family needs event flags")
    if data.p != 1:
        raise ValueError("the Cox family needs a single time column")
    event = data.censoring
    if event.sum() == 0:
        raise ValueError("no observed events; the partial likelihood is flat")
    time = data.y[:, 0]
    xc = _centered(data.x)
    return xc, time, event


def cox_partial_loglik(beta, data: RegressionData) -> float:
    """Breslow log partial likelihood at ``beta``."""
    xc, time, event = _cox_inputs(data)
    order, start = _risk_sets(time)
    return _cox_terms(np.asarray(beta, dtype=float).ravel(), xc, event, order, start, hessian=False)[0]


def standard_cox_fit(data: RegressionData, max_iterations: int = 100, tol: float = 1e-8) -> StandardFit:
    """Cox proportional hazards fit by Newton's method, Breslow ties.

    ``data.y`` holds the observed times and ``data.censoring`` the event
    flags. The returned covariance is ``n`` times the inverse observed
    information.

    Raises
    ------
    ConvergenceError
        A Newton step cannot increase the partial likelihood, the
        information is not positive definite, or the iteration cap is hit.
    """
    xc, time, event = _cox_inputs(data)
    _check_full_rank(xc)
    order, start = _risk_sets(time)
    beta = np.zeros(data.q)
    ll, grad, info = _cox_terms(beta, xc, event, order, start)
    for it in range(max_iterations + 1):
        if np.linalg.norm(grad) <= tol:
            break
        if it == max_iterations:
            raise ConvergenceError(f"Cox fit did not converge in {max_iterations} iterations")
        try:
            step = la.solve(info, grad, assume_a="pos", check_finite=False)
        except (la.LinAlgError, ValueError) as exc:
            raise ConvergenceError("observed information is not positive definite") from exc
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new, g_new, i_new = _cox_terms(cand, xc, event, order, start)
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
            if t < 1e-10:
                raise ConvergenceError("Newton step failed to increase the partial likelihood")
        beta, ll, grad, info = cand, ll_new, g_new, i_new
    try:
        avar = data.n * _linalg.spd_inverse(info, "observed information")
    except SingularMatrixError as exc:
        raise ConvergenceError("observed information is singular at the estimate") from exc
    return StandardFit(beta_hat=beta[:, None], asymptotic_cov=avar, family="cox", iterations=it)


# --- moment pairs -----------------------------------------------------------


def response_envelope_moments(data: RegressionData) -> MomentPair:
    """``M_hat = S_{Y|X}`` and ``M_hat + U_hat = S_Y`` for ``Y`` on ``X``.

    ``theta_hat = beta_hat S_X^{1/2}``, so ``U_hat = beta_hat S_X beta_hat'``;
    ``beta_hat`` is the least-squares coefficient matrix.
    """
    xc, yc = _centered(data.x), _centered(data.y)
    beta = _ols(xc, yc)
    resid = yc - xc @ beta.T
    m_hat = _linalg.symmetrize(_cov(resid))
    theta = beta @ _linalg.spd_sqrt(_cov(xc))
    return MomentPair(m_hat, theta @ theta.T, data.n, theta_hat=theta, beta_hat=beta)


def predictor_envelope_moments(data: RegressionData) -> MomentPair:
    """``M_hat = S_{X|Y}`` and ``M_hat + U_hat = S_X``; the envelope lives in ``X`` space.

    ``theta_hat = S_XY S_Y^{-1/2}`` and ``beta_hat = S_X^{-1} S_XY``, the
    least-squares coefficients of ``Y`` on ``X`` arranged ``q x p``.
    """
    xc, yc = _centered(data.x), _centered(data.y)
    s_y = _cov(yc)
    s_xy = _cov(xc, yc)
    root = _linalg.spd_sqrt(_linalg.spd_inverse(s_y, "S_Y"))
    theta = s_xy @ root
    m_hat = _linalg.symmetrize(_cov(xc) - theta @ theta.T)
    beta = _ols(xc, yc).T
    return MomentPair(m_hat, theta @ theta.T, data.n, theta_hat=theta, beta_hat=beta)


def _split_columns(q: int, split: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    first = np.unique(np.asarray(split, dtype=int))
    if first.size != len(split):
        raise ValueError("split indices must be distinct")
    if first.size == 0:
        raise ValueError("split must name at least one column of X1")
    if first.min() < 0 or first.max() >= q:
        raise ValueError(f"split indices must lie in [0, {q - 1}]")
    rest = np.setdiff1d(np.arange(q), first)
    if rest.size == 0:
        raise ValueError("X2 is empty; use the response envelope instead")
    return first, rest


def partial_envelope_moments(data: RegressionData, split: Sequence[int]) -> MomentPair:
    """``M_hat = S_{Y|X}`` and ``M_hat + U_hat = S_{Y|X2}``.

    ``split`` lists the columns of ``X1``, the predictors of interest; the
    remaining columns form ``X2``. ``beta_hat`` is the ``X1`` block of the
    least-squares coefficients and ``theta_hat = beta_hat S_{X1|X2}^{1/2}``.
    """
    first, rest = _split_columns(data.q, split)
    xc, yc = _centered(data.x), _centered(data.y)
    beta = _ols(xc, yc)
    resid = yc - xc @ beta.T
    m_hat = _linalg.symmetrize(_cov(resid))
    x1, x2 = xc[:, first], xc[:, rest]
    # residual of X1 after X2: by Frisch-Waugh, S_{Y|X2} - S_{Y|X} = b1 S_{X1|X2} b1'
    x1_res = x1 - x2 @ _ols(x2, x1).T
    beta1 = beta[:, first]
    theta = beta1 @ _linalg.spd_sqrt(_cov(x1_res))
    return MomentPair(m_hat, theta @ theta.T, data.n, theta_hat=theta, beta_hat=beta1)


GLM_WEIGHTINGS = ("weighted", "unweighted")


def glm_envelope_moments(data: RegressionData, weighting: str = "weighted") -> MomentPair:
    """Logistic-regression envelope of the slope vector ``beta``.

    ``M_hat`` is the covariance of ``X`` weighted by the fitted variances
    ``w_i = pi_i (1 - pi_i)`` (``"weighted"``) or the plain sample
    covariance (``"unweighted"``). With ``wbar = mean(w_i)``,

        theta_hat = sqrt(wbar) M_hat beta_hat,   U_hat = theta_hat theta_hat'.

    In the weighted case ``wbar M_hat`` is the per-observation Fisher
    information ``I`` of the slopes, so ``(M_hat, U_hat)`` is
    ``(I, I beta beta' I) / wbar``: the score-scale coefficient ``I beta_hat``
    has asymptotic covariance ``I``, which keeps the sampling noise in
    ``U_hat`` on the same scale as ``M_hat`` in every direction. ``M_hat``
    reduces the envelope, so ``span(M beta) = span(beta)`` within it.
    """
    if weighting not in GLM_WEIGHTINGS:
        raise ValueError(f"weighting must be one of {GLM_WEIGHTINGS}")
    fit = standard_logistic_fit(data)
    w = fit.fitted * (1.0 - fit.fitted)
    if weighting == "weighted":
        xbar = w @ data.x / w.sum()
        xc = data.x - xbar
        m_hat = _linalg.symmetrize((xc * w[:, None]).T @ xc / w.sum())
    else:
        m_hat = _linalg.symmetrize(_cov(_centered(data.x)))
    theta = np.sqrt(w.mean()) * (m_hat @ fit.beta_hat)
    return MomentPair(m_hat, theta @ theta.T, data.n, theta_hat=theta, beta_hat=fit.beta_hat)


def cox_envelope_moments(data: RegressionData) -> MomentPair:
    """``M_hat`` = estimated asymptotic covariance of the Cox estimate, ``U_hat = beta_hat beta_hat'``."""
    fit = standard_cox_fit(data)
    return MomentPair(fit.asymptotic_cov, fit.beta_hat @ fit.beta_hat.T, data.n, theta_hat=fit.beta_hat)
