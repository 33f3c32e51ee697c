"""Independent reference computations used as test oracles.

Nothing here calls into ``envdim`` numerics: determinants come from
eigenvalues, optimizers are brute-force searches, and the regression fits
are written from their textbook definitions with plain loops.
"""

from __future__ import annotations

import numpy as np
from scipy import optimize


def random_spd(d, rng, cond=50.0):
    """SPD matrix with eigenvalues log-spaced in ``[1, cond]`` and a random eigenbasis."""
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    evals = np.exp(rng.uniform(0.0, np.log(cond), size=d))
    a = (q * evals) @ q.T
    return 0.5 * (a + a.T)


def random_stiefel(p, k, rng):
    q, _ = np.linalg.qr(rng.standard_normal((p, k)))
    return q


def eig_logdet(a):
    return float(np.sum(np.log(np.linalg.eigvalsh(0.5 * (a + a.T)))))


def fg_value(gamma, m, u):
    """``log|G'MG| + log|G'(M+U)^{-1}G|`` through eigenvalues only."""
    ainv = np.linalg.inv(m + u)
    return eig_logdet(gamma.T @ m @ gamma) + eig_logdet(gamma.T @ ainv @ gamma)


def fibonacci_sphere(count):
    """Quasi-uniform points on the unit sphere in R^3."""
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (1.0 + 5**0.5) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def sphere_grid_min(m, u, count):
    """Minimum of ``phi`` over ``count`` quasi-uniform sphere points (dimension 3 or 4)."""
    d = m.shape[0]
    ainv = np.linalg.inv(m + u)
    if d == 3:
        w = fibonacci_sphere(count)
    elif d == 4:
        # Hopf-type grid: two angles on S^1 x S^1 and a radial split
        side = int(round(count ** (1 / 3)))
        eta = np.arcsin(np.sqrt((np.arange(side) + 0.5) / side))
        t1 = 2 * np.pi * np.arange(side) / side
        t2 = 2 * np.pi * np.arange(side) / side
        e, a, b = np.meshgrid(eta, t1, t2, indexing="ij")
        w = np.column_stack(
            [
                (np.cos(e) * np.cos(a)).ravel(),
                (np.cos(e) * np.sin(a)).ravel(),
                (np.sin(e) * np.cos(b)).ravel(),
                (np.sin(e) * np.sin(b)).ravel(),
            ]
        )
    else:
        raise ValueError("grid oracle supports dimensions 3 and 4")
    vals = np.log(np.einsum("ni,ij,nj->n", w, m, w)) + np.log(np.einsum("ni,ij,nj->n", w, ainv, w))
    i = int(np.argmin(vals))
    # polish the best grid point with a local search in angle-free coordinates
    res = optimize.minimize(
        lambda v: np.log(v @ m @ v / (v @ v)) + np.log(v @ ainv @ v / (v @ v)),
        w[i],
        method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 20000},
    )
    return float(vals[i]), float(min(vals[i], res.fun))


def central_difference(f, x, h=1e-6):
    """Central-difference gradient of a scalar function of an array."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = h
        gf[i] = (f((flat + e).reshape(x.shape)) - f((flat - e).reshape(x.shape))) / (2 * h)
    return g


def logistic_newton(design, y, iters=200):
    """Plain dense Newton on the logistic log-likelihood (with step halving)."""
    beta = np.zeros(design.shape[1])

    def ll(b):
        eta = design @ b
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

    for _ in range(iters):
        eta = design @ beta
        prob = 1.0 / (1.0 + np.exp(-eta))
        grad = design.T @ (y - prob)
        hess = (design * (prob * (1 - prob))[:, None]).T @ design
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while ll(beta + t * step) < ll(beta) and t > 1e-10:
            t /= 2
        beta = beta + t * step
        if np.max(np.abs(grad)) < 1e-12:
            break
    return beta


def cox_loglik_loops(beta, x, time, event):
    """Breslow log partial likelihood, written with explicit loops."""
    beta = np.atleast_1d(beta)
    total = 0.0
    n = len(time)
    for i in range(n):
        if not event[i]:
            continue
        risk = [j for j in range(n) if time[j] >= time[i]]
        lin = [float(x[j] @ beta) for j in risk]
        total += float(x[i] @ beta) - np.log(np.sum(np.exp(lin)))
    return total


def cox_score_at_zero(x, time, event):
    """Sum over events of ``x_i`` minus the risk-set mean of ``x``."""
    out = np.zeros(x.shape[1])
    for i in range(len(time)):
        if event[i]:
            risk = time >= time[i]
            out += x[i] - x[risk].mean(axis=0)
    return out


def golden_section_max(f, lo, hi, tol=1e-10):
    """Maximize a unimodal scalar function on ``[lo, hi]``."""
    invphi = (5**0.5 - 1) / 2
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def envelope_from_eigvecs(m, u_rank_dirs):
    """Span of the eigenvectors of ``m`` that carry ``U`` (columns of ``u_rank_dirs``)."""
    evals, evecs = np.linalg.eigh(m)
    w = np.abs(evecs.T @ u_rank_dirs).sum(axis=1) > 1e-10
    return evecs[:, w]


def binomial_se(pct, reps):
    p = pct / 100.0
    return 100.0 * np.sqrt(max(p * (1 - p), 1e-12) / reps)
