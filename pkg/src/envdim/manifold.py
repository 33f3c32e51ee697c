"""Riemannian descent on the unit sphere and on the Grassmannian.

Both solvers use a QR (normalization) retraction and a monotone Armijo
backtracking line search, so the objective never increases from one
iterate to the next. The search direction is the Riemannian gradient
preconditioned by a BFGS inverse-Hessian estimate built from ambient
step and gradient differences (dense for small problems, limited-memory
otherwise), then projected onto the tangent space. A positive definite
estimate always gives a descent direction; if rounding breaks that, the
start falls back to the negative gradient and its estimate is reset.

Multistarts run together as one batch with a leading start axis: every start
keeps its own memory and step and stops on its own, so the batch returns
exactly the per-start answers a loop would.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _linalg
from .core import EnvelopeBasis, MomentPair
from .exceptions import SingularMatrixError

__all__ = [
    "OptimizerSettings",
    "DescentResult",
    "sphere_objective",
    "sphere_gradient",
    "grassmann_objective",
    "grassmann_gradient",
    "sphere_descent",
    "grassmann_descent",
    "solve_sphere",
    "solve_grassmann",
    "random_starts",
]

_TIE_TOL = 1e-12
# log-determinants of ill-conditioned p x p matrices carry ~1e-11 rounding
_FLOOR_RTOL = 1e-9


@dataclass(frozen=True)
class OptimizerSettings:
    """Knobs shared by the sphere and Grassmannian solvers.

    ``seed`` fixes every random start, so solver output is a deterministic
    function of the inputs and the settings. ``quasi_newton=False`` turns the
    BFGS preconditioning off (plain projected gradient descent).
    """

    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    num_multistarts: int = 10
    seed: int = 0
    armijo_c: float = 1e-4
    contraction: float = 0.5
    initial_step: float = 1.0
    min_step: float = 1e-14
    quasi_newton: bool = True
    dense_limit: int = 400
    memory: int = 10

    def __post_init__(self):
        if self.max_iterations < 1 or self.num_multistarts < 1:
            raise ValueError("max_iterations and num_multistarts must be positive")
        if self.gradient_tolerance <= 0:
            raise ValueError("gradient_tolerance must be positive")
        if not 0 < self.contraction < 1 or not 0 < self.armijo_c < 1:
            raise ValueError("line-search constants must lie in (0, 1)")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def rng(self, *tags: int) -> np.random.Generator:
        """Independent generator for a tagged sub-problem."""
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, *tags])))


@dataclass
class DescentResult:
    """Outcome of a batched descent run.

    ``x`` has a leading start axis. ``history`` (filled when recording)
    holds the objective of every start after every iteration; a start that
    has stopped repeats its last value.
    """

    x: np.ndarray
    values: np.ndarray
    grad_norms: np.ndarray
    iterations: np.ndarray
    history: list = field(default_factory=list)

    @property
    def best(self) -> int:
        """Index of the lowest value; near-ties go to the earliest start."""
        vmin = self.values.min()
        return int(np.flatnonzero(self.values <= vmin + _TIE_TOL)[0])


def _inner(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (u * v).reshape(u.shape[0], -1).sum(axis=1)


# --- sphere ---------------------------------------------------------------


def sphere_objective(w: np.ndarray, m: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``phi`` for every row of ``w`` (rows assumed unit norm)."""
    wm = np.einsum("si,si->s", w, w @ m)
    wa = np.einsum("si,si->s", w, w @ a)
    if np.any(wm <= 0) or np.any(wa <= 0):
        raise SingularMatrixError("quadratic form is not positive")
    return np.log(wm) + np.log(wa)


def _sphere_fg(w, m, a):
    mw, aw = w @ m, w @ a
    wm = np.einsum("si,si->s", w, mw)
    wa = np.einsum("si,si->s", w, aw)
    if np.any(wm <= 0) or np.any(wa <= 0):
        raise SingularMatrixError("quadratic form is not positive")
    egrad = 2.0 * mw / wm[:, None] + 2.0 * aw / wa[:, None]
    rgrad = egrad - w * np.einsum("si,si->s", w, egrad)[:, None]
    return np.log(wm) + np.log(wa), rgrad


def sphere_gradient(w: np.ndarray, m: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Riemannian gradient of ``phi`` on the unit sphere, row by row."""
    return _sphere_fg(w, m, a)[1]


def _sphere_project(w, d):
    return d - w * np.einsum("si,si->s", w, d)[:, None]


def _normalize(w: np.ndarray) -> np.ndarray:
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def sphere_descent(
    m: np.ndarray,
    a: np.ndarray,
    starts: np.ndarray,
    settings: OptimizerSettings = OptimizerSettings(),
    record: bool = False,
) -> DescentResult:
    """Minimize ``phi`` from each row of ``starts`` (shape ``(s, d)``)."""
    w = _normalize(np.array(starts, dtype=float))
    return _descent(
        w,
        lambda x: _sphere_fg(x, m, a),
        _sphere_project,
        lambda x, d: _normalize(x + d),
        settings,
        record,
    )


# --- Grassmannian ---------------------------------------------------------


def _batched_logdet_inv(s: np.ndarray):
    try:
        c = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("restricted matrix G' M G is not positive definite") from exc
    logdet = 2.0 * np.log(np.diagonal(c, axis1=-2, axis2=-1)).sum(axis=-1)
    return logdet, np.linalg.inv(s)


def grassmann_objective(g: np.ndarray, m: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``J`` for a stack of bases ``g`` of shape ``(s, p, k)``."""
    gt = np.swapaxes(g, -1, -2)
    ld_m, _ = _batched_logdet_inv(gt @ m @ g)
    ld_a, _ = _batched_logdet_inv(gt @ a @ g)
    return ld_m + ld_a


def _grassmann_fg(g: np.ndarray, m: np.ndarray, a: np.ndarray):
    gt = np.swapaxes(g, -1, -2)
    mg, ag = m @ g, a @ g
    ld_m, inv_m = _batched_logdet_inv(gt @ mg)
    ld_a, inv_a = _batched_logdet_inv(gt @ ag)
    egrad = 2.0 * mg @ inv_m + 2.0 * ag @ inv_a
    rgrad = egrad - g @ (gt @ egrad)
    return ld_m + ld_a, rgrad


def grassmann_gradient(g: np.ndarray, m: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Riemannian gradient ``(I - GG') dJ/dG`` for a stack of bases."""
    return _grassmann_fg(g, m, a)[1]


def _grassmann_project(g, d):
    return d - g @ (np.swapaxes(g, -1, -2) @ d)


def grassmann_descent(
    m: np.ndarray,
    a: np.ndarray,
    starts: np.ndarray,
    settings: OptimizerSettings = OptimizerSettings(),
    record: bool = False,
) -> DescentResult:
    """Minimize ``J`` from each ``p x k`` slice of ``starts`` (shape ``(s, p, k)``)."""
    g = _linalg.qr_positive(np.array(starts, dtype=float))
    return _descent(
        g,
        lambda x: _grassmann_fg(x, m, a),
        _grassmann_project,
        lambda x, d: _linalg.qr_positive(x + d),
        settings,
        record,
    )


# --- shared driver ----------------------------------------------------------


def _bcast(v: np.ndarray, like: np.ndarray) -> np.ndarray:
    return v.reshape(v.shape + (1,) * (like.ndim - v.ndim))


class _DenseBFGS:
    """Batched dense inverse-Hessian estimates on flattened coordinates."""

    def __init__(self, n_starts, dim):
        self.dim = dim
        self.h = np.broadcast_to(np.eye(dim), (n_starts, dim, dim)).copy()
        self.scaled = np.zeros(n_starts, dtype=bool)

    def apply(self, rows, g):
        return np.matmul(self.h[rows], g[:, :, None])[:, :, 0]

    def reset(self, rows):
        self.h[rows] = np.eye(self.dim)
        self.scaled[rows] = False

    def update(self, rows, s, y, sy, yy):
        first = ~self.scaled[rows]
        if first.any():
            # first curvature pair: rescale the identity before updating
            self.h[rows[first]] = np.eye(self.dim) * (sy[first] / yy[first])[:, None, None]
            self.scaled[rows[first]] = True
        h = self.h[rows]
        rho = 1.0 / sy
        hy = np.matmul(h, y[:, :, None])
        yhy = np.matmul(y[:, None, :], hy)[:, 0, 0]
        sc = s[:, :, None]
        outer = np.matmul(hy, sc.transpose(0, 2, 1))
        h -= rho[:, None, None] * (outer + outer.transpose(0, 2, 1))
        h += (rho * (1.0 + rho * yhy))[:, None, None] * np.matmul(sc, sc.transpose(0, 2, 1))
        self.h[rows] = h


class _LimitedBFGS:
    """Batched L-BFGS two-loop recursion; newest pair sits in the last slot."""

    def __init__(self, n_starts, dim, memory):
        self.s = np.zeros((n_starts, memory, dim))
        self.y = np.zeros((n_starts, memory, dim))
        self.rho = np.zeros((n_starts, memory))
        self.count = np.zeros(n_starts, dtype=int)

    def apply(self, rows, g):
        s, y, rho, count = self.s[rows], self.y[rows], self.rho[rows], self.count[rows]
        size = s.shape[1]
        q = g.copy()
        alpha = np.zeros((rows.size, size))
        for i in range(size - 1, -1, -1):
            valid = count >= size - i
            alpha[:, i] = np.where(valid, rho[:, i] * np.einsum("si,si->s", s[:, i], q), 0.0)
            q -= alpha[:, i, None] * y[:, i]
        yy = np.einsum("si,si->s", y[:, -1], y[:, -1])
        sy = np.einsum("si,si->s", s[:, -1], y[:, -1])
        gamma = np.where(count > 0, sy / np.where(yy > 0, yy, 1.0), 1.0)
        r = gamma[:, None] * q
        for i in range(size):
            valid = count >= size - i
            beta = rho[:, i] * np.einsum("si,si->s", y[:, i], r)
            r += np.where(valid, alpha[:, i] - beta, 0.0)[:, None] * s[:, i]
        return r

    def reset(self, rows):
        self.count[rows] = 0
        self.s[rows] = 0.0
        self.y[rows] = 0.0
        self.rho[rows] = 0.0

    def update(self, rows, s, y, sy, yy):
        for arr, new in ((self.s, s), (self.y, y), (self.rho, 1.0 / sy)):
            arr[rows, :-1] = arr[rows, 1:]
            arr[rows, -1] = new
        self.count[rows] = np.minimum(self.count[rows] + 1, self.s.shape[1])


def _descent(x, fg, project, retract, settings, record):
    n_starts = x.shape[0]
    dim = int(np.prod(x.shape[1:]))
    f, grad = fg(x)
    gnorm = np.sqrt(_inner(grad, grad))
    iters = np.zeros(n_starts, dtype=int)
    active = gnorm > settings.gradient_tolerance
    history = [f.copy()] if record else []
    if not settings.quasi_newton:
        qn = None
    elif dim <= settings.dense_limit:
        qn = _DenseBFGS(n_starts, dim)
    else:
        qn = _LimitedBFGS(n_starts, dim, settings.memory)

    for _ in range(settings.max_iterations):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        xa, ga, fa = x[idx], grad[idx], f[idx]
        if qn is not None:
            d = -project(xa, qn.apply(idx, ga.reshape(idx.size, dim)).reshape(ga.shape))
            bad = ~(_inner(ga, d) < 0)
            if bad.any():
                d[bad] = -ga[bad]
                qn.reset(idx[bad])
        else:
            d = -ga
        slope = _inner(ga, d)
        t = np.full(idx.size, settings.initial_step)
        accepted = np.zeros(idx.size, dtype=bool)
        new_x = xa.copy()
        new_f = fa.copy()
        new_g = ga.copy()
        while True:
            todo = np.flatnonzero(~accepted & (t >= settings.min_step))
            if todo.size == 0:
                break
            cand = retract(xa[todo], _bcast(t[todo], d) * d[todo])
            fc, gc = fg(cand)
            # strict decrease: once rounding hides progress the start stops
            ok = (fc < fa[todo]) & (fc <= fa[todo] + settings.armijo_c * t[todo] * slope[todo])
            hit = todo[ok]
            new_x[hit], new_f[hit], new_g[hit] = cand[ok], fc[ok], gc[ok]
            accepted[hit] = True
            t[todo[~ok]] *= settings.contraction

        iters[idx] += 1
        sel = np.flatnonzero(accepted)
        moved = idx[sel]
        if moved.size:
            x[moved], f[moved], grad[moved] = new_x[sel], new_f[sel], new_g[sel]
            gnorm[moved] = np.sqrt(_inner(new_g[sel], new_g[sel]))
            if qn is not None:
                # differences moved to the new tangent space by projection
                nx = new_x[sel]
                s_vec = project(nx, nx - xa[sel]).reshape(sel.size, dim)
                y_vec = (new_g[sel] - project(nx, ga[sel])).reshape(sel.size, dim)
                sy = np.einsum("si,si->s", s_vec, y_vec)
                ss = np.einsum("si,si->s", s_vec, s_vec)
                yy = np.einsum("si,si->s", y_vec, y_vec)
                keep = sy > 1e-12 * np.sqrt(ss * yy)
                if keep.any():
                    qn.update(moved[keep], s_vec[keep], y_vec[keep], sy[keep], yy[keep])
        active[idx[~accepted]] = False
        active &= gnorm > settings.gradient_tolerance
        if record:
            history.append(f.copy())
    return DescentResult(x=x, values=f, grad_norms=gnorm, iterations=iters, history=history)


# --- public solvers -----------------------------------------------------------


def random_starts(p: int, k: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` random semi-orthogonal ``p x k`` matrices, shape ``(count, p, k)``."""
    z = rng.standard_normal((count, p, k))
    return _linalg.qr_positive(z)


def _sphere_warm_start(m: np.ndarray, mu: np.ndarray, a: np.ndarray) -> np.ndarray:
    # eigenvectors of M and M + U are the natural candidates for the minimizer
    cands = np.vstack([np.linalg.eigh(m)[1].T, np.linalg.eigh(mu)[1].T])
    vals = sphere_objective(cands, m, a)
    return cands[int(np.argmin(vals))]


def solve_sphere(
    m_k,
    u_k,
    settings: OptimizerSettings = OptimizerSettings(),
    tag: Sequence[int] = (),
    return_result: bool = False,
):
    """Minimize ``phi(w) = log(w'Mw) + log(w'(M+U)^{-1}w)`` over unit vectors.

    The first start is the best eigenvector of ``M`` or ``M + U``; the
    remaining ``num_multistarts - 1`` starts are uniform on the sphere,
    drawn from ``settings.rng(*tag)``.

    Returns
    -------
    w : ndarray
        Unit-norm minimizer. Its sign is fixed so the largest-magnitude
        entry is positive.
    value : float
        ``phi(w)``.
    """
    m = np.atleast_2d(np.asarray(m_k, dtype=float))
    u = np.atleast_2d(np.asarray(u_k, dtype=float))
    d = m.shape[0]
    mu = _linalg.symmetrize(m + u)
    if d == 1:
        if m[0, 0] <= 0 or mu[0, 0] <= 0:
            raise SingularMatrixError("scalar moment is not positive")
        w = np.ones(1)
        value = float(np.log(m[0, 0]) - np.log(mu[0, 0]))
        if return_result:
            res = DescentResult(w[None, :], np.array([value]), np.zeros(1), np.zeros(1, int))
            return w, value, res
        return w, value
    a = _linalg.spd_inverse(mu, "M_k + U_k")
    starts = np.empty((settings.num_multistarts, d))
    starts[0] = _sphere_warm_start(m, mu, a)
    if settings.num_multistarts > 1:
        rng = settings.rng(1, *tag)
        starts[1:] = rng.standard_normal((settings.num_multistarts - 1, d))
    res = sphere_descent(m, a, starts, settings)
    b = res.best
    w = res.x[b].copy()
    if w[np.argmax(np.abs(w))] < 0:
        w = -w
    value = float(res.values[b])
    if return_result:
        return w, value, res
    return w, value


def solve_grassmann(
    mp: MomentPair,
    k: int,
    init: Optional[EnvelopeBasis] = None,
    settings: OptimizerSettings = OptimizerSettings(),
    return_result: bool = False,
):
    """Minimize ``J_n`` over ``p x k`` semi-orthogonal bases, ``1 <= k <= p-1``.

    Starts are ``init`` (or, when absent, the first ``k`` directions of the
    one-direction path) followed by ``num_multistarts - 1`` random bases
    drawn from ``settings.rng(2, k)``. The lowest final objective wins.

    ``J_n`` is bounded below by ``log|M| - log|M + U|`` for every ``k``, so a
    warm start already at that bound is returned as is.
    """
    p = mp.dim
    if not 1 <= k <= p - 1:
        raise ValueError(f"k must lie in [1, {p - 1}], got {k}")
    if init is None:
        from .selection import run_1d_algorithm

        path = run_1d_algorithm(mp, k, settings)
        init = path.basis(k)
    if init.p != p or init.k != k:
        raise ValueError("initial basis has the wrong shape")
    f0 = grassmann_objective(init.gamma[None], mp.m_hat, mp.a_inv)[0]
    if f0 <= mp.floor + _FLOOR_RTOL * max(1.0, abs(mp.floor)):
        basis = EnvelopeBasis(_linalg.qr_positive(init.gamma))
        if return_result:
            res = DescentResult(init.gamma[None].copy(), np.array([f0]), np.zeros(1), np.zeros(1, int))
            return basis, res
        return basis
    starts = np.empty((settings.num_multistarts, p, k))
    starts[0] = init.gamma
    if settings.num_multistarts > 1:
        starts[1:] = random_starts(p, k, settings.num_multistarts - 1, settings.rng(2, k))
    res = grassmann_descent(mp.m_hat, mp.a_inv, starts, settings)
    basis = EnvelopeBasis(_linalg.qr_positive(res.x[res.best]))
    if return_result:
        return basis, res
    return basis
