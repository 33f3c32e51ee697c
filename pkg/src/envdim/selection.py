"""Envelope dimension selection.

Two criteria are provided, both of the form ``objective(k) + C k log(n) / n``
for ``k = 0, ..., kmax``:

* ``"fg"``: the objective is ``J_n`` minimized over the Grassmannian
  separately for every ``k``;
* ``"1d"``: the objective is the running sum of the optimal step values of
  the one-direction-at-a-time path, computed once for all ``k``.

The selected dimension is the smallest ``k`` attaining the minimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ._linalg import orthogonal_complement
from .core import EnvelopeBasis, EnvelopeFit, MomentPair, deflate, envelope_fit_from_basis, objective_fg
from .manifold import OptimizerSettings, solve_grassmann, solve_sphere

__all__ = [
    "OneDPath",
    "SelectionConfig",
    "SelectionResult",
    "run_1d_algorithm",
    "criterion_1d",
    "criterion_fg",
    "select_dimension",
    "penalty",
]

METHODS = ("1d", "fg")


@dataclass(frozen=True)
class OneDPath:
    """Nested directions ``g_1, ..., g_m`` and their optimal step values.

    ``directions`` is ``p x m`` with orthonormal columns; the first ``k``
    columns span the ``k``-dimensional estimate for every ``k <= m``.
    """

    directions: np.ndarray
    step_values: np.ndarray

    @property
    def p(self) -> int:
        return self.directions.shape[0]

    @property
    def m(self) -> int:
        return self.directions.shape[1]

    def basis(self, k: int) -> EnvelopeBasis:
        if not 0 <= k <= self.m:
            raise ValueError(f"path has {self.m} directions, asked for {k}")
        return EnvelopeBasis(self.directions[:, :k], check=False)


@dataclass(frozen=True)
class SelectionConfig:
    """Settings for :func:`select_dimension`.

    ``constant_c`` multiplies the penalty. ``1`` suits vector parameters;
    for a ``p x q`` coefficient matrix ``C = q`` matches the parameter count.
    ``kmax=None`` means ``p``.
    """

    constant_c: float = 1.0
    kmax: Optional[int] = None
    method: str = "1d"
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)

    def __post_init__(self):
        if not self.constant_c > 0:
            raise ValueError("constant_c must be positive")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.kmax is not None and self.kmax < 0:
            raise ValueError("kmax must be nonnegative")

    def resolve_kmax(self, p: int) -> int:
        if self.kmax is None:
            return p
        if self.kmax > p:
            raise ValueError(f"kmax={self.kmax} exceeds p={p}")
        return self.kmax


@dataclass(frozen=True)
class SelectionResult:
    """Criterion values for ``k = 0..kmax`` and the selected dimension.

    ``objective_values`` are the unpenalized first terms, kept so the
    criterion can be re-evaluated for another ``C`` without re-solving
    (see :meth:`with_constant`). ``bases`` maps ``k`` to the basis that
    produced ``objective_values[k]``.
    """

    criterion_values: np.ndarray
    objective_values: np.ndarray
    selected_u: int
    constant_c: float
    method: str
    n: int
    bases: dict = field(default_factory=dict, repr=False, compare=False)
    path: Optional[OneDPath] = field(default=None, repr=False, compare=False)

    @property
    def kmax(self) -> int:
        return len(self.criterion_values) - 1

    def with_constant(self, c: float) -> "SelectionResult":
        values = _penalize(self.objective_values, self.n, c)
        return replace(self, criterion_values=values, selected_u=_argmin(values), constant_c=float(c))


def penalty(k, n: int, c: float = 1.0):
    """``C k log(n) / n``."""
    return c * np.asarray(k) * np.log(n) / n


def _penalize(objective: np.ndarray, n: int, c: float) -> np.ndarray:
    values = objective + penalty(np.arange(len(objective)), n, c)
    values[0] = 0.0
    return values


def _argmin(values: np.ndarray) -> int:
    # np.argmin already returns the first (smallest k) minimizer
    return int(np.argmin(values))


def run_1d_algorithm(mp: MomentPair, m: int, settings: OptimizerSettings = OptimizerSettings()) -> OneDPath:
    """Sequentially estimate ``m`` envelope directions, ``1 <= m <= p - 1``.

    Step ``j`` minimizes ``phi_j`` over the unit sphere of the orthogonal
    complement of the directions found so far and lifts the minimizer back to
    ``R^p``. The sphere solver of step ``j`` draws its random starts from
    ``settings.rng(1, j)``.
    """
    p = mp.dim
    if not 1 <= m <= p - 1:
        raise ValueError(f"number of steps must lie in [1, {p - 1}], got {m}")
    g0 = np.eye(p)
    directions = np.empty((p, m))
    values = np.empty(m)
    for j in range(m):
        m_j = g0.T @ mp.m_hat @ g0
        u_j = g0.T @ mp.u_hat @ g0
        w, value = solve_sphere(0.5 * (m_j + m_j.T), 0.5 * (u_j + u_j.T), settings, tag=(j,))
        directions[:, j] = g0 @ w
        values[j] = value
        g0 = g0 @ orthogonal_complement(w[:, None])
    return OneDPath(directions=directions, step_values=values)


def _last_step_value(mp: MomentPair, path: OneDPath) -> float:
    # the final step is over a 1-dimensional sphere, so it has a closed form
    m_k, u_k, _ = deflate(mp, path.directions[:, : mp.dim - 1])
    return float(np.log(m_k[0, 0]) - np.log(m_k[0, 0] + u_k[0, 0]))


def criterion_1d(path: OneDPath, mp: MomentPair, config: SelectionConfig = SelectionConfig()) -> SelectionResult:
    """One-direction criterion ``sum_{j<=k} phi_j(w_j) + C k log(n)/n``."""
    p = mp.dim
    kmax = config.resolve_kmax(p)
    steps = list(path.step_values[: min(kmax, p - 1)])
    if len(steps) < min(kmax, p - 1):
        raise ValueError(f"path has {path.m} steps, criterion needs {min(kmax, p - 1)}")
    if kmax == p:
        steps.append(_last_step_value(mp, path) if p > 1 else mp.floor)
    objective = np.concatenate([[0.0], np.cumsum(steps)])
    values = _penalize(objective, mp.n, config.constant_c)
    bases = {k: path.basis(k) for k in range(min(kmax, path.m) + 1)}
    if kmax == p:
        bases[p] = EnvelopeBasis(np.eye(p), check=False)
    return SelectionResult(
        criterion_values=values,
        objective_values=objective,
        selected_u=_argmin(values),
        constant_c=float(config.constant_c),
        method="1d",
        n=mp.n,
        bases=bases,
        path=path,
    )


def criterion_fg(
    mp: MomentPair, config: SelectionConfig = SelectionConfig(), path: Optional[OneDPath] = None
) -> SelectionResult:
    """Full-Grassmannian criterion ``J_n(G_k) + C k log(n)/n``.

    Each ``k`` in ``1..min(kmax, p-1)`` is solved independently, warm-started
    from the first ``k`` directions of the one-direction path (computed here
    unless ``path`` is given).
    """
    p = mp.dim
    kmax = config.resolve_kmax(p)
    inner = min(kmax, p - 1)
    if path is None and inner >= 1:
        path = run_1d_algorithm(mp, inner, config.optimizer)
    objective = np.zeros(kmax + 1)
    bases = {0: EnvelopeBasis.empty(p)}
    for k in range(1, inner + 1):
        basis = solve_grassmann(mp, k, init=path.basis(k), settings=config.optimizer)
        bases[k] = basis
        objective[k] = objective_fg(basis, mp)
    if kmax == p:
        objective[p] = mp.floor
        bases[p] = EnvelopeBasis(np.eye(p), check=False)
    values = _penalize(objective, mp.n, config.constant_c)
    return SelectionResult(
        criterion_values=values,
        objective_values=objective,
        selected_u=_argmin(values),
        constant_c=float(config.constant_c),
        method="fg",
        n=mp.n,
        bases=bases,
        path=path,
    )


def select_dimension(mp: MomentPair, config: SelectionConfig = SelectionConfig()) -> tuple[SelectionResult, EnvelopeFit]:
    """Select the envelope dimension and fit the envelope at it."""
    p = mp.dim
    kmax = config.resolve_kmax(p)
    if config.method == "1d":
        steps = min(kmax, p - 1)
        path = run_1d_algorithm(mp, steps, config.optimizer) if steps >= 1 else OneDPath(np.zeros((p, 0)), np.zeros(0))
        result = criterion_1d(path, mp, config)
    else:
        result = criterion_fg(mp, config)
    fit = envelope_fit_from_basis(result.bases[result.selected_u], mp)
    return result, fit
