"""Random envelope designs and a seeded Monte Carlo harness.

Three experiments are available through :func:`run_table`:

``"T2"``
    Generic envelopes with ``p = 20, u = 5`` under Models I-III. The sample
    pair is drawn as ``M_hat ~ W_p(M/n, n)``, ``U_hat ~ W_p(U/n, n)``.
``"T3"``
    Linear, logistic and Cox regressions with ``p = 10, u = 2``; reports
    selection frequencies and ``||beta_hat - beta||_F`` for the standard
    estimator and for envelope estimators at the true and selected
    dimensions.
``"T4"``
    A response envelope with ``p = 10, u = 2`` and ``q = 3`` predictors,
    evaluated over a grid of penalty constants.

Randomness
----------
Every draw comes from a PCG64 stream keyed by a
:class:`numpy.random.SeedSequence` built from the run seed and fixed
integer tags. Scenario parameters ``(Gamma, Omega, Omega0, Phi)`` are drawn
once per (table, model) and reused for every sample size and replicate;
each replicate then has its own noise stream keyed by ``(n, replicate)``.
Because no stream is shared, serial and parallel runs agree exactly.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _linalg
from .core import EnvelopeBasis, MomentPair
from .manifold import OptimizerSettings
from .moments import (
    RegressionData,
    cox_envelope_moments,
    glm_envelope_moments,
    response_envelope_moments,
)
from .selection import SelectionConfig, criterion_1d, criterion_fg, run_1d_algorithm

__all__ = [
    "GenericEnvelopeSpec",
    "RegressionSpec",
    "McRow",
    "McReport",
    "TABLES",
    "random_semiorthogonal",
    "random_orthogonal",
    "sample_wishart",
    "gen_generic",
    "regression_spec",
    "gen_regression",
    "run_table",
    "make_rng",
    "scenario_spec",
]

TABLES = ("T2", "T3", "T4")
GENERIC_MODELS = ("I", "II", "III")
REGRESSION_MODELS = ("linear", "logistic", "cox")

_TABLE_TAG = {"T2": 2, "T3": 3, "T4": 4}
_MODEL_TAG = {"I": 1, "II": 2, "III": 3, "linear": 1, "logistic": 2, "cox": 3, "response": 4}


def make_rng(seed: int, *tags: int) -> np.random.Generator:
    """PCG64 generator for the substream ``(seed, *tags)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, tags)])))


def _derived_seed(seed: int, *tags: int) -> int:
    state = np.random.SeedSequence([int(seed), *map(int, tags)]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


# --- random matrices --------------------------------------------------------


def random_semiorthogonal(p: int, k: int, rng: np.random.Generator) -> EnvelopeBasis:
    """Haar-distributed ``p x k`` semi-orthogonal basis (QR of a Gaussian draw)."""
    if not 0 <= k <= p:
        raise ValueError(f"need 0 <= k <= p, got k={k}, p={p}")
    if k == 0:
        return EnvelopeBasis.empty(p)
    return EnvelopeBasis(_linalg.qr_positive(rng.standard_normal((p, k))))


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed ``d x d`` orthogonal matrix."""
    return random_semiorthogonal(d, d, rng).gamma.copy()


def _bartlett(dim: int, dof: float, rng: np.random.Generator) -> np.ndarray:
    # lower-triangular Bartlett factor of W_dim(I, dof)
    a = np.zeros((dim, dim))
    a[np.diag_indices(dim)] = np.sqrt(rng.chisquare(dof - np.arange(dim)))
    low = np.tril_indices(dim, -1)
    a[low] = rng.standard_normal(len(low[0]))
    return a


def sample_wishart(scale, dof: int, rng: np.random.Generator, factor: Optional[np.ndarray] = None) -> np.ndarray:
    """Draw from ``W_p(scale, dof)``, mean ``dof * scale``.

    The draw is ``B A A' B'`` where ``scale = B B'`` and ``A`` is the
    Bartlett factor of ``W_r(I, dof)``. For a full-rank ``scale`` ``B`` is
    its Cholesky factor. A singular ``scale`` (such as a rank-``u`` ``U / n``)
    uses a ``p x r`` factor from its eigendecomposition, or the given
    ``factor``; the result is then PSD of rank ``min(r, dof)``. When
    ``dof < r`` the Bartlett factor does not exist and ``Z' Z`` with a
    ``dof x r`` Gaussian ``Z`` is used instead.
    """
    if dof < 1 or int(dof) != dof:
        raise ValueError("dof must be a positive integer")
    if factor is None:
        s = _linalg.symmetrize(np.atleast_2d(np.asarray(scale, dtype=float)))
        try:
            factor = np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            evals, evecs = np.linalg.eigh(s)
            keep = evals > evals.max() * 1e-12
            factor = evecs[:, keep] * np.sqrt(evals[keep])
    factor = np.atleast_2d(np.asarray(factor, dtype=float))
    r = factor.shape[1]
    if dof >= r:
        a = _bartlett(r, dof, rng)
        core = a @ a.T
    else:
        z = rng.standard_normal((int(dof), r))
        core = z.T @ z
    return _linalg.symmetrize(factor @ core @ factor.T)


# --- generic envelope designs -------------------------------------------------


@dataclass(frozen=True)
class GenericEnvelopeSpec:
    """Population pair ``M = G Omega G' + G0 Omega0 G0'``, ``U = G Phi G'``."""

    p: int
    u: int
    model: str
    gamma: EnvelopeBasis
    omega: np.ndarray
    omega0: np.ndarray
    phi: np.ndarray

    @property
    def m(self) -> np.ndarray:
        g = self.gamma.gamma
        g0 = self.gamma.complement().gamma
        return _linalg.symmetrize(g @ self.omega @ g.T + g0 @ self.omega0 @ g0.T)

    @property
    def u_matrix(self) -> np.ndarray:
        g = self.gamma.gamma
        return _linalg.symmetrize(g @ self.phi @ g.T)

    @property
    def u_factor(self) -> np.ndarray:
        """``B`` (``p x u``) with ``U = B B'``."""
        evals, evecs = np.linalg.eigh(_linalg.symmetrize(self.phi))
        root = evecs * np.sqrt(np.clip(evals, 0.0, None))
        return self.gamma.gamma @ root

    def population(self, n: int) -> MomentPair:
        """The exact pair, with ``n`` used only by the penalty."""
        return MomentPair(self.m, self.u_matrix, n)

    def sample(self, n: int, rng: np.random.Generator) -> MomentPair:
        """``M_hat ~ W_p(M/n, n)`` and ``U_hat ~ W_p(U/n, n)``."""
        m_hat = sample_wishart(self.m / n, n, rng)
        u_hat = sample_wishart(None, n, rng, factor=self.u_factor / np.sqrt(n))
        return MomentPair(m_hat, u_hat, n)


def _uniform_gram(d: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.uniform(0.0, 1.0, size=(d, d))
    return _linalg.symmetrize(a @ a.T)


def _rotated(evals, rng) -> np.ndarray:
    o = random_orthogonal(len(evals), rng)
    return _linalg.symmetrize((o * np.asarray(evals, dtype=float)) @ o.T)


def gen_generic(model: str, p: int = 20, u: int = 5, rng: Optional[np.random.Generator] = None) -> GenericEnvelopeSpec:
    """Draw a generic envelope design.

    Model I takes ``Omega``, ``Omega0`` and ``Phi`` all as ``A A'`` with
    ``A`` uniform on ``[0, 1]``. Model II uses ``O D O'`` with eigenvalues
    ``1, ..., u`` for ``Omega`` and ``exp`` of an even grid from ``-4`` to
    ``3`` for ``Omega0`` (step 0.5 when ``p - u = 15``). Model III is Model
    II with ``Omega0 = 0.1 I``.
    """
    if model not in GENERIC_MODELS:
        raise ValueError(f"model must be one of {GENERIC_MODELS}, got {model!r}")
    if not 1 <= u < p:
        raise ValueError(f"need 1 <= u < p, got u={u}, p={p}")
    rng = np.random.default_rng() if rng is None else rng
    gamma = random_semiorthogonal(p, u, rng)
    if model == "I":
        omega = _uniform_gram(u, rng)
        omega0 = _uniform_gram(p - u, rng)
    else:
        omega = _rotated(np.arange(1, u + 1), rng)
        if model == "II":
            omega0 = _rotated(np.exp(np.linspace(-4.0, 3.0, p - u)), rng)
        else:
            omega0 = 0.1 * np.eye(p - u)
    phi = _uniform_gram(u, rng)
    return GenericEnvelopeSpec(p=p, u=u, model=model, gamma=gamma, omega=omega, omega0=omega0, phi=phi)


# --- regression designs ---------------------------------------------------------


@dataclass(frozen=True)
class RegressionSpec:
    """Parameters of a regression envelope design.

    ``sigma`` is the error covariance (linear) or the predictor covariance
    (logistic, Cox); ``beta = gamma @ eta`` is ``p x q`` (linear) or a
    ``p``-column (logistic, Cox).
    """

    model: str
    p: int
    u: int
    q: int
    gamma: EnvelopeBasis
    omega: np.ndarray
    omega0: np.ndarray
    eta: np.ndarray

    @property
    def beta(self) -> np.ndarray:
        return self.gamma.gamma @ self.eta

    @property
    def sigma(self) -> np.ndarray:
        g = self.gamma.gamma
        g0 = self.gamma.complement().gamma
        return _linalg.symmetrize(g @ self.omega @ g.T + g0 @ self.omega0 @ g0.T)


def regression_spec(model: str, rng: np.random.Generator, p: int = 10, u: int = 2, q: int = 1) -> RegressionSpec:
    """Draw the parameters of a linear, logistic or Cox envelope design.

    All three use ``Omega = O diag(1, 5) O'``. The linear and logistic
    designs use ``Omega0 = O0 diag(exp(-4), ..., exp(3)) O0'`` and
    ``eta`` of ones; the Cox design uses ``Omega0 = 0.1 I`` and ``eta``
    of 0.2. ``q > 1`` (linear only) gives a ``u x q`` ``eta`` of ones.
    """
    if model not in REGRESSION_MODELS:
        raise ValueError(f"model must be one of {REGRESSION_MODELS}, got {model!r}")
    if q != 1 and model != "linear":
        raise ValueError("only the linear design supports q > 1")
    if not 1 <= u < p:
        raise ValueError("need 1 <= u < p")
    gamma = random_semiorthogonal(p, u, rng)
    omega = _rotated(np.linspace(1.0, 5.0, u), rng)
    if model == "cox":
        omega0 = 0.1 * np.eye(p - u)
        eta = np.full((u, q), 0.2)
    else:
        omega0 = _rotated(np.exp(np.linspace(-4.0, 3.0, p - u)), rng)
        eta = np.ones((u, q))
    return RegressionSpec(model=model, p=p, u=u, q=q, gamma=gamma, omega=omega, omega0=omega0, eta=eta)


def gen_regression(spec: RegressionSpec, n: int, rng: np.random.Generator) -> RegressionData:
    """Draw ``n`` observations from ``spec``.

    * linear: ``X ~ N(0, I_q)``, ``Y = beta X + e``, ``e ~ N(0, Sigma)``.
    * logistic: ``X ~ N(0, Sigma)``, ``Y ~ Bernoulli(expit(beta' X))``.
    * Cox: ``X ~ N(0, Sigma)``, failure time with hazard
      ``5 t^4 exp(beta' X)`` (Weibull, shape 5), event flag
      ``~ Bernoulli(0.5)`` independent of everything else.
    """
    chol = np.linalg.cholesky(spec.sigma)
    beta = spec.beta
    if spec.model == "linear":
        x = rng.standard_normal((n, spec.q))
        y = x @ beta.T + rng.standard_normal((n, spec.p)) @ chol.T
        return RegressionData(x, y)
    x = rng.standard_normal((n, spec.p)) @ chol.T
    lin = x @ beta[:, 0]
    if spec.model == "logistic":
        prob = 1.0 / (1.0 + np.exp(-lin))
        y = (rng.uniform(size=n) < prob).astype(float)
        return RegressionData(x, y)
    # S(t | x) = exp(-t^5 e^{lin}), so T = (E e^{-lin})^{1/5} with E ~ Exp(1)
    t = (rng.standard_exponential(n) * np.exp(-lin)) ** 0.2
    event = (rng.uniform(size=n) < 0.5).astype(int)
    return RegressionData(x, t, censoring=event)


# --- reports --------------------------------------------------------------------


@dataclass(frozen=True)
class McRow:
    """Aggregated outcome of one (model, n, method, C) cell.

    ``counts[k]`` is the number of replicates that selected dimension
    ``k``. ``errors`` maps an estimator name to ``(mean, standard error)``
    of ``||beta_hat - beta||_F`` over replicates.
    """

    table: str
    model: str
    n: int
    method: str
    constant_c: float
    true_u: int
    counts: tuple
    errors: dict = field(default_factory=dict)

    @property
    def replicates(self) -> int:
        return int(sum(self.counts))

    def percent(self, k: int) -> float:
        return 100.0 * self.counts[k] / self.replicates

    @property
    def correct_pct(self) -> float:
        return self.percent(self.true_u)

    @property
    def mean_selected(self) -> float:
        return float(np.dot(np.arange(len(self.counts)), self.counts) / self.replicates)


CSV_FIELDS = (
    "table",
    "model",
    "n",
    "method",
    "C",
    "replicates",
    "true_u",
    "correct_pct",
    "mean_selected",
    "counts",
    "err_standard",
    "se_standard",
    "err_true_u",
    "se_true_u",
    "err_selected",
    "se_selected",
)


@dataclass(frozen=True)
class McReport:
    """Rows of a Monte Carlo experiment plus its provenance."""

    table: str
    replicates: int
    seed: int
    rows: tuple
    wall_seconds: float = field(default=0.0, compare=False)

    def row(self, model: str, n: int, method: str, constant_c: Optional[float] = None) -> McRow:
        for r in self.rows:
            if r.model == model and r.n == n and r.method == method:
                if constant_c is None or r.constant_c == constant_c:
                    return r
        raise KeyError((model, n, method, constant_c))

    def to_records(self) -> list[dict]:
        out = []
        for r in self.rows:
            rec = {
                "table": r.table,
                "model": r.model,
                "n": r.n,
                "method": r.method,
                "C": r.constant_c,
                "replicates": r.replicates,
                "true_u": r.true_u,
                "correct_pct": r.correct_pct,
                "mean_selected": r.mean_selected,
                "counts": list(r.counts),
            }
            for name in ("standard", "true_u", "selected"):
                mean, se = r.errors.get(name, (None, None))
                rec[f"err_{name}"] = mean
                rec[f"se_{name}"] = se
            out.append(rec)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for rec in self.to_records():
            row = []
            for key in CSV_FIELDS:
                v = rec[key]
                if key == "counts":
                    v = ";".join(str(c) for c in v)
                elif isinstance(v, float):
                    v = repr(v)
                elif v is None:
                    v = ""
                row.append(v)
            writer.writerow(row)
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned table: correct %, mean selected dimension, errors (4 decimals)."""
        header = ["model", "n", "method", "C", "correct%", "mean_u", "u+1 %", "standard", "true u", "selected"]
        lines = []
        for r in self.rows:
            over = r.percent(r.true_u + 1) if r.true_u + 1 < len(r.counts) else 0.0
            errs = [r.errors.get(name) for name in ("standard", "true_u", "selected")]
            lines.append(
                [
                    r.model,
                    str(r.n),
                    r.method,
                    f"{r.constant_c:g}",
                    f"{r.correct_pct:.1f}",
                    f"{r.mean_selected:.2f}",
                    f"{over:.1f}",
                ]
                + [f"{e[0]:.4f}" if e else "-" for e in errs]
            )
        widths = [max(len(h), *(len(l[i]) for l in lines)) if lines else len(h) for i, h in enumerate(header)]
        fmt = "  ".join(f"{{:>{w}}}" for w in widths)
        title = f"{self.table}: {self.replicates} replicates, seed {self.seed}"
        return "\n".join([title, fmt.format(*header)] + [fmt.format(*l) for l in lines]) + "\n"


# --- replicate workers ------------------------------------------------------------


@dataclass(frozen=True)
class _Job:
    table: str
    model: str
    n: int
    rep: int
    seed: int
    methods: tuple
    constants: tuple
    spec: object
    optimizer: OptimizerSettings


def _select(mp, methods, constant_c, settings, kmax=None):
    """Objective vectors and bases for each method; one 1D path shared."""
    p = mp.dim
    config = SelectionConfig(constant_c=constant_c, kmax=kmax, optimizer=settings)
    path = run_1d_algorithm(mp, p - 1, settings)
    out = {}
    if "1d" in methods:
        out["1d"] = criterion_1d(path, mp, config)
    if "fg" in methods:
        out["fg"] = criterion_fg(mp, replace(config, method="fg"), path=path)
    return out


def _error(basis: EnvelopeBasis, beta_hat: np.ndarray, beta: np.ndarray) -> float:
    g = basis.gamma
    return float(np.linalg.norm(g @ (g.T @ beta_hat) - beta))


def _run_job(job: _Job) -> dict:
    rng = make_rng(job.seed, _TABLE_TAG[job.table], _MODEL_TAG[job.model], job.n, job.rep)
    settings = replace(job.optimizer, seed=_derived_seed(job.seed, 99, _TABLE_TAG[job.table], job.n, job.rep))
    result = {"selected": {}, "errors": {}}
    if job.table == "T2":
        mp = job.spec.sample(job.n, rng)
        for method, res in _select(mp, job.methods, 1.0, settings).items():
            result["selected"][(method, 1.0)] = res.selected_u
        return result

    spec = job.spec
    data = gen_regression(spec, job.n, rng)
    if spec.model == "linear":
        mp = response_envelope_moments(data)
    elif spec.model == "logistic":
        mp = glm_envelope_moments(data)
    else:
        mp = cox_envelope_moments(data)
    beta = spec.beta
    beta_hat = mp.beta_hat
    result["errors"]["standard"] = float(np.linalg.norm(beta_hat - beta))
    for method, res in _select(mp, job.methods, job.constants[0], settings).items():
        for c in job.constants:
            sel = res.with_constant(c)
            result["selected"][(method, c)] = sel.selected_u
        if job.table == "T3":
            u = spec.u
            base_u = res.bases[u]
            result["errors"][(method, "true_u")] = _error(base_u, beta_hat, beta)
            result["errors"][(method, "selected")] = _error(res.bases[res.selected_u], beta_hat, beta)
    return result


# --- driver ------------------------------------------------------------------------


_DEFAULT_GRID = {
    "T2": {"models": GENERIC_MODELS, "ns": (150, 200, 250, 300, 400, 800), "constants": (1.0,)},
    "T3": {"models": REGRESSION_MODELS, "ns": (150, 300, 600), "constants": (1.0,)},
    "T4": {"models": ("response",), "ns": (150, 300, 600), "constants": (1.0, 3.0, 5.0, 10.0)},
}


def scenario_spec(table: str, model: str, seed: int):
    """The fixed parameters of one scenario, drawn from its own substream."""
    rng = make_rng(seed, _TABLE_TAG[table], _MODEL_TAG[model], 0)
    if table == "T2":
        return gen_generic(model, 20, 5, rng)
    if table == "T3":
        return regression_spec(model, rng)
    return regression_spec("linear", rng, q=3)


def run_table(
    table: str,
    replicates: int = 200,
    seed: int = 0,
    models: Optional[Sequence[str]] = None,
    ns: Optional[Sequence[int]] = None,
    methods: Sequence[str] = ("1d", "fg"),
    constants: Optional[Sequence[float]] = None,
    optimizer: OptimizerSettings = OptimizerSettings(),
    workers: Optional[int] = None,
) -> McReport:
    """Run one of the experiments ``"T2"``, ``"T3"``, ``"T4"``.

    Parameters
    ----------
    models, ns, constants
        Subsets of the default grid (all models, all sample sizes; T4 uses
        ``C`` in ``{1, 3, 5, 10}``, the others ``C = 1``).
    methods
        Any of ``"1d"`` and ``"fg"``.
    optimizer
        Solver settings; the seed is replaced per replicate.
    workers
        Number of worker processes; ``None`` or ``1`` runs serially. The
        report does not depend on this value.
    """
    if table not in TABLES:
        raise ValueError(f"table must be one of {TABLES}, got {table!r}")
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    methods = tuple(methods)
    if not methods or any(m not in ("1d", "fg") for m in methods):
        raise ValueError("methods must be a non-empty subset of ('1d', 'fg')")
    grid = _DEFAULT_GRID[table]
    models = tuple(models) if models is not None else grid["models"]
    for m in models:
        if m not in grid["models"]:
            raise ValueError(f"model {m!r} is not part of {table}")
    ns = tuple(int(n) for n in ns) if ns is not None else grid["ns"]
    constants = tuple(float(c) for c in constants) if constants is not None else grid["constants"]
    if table == "T2" and constants != (1.0,):
        raise ValueError("T2 uses C = 1 only")

    start = time.perf_counter()
    specs = {m: scenario_spec(table, m, seed) for m in models}
    jobs = [
        _Job(table, m, n, r, int(seed), methods, constants, specs[m], optimizer)
        for m in models
        for n in ns
        for r in range(replicates)
    ]
    if workers is None or workers <= 1:
        outcomes = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))

    rows = []
    it = iter(outcomes)
    for m in models:
        spec = specs[m]
        p, u = spec.p, spec.u
        for n in ns:
            cell = [next(it) for _ in range(replicates)]
            for method in methods:
                for c in constants:
                    counts = np.zeros(p + 1, dtype=int)
                    for o in cell:
                        counts[o["selected"][(method, c)]] += 1
                    errors = {}
                    if table == "T3":
                        for name, key in (
                            ("standard", "standard"),
                            ("true_u", (method, "true_u")),
                            ("selected", (method, "selected")),
                        ):
                            vals = np.array([o["errors"][key] for o in cell])
                            se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
                            errors[name] = (float(vals.mean()), se)
                    rows.append(McRow(table, m, n, method, c, u, tuple(int(v) for v in counts), errors))
    return McReport(
        table=table,
        replicates=replicates,
        seed=int(seed),
        rows=tuple(rows),
        wall_seconds=time.perf_counter() - start,
    )
