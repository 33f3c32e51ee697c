"""Command-line front end.

Three commands::

    envdim select   --family response --input data.csv [--criterion both] [--C 1]
    envdim fit      --family glm --input data.csv --dim 2 [--split 0.2]
    envdim simulate --table T3 --replicates 200 --seed 7 [--format csv]

Data files are CSV with a header row. Response columns start with ``y_``,
predictors with ``x_``; an ``event`` column holds Cox event flags. The
``generic`` family reads ``M_hat`` from ``--input`` and ``U_hat`` from
``--input-u`` (square CSV matrices without header) and needs ``--n``.

Flags given on the command line override the ``key = value`` lines of a
``--config`` file. Machine output goes to ``--output`` (or stdout), logs go
to stderr. Exit status: 0 success, 1 usage or input error, 2 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .core import EnvelopeBasis, MomentPair, envelope_fit_from_basis
from .exceptions import NumericalError
from .manifold import OptimizerSettings, solve_grassmann
from .moments import (
    RegressionData,
    cox_envelope_moments,
    glm_envelope_moments,
    partial_envelope_moments,
    predictor_envelope_moments,
    response_envelope_moments,
    standard_logistic_fit,
)
from .selection import SelectionConfig, criterion_1d, criterion_fg, run_1d_algorithm
from .simulate import TABLES, run_table

__all__ = ["main", "build_parser", "load_csv_data", "family_moments", "heldout_error", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1
FAMILIES = ("response", "predictor", "partial", "glm", "cox", "generic")
CRITERIA = ("1d", "fg", "both")
FORMATS = ("json", "csv", "text")

log = logging.getLogger("envdim")


class InputError(Exception):
    """Malformed command line, config file or data file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --- option handling ----------------------------------------------------------

# (flag, dest, type, default, help); defaults are applied after the config file
_COMMON = [
    ("--family", "family", str, "response", f"one of {', '.join(FAMILIES)}"),
    ("--criterion", "criterion", str, "1d", "1d, fg or both"),
    ("--C", "constant_c", float, 1.0, "penalty constant; C = q suits a p x q coefficient matrix"),
    ("--kmax", "kmax", int, None, "largest dimension considered (default p)"),
    ("--seed", "seed", int, 0, "seed for random starts, splits and simulations"),
    ("--input", "input", str, None, "data CSV, or the M_hat matrix for --family generic"),
    ("--input-u", "input_u", str, None, "U_hat matrix CSV for --family generic"),
    ("--n", "n", int, None, "sample size for --family generic"),
    ("--x1", "x1", str, None, "comma-separated X1 column names for --family partial"),
    ("--output", "output", str, None, "output path (default stdout)"),
    ("--format", "format", str, "json", "json or csv (simulate also accepts text)"),
    ("--starts", "starts", int, 10, "multistarts per solve"),
    ("--timing", "timing", bool, False, "include wall-clock seconds in the output"),
]
_FIT = [
    ("--dim", "dim", str, None, "envelope dimension, or 'all' for every k"),
    ("--split", "split", float, None, "held-out fraction for prediction error"),
]
_SIM = [
    ("--table", "table", str, None, "T2, T3 or T4"),
    ("--replicates", "replicates", int, 200, "replicates per cell"),
    ("--models", "models", str, None, "comma-separated subset of the table's models"),
    ("--ns", "ns", str, None, "comma-separated subset of sample sizes"),
    ("--workers", "workers", int, 1, "worker processes"),
]


def _add(parser, specs):
    for flag, dest, typ, _default, helptext in specs:
        if typ is bool:
            parser.add_argument(flag, dest=dest, action="store_const", const=True, default=None, help=helptext)
        else:
            parser.add_argument(flag, dest=dest, type=typ, default=None, help=helptext)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="envdim", description="Envelope dimension selection and moment-based envelope fits.")
    parser.add_argument("--version", action="version", version=f"envdim {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, extra, helptext in (
        ("select", [], "select the envelope dimension"),
        ("fit", _FIT, "fit the envelope at a given dimension"),
        ("simulate", _SIM, "run a Monte Carlo table"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add(p, _COMMON + extra)
        p.add_argument("--config", dest="config", default=None, help="key = value file; flags override it")
    return parser


def _read_config(path: str) -> dict:
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from exc
    for i, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{i}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    specs = _COMMON + (_FIT if args.command == "fit" else _SIM if args.command == "simulate" else [])
    by_dest = {s[1]: s for s in specs}
    aliases = {"c": "constant_c", "C": "constant_c"}
    config = _read_config(args.config) if args.config else {}
    for key, value in config.items():
        dest = aliases.get(key, key)
        if dest not in by_dest:
            raise InputError(f"unknown config key {key!r}")
        if getattr(args, dest) is not None:
            continue  # the command line wins
        typ = by_dest[dest][2]
        try:
            if typ is bool:
                parsed = value.lower() in ("1", "true", "yes", "on")
            else:
                parsed = typ(value)
        except ValueError as exc:
            raise InputError(f"config key {key!r}: cannot parse {value!r}") from exc
        setattr(args, dest, parsed)
    for flag, dest, _typ, default, _h in specs:
        if getattr(args, dest) is None:
            setattr(args, dest, default)
    _validate(args)
    return args


def _validate(args):
    if args.family not in FAMILIES:
        raise InputError(f"--family must be one of {FAMILIES}")
    if args.criterion not in CRITERIA:
        raise InputError(f"--criterion must be one of {CRITERIA}")
    allowed = FORMATS if args.command == "simulate" else FORMATS[:2]
    if args.format not in allowed:
        raise InputError(f"--format must be one of {allowed}")
    if not args.constant_c > 0:
        raise InputError("--C must be positive")
    if args.seed < 0:
        raise InputError("--seed must be nonnegative")
    if args.starts < 1:
        raise InputError("--starts must be positive")
    if args.command == "fit":
        if args.dim is None:
            raise InputError("fit needs --dim")
        if args.split is not None and not 0 < args.split < 1:
            raise InputError("--split must lie in (0, 1)")
    if args.command == "simulate":
        if args.table not in TABLES:
            raise InputError(f"--table must be one of {TABLES}")
        if args.replicates < 1:
            raise InputError("--replicates must be positive")


# --- data ingestion ------------------------------------------------------------


def load_csv_data(path: str) -> tuple[RegressionData, list[str], list[str]]:
    """Read a data CSV into :class:`RegressionData`.

    Returns the data and the response and predictor column names.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    if not rows:
        raise InputError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    y_cols = [i for i, h in enumerate(header) if h.startswith("y_")]
    x_cols = [i for i, h in enumerate(header) if h.startswith("x_")]
    ev_cols = [i for i, h in enumerate(header) if h == "event"]
    if not y_cols or not x_cols:
        raise InputError(f"{path}: header needs y_ and x_ columns")
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    try:
        table = np.array([[float(c) for c in r] for r in body], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric entry ({exc})") from exc
    if table.ndim != 2 or table.shape[1] != len(header):
        raise InputError(f"{path}: every row needs {len(header)} fields")
    event = table[:, ev_cols[0]] if ev_cols else None
    try:
        data = RegressionData(table[:, x_cols], table[:, y_cols], censoring=event)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    return data, [header[i] for i in y_cols], [header[i] for i in x_cols]


def _load_matrix(path: str) -> np.ndarray:
    try:
        a = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise InputError(f"cannot read {path}") from exc
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    if a.shape[0] != a.shape[1]:
        raise InputError(f"{path}: matrix must be square, got {a.shape}")
    return a


def family_moments(family: str, data: RegressionData, x1: Optional[Sequence[int]] = None) -> MomentPair:
    """Moment pair of ``family`` for a data set."""
    if family == "response":
        return response_envelope_moments(data)
    if family == "predictor":
        return predictor_envelope_moments(data)
    if family == "partial":
        if not x1:
            raise InputError("--family partial needs --x1")
        return partial_envelope_moments(data, x1)
    if family == "glm":
        return glm_envelope_moments(data)
    if family == "cox":
        if data.censoring is None:
            raise InputError("--family cox needs an 'event' column")
        return cox_envelope_moments(data)
    raise InputError(f"family {family!r} does not take a data file")


def _moments_from_args(args) -> tuple[MomentPair, Optional[RegressionData], dict]:
    if args.input is None:
        raise InputError("--input is required")
    if args.family == "generic":
        if args.input_u is None or args.n is None:
            raise InputError("--family generic needs --input, --input-u and --n")
        m, u = _load_matrix(args.input), _load_matrix(args.input_u)
        if m.shape != u.shape:
            raise InputError("M_hat and U_hat differ in shape")
        try:
            mp = MomentPair(m, u, args.n)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        return mp, None, {}
    data, y_names, x_names = load_csv_data(args.input)
    x1 = None
    if args.x1:
        names = [s.strip() for s in args.x1.split(",") if s.strip()]
        missing = [s for s in names if s not in x_names]
        if missing:
            raise InputError(f"--x1 names unknown predictors {missing}")
        x1 = [x_names.index(s) for s in names]
    try:
        mp = family_moments(args.family, data, x1)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    return mp, data, {"responses": y_names, "predictors": x_names}


# --- output --------------------------------------------------------------------


def _encode(obj) -> str:
    """JSON with every float written to 17 significant digits."""
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return format(x, ".17g") if math.isfinite(x) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist())
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def _write(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    # write-then-rename so a failure never leaves a partial file
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".envdim-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in r])
    return buf.getvalue()


# --- commands ------------------------------------------------------------------


def _settings(args) -> OptimizerSettings:
    return OptimizerSettings(seed=args.seed, num_multistarts=args.starts)


def cmd_select(args) -> str:
    mp, _data, names = _moments_from_args(args)
    settings = _settings(args)
    config = SelectionConfig(constant_c=args.constant_c, kmax=args.kmax, optimizer=settings)
    kmax = config.resolve_kmax(mp.dim)
    steps = min(kmax, mp.dim - 1)
    path = run_1d_algorithm(mp, steps, settings) if steps >= 1 else None
    methods = ("1d", "fg") if args.criterion == "both" else (args.criterion,)
    results = {}
    for method in methods:
        if method == "1d":
            res = criterion_1d(path, mp, config) if path is not None else criterion_fg(mp, config)
            res = replace(res, method="1d")
        else:
            res = criterion_fg(mp, replace(config, method="fg"), path=path)
        fit = envelope_fit_from_basis(res.bases[res.selected_u], mp)
        results[method] = (res, fit)

    if args.format == "csv":
        rows = []
        for method, (res, _fit) in results.items():
            for k in range(res.kmax + 1):
                rows.append(
                    [method, k, float(res.criterion_values[k]), float(res.objective_values[k]), int(k == res.selected_u)]
                )
        return _csv_text(["criterion", "k", "criterion_value", "objective_value", "selected"], rows)

    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": "select",
        "family": args.family,
        "n": mp.n,
        "p": mp.dim,
        "constant_c": float(args.constant_c),
        "kmax": kmax,
        "seed": args.seed,
    }
    doc.update(names)
    doc["criteria"] = {
        method: {
            "selected_u": res.selected_u,
            "criterion_values": res.criterion_values,
            "objective_values": res.objective_values,
            "gamma": fit.basis.gamma,
            "theta_env": fit.theta_env,
            "beta_env": fit.beta_env,
        }
        for method, (res, fit) in results.items()
    }
    return _encode(doc) + "\n"


def _basis_at(mp: MomentPair, k: int, method: str, settings: OptimizerSettings, path) -> EnvelopeBasis:
    p = mp.dim
    if k == 0:
        return EnvelopeBasis.empty(p)
    if k == p:
        return EnvelopeBasis(np.eye(p), check=False)
    if method == "fg":
        return solve_grassmann(mp, k, init=path.basis(k), settings=settings)
    return path.basis(k)


def heldout_error(
    family: str,
    data: RegressionData,
    dims: Sequence[int],
    fraction: float,
    seed: int,
    method: str = "1d",
    settings: Optional[OptimizerSettings] = None,
    x1: Optional[Sequence[int]] = None,
) -> dict:
    """Test-set error of envelope fits at each dimension in ``dims``.

    The rows are split at random (seeded) with ``fraction`` held out. The
    ``glm`` family reports the misclassification rate of the fitted
    logistic rule; the linear families report mean squared prediction
    error summed over responses.
    """
    if family not in ("response", "predictor", "partial", "glm"):
        raise InputError(f"held-out evaluation is not defined for the {family} family")
    settings = settings or OptimizerSettings(seed=seed)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 7])))
    n = data.n
    n_test = int(round(fraction * n))
    if not 1 <= n_test <= n - 2:
        raise InputError("--split leaves an empty training or test set")
    perm = rng.permutation(n)
    test, train = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    cens = None if data.censoring is None else data.censoring[train]
    tr = RegressionData(data.x[train], data.y[train], censoring=cens)
    mp = family_moments(family, tr, x1)
    p = mp.dim
    path = run_1d_algorithm(mp, p - 1, settings)
    x_te, y_te = data.x[test], data.y[test]
    xbar, ybar = tr.x.mean(axis=0), tr.y.mean(axis=0)
    out = {}
    intercept = standard_logistic_fit(tr).intercept[0] if family == "glm" else None
    for k in dims:
        fit = envelope_fit_from_basis(_basis_at(mp, k, method, settings, path), mp)
        b = fit.beta_env
        if family == "glm":
            eta = intercept + (x_te - xbar) @ b[:, 0]
            out[k] = float(np.mean((eta > 0).astype(float) != y_te[:, 0]))
        else:
            if family == "predictor":
                pred = ybar + (x_te - xbar) @ b
            elif family == "partial":
                # refit of the full coefficient with the X1 block projected
                full = response_envelope_moments(tr).beta_hat.copy()
                full[:, list(x1)] = b
                pred = ybar + (x_te - xbar) @ full.T
            else:
                pred = ybar + (x_te - xbar) @ b.T
            out[k] = float(np.mean(np.sum((y_te - pred) ** 2, axis=1)))
    return out


def _parse_dims(spec: str, p: int) -> list[int]:
    if spec.strip().lower() == "all":
        return list(range(p + 1))
    try:
        dims = [int(s) for s in spec.split(",")]
    except ValueError as exc:
        raise InputError(f"--dim must be an integer, a comma list or 'all', got {spec!r}") from exc
    for k in dims:
        if not 0 <= k <= p:
            raise InputError(f"--dim {k} outside [0, {p}]")
    return dims


def cmd_fit(args) -> str:
    mp, data, names = _moments_from_args(args)
    settings = _settings(args)
    dims = _parse_dims(args.dim, mp.dim)
    method = "fg" if args.criterion == "fg" else "1d"
    path = run_1d_algorithm(mp, mp.dim - 1, settings) if mp.dim > 1 else None
    fits = {k: envelope_fit_from_basis(_basis_at(mp, k, method, settings, path), mp) for k in dims}
    errors = {}
    if args.split is not None:
        if data is None:
            raise InputError("--split needs a data file, not matrices")
        x1 = None
        if args.x1:
            x1 = [names["predictors"].index(s.strip()) for s in args.x1.split(",") if s.strip()]
        errors = heldout_error(args.family, data, dims, args.split, args.seed, method, settings, x1)

    if args.format == "csv":
        rows = [[k, float(fits[k].objective), errors.get(k, "")] for k in dims]
        return _csv_text(["k", "objective", "heldout_error"], rows)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": "fit",
        "family": args.family,
        "basis_from": method,
        "n": mp.n,
        "p": mp.dim,
        "seed": args.seed,
    }
    doc.update(names)
    doc["fits"] = [
        {
            "k": k,
            "objective": f.objective,
            "gamma": f.basis.gamma,
            "eta_hat": f.eta_hat,
            "omega_hat": f.omega_hat,
            "omega0_hat": f.omega0_hat,
            "theta_env": f.theta_env,
            "beta_env": f.beta_env,
            "heldout_error": errors.get(k),
        }
        for k, f in fits.items()
    ]
    if args.split is not None:
        doc["split"] = args.split
    return _encode(doc) + "\n"


def cmd_simulate(args) -> str:
    methods = ("1d", "fg") if args.criterion == "both" else (args.criterion,)
    models = [s.strip() for s in args.models.split(",")] if args.models else None
    try:
        ns = [int(s) for s in args.ns.split(",")] if args.ns else None
    except ValueError as exc:
        raise InputError("--ns must be a comma-separated list of integers") from exc
    constants = None if args.table == "T2" else ([args.constant_c] if args.constant_c != 1.0 or args.table == "T3" else None)
    try:
        report = run_table(
            args.table,
            replicates=args.replicates,
            seed=args.seed,
            models=models,
            ns=ns,
            methods=methods,
            constants=constants,
            optimizer=OptimizerSettings(num_multistarts=args.starts),
            workers=args.workers,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    log.info("simulate %s finished in %.1f s", args.table, report.wall_seconds)
    if args.format == "csv":
        return report.to_csv()
    if args.format == "text":
        return report.to_text()
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": "simulate",
        "table": report.table,
        "replicates": report.replicates,
        "seed": report.seed,
        "rows": report.to_records(),
    }
    if args.timing:
        doc["wall_seconds"] = report.wall_seconds
    return _encode(doc) + "\n"


def _configure_logging():
    # bind to the current stderr on every call so redirection is honoured
    for h in list(log.handlers):
        log.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("envdim: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    log.propagate = False


_COMMANDS = {"select": cmd_select, "fit": cmd_fit, "simulate": cmd_simulate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    start = time.perf_counter()
    try:
        args = _resolve(args)
        text = _COMMANDS[args.command](args)
        if args.timing and args.format == "json" and args.command != "simulate":
            doc = json.loads(text)
            doc["wall_seconds"] = time.perf_counter() - start
            text = _encode(doc) + "\n"
        _write(text, args.output)
    except InputError as exc:
        print(f"envdim: error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"envdim: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"envdim: error: {exc}", file=sys.stderr)
        return 1
    log.info("%s done in %.2f s", args.command, time.perf_counter() - start)
    return 0


if __name__ == "__main__":
    sys.exit(main())
