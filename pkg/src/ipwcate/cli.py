"""Command-line interface: ``simulate``, ``estimate`` and ``inspect``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Output files are written to a temporary name and renamed on success, so a
failed run never leaves a partial file behind.
"""

import argparse
import json
import os
import re
import sys
import tempfile
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pandas as pd
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .bandwidth import GROUP_PRESETS, SUPPORTED_ORDERS, plan_bandwidths, plan_for_group, rate_conditions
from .data import Dataset
from .dimred import init_directions
from .estimators import ESTIMATORS, fit_curve
from .kernels import KernelSpec, kernel_l2_norm_sq, kernel_moment
from .propensity import ConvergenceError
from .simulate import GROUPS, MODELS, SCENARIOS, DgpSpec, generate, run_monte_carlo

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

_SCALE = re.compile(r"^\s*([0-9.eE+-]+)\s*\*\s*sd\s*\*\s*n\s*\^\s*\(?\s*([0-9./eE+-]+)\s*\)?\s*$")


def parse_bandwidth(text):
    """``"0.3"`` -> absolute value; ``"0.85*sd*n^-1/9"`` -> ("scale", 0.85, -1/9)."""
    try:
        value = float(text)
    except ValueError:
        m = _SCALE.match(text)
        if not m:
            raise UsageError(f"bandwidth {text!r} is neither a number nor of the form C*sd*n^E")
        try:
            return ("scale", float(m.group(1)), float(Fraction(m.group(2))))
        except (ValueError, ZeroDivisionError):
            raise UsageError(f"cannot parse the exponent in bandwidth {text!r}")
    if not value > 0:
        raise UsageError(f"bandwidth must be positive, got {text}")
    return ("abs", value)


def resolve_bandwidth(spec, sample, n):
    if spec[0] == "abs":
        return spec[1]
    sd = float(np.mean(np.std(np.atleast_2d(np.asarray(sample).T).T, axis=0, ddof=1)))
    if not sd > 0:
        raise DataError("cannot scale a bandwidth by a zero standard deviation")
    return spec[1] * sd * n ** spec[2]


def _atomic_write(path, writer):
    """Call ``writer(tmp_path)`` and move the result into place."""
    path = os.path.abspath(path)
    folder = os.path.dirname(path)
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.splitext(path)[1])
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _write_json(path, payload):
    def writer(tmp):
        with open(tmp, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
    _atomic_write(path, writer)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return str(obj)


def _sidecar(path):
    return os.path.splitext(path)[0] + ".json"


def _versions():
    return {"ipwcate": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "pandas": pd.__version__, "python": sys.version.split()[0]}


def _split(text):
    return [c.strip() for c in text.split(",") if c.strip()] if text else []


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

def cmd_simulate(args):
    est = tuple(_split(args.estimators)) or None
    try:
        spec = DgpSpec(model=args.model, scenario=args.scenario, group=args.group, n=args.n,
                       seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    try:
        report = run_monte_carlo(spec, est, args.reps, workers=args.workers, alpha=args.alpha,
                                 center=args.center, bandwidth_mode=args.bandwidth_mode)
    except ValueError as exc:
        raise UsageError(str(exc))
    except RuntimeError as exc:
        raise ConvergenceError(str(exc))
    base = os.path.splitext(args.output)[0]
    _atomic_write(args.output, report.to_csv)
    _atomic_write(base + "_releff.csv",
                  lambda tmp: report.releff.to_csv(tmp, index=False, float_format="%.17g"))
    meta = dict(report.meta, versions=_versions(), command="simulate")
    _write_json(_sidecar(args.output), meta)
    if report.flagged:
        print(f"warning: {report.failures} failed replications (> 1%)", file=sys.stderr)
    print(f"wrote {args.output} ({report.replications} replications)")
    return EXIT_OK


# --------------------------------------------------------------------------
# estimate
# --------------------------------------------------------------------------

def load_dataset(path, z_cols, treatment, outcome, covariates=None, extra=()):
    """Read a CSV into a Dataset; Z columns are placed first in X."""
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise DataError(f"input file not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot parse {path}: {exc}")
    names = list(z_cols) + [treatment, outcome]
    if len(set(names)) != len(names):
        raise UsageError("Z, treatment and outcome columns must be distinct")
    if covariates is None:
        covariates = [c for c in frame.columns if c not in (treatment, outcome) and c not in z_cols
                      and c not in extra]
    covariates = [c for c in covariates if c not in z_cols]
    missing = [c for c in names + list(covariates) + list(extra) if c not in frame.columns]
    if missing:
        raise UsageError(f"columns not found in {path}: {missing}")
    used = list(z_cols) + list(covariates) + [treatment, outcome] + list(extra)
    sub = frame[used]
    bad_rows = np.flatnonzero(sub.isna().any(axis=1).to_numpy())
    if bad_rows.size:
        shown = ", ".join(str(i + 1) for i in bad_rows[:20])
        raise DataError(f"missing values in {bad_rows.size} data rows: {shown}"
                        + (" ..." if bad_rows.size > 20 else ""))
    try:
        num = sub.apply(pd.to_numeric, errors="raise").to_numpy(dtype=float)
    except (ValueError, TypeError) as exc:
        raise DataError(f"non-numeric data: {exc}")
    k = len(z_cols) + len(covariates)
    X = num[:, :k]
    D, Y = num[:, k], num[:, k + 1]
    if not np.all((D == 0) | (D == 1)):
        raise DataError(f"treatment column {treatment!r} must be binary 0/1")
    if D.min() == D.max():
        raise DataError(f"treatment column {treatment!r} has no variation")
    data = Dataset(X=X, D=D, Y=Y, z_cols=tuple(range(len(z_cols))),
                   columns=list(z_cols) + list(covariates))
    return data, {c: num[:, k + 2 + i] for i, c in enumerate(extra)}


def default_grid(Z, size=50, trim=0.05):
    """Equispaced points between the 5% and 95% sample quantiles of each Z column."""
    axes = [np.linspace(*np.quantile(Z[:, j], [trim, 1 - trim]), size) for j in range(Z.shape[1])]
    if len(axes) == 1:
        return axes[0][:, None]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def cmd_estimate(args):
    z_cols = _split(args.z)
    if not z_cols:
        raise UsageError("--z needs at least one column")
    x_tilde = _split(args.x_tilde) or None
    extra = (args.propensity_column,) if args.propensity_column else ()
    covs = _split(args.covariates) or None
    data, extras = load_dataset(args.input, z_cols, args.treatment, args.outcome, covs, extra)
    est = args.estimator
    if est == "O" and not extra:
        raise UsageError("estimator O needs --propensity-column")
    names = list(data.columns)
    cols = None
    if x_tilde is not None:
        unknown = [c for c in x_tilde if c not in names]
        if unknown:
            raise UsageError(f"--x-tilde columns not among the covariates: {unknown}")
        cols = [names.index(c) for c in x_tilde]
    n, l = data.n, data.l
    k_tilde = (len(cols) if cols else data.k) if est == "N" else None
    r = args.r if est == "S" or k_tilde is None else None
    if est == "S" and not 1 <= args.r <= data.k:
        raise UsageError(f"--r must lie in [1, {data.k}]")
    consts = dict(GROUP_PRESETS[args.group])
    for key in ("a", "a1", "a2"):
        if getattr(args, key) is not None:
            consts[key] = getattr(args, key)
    try:
        plan = plan_bandwidths(n, l=l, r=r, k_tilde=k_tilde, mode="formula",
                               s=args.order, s1=args.order1, s2=args.order2, **consts)
    except ValueError as exc:
        raise UsageError(f"{exc}; pass --order/--order1/--order2 to choose kernel orders")

    mave_kwargs = {}
    updates = {}
    if args.h:
        updates["h"] = resolve_bandwidth(parse_bandwidth(args.h), data.Z, n)
    if args.h1 and est == "N":
        sample = data.X[:, cols] if cols else data.X
        updates["h1"] = resolve_bandwidth(parse_bandwidth(args.h1), sample, n)
    if args.h2 and est == "S":
        spec = parse_bandwidth(args.h2)
        if spec[0] == "scale":
            # the index SD is taken at the starting directions that MAVE then refines
            V0, _ = init_directions(data.D, data.X, r=args.r)
            mave_kwargs["V0"] = V0
            updates["h2"] = resolve_bandwidth(spec, data.X @ V0, n)
        else:
            updates["h2"] = spec[1]
    plan = replace(plan, **updates)

    grid = (np.asarray([float(v) for v in _split(args.grid)])[:, None] if args.grid
            else default_grid(data.Z, args.grid_size))
    if args.grid and l != 1:
        raise UsageError("--grid lists scalar points and needs a single Z column")
    p_oracle = extras.get(args.propensity_column) if extra else None
    try:
        result = fit_curve(data, est, plan, grid, alpha=args.alpha, x_tilde_cols=cols,
                           p_oracle=p_oracle, mave_kwargs=mave_kwargs or None)
    except ValueError as exc:
        raise DataError(str(exc))
    curve = result.curve
    if not np.all(np.isfinite(curve.tau_hat)):
        raise ConvergenceError("non-finite CATE estimates; the bandwidth may be too small")
    out = pd.DataFrame({("z" if l == 1 else z_cols[j]): curve.grid[:, j] for j in range(l)})
    out["tau_hat"] = curve.tau_hat
    out["sigma_sq"] = curve.sigma_hat_sq
    out["avar"] = curve.avar
    out["ci_lo"] = curve.ci_lo
    out["ci_hi"] = curve.ci_hi
    out["variance_form"] = curve.variance_form
    out["affiliation_t"] = "" if result.affiliation is None else result.affiliation.t
    out["unstable"] = curve.unstable.astype(int)
    _atomic_write(args.output,
                  lambda tmp: out.to_csv(tmp, index=False, float_format="%.17g"))
    meta = {
        "command": "estimate", "input": os.path.abspath(args.input), "estimator": est,
        "z": z_cols, "treatment": args.treatment, "outcome": args.outcome,
        "covariates": names, "x_tilde": x_tilde, "n": n, "alpha": args.alpha,
        "plan": plan.to_dict(), "rate_conditions": rate_conditions(plan),
        "n_trimmed": result.fit.n_trimmed, "propensity_kind": result.fit.kind,
        "versions": _versions(),
    }
    if result.affiliation is not None:
        meta["affiliation"] = {"t": result.affiliation.t,
                               "residuals": result.affiliation.residuals,
                               "tolerance": result.affiliation.tolerance}
    if result.mave is not None:
        meta["mave"] = {"V": result.mave.V, "converged": result.mave.converged,
                        "n_iter": result.mave.n_iter}
    _write_json(_sidecar(args.output), meta)
    print(f"wrote {args.output} ({len(out)} grid points, {est}, {curve.variance_form})")
    return EXIT_OK


# --------------------------------------------------------------------------
# inspect
# --------------------------------------------------------------------------

def cmd_inspect(args):
    if args.what == "kernel":
        spec = KernelSpec(order=args.order, dim=1)
        payload = {"order": args.order, "l2_norm_sq": kernel_l2_norm_sq(spec),
                   "moments": {str(p): kernel_moment(spec, p) for p in range(args.order + 1)}}
    elif args.what == "bandwidth":
        plan = plan_for_group(args.n, args.group, l=args.l, r=args.r, k_tilde=args.k_tilde,
                              mode=args.mode)
        payload = {"plan": plan.to_dict(), "rate_conditions": rate_conditions(plan)}
    else:
        spec = DgpSpec(model=args.model, scenario=args.scenario, n=args.n, seed=args.seed)
        data = generate(spec)
        frame = pd.DataFrame(data.X, columns=data.columns)
        frame["D"] = data.D.astype(int)
        frame["Y"] = data.Y
        frame["p_true"] = data.p_true
        if not args.output:
            raise UsageError("inspect dgp needs --output")
        _atomic_write(args.output,
                      lambda tmp: frame.to_csv(tmp, index=False, float_format="%.17g"))
        payload = {"wrote": args.output, "spec": {"model": spec.model, "scenario": spec.scenario,
                                                   "n": spec.n, "seed": spec.seed, "k": spec.k}}
    print(json.dumps(payload, indent=2, default=_json_default))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="ipwcate", description="IPW estimation of CATE curves.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a Monte Carlo study")
    s.add_argument("--model", required=True, choices=MODELS)
    s.add_argument("--scenario", default="I", choices=SCENARIOS)
    s.add_argument("--group", default="G1", choices=GROUPS)
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--reps", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--estimators", default="", help="comma list from O,P,N,S (default: all available)")
    s.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: $IPWCATE_WORKERS or CPU count)")
    s.add_argument("--alpha", type=float, default=0.1)
    s.add_argument("--center", choices=("mean", "truth"), default="mean")
    s.add_argument("--bandwidth-mode", choices=("table", "formula"), default="table")
    s.add_argument("--output", "-o", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="estimate a CATE curve from a CSV file")
    e.add_argument("--input", "-i", required=True)
    e.add_argument("--output", "-o", required=True)
    e.add_argument("--estimator", choices=ESTIMATORS, default="S")
    e.add_argument("--z", required=True, help="comma list of Z columns")
    e.add_argument("--treatment", required=True)
    e.add_argument("--outcome", required=True)
    e.add_argument("--covariates", default="", help="comma list (default: all other columns)")
    e.add_argument("--x-tilde", default="", help="propensity arguments for estimator N")
    e.add_argument("--propensity-column", default="", help="known scores for estimator O")
    e.add_argument("--r", type=int, default=1)
    e.add_argument("--alpha", type=float, default=0.05)
    e.add_argument("--group", choices=GROUPS, default="G1", help="bandwidth constant preset")
    for name in ("a", "a1", "a2"):
        e.add_argument(f"--{name}", type=float, default=None)
    for name in ("h", "h1", "h2"):
        e.add_argument(f"--{name}", default=None, help="absolute value or C*sd*n^E")
    for name in ("order", "order1", "order2"):
        e.add_argument(f"--{name}", type=int, default=None, choices=SUPPORTED_ORDERS)
    e.add_argument("--grid", default="", help="comma list of evaluation points")
    e.add_argument("--grid-size", type=int, default=50)
    e.add_argument("--threads", type=int, default=None,
                   help="BLAS threads (default: $IPWCATE_THREADS or library default)")
    e.set_defaults(func=cmd_estimate)

    q = sub.add_parser("inspect", help="print kernels, bandwidth plans or simulated data")
    q.add_argument("what", choices=("kernel", "bandwidth", "dgp"))
    q.add_argument("--order", type=int, default=2, choices=SUPPORTED_ORDERS)
    q.add_argument("--n", type=int, default=500)
    q.add_argument("--l", type=int, default=1)
    q.add_argument("--r", type=int, default=None)
    q.add_argument("--k-tilde", type=int, default=None)
    q.add_argument("--group", choices=GROUPS, default="G1")
    q.add_argument("--mode", choices=("table", "formula"), default="table")
    q.add_argument("--model", choices=MODELS, default="M1")
    q.add_argument("--scenario", choices=SCENARIOS, default="I")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--output", "-o", default=None)
    q.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    threads = getattr(args, "threads", None) or os.environ.get("IPWCATE_THREADS")
    try:
        if threads:
            with threadpool_limits(limits=int(threads)):
                return args.func(args)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
