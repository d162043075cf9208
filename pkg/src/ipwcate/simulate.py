"""Data-generating processes and the Monte Carlo harness.

Six designs: Models 1-2 (k = 2), Models 3-4 (k = 4) and Models 5-6
(k = 20), all with a scalar ``Z`` uniform on [-0.5, 0.5], ``Y(0) = 0`` and a
logistic propensity score. Every replication draws its own generator from
``numpy.random.SeedSequence(seed).spawn``, so reports are reproducible
independently of how replications are scheduled across workers.
"""

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
import pandas as pd
from scipy.special import expit
from threadpoolctl import threadpool_limits

from .bandwidth import plan_for_group
from .data import Dataset
from .dimred import orthonormalize, subspace_distance
from .estimators import ESTIMATORS, critical_value, fit_curve

MODELS = ("M1", "M2", "M3", "M4", "M5", "M6")
SCENARIOS = ("I", "II")
GROUPS = ("G1", "G2")
GRID = (-0.4, -0.2, 0.0, 0.2, 0.4)
CRITICAL = 1.645
NOISE_SD = 0.25
MC_DRAWS = 1_000_000
MC_SEED = 20240607
FAILURE_LIMIT = 0.01

_K = {"M1": 2, "M2": 2, "M3": 4, "M4": 4, "M5": 20, "M6": 20}
_R = {"M1": 1, "M2": 1, "M3": 1, "M4": 2, "M5": 1, "M6": 2}
# columns of X the propensity depends on; None where the nonparametric fit is skipped
_ACTIVE = {"M1": (0, 1), "M2": (1,), "M3": (0, 1, 2, 3), "M4": (0, 1, 2, 3),
           "M5": None, "M6": None}

_SQRT2 = np.sqrt(2.0)
_SQRT3 = np.sqrt(3.0)
BETA2_I = np.array([0.1, 1 / _SQRT2, -1 / _SQRT2, -0.1])
V3 = np.concatenate([-np.ones(5), np.zeros(5), np.ones(10)]) / np.sqrt(20.0)
ALPHA_TILDE = np.concatenate([[0.0], -np.ones(4), np.zeros(5), np.ones(10)]) / np.sqrt(19.0)


def true_projection(model):
    """An orthonormal basis of the propensity's central subspace."""
    if model == "M1":
        return np.array([[1.0], [1.0]]) / _SQRT2
    if model == "M2":
        return np.array([[0.0], [1.0]])
    if model == "M3":
        return np.ones((4, 1)) / 2.0
    if model == "M4":
        return np.column_stack([[1.0, 0, 0, 0], np.array([0.0, 1, 1, 1]) / _SQRT3])
    if model == "M5":
        return V3[:, None] / np.linalg.norm(V3)
    if model == "M6":
        return orthonormalize(np.column_stack([np.eye(20)[:, 0], ALPHA_TILDE]))
    raise ValueError(f"unknown model {model!r}")


@dataclass(frozen=True)
class DgpSpec:
    model: str = "M1"
    scenario: str = "I"
    group: str = "G1"
    n: int = 500
    seed: int = 0
    k: int = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.group not in GROUPS:
            raise ValueError(f"group must be one of {GROUPS}, got {self.group!r}")
        if int(self.n) < 10:
            raise ValueError(f"n must be at least 10, got {self.n}")
        expected = _K[self.model]
        if self.k is None:
            object.__setattr__(self, "k", expected)
        elif self.k != expected:
            raise ValueError(f"model {self.model} has k={expected}, got k={self.k}")
        if self.model in ("M5", "M6") and self.scenario != "I":
            raise ValueError("high-dimensional models have a single outcome design (scenario I)")

    @property
    def r(self):
        return _R[self.model]

    @property
    def active_cols(self):
        return _ACTIVE[self.model]


def _covariates(model, Z, rng):
    n = Z.shape[0]
    k = _K[model]
    if k == 2:
        U1 = (1 + 2 * Z) ** 2 * (Z - 1) ** 2 + rng.uniform(-0.5, 0.5, n)
        return np.column_stack([Z, U1])
    e = rng.uniform(-0.5, 0.5, (n, 3))
    cols = [Z, 1 + 2 * Z + e[:, 0], 1 + 2 * Z + e[:, 1], (Z - 1) ** 2 + e[:, 2]]
    if k == 20:
        eps = rng.uniform(-0.5, 0.5, (n, 16))
        for j in range(4, 20):
            shift = 11 - j if j <= 9 else 21 - j
            cols.append(np.abs(1 + Z / shift) - np.abs(1 + eps[:, j - 4] / j))
    return np.column_stack(cols)


def _propensity(model, X):
    if model == "M1":
        return expit((X[:, 0] + X[:, 1]) / _SQRT2)
    if model == "M2":
        return expit(X[:, 1])
    if model == "M3":
        return expit(0.5 * X.sum(axis=1))
    if model == "M4":
        return expit(_SQRT3 * (1 + X[:, 0]) / (_SQRT3 + X[:, 1:4].sum(axis=1)))
    if model == "M5":
        return expit(1 + X @ V3)
    return expit((1 + X @ ALPHA_TILDE) / (1 + X[:, 0]))


def _mean_treated_outcome(model, scenario, X):
    Z = X[:, 0]
    if model in ("M1", "M2"):
        if scenario == "I":
            return Z * X[:, 1]
        return 0.5 * Z - 0.2 * X[:, 1]
    if model in ("M3", "M4") and scenario == "I":
        return X @ BETA2_I
    return Z * X[:, 1] * X[:, 2] * X[:, 3]


def generate(spec, rng=None):
    """Draw one dataset; truth (propensity, potential outcomes) is kept alongside."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n = int(spec.n)
    Z = rng.uniform(-0.5, 0.5, n)
    X = _covariates(spec.model, Z, rng)
    p = _propensity(spec.model, X)
    D = (rng.uniform(size=n) < p).astype(float)
    y1 = _mean_treated_outcome(spec.model, spec.scenario, X) + rng.normal(0.0, NOISE_SD, n)
    y0 = np.zeros(n)
    Y = D * y1 + (1 - D) * y0
    names = ["Z"] + [f"U{j}" for j in range(1, X.shape[1])]
    return Dataset(X=X, D=D, Y=Y, z_cols=(0,), columns=names, p_true=p, y1=y1, y0=y0)


def _check_z(z):
    z = float(z)
    if not -0.5 <= z <= 0.5:
        raise ValueError(f"z={z} lies outside the support [-0.5, 0.5] of Z")
    return z


def true_cate(model, scenario, z):
    """Closed-form ``tau(z) = E[Y(1) - Y(0) | Z = z]``."""
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")
    z = _check_z(z)
    quartic = (1 + 2 * z) ** 2 * (1 - z) ** 2
    if model in ("M1", "M2"):
        return z * quartic if scenario == "I" else 0.5 * z - 0.2 * quartic
    if model in ("M3", "M4") and scenario == "I":
        return 0.1 * z - 0.1 * (1 - z) ** 2
    return z * quartic


@lru_cache(maxsize=None)
def true_cate_mc(model, scenario, z, draws=MC_DRAWS, seed=MC_SEED):
    """Nested Monte Carlo value of ``tau(z)``: fix Z = z and average over the noise."""
    z = _check_z(z)
    rng = np.random.default_rng(seed)
    X = _covariates(model, np.full(draws, z), rng)
    y1 = _mean_treated_outcome(model, scenario, X) + rng.normal(0.0, NOISE_SD, draws)
    return float(np.mean(y1))


def plan_for_spec(spec, mode="table"):
    active = spec.active_cols
    return plan_for_group(spec.n, spec.group, l=1, r=spec.r,
                          k_tilde=None if active is None else len(active), mode=mode)


def default_estimators(spec):
    return tuple(e for e in ESTIMATORS if not (e == "N" and spec.active_cols is None))


# --------------------------------------------------------------------------
# Monte Carlo
# --------------------------------------------------------------------------

def _replicate(task):
    spec, estimators, seed_seq, alpha, mode = task
    with threadpool_limits(limits=1):
        try:
            data = generate(spec, np.random.default_rng(seed_seq))
            plan = plan_for_spec(spec, mode)
            out = {}
            for est in estimators:
                cf = fit_curve(data, est, plan, np.array(GRID), alpha=alpha,
                               x_tilde_cols=spec.active_cols)
                extra = {}
                if cf.mave is not None:
                    extra["subspace_error"] = subspace_distance(cf.mave.V,
                                                                true_projection(spec.model))
                    extra["mave_converged"] = cf.mave.converged
                out[est] = {
                    "tau": cf.curve.tau_hat,
                    "avar": cf.curve.avar,
                    "form": cf.curve.variance_form,
                    "t": None if cf.affiliation is None else cf.affiliation.t,
                    **extra,
                }
            return out
        except Exception as exc:  # recorded, not raised: one bad draw must not sink a run
            return {"error": f"{type(exc).__name__}: {exc}"}


def default_workers():
    env = os.environ.get("IPWCATE_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class SimulationReport:
    cells: pd.DataFrame
    releff: pd.DataFrame
    meta: dict = field(default_factory=dict)
    replications: int = 0
    failures: int = 0

    @property
    def flagged(self):
        total = self.replications + self.failures
        return total > 0 and self.failures / total > FAILURE_LIMIT

    def cell(self, estimator, z):
        rows = self.cells[(self.cells.estimator == estimator) & np.isclose(self.cells.z, z)]
        if rows.empty:
            raise KeyError(f"no cell for estimator {estimator} at z={z}")
        return rows.iloc[0]

    def column(self, estimator, name):
        rows = self.cells[self.cells.estimator == estimator].sort_values("z")
        return rows[name].to_numpy()

    def to_csv(self, path):
        self.cells.to_csv(path, index=False, float_format="%.17g")

    def write(self, path):
        """Write the cell CSV, the relative-efficiency CSV and a JSON sidecar."""
        base, _ = os.path.splitext(str(path))
        self.to_csv(path)
        self.releff.to_csv(base + "_releff.csv", index=False, float_format="%.17g")
        with open(base + ".json", "w") as fh:
            json.dump(self.meta, fh, indent=2, sort_keys=True, default=str)
        return [str(path), base + "_releff.csv", base + ".json"]


def _aggregate(spec, estimators, results, plan, alpha, center):
    ok = [r for r in results if "error" not in r]
    grid = np.array(GRID)
    truth = np.array([true_cate(spec.model, spec.scenario, z) for z in grid])
    rate = spec.n * plan.h
    half = CRITICAL
    rows = []
    R = len(ok)
    for est in estimators:
        tau = np.array([r[est]["tau"] for r in ok]).reshape(R, len(grid))
        avar = np.array([r[est]["avar"] for r in ok], dtype=float).reshape(R, len(grid))
        forms = [r[est]["form"] for r in ok]
        mean_tau = tau.mean(axis=0)
        bias = mean_tau - truth
        sd = tau.std(axis=0, ddof=1) if R > 1 else np.full(len(grid), np.nan)
        mse = np.mean((tau - truth) ** 2, axis=0)
        se = np.sqrt(avar / rate)
        with np.errstate(divide="ignore", invalid="ignore"):
            stat_mean = (tau - mean_tau) / se
            stat_truth = (tau - truth) / se
        stat = stat_mean if center == "mean" else stat_truth
        c_alpha = critical_value(alpha)
        cover = np.mean(np.abs(tau - truth) <= c_alpha * se, axis=0)
        form = max(set(forms), key=forms.count) if forms else None
        for g, z in enumerate(grid):
            rows.append({
                "model": spec.model, "scenario": spec.scenario, "group": spec.group,
                "n": spec.n, "estimator": f"IPW-{est}", "z": float(z),
                "tau_true": float(truth[g]), "bias": float(bias[g]), "est_sd": float(sd[g]),
                "mse": float(mse[g]),
                "p_lo": float(np.mean(stat[:, g] < -half)),
                "p_hi": float(np.mean(stat[:, g] > half)),
                "p_lo_truth": float(np.mean(stat_truth[:, g] < -half)),
                "p_hi_truth": float(np.mean(stat_truth[:, g] > half)),
                "coverage": float(cover[g]),
                "mean_se": float(np.mean(se[:, g])),
                "variance_form": form,
                "replications": R,
            })
    cells = pd.DataFrame(rows)
    base = cells[cells.estimator == "IPW-O"].set_index("z")["est_sd"]
    rel = cells[["estimator", "z", "est_sd"]].copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        rel["rel_eff"] = rel["est_sd"].to_numpy() / rel["z"].map(base).to_numpy(dtype=float)
    return cells, rel


def run_monte_carlo(spec, estimators=None, replications=500, *, workers=None, alpha=0.1,
                    center="mean", bandwidth_mode="table", same_seed=False):
    """Replicate ``spec`` and summarise every (estimator, z) cell.

    ``center`` chooses the centring of the standardised statistic used for
    ``p_lo``/``p_hi``: ``"mean"`` subtracts the Monte Carlo mean of the
    estimates, ``"truth"`` the true ``tau(z)``. Both versions are always
    reported (``p_*`` and ``p_*_truth``).
    """
    if replications < 2:
        raise ValueError("need at least two replications")
    if center not in ("mean", "truth"):
        raise ValueError(f"center must be 'mean' or 'truth', got {center!r}")
    estimators = tuple(default_estimators(spec) if estimators is None else estimators)
    for est in estimators:
        if est not in ESTIMATORS:
            raise ValueError(f"unknown estimator {est!r}")
        if est == "N" and spec.active_cols is None:
            raise ValueError(f"IPW-N is not available for the high-dimensional model {spec.model}")
    plan = plan_for_spec(spec, bandwidth_mode)
    root = np.random.SeedSequence(spec.seed)
    seeds = [root] * replications if same_seed else root.spawn(replications)
    tasks = [(spec, estimators, s, alpha, bandwidth_mode) for s in seeds]
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1:
        results = [_replicate(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    errors = [r["error"] for r in results if "error" in r]
    if len(errors) == len(results):
        raise RuntimeError(f"every replication failed; first error: {errors[0]}")
    cells, rel = _aggregate(spec, estimators, results, plan, alpha, center)
    ok = [r for r in results if "error" not in r]
    meta = {
        "spec": asdict(spec),
        "estimators": list(estimators),
        "replications_requested": replications,
        "replications_used": len(ok),
        "failures": len(errors),
        "failure_messages": sorted(set(errors))[:10],
        "plan": plan.to_dict(),
        "grid": list(GRID),
        "alpha": alpha,
        "center": center,
        "critical_value": CRITICAL,
        "trim_bounds": [0.005, 0.995],
        "parametric_propensity": "linear-logistic with intercept in all covariates",
        "filler_noise": "independent uniform draw per covariate and observation",
        "affiliation_rule": "Z counted in span(V_hat) when ||(I - V V')e_Z|| < 0.05",
        "x_tilde_cols": None if spec.active_cols is None else list(spec.active_cols),
    }
    if "S" in estimators:
        errs = [r["S"]["subspace_error"] for r in ok if "subspace_error" in r["S"]]
        if errs:
            meta["mave_mean_subspace_error"] = float(np.mean(errs))
            meta["mave_converged_share"] = float(np.mean([r["S"]["mave_converged"] for r in ok]))
        meta["S_affiliation_t"] = sorted({int(r["S"]["t"]) for r in ok})
    report = SimulationReport(cells=cells, releff=rel, meta=meta, replications=len(ok),
                              failures=len(errors))
    meta["flagged"] = report.flagged
    return report
