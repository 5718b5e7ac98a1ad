"""Synthetic data, Monte Carlo MSE comparisons, g-tables and coverage checks.

Seeding: a dataset is generated from the root ``SeedSequence(seed)``;
Monte Carlo replicate ``t`` uses stream ``t`` for every method and ratio,
so methods compared within a replicate share their random draws (common
random numbers) and every cell is reproducible on its own, independent
of the thread count.
"""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import stats

from .dataset import CsvSchema, Dataset, load_csv
from .errors import ExcessiveDiscards, NumericalError
from .model import get_family, grad_norms, leverage_l, l_norms
from .optprob import defensive_mix, opt_probs_poisson, opt_probs_withreplacement, poisson_threshold
from .pipeline import fit_full, run_poisson, run_withreplacement
from .sampling import AliasTable, RngSeed, sample_poisson, sample_with_replacement
from .solver import WeightedProblem, newton_maximize
from .variance import lambda_P, lambda_R, sandwich

LAWS = ("normal", "lognormal", "t")
METHODS = ("optR", "uniR", "optP_inf", "optP_b", "uniP")
MAX_DISCARD_FRACTION = 0.10


def _write_rows(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


# -- data generation -----------------------------------------------------------


@dataclass(frozen=True)
class GeneratorSpec:
    """Synthetic regression design.

    ``d`` counts covariates; an intercept column is prepended, so the
    parameter has ``d + 1`` entries. ``theta='standard'`` sets every entry to
    0.5 (logistic) or 1 (linear); otherwise pass the full vector.
    Covariates are ``N(0, Sigma)``, ``exp`` of it, or multivariate ``t_nu``,
    with ``Sigma_ij = 0.5`` off the diagonal and 1 on it.
    """

    model: str = "logistic"
    n: int = 10_000
    d: int = 9
    law: str = "normal"
    nu: float = 3.0
    theta: str | tuple = "standard"

    def __post_init__(self):
        if self.model not in ("linear", "logistic"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.law not in LAWS:
            raise ValueError(f"unknown covariate law {self.law!r}")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be at least 1")
        if self.law == "t" and not self.nu >= 1:
            raise ValueError("t law needs nu >= 1")
        if self.theta != "standard" and len(self.theta) != self.d + 1:
            raise ValueError(f"theta needs {self.d + 1} entries")

    @property
    def family(self) -> str:
        return "ols" if self.model == "linear" else "logistic"

    def theta_true(self) -> np.ndarray:
        if self.theta == "standard":
            return np.full(self.d + 1, 0.5 if self.model == "logistic" else 1.0)
        return np.asarray(self.theta, dtype=np.float64)


def covariance(d: int) -> np.ndarray:
    return np.full((d, d), 0.5) + 0.5 * np.eye(d)


def generate(spec: GeneratorSpec, seed: int) -> Dataset:
    """Draw a dataset; ``t`` covariates are ``Z / sqrt(chi2_nu / nu)`` row-wise."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    C = np.linalg.cholesky(covariance(spec.d))
    V = rng.standard_normal((spec.n, spec.d)) @ C.T
    if spec.law == "lognormal":
        V = np.exp(V)
    elif spec.law == "t":
        V = V / np.sqrt(rng.chisquare(spec.nu, size=spec.n) / spec.nu)[:, None]
    X = np.hstack([np.ones((spec.n, 1)), V])
    eta = X @ spec.theta_true()
    if spec.model == "logistic":
        y = (rng.random(spec.n) < 1.0 / (1.0 + np.exp(-eta))).astype(np.float64)
    else:
        y = eta + rng.standard_normal(spec.n)
    names = ("intercept",) + tuple(f"x{j}" for j in range(1, spec.d + 1))
    return Dataset(X, y, names=names)


# -- configuration ---------------------------------------------------------------


def _floats(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _words(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(text)
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    """Monte Carlo MSE experiment.

    The data come from ``data`` (a CSV path, fitted with ``family``) when
    set, otherwise from the generator fields. ``s0_fraction`` gives the
    pilot size ``round(s0_fraction * n)``; each ratio ``r`` sets
    ``s_n = r n - s0``.
    """

    model: str = "logistic"
    n: int = 10_000
    d: int = 9
    law: str = "normal"
    nu: float = 3.0
    data: str = ""
    family: str = ""
    response: str = "y"
    intercept: bool = False
    methods: tuple = METHODS
    alpha: float = 0.1
    s0_fraction: float = 0.01
    ratios: tuple = (0.02, 0.05, 0.1, 0.2, 0.5)
    b: float = 5.0
    T: int = 200
    seed: int = 0
    out: str = ""
    timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "methods", _words(self.methods))
        object.__setattr__(self, "ratios", _floats(self.ratios))
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if not all(0 < r < 1 for r in self.ratios):
            raise ValueError("ratios must lie in (0, 1)")
        if self.T < 1:
            raise ValueError("T must be at least 1")

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(self.model, int(self.n), int(self.d), self.law, float(self.nu))

    def load_data(self) -> tuple[str, Dataset]:
        if self.data:
            fam = self.family or ("ols" if self.model == "linear" else "logistic")
            return fam, load_csv(self.data, CsvSchema(response=self.response, add_intercept=self.intercept))
        spec = self.generator_spec()
        return spec.family, generate(spec, self.seed)

    def sizes(self, n: int, ratio: float) -> tuple[int, int]:
        s0 = max(1, int(round(self.s0_fraction * n)))
        s_n = int(round(ratio * n)) - s0
        if s_n < 1:
            raise ValueError(f"ratio {ratio} leaves no room for a second stage after s0={s0}")
        return s0, s_n


_BOOL = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def parse_config(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    kinds = {f.name: f.type for f in fields(ExperimentConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in kinds:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        out[key] = coerce(key, value)
    return out


def coerce(key: str, value):
    kind = {f.name: f.type for f in fields(ExperimentConfig)}[key]
    if not isinstance(value, str):
        return value
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    if kind == "bool":
        try:
            return _BOOL[value.lower()]
        except KeyError:
            raise ValueError(f"{key}: expected a boolean, got {value!r}") from None
    return value


def load_config(path, **overrides) -> ExperimentConfig:
    values = parse_config(Path(path).read_text()) if path else {}
    values.update({k: coerce(k, v) for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


# -- Monte Carlo MSE -------------------------------------------------------------


@dataclass
class MseRow:
    method: str
    ratio: float
    mse: float
    mse_se: float
    discarded: int
    seconds: float
    errors: np.ndarray = field(default=None, repr=False)  # per replicate, nan if discarded


@dataclass
class MseTable:
    rows: list = field(default_factory=list)

    HEADER = ("method", "ratio", "mse", "mse_se", "discarded", "seconds")

    def get(self, method: str, ratio: float) -> MseRow:
        for r in self.rows:
            if r.method == method and r.ratio == ratio:
                return r
        raise KeyError((method, ratio))

    def csv_rows(self) -> list:
        out = [list(self.HEADER)]
        for r in self.rows:
            out.append([r.method, repr(r.ratio), repr(r.mse), repr(r.mse_se), r.discarded, repr(r.seconds)])
        return out

    def to_csv(self, path) -> None:
        _write_rows(self.csv_rows(), path)


def run_method(method: str, fam, data: Dataset, s0: int, s_n: int, alpha: float, b: float, seed: RngSeed):
    if method == "optR":
        return run_withreplacement(fam, data, s0, s_n, alpha, seed=seed)
    if method == "uniR":
        return run_withreplacement(fam, data, s0, s_n, 1.0, seed=seed)
    if method == "optP_inf":
        return run_poisson(fam, data, s0, s_n, alpha, b, "infinity", seed=seed)
    if method == "optP_b":
        return run_poisson(fam, data, s0, s_n, alpha, b, "quantile", seed=seed)
    if method == "uniP":
        return run_poisson(fam, data, s0, s_n, 1.0, b, "infinity", seed=seed)
    raise ValueError(f"unknown method {method!r}")


def default_threads() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def monte_carlo_mse(cfg: ExperimentConfig, threads: int | None = None, data=None) -> MseTable:
    """Empirical ``mean ||theta_agg - theta_full||^2`` per (method, ratio).

    The full-data estimate is computed once. Replicates whose pipeline
    raises a numerical error are excluded and counted.

    Raises:
        ExcessiveDiscards: more than 10% of a cell's replicates failed; the
            exception carries the complete table.
    """
    fam, data = cfg.load_data() if data is None else data
    theta_full = fit_full(fam, data).theta
    threads = default_threads() if threads is None else max(1, int(threads))
    table = MseTable()
    bad_cells = []
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for method in cfg.methods:
            for ratio in cfg.ratios:
                s0, s_n = cfg.sizes(data.n, ratio)

                def one(t, method=method, s0=s0, s_n=s_n):
                    try:
                        res = run_method(method, fam, data, s0, s_n, cfg.alpha, cfg.b, RngSeed(cfg.seed, t))
                    except NumericalError:
                        return None
                    diff = res.theta_agg - theta_full
                    return float(diff @ diff)

                start = time.perf_counter()
                errs = list(pool.map(one, range(cfg.T)))
                elapsed = time.perf_counter() - start
                ok = np.array([e for e in errs if e is not None])
                discarded = cfg.T - ok.size
                mse = float(np.mean(ok)) if ok.size else float("nan")
                se = float(np.std(ok, ddof=1) / math.sqrt(ok.size)) if ok.size > 1 else float("nan")
                errors = np.array([np.nan if e is None else e for e in errs])
                table.rows.append(MseRow(method, ratio, mse, se, discarded, elapsed if cfg.timing else float("nan"), errors))
                if discarded > MAX_DISCARD_FRACTION * cfg.T:
                    bad_cells.append(f"{method}@{ratio}: {discarded}/{cfg.T}")
    if bad_cells:
        raise ExcessiveDiscards("too many failed replicates: " + "; ".join(bad_cells), table=table)
    return table


# -- g-table ---------------------------------------------------------------------


def law_spec(name: str, n: int, d: int) -> GeneratorSpec:
    """``'normal'``, ``'lognormal'`` or ``'t<nu>'`` (e.g. ``'t3'``) for a linear model."""
    if name in ("normal", "lognormal"):
        return GeneratorSpec("linear", n, d, name)
    if name.startswith("t"):
        return GeneratorSpec("linear", n, d, "t", float(name[1:]))
    raise ValueError(f"unknown law {name!r}")


def leverage_norms(data: Dataset, theta) -> np.ndarray:
    """OLS norms with ``L = (X'X)^{1/2}``; proportional to ``|residual| sqrt(leverage)``."""
    return l_norms("ols", data, theta, leverage_l(data))


def g_table(laws, ratios, n: int, d: int, seed: int) -> list[tuple[str, float, int]]:
    """Capped count ``g`` of the optimal Poisson plan for each law and ``s_n/n``.

    Every law is generated from the same seed.
    """
    out = []
    for law in laws:
        data = generate(law_spec(law, n, d), seed)
        theta = fit_full("ols", data).theta
        t = leverage_norms(data, theta)
        for ratio in ratios:
            out.append((law, float(ratio), poisson_threshold(t, ratio * n).g))
    return out


def g_table_rows(rows) -> list:
    return [["law", "ratio", "g"]] + [[law, repr(ratio), g] for law, ratio, g in rows]


def write_g_table(rows, path) -> None:
    _write_rows(g_table_rows(rows), path)


# -- coverage ----------------------------------------------------------------------


@dataclass
class CoverageReport:
    scheme: str
    coverage: np.ndarray
    ks_statistic: float
    ks_pvalue: float
    replicates: int
    discarded: int

    def csv_rows(self) -> list:
        out = [["scheme", "coordinate", "coverage", "ks_statistic", "ks_pvalue", "replicates", "discarded"]]
        for j, c in enumerate(self.coverage):
            out.append([self.scheme, j, repr(float(c)), repr(self.ks_statistic), repr(self.ks_pvalue),
                        self.replicates, self.discarded])
        return out

    def to_csv(self, path) -> None:
        _write_rows(self.csv_rows(), path)


def _inv_sqrt(V: np.ndarray) -> np.ndarray:
    w, Q = np.linalg.eigh(V)
    if w[0] <= 0:
        raise NumericalError("variance matrix is not positive definite")
    return (Q / np.sqrt(w)) @ Q.T


def coverage_check(spec: GeneratorSpec, scheme: str, s_n: int, T: int, seed: int,
                   alpha: float = 0.1, standardize: str | None = None, level: float = 0.95) -> CoverageReport:
    """Coverage of nominal intervals for oracle-plan subsample estimators.

    The optimal plan is computed at the full-data estimate (no pilot) and
    mixed with uniform weight ``alpha``; the mixing keeps ``n pi_i`` bounded
    away from zero, which the normal limit needs (unmixed OLS plans put
    probabilities near zero on rows with tiny residuals). Each replicate's
    ``sqrt(s_n) V^{-1/2} (theta_sub - theta_full)`` should be close to
    standard normal; ``V`` is the sandwich of the same plan under
    ``standardize`` (defaults to the sampling scheme).
    """
    fam = get_family(spec.family)
    data = generate(spec, seed)
    theta_full = fit_full(fam, data).theta
    t = grad_norms(fam, data, theta_full)
    n = data.n
    if scheme == "with_replacement":
        plan = opt_probs_withreplacement(t)
    elif scheme == "poisson":
        plan = opt_probs_poisson(t, s_n)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if alpha:
        plan = defensive_mix(plan, alpha)
    std = standardize or scheme
    lam = lambda_R(fam, data, theta_full, plan) if std == "with_replacement" else lambda_P(fam, data, theta_full, plan, s_n)
    W = _inv_sqrt(sandwich(fam, data, theta_full, lam)) * math.sqrt(s_n)
    table = AliasTable(plan.pi) if scheme == "with_replacement" else None
    z_crit = stats.norm.ppf(0.5 + level / 2)

    zs = []
    discarded = 0
    for rep in range(T):
        rng = RngSeed(seed, rep).generator()
        if table is not None:
            sub = sample_with_replacement(None, s_n, rng, table=table)
            w = 1.0 / (n * s_n * sub.probs)
        else:
            sub = sample_poisson(plan.pi, s_n, rng)
            if sub.realized_size == 0:
                discarded += 1
                continue
            w = 1.0 / (n * np.minimum(s_n * sub.probs, 1.0))
        try:
            rep_fit = newton_maximize(WeightedProblem(fam, data, sub.indices, w), theta0=theta_full)
        except NumericalError:
            discarded += 1
            continue
        zs.append(W @ (rep_fit.theta - theta_full))
    Z = np.array(zs)
    cover = np.mean(np.abs(Z) <= z_crit, axis=0)
    ks = stats.kstest(Z.ravel(), "norm")
    return CoverageReport(scheme, cover, float(ks.statistic), float(ks.pvalue), len(zs), discarded)
