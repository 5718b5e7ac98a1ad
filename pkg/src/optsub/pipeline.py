"""Two-stage subsample estimators and the full-data reference fit.

Both practical procedures start from a uniform pilot, estimate the
optimal probabilities at the pilot estimate, draw the second-stage
subsample and fit the inverse-probability weighted objective. The two
stage estimates are then combined with Hessian weights.

Stage weights are chosen so that each solver Hessian is the Hessian of
the corresponding stage objective:

* pilot: ``1 / s0`` (realized size for a Poisson pilot);
* with replacement: ``1 / (n s_n pi_i)``;
* Poisson: ``1 / (n min(s_n pi_i, 1))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import DEFAULT_BLOCK, Dataset
from .errors import (
    DomainError,
    EmptyPilot,
    EmptySecondStage,
    NonConvergence,
    SingularCombination,
)
from .model import ModelFamily, _inverse_with_check, get_family
from .optprob import defensive_mix, opt_probs_withreplacement, pilot_poisson_plan
from .sampling import AliasTable, as_seed, pilot_uniform, sample_poisson, sample_with_replacement
from .solver import SolveReport, WeightedProblem, newton_maximize

PILOT_RETRIES_R = 1
PILOT_RETRIES_P = 3


@dataclass(frozen=True, eq=False)
class PipelineResult:
    """Outcome of one two-stage run.

    Hessians are those of the stage objectives (averages, not multiplied by
    the stage size). ``threshold`` is the pilot cap ``H`` for Poisson runs.
    """

    scheme: str
    theta_pilot: np.ndarray
    theta_second: np.ndarray
    theta_agg: np.ndarray
    hessian_pilot: np.ndarray
    hessian_second: np.ndarray
    s0_realized: int
    s_realized: int
    s0: int
    s_n: float
    alpha: float
    h_mode: str = ""
    b: float = float("nan")
    threshold: float = float("nan")
    pilot_attempts: int = 1
    pilot_report: SolveReport | None = field(default=None, repr=False)
    second_report: SolveReport | None = field(default=None, repr=False)

    def __eq__(self, other):
        if not isinstance(other, PipelineResult):
            return NotImplemented
        return self.to_csv_row() == other.to_csv_row()

    def csv_header(self) -> list[str]:
        d = self.theta_agg.size
        cols = ["scheme", "s0", "s_n", "s0_realized", "s_realized", "alpha", "h_mode", "b", "threshold", "pilot_attempts"]
        for tag in ("pilot", "second", "agg"):
            cols += [f"theta_{tag}_{j}" for j in range(d)]
        return cols

    def to_csv_row(self) -> list[str]:
        row = [
            self.scheme,
            str(self.s0),
            repr(float(self.s_n)),
            str(self.s0_realized),
            str(self.s_realized),
            repr(float(self.alpha)),
            self.h_mode,
            repr(float(self.b)),
            repr(float(self.threshold)),
            str(self.pilot_attempts),
        ]
        for th in (self.theta_pilot, self.theta_second, self.theta_agg):
            row += [repr(float(v)) for v in th]
        return row


def fit_full(fam, data: Dataset, tol: float = 1e-8, max_iter: int = 100) -> SolveReport:
    """Maximise the full-data average objective; the reference estimate."""
    problem = WeightedProblem(get_family(fam), data, None, np.full(data.n, 1.0 / data.n))
    return newton_maximize(problem, tol=tol, max_iter=max_iter)


def aggregate(stage0, stage1) -> np.ndarray:
    """Hessian-weighted combination of two stage estimates.

    Each stage is ``(theta, hessian, size)``; the result is
    ``(s0 H0 + s1 H1)^{-1} (s0 H0 theta0 + s1 H1 theta1)``.

    Raises:
        SingularCombination: ``s0 H0 + s1 H1`` is numerically singular.
    """
    (t0, H0, s0), (t1, H1, s1) = stage0, stage1
    t0 = np.asarray(t0, dtype=np.float64)
    t1 = np.asarray(t1, dtype=np.float64)
    A0 = s0 * np.asarray(H0, dtype=np.float64)
    A1 = s1 * np.asarray(H1, dtype=np.float64)
    total = A0 + A1
    cond = np.linalg.cond(total)
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise SingularCombination("combined stage Hessian is singular", condition=float(cond))
    return np.linalg.solve(total, A0 @ t0 + A1 @ t1)


def _norm_map(L, hessian):
    """Linear map applied to gradients before taking norms (``None`` = identity)."""
    if L is None:
        return None
    L = np.atleast_2d(np.asarray(L, dtype=np.float64))
    return L @ _inverse_with_check(hessian)


def _row_norms(fam: ModelFamily, X, y, k, theta, A) -> np.ndarray:
    eta = X @ theta
    fam.domain_check(eta)
    r = np.abs(fam.score(eta, y, k))
    if A is None:
        return r * np.linalg.norm(X, axis=1)
    return r * np.linalg.norm(X @ A.T, axis=1)


def _fit_stage(fam, data, indices, weights, theta0=None) -> SolveReport:
    problem = WeightedProblem(fam, data, indices, weights)
    if theta0 is not None:
        try:
            return newton_maximize(problem, theta0=theta0)
        except DomainError:
            pass  # the pilot estimate may be inadmissible on new rows (gamma)
    return newton_maximize(problem)


def _check_sizes(data: Dataset, s0, s_n, alpha):
    if s0 < 1 or s_n < 1:
        raise ValueError("s0 and s_n must be at least 1")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")


def run_withreplacement(fam, data: Dataset, s0: int, s_n: int, alpha: float = 0.1, L=None, seed=0) -> PipelineResult:
    """Two-stage estimator with multinomial sampling.

    Args:
        fam: model family or its name.
        data: the full data.
        s0: pilot size.
        s_n: second-stage size.
        alpha: uniform mixing weight; ``alpha=1`` gives uniform sampling.
        L: optional matrix; norms become ``||L Mdd^{-1} grad||`` with the
            pilot Hessian standing in for ``Mdd``.
        seed: ``RngSeed`` or int.

    Raises:
        NonConvergence: the pilot fit failed twice, or the second stage failed.
    """
    fam = get_family(fam)
    _check_sizes(data, s0, s_n, alpha)
    s0, s_n = int(s0), int(s_n)
    seed = as_seed(seed)
    n = data.n

    attempt = 0
    while True:
        pilot = pilot_uniform(n, s0, "with_replacement", seed.generator(0, attempt))
        try:
            rep0 = _fit_stage(fam, data, pilot.indices, np.full(s0, 1.0 / s0))
            break
        except NonConvergence:
            if attempt >= PILOT_RETRIES_R:
                raise
            attempt += 1
    theta0 = rep0.theta

    if alpha == 1.0:
        pi = np.full(n, 1.0 / n)
    else:
        A = _norm_map(L, rep0.hessian)
        t = np.empty(n)
        for start, X, y, k in data.blocks(DEFAULT_BLOCK):
            t[start : start + len(y)] = _row_norms(fam, X, y, k, theta0, A)
        pi = defensive_mix(opt_probs_withreplacement(t), alpha).pi
    sub = sample_with_replacement(None, s_n, seed.generator(1), table=AliasTable(pi))
    w = 1.0 / (n * s_n * sub.probs)
    rep1 = _fit_stage(fam, data, sub.indices, w, theta0)
    agg = aggregate((theta0, rep0.hessian, s0), (rep1.theta, rep1.hessian, s_n))
    return PipelineResult(
        "with_replacement", theta0, rep1.theta, agg, rep0.hessian, rep1.hessian,
        s0, s_n, s0, float(s_n), float(alpha), pilot_attempts=attempt + 1,
        pilot_report=rep0, second_report=rep1,
    )


def run_poisson(fam, data: Dataset, s0: float, s_n: float, alpha: float = 0.1, b: float = 5.0,
                h_mode: str = "quantile", L=None, seed=0) -> PipelineResult:
    """Two-stage estimator with Poisson sampling in a single streaming pass.

    The second stage never materializes the full probability vector: each
    data block gets its norms, probabilities and inclusion draws in one go.

    Args:
        fam: model family or its name.
        data: the full data.
        s0: expected pilot size.
        s_n: expected second-stage size.
        alpha: uniform mixing weight; ``alpha=1`` gives uniform sampling.
        b: quantile tuning constant for ``h_mode='quantile'``.
        h_mode: ``'quantile'`` or ``'infinity'``.
        L: optional norm matrix, as in ``run_withreplacement``.
        seed: ``RngSeed`` or int.

    Raises:
        EmptyPilot: the pilot was empty on all attempts.
        EmptySecondStage: no record was selected in the second stage.
        NonConvergence: the pilot fit failed twice, or the second stage failed.
    """
    fam = get_family(fam)
    _check_sizes(data, s0, s_n, alpha)
    seed = as_seed(seed)
    n = data.n

    attempt = 0
    fails = 0
    while True:
        try:
            pilot = pilot_uniform(n, s0, "poisson", seed.generator(0, attempt))
            m = pilot.realized_size
            rep0 = _fit_stage(fam, data, pilot.indices, np.full(m, 1.0 / m))
            break
        except EmptyPilot:
            if attempt >= PILOT_RETRIES_P:
                raise
        except NonConvergence:
            fails += 1
            if fails > PILOT_RETRIES_R or attempt >= PILOT_RETRIES_P:
                raise
        attempt += 1
    theta0 = rep0.theta
    s0_real = pilot.realized_size

    if alpha == 1.0:
        H = float("nan")

        def chunks():
            for _, X, _, _ in data.blocks(DEFAULT_BLOCK):
                yield np.full(X.shape[0], 1.0 / n)
    else:
        A = _norm_map(L, rep0.hessian)
        Xp, yp, kp = data.take(pilot.indices)
        plan = pilot_poisson_plan(_row_norms(fam, Xp, yp, kp, theta0, A), s_n, n, b=b, h_mode=h_mode).mixed(alpha)
        H = plan.H

        def chunks():
            for _, X, y, k in data.blocks(DEFAULT_BLOCK):
                yield plan.probs(_row_norms(fam, X, y, k, theta0, A))

    sub = sample_poisson(chunks(), s_n, seed.generator(1))
    if sub.realized_size == 0:
        raise EmptySecondStage("Poisson second stage selected no rows")
    w = 1.0 / (n * np.minimum(s_n * sub.probs, 1.0))
    rep1 = _fit_stage(fam, data, sub.indices, w, theta0)
    agg = aggregate((theta0, rep0.hessian, s0_real), (rep1.theta, rep1.hessian, s_n))
    return PipelineResult(
        "poisson", theta0, rep1.theta, agg, rep0.hessian, rep1.hessian,
        s0_real, sub.realized_size, int(math.ceil(s0)), float(s_n), float(alpha),
        h_mode=h_mode, b=float(b) if h_mode == "quantile" else float("inf"), threshold=float(H),
        pilot_attempts=attempt + 1, pilot_report=rep0, second_report=rep1,
    )
