"""Asymptotic variance objects of subsample estimators.

``Lambda_R = (1/n^2) sum_i grad_i grad_i' / pi_i`` for sampling with
replacement and ``Lambda_P = Lambda_R - (s_n/n^2) sum_i grad_i grad_i'``
for Poisson sampling; the estimator covariance is the sandwich
``Mdd^{-1} Lambda Mdd^{-1}`` scaled by ``1/s_n``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DEFAULT_BLOCK, Dataset
from .errors import SingularHessian, ZeroProbNonzeroGrad
from .model import get_family, grad_norms, mean_hessian
from .optprob import SamplingPlan, defensive_mix, opt_probs_poisson, opt_probs_withreplacement, upper_quantile


class _MatrixAccumulator:
    """Neumaier-compensated running sum of equally shaped arrays."""

    def __init__(self, shape):
        self.s = np.zeros(shape)
        self.c = np.zeros(shape)

    def add(self, v):
        t = self.s + v
        big = np.abs(self.s) >= np.abs(v)
        self.c += np.where(big, (self.s - t) + v, (v - t) + self.s)
        self.s = t

    @property
    def total(self):
        return self.s + self.c


def _pi_array(plan) -> np.ndarray:
    return plan.pi if isinstance(plan, SamplingPlan) else np.asarray(plan, dtype=np.float64).reshape(-1)


def _accumulate(fam, data: Dataset, theta, row_weight, block: int) -> np.ndarray:
    """``sum_i row_weight_i * grad_i grad_i'`` over rows with nonzero gradient."""
    fam = get_family(fam)
    theta = np.asarray(theta, dtype=np.float64)
    acc = _MatrixAccumulator((data.d, data.d))
    for start, X, y, k in data.blocks(block):
        eta = X @ theta
        fam.domain_check(eta, offset=start)
        r = fam.score(eta, y, k)
        live = (r != 0) & np.any(X != 0, axis=1)
        if not np.any(live):
            continue
        rows = np.flatnonzero(live)
        wts = row_weight(start + rows)
        G = r[rows, None] * X[rows]
        acc.add(G.T @ (wts[:, None] * G))
    out = acc.total
    return 0.5 * (out + out.T)


def gradient_outer(fam, data: Dataset, theta, block: int = DEFAULT_BLOCK) -> np.ndarray:
    """``sum_i grad m(Z_i) grad m(Z_i)'``."""
    return _accumulate(fam, data, theta, lambda idx: np.ones(idx.size), block)


def _inverse_pi(pi: np.ndarray, factor=None):
    def weight(idx):
        p = pi[idx]
        zero = np.flatnonzero(p <= 0)
        if zero.size:
            raise ZeroProbNonzeroGrad(int(idx[zero[0]]))
        return (1.0 / p) if factor is None else factor(p) / p

    return weight


def lambda_R(fam, data: Dataset, theta, plan, block: int = DEFAULT_BLOCK) -> np.ndarray:
    """``(1/n^2) sum_i grad_i grad_i' / pi_i``.

    Raises:
        ZeroProbNonzeroGrad: a row with nonzero gradient has ``pi_i = 0``.
    """
    pi = _pi_array(plan)
    if pi.size != data.n:
        raise ValueError("plan length differs from the data")
    return _accumulate(fam, data, theta, _inverse_pi(pi), block) / data.n**2


def lambda_P(fam, data: Dataset, theta, plan, s_n: float, block: int = DEFAULT_BLOCK) -> np.ndarray:
    """``(1/n^2) sum_i (1 - s_n pi_i) grad_i grad_i' / pi_i``."""
    pi = _pi_array(plan)
    if pi.size != data.n:
        raise ValueError("plan length differs from the data")
    return _accumulate(fam, data, theta, _inverse_pi(pi, lambda p: 1.0 - s_n * p), block) / data.n**2


def alpha_plan(fam, data: Dataset, theta, scheme: str, alpha: float, s_n: float | None = None,
               rho_mode: str = "zero", b: float = 1.0) -> SamplingPlan:
    """Full-data optimal plan at ``theta`` mixed with uniform weight ``alpha``.

    For Poisson, ``rho_mode='zero'`` uses the exact water-filling
    threshold; ``'positive'`` uses the upper ``s_n/(b n)`` quantile of the
    full-data norms as threshold.
    """
    t = grad_norms(fam, data, theta)
    if scheme == "with_replacement":
        base = opt_probs_withreplacement(t)
    elif scheme == "poisson":
        if s_n is None:
            raise ValueError("Poisson plans need s_n")
        if rho_mode == "zero":
            base = opt_probs_poisson(t, s_n)
        elif rho_mode == "positive":
            H = upper_quantile(t, s_n / (b * data.n))
            capped = np.minimum(t, H)
            base = SamplingPlan(capped / capped.sum(), "poisson", provenance={"kind": "quantile", "H": H})
        else:
            raise ValueError(f"unknown rho mode {rho_mode!r}")
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return defensive_mix(base, alpha)


def lambda_alpha(fam, data: Dataset, theta, scheme: str, alpha: float, s_n: float | None = None,
                 rho_mode: str = "zero", b: float = 1.0) -> np.ndarray:
    """``Lambda`` under the ``alpha``-mixed optimal plan, evaluated literally.

    Probabilities above ``1/s_n`` (possible with ``rho_mode='positive'``)
    are not truncated.
    """
    plan = alpha_plan(fam, data, theta, scheme, alpha, s_n, rho_mode, b)
    if scheme == "with_replacement":
        return lambda_R(fam, data, theta, plan)
    return lambda_P(fam, data, theta, plan, s_n)


def sandwich(fam, data: Dataset, theta, lam: np.ndarray) -> np.ndarray:
    """``V = Mdd^{-1} Lambda Mdd^{-1}`` with ``Mdd`` the full-data average Hessian.

    Raises:
        SingularHessian: ``Mdd`` is numerically singular.
    """
    H = mean_hessian(fam, data, theta)
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise SingularHessian("average Hessian is singular", condition=float(cond))
    Hinv = np.linalg.inv(H)
    V = Hinv @ lam @ Hinv
    return 0.5 * (V + V.T)


@dataclass(frozen=True, eq=False)
class VarianceReport:
    lam: np.ndarray
    V: np.ndarray
    scheme: str
    provenance: dict = field(default_factory=dict)

    @property
    def trace_lambda(self) -> float:
        return float(np.trace(self.lam))

    def csv_header(self) -> list[str]:
        d = self.lam.shape[0]
        cells = [f"{i}_{j}" for i in range(d) for j in range(d)]
        return ["scheme", "trace_lambda"] + [f"lambda_{c}" for c in cells] + [f"v_{c}" for c in cells]

    def csv_row(self) -> list[str]:
        vals = [self.scheme, repr(self.trace_lambda)]
        vals += [repr(float(v)) for v in self.lam.ravel()]
        vals += [repr(float(v)) for v in self.V.ravel()]
        return vals

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.csv_header())
            w.writerow(self.csv_row())


def variance_report(fam, data: Dataset, theta, plan: SamplingPlan, s_n: float | None = None) -> VarianceReport:
    if plan.scheme == "poisson":
        if s_n is None:
            raise ValueError("Poisson plans need s_n")
        lam = lambda_P(fam, data, theta, plan, s_n)
    else:
        lam = lambda_R(fam, data, theta, plan)
    V = sandwich(fam, data, theta, lam)
    return VarianceReport(lam, V, plan.scheme, dict(plan.provenance))


def trace_bounds(fam, data: Dataset, theta, scheme: str, alpha: float, s_n: float | None = None) -> tuple[float, float, float]:
    """``(tr Lambda_opt, tr Lambda_alpha, tr Lambda_opt / (1 - alpha))``.

    For ``0 < alpha < 1`` and sampling with replacement the middle value
    lies strictly between the other two. For Poisson sampling only the
    lower bound is guaranteed: ``Lambda_P`` subtracts the plan-free term
    ``C = (s_n/n^2) sum ||grad_i||^2``, so the ``1/(1 - alpha)`` factor
    bounds ``tr Lambda_P + C`` instead, and the third value can be
    exceeded when ``C`` is a large share of the trace (large ``s_n/n``).
    """
    opt = lambda_alpha(fam, data, theta, scheme, 0.0, s_n)
    mixed = lambda_alpha(fam, data, theta, scheme, alpha, s_n)
    t_opt = float(np.trace(opt))
    return t_opt, float(np.trace(mixed)), t_opt / (1.0 - alpha)
