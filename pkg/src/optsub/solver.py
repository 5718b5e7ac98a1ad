"""Newton's method for weighted M-estimation objectives ``sum_i w_i m(Z_i, theta)``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .dataset import Dataset
from .errors import DomainError, NonConvergence, SingularGram, SingularHessian
from .model import ModelFamily, get_family

MAX_HALVINGS = 30
RIDGE = 1e-10
DIVERGENCE_NORM = 1e6
SEPARATION_CURVATURE = 1e-6


@dataclass(frozen=True, eq=False)
class WeightedProblem:
    """Rows ``indices`` of ``data`` (repeats allowed) with positive weights.

    ``indices=None`` selects every row; ``weights=None`` means unit weights.
    """

    family: ModelFamily
    data: Dataset
    indices: np.ndarray | None = None
    weights: np.ndarray | None = None
    X: np.ndarray = field(init=False, repr=False)
    y: np.ndarray = field(init=False, repr=False)
    k: np.ndarray | None = field(init=False, repr=False)
    w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        fam = get_family(self.family)
        object.__setattr__(self, "family", fam)
        if self.indices is None:
            X, y, k = self.data.X, self.data.y, self.data.k
        else:
            idx = np.asarray(self.indices, dtype=np.intp).reshape(-1)
            if idx.size == 0:
                raise ValueError("a weighted problem needs at least one row")
            X, y, k = self.data.take(idx)
        m = X.shape[0]
        w = np.ones(m) if self.weights is None else np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.shape != (m,):
            raise ValueError(f"{w.shape[0]} weights for {m} rows")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be positive and finite")
        fam.check_response(y, k)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "w", w)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def eta(self, theta):
        return self.X @ theta

    def value(self, theta) -> float:
        """Weighted objective, ``-inf`` outside the admissible region."""
        eta = self.eta(theta)
        if not np.all(self.family.admissible(eta)):
            return -np.inf
        with np.errstate(over="ignore", invalid="ignore"):
            v = float(np.dot(self.w, self.family.loglik(eta, self.y, self.k)))
        return v if np.isfinite(v) else -np.inf

    def gradient(self, theta) -> np.ndarray:
        eta = self.eta(theta)
        return self.X.T @ (self.w * self.family.score(eta, self.y, self.k))

    def hessian(self, theta) -> np.ndarray:
        eta = self.eta(theta)
        c = self.w * self.family.curvature(eta, self.y, self.k)
        H = -(self.X.T @ (c[:, None] * self.X))
        return 0.5 * (H + H.T)


@dataclass(frozen=True)
class SolveReport:
    theta: np.ndarray
    iterations: int
    grad_norm: float
    converged: bool
    hessian: np.ndarray
    objective: float


def _condition(A: np.ndarray) -> float:
    with np.errstate(all="ignore"):
        c = np.linalg.cond(A)
    return float(c) if np.isfinite(c) else float("inf")


def newton_direction(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve ``(-H) step = g`` by Cholesky, retrying once with a small ridge.

    The ridge is relative to ``trace(-H)``; a Hessian with no positive
    curvature at all fails without a retry.
    """
    A = -H
    d = A.shape[0]
    for attempt in range(2):
        try:
            if _condition(A) > 1.0 / np.finfo(float).eps:
                raise np.linalg.LinAlgError
            cf = scipy.linalg.cho_factor(A, check_finite=False)
            return scipy.linalg.cho_solve(cf, g, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            scale = float(np.trace(A))
            if attempt == 0 and np.isfinite(scale) and scale > 0:
                A = A + RIDGE * scale / d * np.eye(d)
            else:
                break
    raise SingularHessian("Newton system is singular", condition=_condition(-H))


def default_start(problem: WeightedProblem) -> np.ndarray:
    """Admissible starting point for each family."""
    name = problem.family.name
    d = problem.d
    if name == "ols":
        if d <= 1000:
            try:
                return ols_closed_form(problem)
            except SingularGram:
                pass
        return np.zeros(d)
    if name == "gamma":
        xbar = np.average(problem.X, axis=0, weights=problem.w)
        nrm = float(xbar @ xbar)
        if nrm > 0:
            theta = -xbar / nrm
            if np.all(problem.eta(theta) < 0):
                return theta
        const = np.flatnonzero(np.all(problem.X == 1.0, axis=0))
        if const.size:
            theta = np.zeros(d)
            theta[const[0]] = -1.0 / np.average(problem.y, weights=problem.w)
            return theta
        raise DomainError("gamma: no admissible starting point; supply theta0")
    return np.zeros(d)


def newton_maximize(problem: WeightedProblem, theta0=None, tol: float = 1e-8, max_iter: int = 100) -> SolveReport:
    """Maximise the weighted objective of ``problem`` by damped Newton steps.

    Stops when ``||g(theta)|| <= tol * (1 + ||g(theta0)||)``, or when the
    Newton decrement ``g' step / 2`` (the predicted gain) falls below the
    roundoff level of the objective. A step is
    halved (at most 30 times) while it leaves the admissible region or
    lowers the objective.

    Raises:
        SingularHessian: the Newton system stays singular after a ridge retry.
        NonConvergence: ``max_iter`` reached; ``separated`` marks divergent
            iterates (separation in binary models).
        DomainError: no admissible step could be found.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter at least 1")
    theta = default_start(problem) if theta0 is None else np.array(theta0, dtype=np.float64).reshape(-1)
    f = problem.value(theta)
    if not np.isfinite(f):
        raise DomainError(f"{problem.family.name}: starting point is not admissible")
    g = problem.gradient(theta)
    threshold = tol * (1.0 + np.linalg.norm(g))
    norms = [np.linalg.norm(theta)]
    binary = problem.family.name in ("logistic", "binomial")
    curv0 = np.linalg.eigvalsh(-problem.hessian(theta))[-1] if binary else 0.0

    it = 0
    while np.linalg.norm(g) > threshold:
        if it >= max_iter:
            growing = len(norms) > 5 and all(b > a for a, b in zip(norms[-6:], norms[-5:]))
            report = SolveReport(theta, it, float(np.linalg.norm(g)), False, problem.hessian(theta), f)
            raise NonConvergence(
                f"no convergence after {max_iter} Newton iterations (|g|={np.linalg.norm(g):.3g})",
                report=report,
                separated=growing and binary,
            )
        H = problem.hessian(theta)
        try:
            step = newton_direction(H, g)
        except SingularHessian:
            # a vanishing binary-model Hessian along growing iterates is separation
            if binary and len(norms) > 3 and all(b > a for a, b in zip(norms[-4:], norms[-3:])):
                report = SolveReport(theta, it, float(np.linalg.norm(g)), False, H, f)
                raise NonConvergence("iterates diverge (separation)", report=report, separated=True) from None
            raise
        # roundoff slack so that steps taken at machine precision are not rejected
        slack = 64 * np.finfo(float).eps * (1.0 + abs(f))
        if 0.5 * float(g @ step) <= np.finfo(float).eps * (1.0 + abs(f)):
            # predicted gain is below roundoff: the gradient cannot be reduced further
            break
        t = 1.0
        admissible_seen = False
        for _ in range(MAX_HALVINGS + 1):
            cand = theta + t * step
            fc = problem.value(cand)
            admissible_seen |= np.isfinite(fc)
            if fc >= f - slack:
                break
            t *= 0.5
        else:
            if not admissible_seen:
                raise DomainError(f"{problem.family.name}: no admissible step after {MAX_HALVINGS} halvings")
            report = SolveReport(theta, it, float(np.linalg.norm(g)), False, H, f)
            raise NonConvergence("line search failed to find an ascent step", report=report)
        theta, f = cand, fc
        g = problem.gradient(theta)
        it += 1
        norms.append(np.linalg.norm(theta))
        if norms[-1] > DIVERGENCE_NORM:
            report = SolveReport(theta, it, float(np.linalg.norm(g)), False, problem.hessian(theta), f)
            raise NonConvergence("iterates diverge", report=report, separated=True)

    H = problem.hessian(theta)
    if binary and np.linalg.eigvalsh(-H)[0] < SEPARATION_CURVATURE * curv0:
        # the gradient also vanishes as theta runs off to infinity under separation
        report = SolveReport(theta, it, float(np.linalg.norm(g)), False, H, f)
        raise NonConvergence("fitted probabilities collapse to 0/1 (separation)", report=report, separated=True)
    return SolveReport(theta, it, float(np.linalg.norm(g)), True, H, f)


def ols_closed_form(problem: WeightedProblem) -> np.ndarray:
    """Solve the weighted normal equations ``X'WX theta = X'Wy``.

    Raises:
        SingularGram: ``X'WX`` is numerically singular.
    """
    if problem.family.name != "ols":
        raise ValueError("closed form applies to the ols family only")
    Xw = problem.X * problem.w[:, None]
    G = problem.X.T @ Xw
    G = 0.5 * (G + G.T)
    cond = _condition(G)
    if cond > 1.0 / np.finfo(float).eps:
        raise SingularGram("weighted Gram matrix is singular", condition=cond)
    try:
        cf = scipy.linalg.cho_factor(G, check_finite=False)
    except np.linalg.LinAlgError:
        raise SingularGram("weighted Gram matrix is not positive definite", condition=cond) from None
    return scipy.linalg.cho_solve(cf, Xw.T @ problem.y, check_finite=False)
