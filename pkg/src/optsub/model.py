"""M-estimation targets ``m(Z, theta)`` and their derivatives.

Every supported family uses a canonical link, so with the linear
predictor ``eta = x'theta`` the per-record derivatives factor as

    grad m = r(eta, y) * x          hess m = -c(eta, y) * x x'

where ``r`` is a residual-like score and ``c >= 0`` a curvature weight.
The vectorised routines below exploit this and never build per-row
gradient matrices.

Dropped constants (only differences of ``m`` in theta matter):

* ``ols``: none; ``m = -(y - eta)^2 / 2``.
* ``logistic``: none; ``m = y log p + (1 - y) log(1 - p)`` with ``p``
  clipped to ``[1e-12, 1 - 1e-12]`` inside ``m`` only.
* ``binomial``: ``log C(k, y)``; ``m = y eta - k log(1 + e^eta)``, with
  ``y`` the success count out of ``k`` trials.
* ``poisson``: ``-log y!``; ``m = y eta - e^eta``.
* ``gamma``: ``(nu - 1) log y + nu log nu - log Gamma(nu)`` and the factor
  ``nu`` (shape fixed, theta = beta only); ``m = y eta + log(-eta)``,
  admissible only where ``eta < 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .dataset import DEFAULT_BLOCK, Dataset, Observation
from .errors import DomainError, InvalidObservation, SingularHessian

P_CLIP = 1e-12


@dataclass(frozen=True)
class ModelFamily:
    """A canonical-link M-estimation family.

    The three callables take ``(eta, y, k)`` arrays and return per-row
    arrays: the objective ``m``, the score ``r`` and the curvature ``c``.
    """

    name: str
    loglik: Callable
    score: Callable
    curvature: Callable
    admissible: Callable
    check_response: Callable

    def __repr__(self) -> str:
        return f"ModelFamily({self.name!r})"

    def validate(self, data: Dataset) -> None:
        self.check_response(data.y, data.k)

    def domain_check(self, eta: np.ndarray, offset: int = 0) -> None:
        ok = self.admissible(eta)
        if not np.all(ok):
            row = int(np.flatnonzero(~ok)[0])
            raise DomainError(f"{self.name}: linear predictor {eta[row]!r} is not admissible", row=offset + row)


def _all_finite(eta):
    return np.isfinite(eta)


def _first_bad(mask) -> int:
    return int(np.flatnonzero(mask)[0])


# -- ols ---------------------------------------------------------------------


def _ols_m(eta, y, k):
    return -0.5 * (y - eta) ** 2


def _ols_r(eta, y, k):
    return y - eta


def _ols_c(eta, y, k):
    return np.ones_like(eta)


def _ols_check(y, k):
    pass


# -- logistic ----------------------------------------------------------------


def _logit_m(eta, y, k):
    p = np.clip(expit(eta), P_CLIP, 1.0 - P_CLIP)
    return y * np.log(p) + (1.0 - y) * np.log1p(-p)


def _logit_r(eta, y, k):
    return y - expit(eta)


def _logit_c(eta, y, k):
    p = expit(eta)
    return p * (1.0 - p)


def _logit_check(y, k):
    bad = (y != 0.0) & (y != 1.0)
    if np.any(bad):
        raise InvalidObservation("logistic response must be 0 or 1", row=_first_bad(bad))


# -- binomial ----------------------------------------------------------------


def _trials(y, k):
    return np.ones_like(y) if k is None else k


def _binom_m(eta, y, k):
    return y * eta - _trials(y, k) * np.logaddexp(0.0, eta)


def _binom_r(eta, y, k):
    return y - _trials(y, k) * expit(eta)


def _binom_c(eta, y, k):
    p = expit(eta)
    return _trials(y, k) * p * (1.0 - p)


def _binom_check(y, k):
    kk = _trials(y, k)
    bad = (y < 0) | (y > kk) | (y != np.round(y))
    if np.any(bad):
        raise InvalidObservation("binomial response must be an integer in [0, k]", row=_first_bad(bad))


# -- poisson -----------------------------------------------------------------


def _pois_m(eta, y, k):
    return y * eta - np.exp(eta)


def _pois_r(eta, y, k):
    return y - np.exp(eta)


def _pois_c(eta, y, k):
    return np.exp(eta)


def _pois_ok(eta):
    with np.errstate(over="ignore"):
        return np.isfinite(eta) & np.isfinite(np.exp(eta))


def _pois_check(y, k):
    bad = (y < 0) | (y != np.round(y))
    if np.any(bad):
        raise InvalidObservation("poisson response must be a nonnegative integer", row=_first_bad(bad))


# -- gamma (beta only, canonical link -1/mu) ---------------------------------


def _gamma_m(eta, y, k):
    return y * eta + np.log(-eta)


def _gamma_r(eta, y, k):
    return y + 1.0 / eta


def _gamma_c(eta, y, k):
    return 1.0 / eta**2


def _gamma_ok(eta):
    return np.isfinite(eta) & (eta < 0)


def _gamma_check(y, k):
    bad = ~(y > 0)
    if np.any(bad):
        raise InvalidObservation("gamma response must be positive", row=_first_bad(bad))


FAMILIES: dict[str, ModelFamily] = {
    "ols": ModelFamily("ols", _ols_m, _ols_r, _ols_c, _all_finite, _ols_check),
    "logistic": ModelFamily("logistic", _logit_m, _logit_r, _logit_c, _all_finite, _logit_check),
    "binomial": ModelFamily("binomial", _binom_m, _binom_r, _binom_c, _all_finite, _binom_check),
    "poisson": ModelFamily("poisson", _pois_m, _pois_r, _pois_c, _pois_ok, _pois_check),
    "gamma": ModelFamily("gamma", _gamma_m, _gamma_r, _gamma_c, _gamma_ok, _gamma_check),
}


def get_family(fam: str | ModelFamily) -> ModelFamily:
    if isinstance(fam, ModelFamily):
        return fam
    try:
        return FAMILIES[fam]
    except KeyError:
        raise ValueError(f"unknown family {fam!r}; choose from {sorted(FAMILIES)}") from None


# -- per-observation API -------------------------------------------------------


def _single(fam, z: Observation, theta):
    fam = get_family(fam)
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    x = z.x
    if x.shape != theta.shape:
        raise ValueError(f"x has length {x.shape[0]} but theta has length {theta.shape[0]}")
    y = np.array([z.y])
    k = None if z.k is None else np.array([z.k])
    fam.check_response(y, k)
    eta = np.array([x @ theta])
    fam.domain_check(eta)
    return fam, x, eta, y, k


def contrib_m(fam, z: Observation, theta) -> float:
    """Objective contribution ``m(z, theta)`` of a single record."""
    fam, x, eta, y, k = _single(fam, z, theta)
    return float(fam.loglik(eta, y, k)[0])


def contrib_grad(fam, z: Observation, theta) -> np.ndarray:
    fam, x, eta, y, k = _single(fam, z, theta)
    return fam.score(eta, y, k)[0] * x


def contrib_hess(fam, z: Observation, theta) -> np.ndarray:
    fam, x, eta, y, k = _single(fam, z, theta)
    c = fam.curvature(eta, y, k)[0]
    # outer product of x with itself is symmetric bit for bit
    return -c * np.outer(x, x)


# -- full-data routines --------------------------------------------------------


def _block_terms(fam: ModelFamily, data: Dataset, theta: np.ndarray, block: int):
    for start, X, y, k in data.blocks(block):
        eta = X @ theta
        fam.domain_check(eta, offset=start)
        yield start, X, eta, y, k


def scores(fam, data: Dataset, theta, block: int = DEFAULT_BLOCK) -> np.ndarray:
    """Per-row scores ``r_i``, so that ``grad m(Z_i, theta) = r_i x_i``."""
    fam = get_family(fam)
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty(data.n)
    for start, X, eta, y, k in _block_terms(fam, data, theta, block):
        out[start : start + len(y)] = fam.score(eta, y, k)
    return out


def grad_norms(fam, data: Dataset, theta, block: int = DEFAULT_BLOCK) -> np.ndarray:
    """``||grad m(Z_i, theta)||`` for every row, as ``|r_i| * ||x_i||``."""
    return np.abs(scores(fam, data, theta, block)) * data.row_norms()


def objective(fam, data: Dataset, theta, block: int = DEFAULT_BLOCK) -> float:
    """Full-data average objective ``M_n(theta)``."""
    fam = get_family(fam)
    theta = np.asarray(theta, dtype=np.float64)
    parts = [np.sum(fam.loglik(eta, y, k)) for _, _, eta, y, k in _block_terms(fam, data, theta, block)]
    return float(np.sum(parts)) / data.n


def mean_hessian(fam, data: Dataset, theta, block: int = DEFAULT_BLOCK) -> np.ndarray:
    """Full-data average Hessian ``(1/n) sum_i hess m(Z_i, theta)``."""
    fam = get_family(fam)
    theta = np.asarray(theta, dtype=np.float64)
    H = np.zeros((data.d, data.d))
    for _, X, eta, y, k in _block_terms(fam, data, theta, block):
        c = fam.curvature(eta, y, k)
        H -= X.T @ (c[:, None] * X)
    H /= data.n
    return 0.5 * (H + H.T)


def _inverse_with_check(H: np.ndarray) -> np.ndarray:
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise SingularHessian("average Hessian is singular", condition=float(cond))
    return np.linalg.inv(H)


def l_norms(fam, data: Dataset, theta, L, hessian: np.ndarray | None = None, block: int = DEFAULT_BLOCK) -> np.ndarray:
    """``||L Mdd^{-1} grad m(Z_i, theta)||`` for every row.

    ``Mdd`` is the full-data average Hessian at ``theta`` unless
    ``hessian`` supplies a substitute (e.g. a pilot estimate of it).

    Raises:
        SingularHessian: ``Mdd`` is numerically singular.
    """
    fam = get_family(fam)
    theta = np.asarray(theta, dtype=np.float64)
    L = np.atleast_2d(np.asarray(L, dtype=np.float64))
    H = mean_hessian(fam, data, theta, block) if hessian is None else np.asarray(hessian, dtype=np.float64)
    A = L @ _inverse_with_check(H)
    out = np.empty(data.n)
    for start, X, eta, y, k in _block_terms(fam, data, theta, block):
        r = fam.score(eta, y, k)
        out[start : start + len(y)] = np.abs(r) * np.linalg.norm(X @ A.T, axis=1)
    return out


def leverage_l(data: Dataset) -> np.ndarray:
    """The matrix ``(X'X)^{1/2}``, whose use as ``L`` gives leverage-based norms for OLS."""
    G = data.X.T @ data.X
    w, V = np.linalg.eigh(0.5 * (G + G.T))
    if w[0] <= 0:
        raise SingularHessian("X'X is not positive definite", condition=float("inf"))
    return (V * np.sqrt(w)) @ V.T


def approx_hessian_logistic(data: Dataset, theta) -> np.ndarray:
    """Hessian surrogate ``-(1/n) sum (y_i - p_i)^2 x_i x_i'`` for logistic models."""
    fam = FAMILIES["logistic"]
    theta = np.asarray(theta, dtype=np.float64)
    H = np.zeros((data.d, data.d))
    for _, X, eta, y, k in _block_terms(fam, data, theta, DEFAULT_BLOCK):
        r2 = (y - expit(eta)) ** 2
        H -= X.T @ (r2[:, None] * X)
    H /= data.n
    return 0.5 * (H + H.T)
