"""Optimal subsampling probabilities.

With replacement, the trace-optimal distribution is proportional to the
gradient norms ``t_i``. Under Poisson sampling every probability is capped
at ``1/s_n``; the optimum is then ``(t_i ^ H) / sum_j (t_j ^ H)`` (``^`` is
``min``) with a water-filling threshold ``H`` that caps exactly ``g`` of
the largest norms. ``H`` and ``g`` come from a scan over the sorted norms:
``g`` is the smallest count with

    t_(n-g) (s_n - g)       <  S(n-g)
    t_(n-g+1) (s_n - g + 1) >= S(n-g+1)      (t_(n+1) = inf)

where ``S(m)`` is the sum of the ``m`` smallest norms, and then
``H = S(n-g) / (s_n - g)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AllZeroNorms, EmptyPilot, NoValidG, ZeroPsi

SCHEMES = ("with_replacement", "poisson")


@dataclass(frozen=True)
class PoissonThreshold:
    H: float
    g: int


@dataclass(frozen=True, eq=False)
class SamplingPlan:
    """A probability vector over all ``n`` rows plus how it was made."""

    pi: np.ndarray
    scheme: str
    alpha: float = 0.0
    threshold: PoissonThreshold | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.pi.size

    def to_csv(self, path: str | Path) -> None:
        """Write an ``index,pi`` sidecar file."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "pi"])
            for i, p in enumerate(self.pi):
                w.writerow([i, repr(float(p))])


def check_norms(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if t.size == 0 or not np.all(np.isfinite(t)) or np.any(t < 0):
        raise ValueError("norms must be finite and nonnegative")
    if not np.any(t > 0):
        raise AllZeroNorms("all gradient norms are zero")
    return t


def compensated_cumsum(a: np.ndarray) -> np.ndarray:
    """Prefix sums ``[0, a0, a0+a1, ...]`` with Neumaier compensation."""
    out = np.empty(a.size + 1)
    out[0] = 0.0
    s = 0.0
    c = 0.0
    for i, v in enumerate(a.tolist(), start=1):
        tot = s + v
        if abs(s) >= abs(v):
            c += (s - tot) + v
        else:
            c += (v - tot) + s
        s = tot
        out[i] = s + c
    return out


def opt_probs_withreplacement(t) -> SamplingPlan:
    """``pi_i = t_i / sum_j t_j``."""
    t = check_norms(t)
    pi = t / math.fsum(t)
    return SamplingPlan(pi, "with_replacement", provenance={"kind": "exact"})


def poisson_threshold(t, s_n: int) -> PoissonThreshold:
    """Water-filling threshold ``H`` and capped count ``g`` for Poisson sampling.

    Raises:
        AllZeroNorms: every norm is zero.
        NoValidG: no ``g`` in ``[0, s_n)`` passes both inequalities; this
            only happens when the preconditions are violated (e.g. fewer than
            ``s_n`` positive norms).
    """
    t = check_norms(t)
    n = t.size
    if not 1 <= s_n < n:
        raise ValueError(f"need 1 <= s_n < n, got s_n={s_n}, n={n}")
    ts = np.sort(t, kind="stable")
    S = compensated_cumsum(ts)
    for g in range(int(math.ceil(s_n))):
        m = n - g
        # both tests moved the largest term to the left-hand side: the same
        # inequalities, but immune to norms that vanish when added to S
        below = ts[m - 1] * (s_n - g - 1) < S[m - 1]
        above = g == 0 or ts[m] * (s_n - g) >= S[m]
        if below and above:
            return PoissonThreshold(float(S[m] / (s_n - g)), g)
    raise NoValidG(f"no valid g in [0, {s_n}) for {n} norms")


def opt_probs_poisson(t, s_n: int) -> SamplingPlan:
    """``pi_i = (t_i ^ H) / sum_j (t_j ^ H)``; exactly ``g`` entries equal ``1/s_n``."""
    t = check_norms(t)
    th = poisson_threshold(t, s_n)
    capped = np.minimum(t, th.H)
    pi = capped / math.fsum(capped)
    return SamplingPlan(pi, "poisson", threshold=th, provenance={"kind": "exact", "s_n": s_n})


def kkt_oracle(t, s_n: int) -> np.ndarray:
    """Brute-force minimiser of ``sum t_i^2 / pi_i`` on ``{sum pi = 1, 0 <= pi <= 1/s_n}``.

    Tries every number ``g`` of capped entries: the ``g`` largest norms get
    ``1/s_n`` and the rest share ``1 - g/s_n`` in proportion to their norms.
    Among feasible candidates the one with the smallest objective wins.
    Validation helper for small ``n``.
    """
    t = check_norms(t)
    n = t.size
    if n > 200:
        raise ValueError("kkt_oracle is meant for n <= 200")
    if not 1 <= s_n < n:
        raise ValueError(f"need 1 <= s_n < n, got s_n={s_n}, n={n}")
    order = np.argsort(t, kind="stable")
    best, best_val = None, np.inf
    for g in range(int(math.ceil(s_n))):
        rest = order[: n - g]
        top = order[n - g :]
        mass = math.fsum(t[rest])
        if mass <= 0:
            continue
        pi = np.empty(n)
        pi[top] = 1.0 / s_n
        pi[rest] = t[rest] * (1.0 - g / s_n) / mass
        if np.any(pi > (1.0 / s_n) * (1 + 1e-12)):
            continue
        with np.errstate(all="ignore"):
            terms = np.divide(t**2, pi, out=np.zeros(n), where=t > 0)
        if not np.all(np.isfinite(terms)):
            continue
        val = math.fsum(terms)
        if val < best_val:
            best, best_val = pi, val
    if best is None:
        raise NoValidG("no feasible candidate")
    return best


def defensive_mix(plan: SamplingPlan, alpha: float) -> SamplingPlan:
    """``pi <- (1 - alpha) pi + alpha / n``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    pi = (1.0 - alpha) * plan.pi + alpha / plan.n
    prov = dict(plan.provenance)
    prov["mixed"] = alpha
    return SamplingPlan(pi, plan.scheme, alpha, plan.threshold, prov)


def upper_quantile(values, q: float) -> float:
    """Upper ``q``-th sample quantile: the ``k``-th largest value, ``k = max(1, ceil(q m))``."""
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    m = v.size
    if m == 0:
        raise ValueError("no values")
    # rounding guard so that e.g. 0.1 * 100 counts as exactly 10
    k = max(1, math.ceil(round(q * m, 9)))
    return float(v[m - min(k, m)])


@dataclass(frozen=True)
class PilotPoissonPlan:
    """Pilot-based rule mapping a norm to an inclusion probability.

    ``probs(t) = (1 - alpha) (t ^ H) / (n psi) + alpha / n``. Sampling keeps
    a record with probability ``s_n * probs(t)`` (certain when above one);
    estimation weights use ``min(s_n * probs(t), 1)``.
    """

    H: float
    psi: float
    n: int
    alpha: float = 0.0
    h_mode: str = "quantile"
    b: float = float("inf")

    def probs(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        base = np.minimum(t, self.H) / (self.n * self.psi)
        return (1.0 - self.alpha) * base + self.alpha / self.n

    def mixed(self, alpha: float) -> "PilotPoissonPlan":
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        return PilotPoissonPlan(self.H, self.psi, self.n, alpha, self.h_mode, self.b)


def pilot_poisson_plan(pilot_norms, s_n: float, n: int, b: float = 5.0, h_mode: str = "quantile") -> PilotPoissonPlan:
    """Estimate the threshold ``H`` and normaliser ``psi`` from pilot norms.

    ``quantile`` mode takes ``H`` as the upper ``s_n / (b n)`` sample
    quantile of the pilot norms; ``infinity`` mode drops the threshold.
    ``psi`` is the pilot mean of ``t ^ H``.

    Raises:
        EmptyPilot: no pilot norms.
        ZeroPsi: all pilot norms are zero.
    """
    t = np.asarray(pilot_norms, dtype=np.float64).reshape(-1)
    if t.size == 0:
        raise EmptyPilot("no pilot rows")
    if h_mode == "infinity":
        H = float("inf")
    elif h_mode == "quantile":
        if b < 1:
            raise ValueError("b must be at least 1")
        q = s_n / (b * n)
        if not 0 <= q < 1:
            raise ValueError(f"quantile level s_n/(b n) = {q} outside [0, 1)")
        H = upper_quantile(t, q)
    else:
        raise ValueError(f"unknown H mode {h_mode!r}")
    psi = math.fsum(np.minimum(t, H)) / t.size
    if not psi > 0:
        raise ZeroPsi("pilot norms are all zero")
    return PilotPoissonPlan(H, psi, int(n), 0.0, h_mode, b if h_mode == "quantile" else float("inf"))
