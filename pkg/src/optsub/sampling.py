"""Subsample generation: multinomial with replacement and Poisson sampling.

Randomness comes from numpy's PCG64 bit generator seeded through a
``SeedSequence`` whose spawn key carries the stream id (plus optional
sub-keys), so that ``(seed, stream)`` pairs give independent,
reproducible streams. Monte Carlo replicate ``t`` uses stream ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import EmptyPilot, InvalidDistribution

RENORM_TOL = 1e-9


@dataclass(frozen=True)
class RngSeed:
    """Master seed, stream id and an optional key path below the stream."""

    seed: int
    stream: int = 0
    key: tuple = ()

    def child(self, *subkey: int) -> "RngSeed":
        return RngSeed(self.seed, self.stream, self.key + tuple(int(k) for k in subkey))

    def generator(self, *subkey: int) -> np.random.Generator:
        """PCG64 generator for this stream; ``subkey`` splits it further."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream, *self.key, *subkey))
        return np.random.Generator(np.random.PCG64(ss))


def as_seed(seed) -> RngSeed:
    if isinstance(seed, RngSeed):
        return seed
    return RngSeed(int(seed))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return as_seed(seed).generator()


@dataclass(frozen=True, eq=False)
class Subsample:
    """Drawn row indices with the probability recorded for each draw."""

    indices: np.ndarray
    probs: np.ndarray
    realized_size: int
    scheme: str

    def __eq__(self, other):
        return (
            isinstance(other, Subsample)
            and self.scheme == other.scheme
            and self.realized_size == other.realized_size
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.probs, other.probs)
        )


def check_distribution(pi) -> np.ndarray:
    """Validate a probability vector and renormalise it.

    Raises:
        InvalidDistribution: negative or non-finite entries, a zero sum, or
            a sum further than 1e-9 from one.
    """
    pi = np.asarray(pi, dtype=np.float64).reshape(-1)
    if pi.size == 0 or not np.all(np.isfinite(pi)) or np.any(pi < 0):
        raise InvalidDistribution("probabilities must be finite and nonnegative")
    total = float(np.sum(pi))
    if total <= 0:
        raise InvalidDistribution("probabilities sum to zero")
    if abs(total - 1.0) > RENORM_TOL:
        raise InvalidDistribution(f"probabilities sum to {total!r}, not 1")
    return pi / total


class AliasTable:
    """Walker/Vose alias table: O(n) construction, O(1) per draw."""

    def __init__(self, pi):
        pi = check_distribution(pi)
        n = pi.size
        scaled = pi * n
        prob = np.ones(n)
        alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        scaled = scaled.tolist()
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            (small if scaled[g] < 1.0 else large).append(g)
        # leftovers are 1 up to rounding
        for i in small + large:
            prob[i] = 1.0
            alias[i] = i
        self.pi = pi
        self.prob = prob
        self.alias = alias

    def __len__(self):
        return self.prob.size

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        col = rng.integers(0, len(self), size=size)
        coin = rng.random(size)
        return np.where(coin < self.prob[col], col, self.alias[col])


def sample_with_replacement(pi, s_n: int, seed, table: AliasTable | None = None) -> Subsample:
    """Draw ``s_n`` i.i.d. indices from the multinomial distribution ``pi``.

    ``seed`` is an ``RngSeed``, an int or a ready ``Generator``. A prebuilt
    ``table`` for ``pi`` may be passed to skip construction.
    """
    if s_n < 1:
        raise ValueError("s_n must be at least 1")
    table = AliasTable(pi) if table is None else table
    idx = table.draw(_rng(seed), s_n)
    return Subsample(idx, table.pi[idx], int(s_n), "with_replacement")


def _chunks(pi_source) -> Iterable[np.ndarray]:
    if isinstance(pi_source, np.ndarray) or isinstance(pi_source, (list, tuple)):
        yield np.asarray(pi_source, dtype=np.float64).reshape(-1)
    else:
        for chunk in pi_source:
            yield np.asarray(chunk, dtype=np.float64).reshape(-1)


def sample_poisson(pi_source, s_n: float, seed) -> Subsample:
    """Poisson sampling in one pass over ``pi_source``.

    ``pi_source`` is an array of per-record probabilities or any iterable
    of array chunks in data order, so that probabilities can be computed
    lazily while scanning. One uniform ``u_i`` is drawn per record and the
    record is kept when ``u_i < s_n * pi_i``; values of ``s_n * pi_i`` above
    one mean certain inclusion. An empty subsample is a valid result.
    """
    if s_n < 0:
        raise ValueError("s_n must be nonnegative")
    rng = _rng(seed)
    kept_idx, kept_pi = [], []
    offset = 0
    for chunk in _chunks(pi_source):
        if np.any(chunk < 0) or not np.all(np.isfinite(chunk)):
            raise InvalidDistribution("inclusion probabilities must be finite and nonnegative")
        u = rng.random(chunk.size)
        hit = np.flatnonzero(u < s_n * chunk)
        kept_idx.append(hit + offset)
        kept_pi.append(chunk[hit])
        offset += chunk.size
    idx = np.concatenate(kept_idx) if kept_idx else np.empty(0, dtype=np.intp)
    probs = np.concatenate(kept_pi) if kept_pi else np.empty(0)
    return Subsample(idx.astype(np.intp), probs, int(idx.size), "poisson")


def pilot_uniform(n: int, s0: int, scheme: str, seed) -> Subsample:
    """Uniform pilot subsample of (expected) size ``s0`` from ``n`` rows.

    Raises:
        EmptyPilot: a Poisson pilot selected no rows.
    """
    if s0 < 1 or n < 1:
        raise ValueError("n and s0 must be at least 1")
    if scheme == "with_replacement":
        return sample_with_replacement(np.full(n, 1.0 / n), s0, seed)
    if scheme == "poisson":
        sub = sample_poisson(np.full(n, 1.0 / n), s0, seed)
        if sub.realized_size == 0:
            raise EmptyPilot("Poisson pilot subsample is empty")
        return sub
    raise ValueError(f"unknown scheme {scheme!r}")
