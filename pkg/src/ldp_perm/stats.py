"""Two-sample statistics and the permutation-test driver.

Both statistics reduce to functions of the group-1 sum ``S1`` (and, for the
U-statistic, the group-1 sum of squared norms ``Q1``), so a batch of
permutations is evaluated with one matrix product against a 0/1 membership
mask instead of re-indexing the pooled data per permutation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .rng import RngStream, random_permutations, uniform01

StatisticKind = Literal["u_stat", "linear"]
STATISTIC_KINDS = ("u_stat", "linear")

# Relative tolerance for deciding that a permuted statistic ties the observed
# one. Mathematically equal statistics can differ by a few ulps once the sums
# are accumulated in a different order; counting those as ties is the
# conservative reading of the indicator 1{T <= T^pi}.
TIE_RTOL = 1e-9


@dataclass
class TestOutcome:
    """Result of one hypothesis test."""

    __test__ = False  # not a pytest class

    p_value: float
    reject: bool
    statistic: float
    n_permutations: int
    permuted_statistics: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "p_value": float(self.p_value),
            "reject": bool(self.reject),
            "statistic": float(self.statistic),
            "B": int(self.n_permutations),
        }


def no_reject(n_permutations: int, reason: str, **diagnostics) -> TestOutcome:
    """Outcome of a test that could not run and therefore accepts."""
    return TestOutcome(1.0, False, float("nan"), n_permutations,
                       diagnostics={"skipped": reason, **diagnostics})


@dataclass(frozen=True)
class PooledSample:
    """Rows of sample X followed by rows of sample Y.

    ``rows`` is always stored as a float ``(n1 + n2, d)`` matrix; scalar
    observations get ``d = 1``.
    """

    rows: np.ndarray
    n1: int
    n2: int

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim == 1:
            rows = rows[:, None]
        if rows.ndim != 2:
            raise ValueError("pooled rows must be scalars or vectors")
        if self.n1 < 1 or self.n2 < 1 or rows.shape[0] != self.n1 + self.n2:
            raise ValueError(f"pool of {rows.shape[0]} rows does not split into {self.n1} + {self.n2}")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_samples(cls, z, w) -> "PooledSample":
        z = _as_rows(z)
        w = _as_rows(w)
        if z.shape[1] != w.shape[1]:
            raise ValueError(f"dimension mismatch: {z.shape[1]} vs {w.shape[1]}")
        return cls(np.vstack([z, w]), z.shape[0], w.shape[0])

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    def split(self, perm=None) -> tuple[np.ndarray, np.ndarray]:
        rows = self.rows if perm is None else self.rows[np.asarray(perm)]
        return rows[: self.n1], rows[self.n1:]


def _as_rows(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError("samples must be 1-d or 2-d arrays")
    return a


def _check_kind(kind: str) -> None:
    if kind not in STATISTIC_KINDS:
        raise ValueError(f"unknown statistic kind {kind!r}; expected one of {STATISTIC_KINDS}")


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def _u_from_sums(s1, q1, s2, q2, n1: int, n2: int):
    within1 = (np.sum(s1 * s1, axis=-1) - q1) / (n1 * (n1 - 1))
    within2 = (np.sum(s2 * s2, axis=-1) - q2) / (n2 * (n2 - 1))
    cross = np.sum(s1 * s2, axis=-1) / (n1 * n2)
    return within1 - 2.0 * cross + within2


def u_statistic(z, w) -> float:
    """Unbiased estimate of ``||E Z - E W||^2`` from two samples of vectors.

    Evaluated in O((n1 + n2) d) through the sums and sums of squared norms of
    each sample rather than the quadruple sum over index pairs.
    """
    z = _as_rows(z)
    w = _as_rows(w)
    if z.shape[0] < 2 or w.shape[0] < 2:
        raise ValueError("u_statistic needs at least two observations per sample")
    if z.shape[1] != w.shape[1]:
        raise ValueError(f"dimension mismatch: {z.shape[1]} vs {w.shape[1]}")
    return float(_u_from_sums(z.sum(0), np.sum(z * z), w.sum(0), np.sum(w * w),
                              z.shape[0], w.shape[0]))


def linear_statistic(z, w) -> float:
    """Difference of sample means."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    if z.size == 0 or w.size == 0:
        raise ValueError("linear_statistic needs non-empty samples")
    return float(z.mean() - w.mean())


def permuted_u_statistic(pool: PooledSample, perm) -> float:
    z, w = pool.split(perm)
    return u_statistic(z, w)


def permuted_linear_statistic(pool: PooledSample, perm) -> float:
    if pool.rows.shape[1] != 1:
        raise ValueError("linear statistic needs scalar observations")
    z, w = pool.split(perm)
    return linear_statistic(z[:, 0], w[:, 0])


def statistic(pool: PooledSample, kind: StatisticKind, perm=None) -> float:
    _check_kind(kind)
    if perm is None:
        perm = np.arange(pool.n)
    if kind == "u_stat":
        return permuted_u_statistic(pool, perm)
    return permuted_linear_statistic(pool, perm)


def batch_statistics(pool: PooledSample, kind: StatisticKind, perms: np.ndarray) -> np.ndarray:
    """Statistic for each row of ``perms`` (a ``(B, n)`` array of permutations)."""
    _check_kind(kind)
    perms = np.atleast_2d(np.asarray(perms))
    mask = np.zeros((perms.shape[0], pool.n))
    np.put_along_axis(mask, perms[:, : pool.n1], 1.0, axis=1)
    return _masked_statistics(pool, kind, mask)


def _masked_statistics(pool: PooledSample, kind: str, mask: np.ndarray) -> np.ndarray:
    rows, n1, n2 = pool.rows, pool.n1, pool.n2
    s1 = mask @ rows
    s2 = rows.sum(0) - s1
    if kind == "linear":
        if rows.shape[1] != 1:
            raise ValueError("linear statistic needs scalar observations")
        return s1[:, 0] / n1 - s2[:, 0] / n2
    if n1 < 2 or n2 < 2:
        raise ValueError("u_statistic needs at least two observations per sample")
    sq = np.einsum("ij,ij->i", rows, rows)
    q1 = mask @ sq
    q2 = sq.sum() - q1
    return _u_from_sums(s1, q1, s2, q2, n1, n2)


# ---------------------------------------------------------------------------
# p-values
# ---------------------------------------------------------------------------

def _tie_slack(observed: float, permuted: np.ndarray) -> float:
    scale = max(abs(observed), float(np.max(np.abs(permuted))) if permuted.size else 0.0)
    return TIE_RTOL * scale


def permutation_pvalue(observed: float, permuted) -> float:
    """``(1 + #{b : observed <= permuted_b}) / (1 + B)``; ties count."""
    permuted = np.asarray(permuted, dtype=float).ravel()
    if permuted.size < 1:
        raise ValueError("need at least one permuted statistic")
    slack = _tie_slack(observed, permuted)
    count = int(np.count_nonzero(observed <= permuted + slack))
    return (1 + count) / (1 + permuted.size)


def randomized_pvalue(observed: float, permuted, u: float) -> float:
    """Tie-randomised p-value; exact size at every level under exchangeability.

    The observed labelling and the ``k`` tied permutations are ordered
    uniformly at random, ``u`` being a Uniform[0, 1) draw.
    """
    permuted = np.asarray(permuted, dtype=float).ravel()
    slack = _tie_slack(observed, permuted)
    greater = int(np.count_nonzero(permuted > observed + slack))
    ties = int(np.count_nonzero(np.abs(permuted - observed) <= slack))
    rank = greater + 1 + int(np.floor(u * (ties + 1)))
    return rank / (1 + permuted.size)


def run_permutation_test(
    pool: PooledSample,
    kind: StatisticKind,
    B: int,
    alpha: float,
    stream: RngStream,
    randomized: bool = False,
    keep_permuted: bool = False,
) -> TestOutcome:
    """Permutation test rejecting when the p-value is at most ``alpha``.

    ``B`` permutations are drawn uniformly and independently (with
    replacement) from the symmetric group on the pooled indices.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    _check_kind(kind)
    identity = np.zeros((1, pool.n))
    identity[0, : pool.n1] = 1.0
    observed = float(_masked_statistics(pool, kind, identity)[0])
    perms = random_permutations(stream.derive(0), pool.n, B)
    permuted = batch_statistics(pool, kind, perms)
    if randomized:
        p = randomized_pvalue(observed, permuted, float(uniform01(stream.derive(1))))
    else:
        p = permutation_pvalue(observed, permuted)
    return TestOutcome(
        p_value=p,
        reject=bool(p <= alpha),
        statistic=observed,
        n_permutations=B,
        permuted_statistics=permuted if keep_permuted else None,
    )
