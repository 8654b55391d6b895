"""Private two-sample tests for distributions on ``{1, ..., d}``."""

from __future__ import annotations

import math
import warnings

import numpy as np

from .mechanisms import _as_budget, rr_truncated, unary_encode
from .rng import RngStream
from .stats import PooledSample, TestOutcome, run_permutation_test


def _categories(x, d: int, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError(f"{name} must be a 1-d array of categories")
    if not np.issubdtype(x.dtype, np.integer):
        if np.any(x != np.round(x)):
            raise ValueError(f"{name} contains non-integer categories")
        x = x.astype(np.int64)
    if np.any((x < 1) | (x > d)):
        raise ValueError(f"{name} has categories outside [1, {d}]")
    return x


def estimate_pmf_from_ue(encoded, budget) -> np.ndarray:
    """Unbiased pmf estimate from unary-encoded bit vectors (one row per user).

    The estimate is not projected onto the simplex, so entries may be
    negative or exceed one.
    """
    budget = _as_budget(budget)
    z = np.asarray(encoded, dtype=float)
    if z.ndim == 1:
        z = z[None, :]
    if z.shape[0] == 0:
        raise ValueError("cannot estimate a pmf from zero vectors")
    flip = 1.0 - budget.omega_half  # 1 / (e^{eps/2} + 1)
    return budget.c_half * (z.mean(axis=0) - flip)


def test_discrete_noninteractive(x, y, d: int, budget, B: int = 199, alpha: float = 0.05,
                                 stream: RngStream | None = None, randomized: bool = False) -> TestOutcome:
    """Unary-encode every observation and run a U-statistic permutation test."""
    budget = _as_budget(budget)
    stream = stream if stream is not None else RngStream()
    x = _categories(x, d, "x")
    y = _categories(y, d, "y")
    if len(x) < 2 or len(y) < 2:
        raise ValueError("each sample needs at least two observations")
    z = unary_encode(x, d, budget, stream.derive(0))
    w = unary_encode(y, d, budget, stream.derive(1))
    pool = PooledSample.from_samples(z, w)
    out = run_permutation_test(pool, "u_stat", B, alpha, stream.derive(2), randomized=randomized)
    out.diagnostics["releases"] = {"unary_encode": len(x) + len(y)}
    return out


def truncation_width(n1: int, eps: float, const: float = 1.0) -> float:
    """``const / sqrt(n1 * eps^2)``."""
    return const / math.sqrt(n1 * eps * eps)


def _even_prefix(x: np.ndarray, name: str, diagnostics: dict) -> np.ndarray:
    if len(x) % 2:
        warnings.warn(f"{name} has odd size {len(x)}; dropping its last observation", stacklevel=3)
        diagnostics.setdefault("dropped", {})[name] = 1
        return x[:-1]
    return x


def test_discrete_interactive(x, y, d: int, budget, B: int = 199, alpha: float = 0.05,
                              stream: RngStream | None = None, trunc_const: float = 1.0,
                              randomized: bool = False) -> TestOutcome:
    """Two-stage test.

    The first half of each sample is unary-encoded and yields pmf estimates
    for X and Y. Each user in the second half then releases randomised
    response on ``p_X[x] - p_Y[x]`` at their own category, truncated to
    ``trunc_const / sqrt(n1 eps^2)``, and the released values go into a
    difference-of-means permutation test.
    """
    budget = _as_budget(budget)
    stream = stream if stream is not None else RngStream()
    if not trunc_const > 0:
        raise ValueError("trunc_const must be positive")
    diagnostics: dict = {}
    x = _even_prefix(_categories(x, d, "x"), "x", diagnostics)
    y = _even_prefix(_categories(y, d, "y"), "y", diagnostics)
    n1, n2 = len(x) // 2, len(y) // 2
    if n1 < 1 or n2 < 1:
        raise ValueError("each sample needs at least two observations")
    x_first, x_second = x[:n1], x[n1:]
    y_first, y_second = y[:n2], y[n2:]

    p_x = estimate_pmf_from_ue(unary_encode(x_first, d, budget, stream.derive(0)), budget)
    p_y = estimate_pmf_from_ue(unary_encode(y_first, d, budget, stream.derive(1)), budget)
    diff = p_x - p_y
    tau = truncation_width(n1, budget.eps, trunc_const)
    z = rr_truncated(diff[x_second - 1], tau, budget, stream.derive(2))
    w = rr_truncated(diff[y_second - 1], tau, budget, stream.derive(3))

    pool = PooledSample.from_samples(np.atleast_1d(z), np.atleast_1d(w))
    out = run_permutation_test(pool, "linear", B, alpha, stream.derive(4), randomized=randomized)
    diagnostics["tau"] = tau
    diagnostics["releases"] = {"unary_encode": n1 + n2, "rr_truncated": n1 + n2}
    out.diagnostics.update(diagnostics)
    return out
