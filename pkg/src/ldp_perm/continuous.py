"""Private two-sample tests for densities on ``[0, 1]^d``.

Densities are compared through their coefficients in the tensor-product
trigonometric basis, truncated to multi-indices in an l2 ball of radius R.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .mechanisms import PrivacyBudget, _as_budget, laplace_mechanism, privatize_bounded_vectors, rr_truncated
from .rng import RngStream
from .stats import PooledSample, TestOutcome, no_reject, run_permutation_test


class ConfigurationError(ValueError):
    """The data are too small for the requested procedure."""


@dataclass(frozen=True)
class SobolevConfig:
    s: float = 1.0
    r: float = 1.0
    d: int = 1
    beta_target: float = 0.05

    def __post_init__(self):
        if not self.s > 0 or not self.r > 0:
            raise ValueError("smoothness s and radius r must be positive")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("dimension d must be a positive integer")
        if not 0 < self.beta_target < 1:
            raise ValueError("beta_target must lie in (0, 1)")

    @property
    def bound(self) -> float:
        """Sup-norm of every basis function, ``2^{d/2}``."""
        return 2.0 ** (self.d / 2)


# ---------------------------------------------------------------------------
# Basis and index sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiIndexSet:
    """Non-zero multi-indices ``l`` in ``N_0^d`` with ``||l||_2 <= R``, in lexicographic order."""

    R: float
    d: int
    indices: np.ndarray  # (V, d) int

    @property
    def V(self) -> int:
        return int(self.indices.shape[0])

    def iota(self, l: Sequence[int]) -> int:
        """1-based position of ``l`` in the ordering."""
        hits = np.flatnonzero(np.all(self.indices == np.asarray(l), axis=1))
        if hits.size == 0:
            raise KeyError(f"{tuple(l)} is not in the set")
        return int(hits[0]) + 1

    def __len__(self) -> int:
        return self.V


def multi_index_set(d: int, R: float) -> MultiIndexSet:
    if d < 1:
        raise ValueError("d must be at least 1")
    if R < 0:
        raise ValueError("R must be non-negative")
    top = int(math.floor(R))
    r2 = R * R
    # itertools.product yields lexicographic order already
    pts = [p for p in itertools.product(range(top + 1), repeat=d)
           if 0 < sum(c * c for c in p) <= r2 * (1 + 1e-12)]
    indices = np.array(pts, dtype=np.int64).reshape(-1, d)
    return MultiIndexSet(float(R), d, indices)


def _unit_cube(x, d: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None] if d in (None, 1) else x[None, :]
    if d is not None and x.shape[1] != d:
        raise ValueError(f"points have dimension {x.shape[1]}, expected {d}")
    if np.any((x < 0) | (x > 1)) or np.any(~np.isfinite(x)):
        raise ValueError("points must lie in [0, 1]^d")
    return x


def _phi_1d(m: np.ndarray, t: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    freq = (m + 1) // 2
    angle = 2.0 * np.pi * freq * t
    val = np.where(m % 2 == 1, np.sin(angle), np.cos(angle)) * math.sqrt(2.0)
    return np.where(m == 0, 1.0, val)


def trig_basis_eval(l: Sequence[int], x) -> float:
    """Tensor-product trigonometric basis function ``phi_l`` at one point."""
    l = np.asarray(l, dtype=np.int64).ravel()
    if np.any(l < 0):
        raise ValueError("multi-index entries must be non-negative")
    pt = _unit_cube(np.asarray(x, dtype=float).reshape(1, -1), len(l))[0]
    return float(np.prod(_phi_1d(l, pt)))


def basis_matrix(indices: np.ndarray, x) -> np.ndarray:
    """``(n, V)`` matrix of ``phi_l(x_i)`` for points ``x`` (``(n, d)``)."""
    indices = np.atleast_2d(np.asarray(indices, dtype=np.int64))
    d = indices.shape[1]
    x = _unit_cube(x, d)
    out = np.ones((x.shape[0], indices.shape[0]))
    for k in range(d):
        out *= _phi_1d(indices[None, :, k], x[:, k:k + 1])
    return out


# ---------------------------------------------------------------------------
# Radius choices
# ---------------------------------------------------------------------------

def _eps_sq(budget: PrivacyBudget) -> float:
    return min(budget.eps ** 2, 1.0)


def radius_noninteractive(n1: int, budget, alpha: float, sob: SobolevConfig) -> float:
    budget = _as_budget(budget)
    base = n1 * _eps_sq(budget) / math.log(1.0 / (alpha * sob.beta_target))
    return base ** (1.0 / (2 * sob.s + 1.5 * sob.d))


def _interactive_base(n1: int, n2: int, budget, alpha: float, sob: SobolevConfig) -> float:
    budget = _as_budget(budget)
    beta = sob.beta_target
    denom = math.log(4 * n2 / beta) * math.log(1.0 / (alpha * beta)) ** 2
    return n1 * _eps_sq(budget) / denom


def radius_trunc(n1: int, n2: int, budget, alpha: float, sob: SobolevConfig) -> float:
    return _interactive_base(n1, n2, budget, alpha, sob) ** (1.0 / (2 * sob.s + sob.d))


def radius_local(n1: int, n2: int, budget, alpha: float, sob: SobolevConfig) -> float:
    return _interactive_base(n1, n2, budget, alpha, sob) ** (1.0 / (2 * sob.s + 1))


def _index_set(R: float, d: int, diagnostics: dict, key: str = "R") -> MultiIndexSet:
    if R < 1:
        diagnostics[f"{key}_clamped_from"] = R
        R = 1.0
    diagnostics[key] = R
    return multi_index_set(d, R)


def index_count_lower_bound(d: int, R: float) -> float:
    """Lower bound on ``|N_0^d(R)|`` from the volume of the positive orthant of the ball."""
    ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * R ** d
    return ball / 2 ** d - 1


# ---------------------------------------------------------------------------
# Non-interactive test
# ---------------------------------------------------------------------------

def test_cont_noninteractive(x, y, budget, sobolev: SobolevConfig | None = None, B: int = 199,
                             alpha: float = 0.05, stream: RngStream | None = None,
                             manual_R: float | None = None, randomized: bool = False) -> TestOutcome:
    """Each user privatises their vector of basis evaluations; U-statistic permutation test."""
    budget = _as_budget(budget)
    sob = sobolev or SobolevConfig()
    stream = stream if stream is not None else RngStream()
    x = _unit_cube(x, sob.d)
    y = _unit_cube(y, sob.d)
    n1, n2 = len(x), len(y)
    if n1 < 2 or n2 < 2:
        raise ValueError("each sample needs at least two observations")
    diagnostics: dict = {}
    R = manual_R if manual_R is not None else radius_noninteractive(n1, budget, alpha, sob)
    idx = _index_set(R, sob.d, diagnostics)
    if idx.V == 0:
        raise ConfigurationError("empty multi-index set")
    z = privatize_bounded_vectors(basis_matrix(idx.indices, x), sob.bound, budget, stream.derive(0))
    w = privatize_bounded_vectors(basis_matrix(idx.indices, y), sob.bound, budget, stream.derive(1))
    out = run_permutation_test(PooledSample.from_samples(z, w), "u_stat", B, alpha,
                               stream.derive(2), randomized=randomized)
    diagnostics["V"] = idx.V
    diagnostics["releases"] = {"vertex": n1 + n2}
    out.diagnostics.update(diagnostics)
    return out


# ---------------------------------------------------------------------------
# Interactive sub-procedures
# ---------------------------------------------------------------------------

def estimate_coefficients(points: np.ndarray, idx: MultiIndexSet, budget: PrivacyBudget,
                          stream: RngStream, diagnostics: dict | None = None) -> np.ndarray:
    """Private coefficient estimates, one disjoint group of users per index.

    Users are assigned to groups of ``floor(n / V)`` in index order; each
    user releases randomised response on one basis evaluation and the group
    mean estimates that coefficient. Leftover users release nothing.
    """
    n, V = len(points), idx.V
    size = n // V
    if size < 1:
        raise ConfigurationError(f"{n} users cannot cover {V} coefficient groups")
    bound = 2.0 ** (idx.d / 2)
    used = points[: size * V]
    which = np.repeat(np.arange(V), size)
    # phi_l at each user's own index only
    vals = np.ones(size * V)
    for k in range(idx.d):
        vals *= _phi_1d(idx.indices[which, k], used[:, k])
    if diagnostics is not None:
        diagnostics["clamped"] = diagnostics.get("clamped", 0) + int(np.sum(np.abs(vals) > bound))
        diagnostics["discarded"] = diagnostics.get("discarded", 0) + n - size * V
    released = rr_truncated(vals, bound, budget, stream)
    return np.asarray(released).reshape(V, size).mean(axis=1)


def _split_folds(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    half = len(points) // 2
    return points[:half], points[half:]


def proc_trunc(x_first, y_first, x_second, y_second, eta: float, budget, sobolev: SobolevConfig,
               B: int, alpha_level: float, stream: RngStream, R: float | None = None,
               randomized: bool = False) -> TestOutcome:
    """Truncated-projection test.

    The first fold estimates coefficient differences; each second-fold user
    releases their clipped estimated density difference with Laplace noise
    of scale ``2 eta / eps``. Decided by a difference-of-means permutation test.
    """
    budget = _as_budget(budget)
    if not eta > 0:
        raise ValueError("eta must be positive")
    d = sobolev.d
    xf, yf = _unit_cube(x_first, d), _unit_cube(y_first, d)
    xs, ys = _unit_cube(x_second, d), _unit_cube(y_second, d)
    if len(xs) < 1 or len(ys) < 1:
        raise ConfigurationError("second fold is empty")
    diagnostics: dict = {"eta": eta}
    if R is None:
        R = radius_trunc(len(xs), len(ys), budget, alpha_level, sobolev)
    idx = _index_set(R, d, diagnostics)
    theta_x = estimate_coefficients(xf, idx, budget, stream.derive(0), diagnostics)
    theta_y = estimate_coefficients(yf, idx, budget, stream.derive(1), diagnostics)
    diff = theta_x - theta_y
    scale = 2.0 * eta / budget.eps
    z = laplace_mechanism(np.clip(basis_matrix(idx.indices, xs) @ diff, -eta, eta), scale, stream.derive(2))
    w = laplace_mechanism(np.clip(basis_matrix(idx.indices, ys) @ diff, -eta, eta), scale, stream.derive(3))
    out = run_permutation_test(PooledSample.from_samples(np.atleast_1d(z), np.atleast_1d(w)),
                               "linear", B, alpha_level, stream.derive(4), randomized=randomized)
    diagnostics["V"] = idx.V
    out.diagnostics.update(diagnostics)
    return out


def select_index(diff: np.ndarray) -> int:
    """Position of the largest absolute difference; ties go to the first."""
    return int(np.argmax(np.abs(diff)))


def proc_local(x_first, y_first, x_second, y_second, budget, sobolev: SobolevConfig,
               B: int, alpha_level: float, stream: RngStream, R: float | None = None,
               randomized: bool = False) -> TestOutcome:
    """Single-coefficient test.

    The first fold picks the index with the largest estimated coefficient
    difference; second-fold users release randomised response on that one
    basis function. Decided by a U-statistic permutation test.
    """
    budget = _as_budget(budget)
    d = sobolev.d
    xf, yf = _unit_cube(x_first, d), _unit_cube(y_first, d)
    xs, ys = _unit_cube(x_second, d), _unit_cube(y_second, d)
    if len(xs) < 2 or len(ys) < 2:
        raise ConfigurationError("second fold needs at least two users per sample")
    diagnostics: dict = {}
    if R is None:
        R = radius_local(len(xs), len(ys), budget, alpha_level, sobolev)
    idx = _index_set(R, d, diagnostics)
    theta_x = estimate_coefficients(xf, idx, budget, stream.derive(0), diagnostics)
    theta_y = estimate_coefficients(yf, idx, budget, stream.derive(1), diagnostics)
    pos = select_index(theta_x - theta_y)
    chosen = idx.indices[pos:pos + 1]
    bound = sobolev.bound
    z = rr_truncated(basis_matrix(chosen, xs)[:, 0], bound, budget, stream.derive(2))
    w = rr_truncated(basis_matrix(chosen, ys)[:, 0], bound, budget, stream.derive(3))
    out = run_permutation_test(PooledSample.from_samples(np.atleast_1d(z), np.atleast_1d(w)),
                               "u_stat", B, alpha_level, stream.derive(4), randomized=randomized)
    diagnostics.update(V=idx.V, selected=tuple(int(c) for c in chosen[0]))
    out.diagnostics.update(diagnostics)
    return out


# ---------------------------------------------------------------------------
# Combined interactive test
# ---------------------------------------------------------------------------

def eta_grid(V: int, n_slice: int, n2: int, budget, alpha: float, beta: float,
             constant_c: float = 1.0) -> np.ndarray:
    """Candidate truncation levels, one per ``j`` in ``1..|J|`` with ``|J| = max(1, floor(log2 V))``."""
    budget = _as_budget(budget)
    J = max(1, int(math.floor(math.log2(V)))) if V >= 1 else 1
    logs = math.log(2 * J / (alpha * beta)) ** 2 * math.log(4 * n2 / beta) ** 2
    j = np.arange(1, J + 1)
    return np.sqrt(constant_c * 2.0 ** j * V * V * logs / (n_slice * budget.eps ** 2))


def test_cont_interactive(x, y, budget, sobolev: SobolevConfig | None = None, B: int = 199,
                          alpha: float = 0.05, constant_c: float = 1.0,
                          stream: RngStream | None = None, manual_R: float | None = None,
                          randomized: bool = False) -> TestOutcome:
    """Reject if the local test (level alpha/2) or any truncated test (level alpha/(2|J|)) rejects.

    The first half of each sample feeds the local test; the second half is
    cut into ``|J|`` equal slices, one per truncation level. Every slice is
    split again into an estimation fold and a release fold.
    """
    budget = _as_budget(budget)
    sob = sobolev or SobolevConfig()
    stream = stream if stream is not None else RngStream()
    if not constant_c > 0:
        raise ValueError("constant_c must be positive")
    x = _unit_cube(x, sob.d)
    y = _unit_cube(y, sob.d)
    n1, n2 = len(x), len(y)
    diagnostics: dict = {}
    if manual_R is not None:
        r_trunc = r_local = float(manual_R)
    else:
        r_trunc = radius_trunc(n1, n2, budget, alpha, sob)
        r_local = radius_local(n1, n2, budget, alpha, sob)
    r_trunc = max(r_trunc, 1.0)
    r_local = max(r_local, 1.0)
    V = multi_index_set(sob.d, r_trunc).V
    h1, h2 = n1 // 2, n2 // 2
    J = max(1, int(math.floor(math.log2(V))))
    s1, s2 = (n1 - h1) // J, (n2 - h2) // J
    if h1 < 4 or h2 < 4 or s1 < 2 or s2 < 2:
        raise ConfigurationError(f"samples of size {n1}, {n2} cannot be cut into {J + 1} usable slices")
    etas = eta_grid(V, s1, n2, budget, alpha, sob.beta_target, constant_c)

    xf, xs = _split_folds(x[:h1])
    yf, ys = _split_folds(y[:h2])
    local = proc_local(xf, yf, xs, ys, budget, sob, B, alpha / 2, stream.derive(0),
                       R=r_local, randomized=randomized)
    subs = []
    for j in range(J):
        xj = x[h1 + j * s1: h1 + (j + 1) * s1]
        yj = y[h2 + j * s2: h2 + (j + 1) * s2]
        xf, xs = _split_folds(xj)
        yf, ys = _split_folds(yj)
        subs.append(proc_trunc(xf, yf, xs, ys, float(etas[j]), budget, sob, B, alpha / (2 * J),
                               stream.derive(j + 1), R=r_trunc, randomized=randomized))

    reject = local.reject or any(o.reject for o in subs)
    p = min([2.0 * local.p_value] + [2.0 * J * o.p_value for o in subs])
    diagnostics.update(
        V=V, J=J, etas=etas.tolist(), R_trunc=r_trunc, R_local=r_local,
        local=local.p_value, trunc=[o.p_value for o in subs],
        selected=local.diagnostics.get("selected"),
        discarded=(n1 - h1 - J * s1) + (n2 - h2 - J * s2),
    )
    return TestOutcome(min(p, 1.0), reject, local.statistic, B, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# Adaptive wrappers
# ---------------------------------------------------------------------------

def adaptive_fold_count(n1: int, eps: float, mode: Literal["noninteractive", "interactive"]) -> int:
    ne2 = n1 * eps * eps
    if ne2 <= 2:
        raise ValueError(f"adaptive test needs n1 * eps^2 > 2, got {ne2}")
    lg = math.log2(ne2)
    k = (2.0 / 3.0) * lg + 1 if mode == "noninteractive" else lg + 1
    return int(math.floor(k + 1e-12))


def test_adaptive(x, y, budget, sobolev: SobolevConfig | None = None, B: int = 199,
                  alpha: float = 0.05, mode: Literal["noninteractive", "interactive"] = "noninteractive",
                  stream: RngStream | None = None, constant_c: float = 1.0,
                  randomized: bool = False) -> TestOutcome:
    """Bonferroni combination over radii ``R = 2^k`` on disjoint folds.

    ``sobolev.s`` is ignored. Folds too small for their radius accept.
    """
    if mode not in ("noninteractive", "interactive"):
        raise ValueError(f"unknown mode {mode!r}")
    budget = _as_budget(budget)
    sob = sobolev or SobolevConfig()
    stream = stream if stream is not None else RngStream()
    x = _unit_cube(x, sob.d)
    y = _unit_cube(y, sob.d)
    n1, n2 = len(x), len(y)
    k_max = adaptive_fold_count(n1, budget.eps, mode)
    f1, f2 = n1 // k_max, n2 // k_max
    level = alpha / k_max
    outcomes = []
    for k in range(1, k_max + 1):
        xk = x[(k - 1) * f1: k * f1]
        yk = y[(k - 1) * f2: k * f2]
        R = 2.0 ** k
        sub = stream.derive(k)
        if index_count_lower_bound(sob.d, R) > max(f1, f2):
            outcomes.append(no_reject(B, "fold too small for radius", R=R))
            continue
        try:
            if mode == "noninteractive":
                o = test_cont_noninteractive(xk, yk, budget, sob, B, level, sub, manual_R=R,
                                             randomized=randomized)
            else:
                o = test_cont_interactive(xk, yk, budget, sob, B, level, constant_c, sub,
                                          manual_R=R, randomized=randomized)
        except ConfigurationError as exc:
            o = no_reject(B, str(exc), R=R)
        outcomes.append(o)
    reject = any(o.reject for o in outcomes)
    p = min(1.0, k_max * min(o.p_value for o in outcomes))
    return TestOutcome(p, reject, float("nan"), B, diagnostics={
        "k_max": k_max, "p_values": [o.p_value for o in outcomes],
        "skipped": [k + 1 for k, o in enumerate(outcomes) if "skipped" in o.diagnostics],
    })
