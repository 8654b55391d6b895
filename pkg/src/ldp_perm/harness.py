"""Monte Carlo harness: alternative families, power estimation, separation search."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from statistics import NormalDist
from typing import Callable

import numpy as np

from . import continuous, discrete
from .rng import RngStream, bernoulli, uniform01
from .stats import PooledSample, batch_statistics, statistic

DISCRETE_FAMILIES = ("discrete_L1", "discrete_L2")
CONTINUOUS_FAMILIES = ("beta", "triangle", "cosine")
FAMILIES = DISCRETE_FAMILIES + CONTINUOUS_FAMILIES


# ---------------------------------------------------------------------------
# Alternatives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlternativeSpec:
    family: str
    gamma: float
    d: int = 1
    k: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("cosine frequency k must be at least 1")


def make_discrete_alternative(d: int, gamma: float, kind: int) -> np.ndarray:
    """Perturbation of the uniform pmf on ``d`` cells.

    Kind 1 alternates ``(1 +- gamma)/d`` (L1 distance ``gamma``); kind 2 moves
    mass ``(d-1) gamma / d`` onto the first cell.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    if d < 2:
        raise ValueError("need at least two categories")
    if kind == 1:
        if d % 2:
            raise ValueError("kind-1 alternative needs an even number of categories")
        signs = np.tile([1.0, -1.0], d // 2)
        return (1.0 + gamma * signs) / d
    if kind == 2:
        p = np.full(d, (1.0 - gamma) / d)
        p[0] = 1.0 / d + (d - 1) * gamma / d
        return p
    raise ValueError(f"kind must be 1 or 2, got {kind}")


def sample_discrete(p, n: int, stream: RngStream) -> np.ndarray:
    """``n`` i.i.d. categories in ``{1, ..., len(p)}``."""
    cdf = np.cumsum(np.asarray(p, dtype=float))
    cdf[-1] = 1.0
    return np.searchsorted(cdf, uniform01(stream, n), side="right") + 1


def _triangle(x):
    return np.where(x < 0.5, 4.0 * x, 4.0 * (1.0 - x))


def continuous_density(spec: AlternativeSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = spec.gamma
    if spec.family == "beta":
        return (1 - g) + 5 * g * (1 - x) ** 4
    if spec.family == "triangle":
        return (1 - g) + g * _triangle(x)
    if spec.family == "cosine":
        return 1 + g * np.cos(2 * spec.k * np.pi * x)
    raise ValueError(f"{spec.family} is not a continuous family")


def continuous_cdf(spec: AlternativeSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = spec.gamma
    if spec.family == "beta":
        return (1 - g) * x + g * (1 - (1 - x) ** 5)
    if spec.family == "triangle":
        tri = np.where(x < 0.5, 2 * x * x, 1 - 2 * (1 - x) ** 2)
        return (1 - g) * x + g * tri
    if spec.family == "cosine":
        w = 2 * spec.k * np.pi
        return x + g * np.sin(w * x) / w
    raise ValueError(f"{spec.family} is not a continuous family")


def _envelope(spec: AlternativeSpec) -> float:
    return {"beta": 1 + 4 * spec.gamma, "triangle": 1 + spec.gamma, "cosine": 1 + spec.gamma}[spec.family]


def sample_continuous(spec: AlternativeSpec, n: int, stream: RngStream) -> np.ndarray:
    """``n`` draws on ``[0, 1]`` by rejection against the uniform envelope."""
    if spec.family not in CONTINUOUS_FAMILIES:
        raise ValueError(f"{spec.family} is not a continuous family")
    gen = stream.generator
    M = _envelope(spec)
    out = np.empty(0)
    while out.size < n:
        batch = max(64, int(1.2 * (n - out.size) * M) + 16)
        cand = gen.random(batch)
        keep = gen.random(batch) * M <= continuous_density(spec, cand)
        out = np.concatenate([out, cand[keep]])
    return out[:n]


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

_Z95 = NormalDist().inv_cdf(0.975)


def wilson_interval(successes: int, trials: int, z: float = _Z95) -> tuple[float, float]:
    if trials < 1:
        raise ValueError("need at least one trial")
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


@dataclass(frozen=True)
class ExperimentConfig:
    """One cell of an experiment grid; calling it on a stream runs one replication."""

    method: str
    family: str = "discrete_L1"
    d: int | None = None  # category count; continuous families are one-dimensional
    eps: float = 1.0
    gamma: float = 0.0
    n1: int = 250
    n2: int = 250
    s: float = 1.0
    B: int = 199
    alpha: float = 0.05
    k: int = 1
    trunc_const: float = 1.0
    manual_R: float | None = None
    randomized: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {sorted(METHODS)}")
        if self.d is None:
            object.__setattr__(self, "d", 8 if self.family in DISCRETE_FAMILIES else 1)
        if self.family in CONTINUOUS_FAMILIES and self.d != 1:
            raise ValueError("continuous families are one-dimensional (d = 1)")
        AlternativeSpec(self.family, self.gamma, self.d, self.k)
        discrete_method = self.method.startswith("discrete")
        if discrete_method and self.family not in DISCRETE_FAMILIES:
            raise ValueError(f"method {self.method} needs a discrete family")
        if self.method.startswith(("cont", "adaptive")) and self.family not in CONTINUOUS_FAMILIES:
            raise ValueError(f"method {self.method} needs a continuous family")

    def draw(self, stream: RngStream) -> tuple[np.ndarray, np.ndarray]:
        if self.family in DISCRETE_FAMILIES:
            kind = 1 if self.family == "discrete_L1" else 2
            uniform = np.full(self.d, 1.0 / self.d)
            x = sample_discrete(uniform, self.n1, stream.derive(0))
            y = sample_discrete(make_discrete_alternative(self.d, self.gamma, kind), self.n2, stream.derive(1))
            return x, y
        null = AlternativeSpec(self.family, 0.0)
        alt = AlternativeSpec(self.family, self.gamma, k=self.k)
        return sample_continuous(null, self.n1, stream.derive(0)), sample_continuous(alt, self.n2, stream.derive(1))

    def __call__(self, stream: RngStream) -> bool:
        return bool(METHODS[self.method](self, stream))


def _run_discrete_ni(cfg: ExperimentConfig, stream: RngStream) -> bool:
    x, y = cfg.draw(stream)
    return discrete.test_discrete_noninteractive(x, y, cfg.d, cfg.eps, cfg.B, cfg.alpha, stream.derive(2),
                                                 randomized=cfg.randomized).reject


def _run_discrete_i(cfg: ExperimentConfig, stream: RngStream) -> bool:
    x, y = cfg.draw(stream)
    return discrete.test_discrete_interactive(x, y, cfg.d, cfg.eps, cfg.B, cfg.alpha, stream.derive(2),
                                              trunc_const=cfg.trunc_const, randomized=cfg.randomized).reject


def _sobolev(cfg: ExperimentConfig) -> continuous.SobolevConfig:
    return continuous.SobolevConfig(s=cfg.s, d=1)


def _run_cont_ni(cfg: ExperimentConfig, stream: RngStream) -> bool:
    x, y = cfg.draw(stream)
    return continuous.test_cont_noninteractive(x, y, cfg.eps, _sobolev(cfg), cfg.B, cfg.alpha, stream.derive(2),
                                               manual_R=cfg.manual_R, randomized=cfg.randomized).reject


def _run_cont_i(cfg: ExperimentConfig, stream: RngStream) -> bool:
    x, y = cfg.draw(stream)
    return continuous.test_cont_interactive(x, y, cfg.eps, _sobolev(cfg), cfg.B, cfg.alpha, cfg.trunc_const,
                                            stream.derive(2), manual_R=cfg.manual_R, randomized=cfg.randomized).reject


def _run_adaptive(cfg: ExperimentConfig, stream: RngStream, mode: str) -> bool:
    x, y = cfg.draw(stream)
    return continuous.test_adaptive(x, y, cfg.eps, _sobolev(cfg), cfg.B, cfg.alpha, mode,
                                    stream.derive(2), constant_c=cfg.trunc_const,
                                    randomized=cfg.randomized).reject


def _run_adaptive_ni(cfg: ExperimentConfig, stream: RngStream) -> bool:
    return _run_adaptive(cfg, stream, "noninteractive")


def _run_adaptive_i(cfg: ExperimentConfig, stream: RngStream) -> bool:
    return _run_adaptive(cfg, stream, "interactive")


def _run_stub_coin(cfg: ExperimentConfig, stream: RngStream) -> bool:
    """Rejects with probability exactly ``gamma``; no data involved."""
    return bool(bernoulli(stream, cfg.gamma))


METHODS: dict[str, Callable[[ExperimentConfig, RngStream], bool]] = {
    "discrete_ni": _run_discrete_ni,
    "discrete_i": _run_discrete_i,
    "cont_ni": _run_cont_ni,
    "cont_i": _run_cont_i,
    "adaptive_ni": _run_adaptive_ni,
    "adaptive_i": _run_adaptive_i,
    "stub_coin": _run_stub_coin,
}


@dataclass(frozen=True)
class ExperimentResult:
    method: str
    family: str
    d: int
    eps: float
    gamma: float
    n1: int
    n2: int
    s: float
    B: int
    alpha: float
    reps: int
    rejections: int
    rate: float
    ci_low: float
    ci_high: float
    seed: int

    @classmethod
    def from_counts(cls, cfg: ExperimentConfig, reps: int, rejections: int, seed: int) -> "ExperimentResult":
        lo, hi = wilson_interval(rejections, reps)
        return cls(cfg.method, cfg.family, int(cfg.d), float(cfg.eps), float(cfg.gamma), int(cfg.n1), int(cfg.n2),
                   float(cfg.s), int(cfg.B), float(cfg.alpha), reps, rejections, rejections / reps, lo, hi, int(seed))

    @staticmethod
    def columns() -> list[str]:
        return [f.name for f in fields(ExperimentResult)]

    def as_row(self) -> dict:
        return asdict(self)


def _count_rejections(test: Callable[[RngStream], bool], stream: RngStream, reps: range) -> int:
    return sum(bool(test(stream.derive(r))) for r in reps)


def count_rejections(test: Callable[[RngStream], bool], reps: int, stream: RngStream, workers: int = 1) -> int:
    """Number of rejections over ``reps`` replications, replication ``r`` on ``stream.derive(r)``.

    With ``workers > 1`` replications are spread over processes; the count
    does not depend on the schedule. ``test`` must then be picklable.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if workers <= 1 or reps == 1:
        return _count_rejections(test, stream, range(reps))
    chunks = [range(a, min(a + math.ceil(reps / workers), reps)) for a in range(0, reps, math.ceil(reps / workers))]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return sum(pool.map(_count_rejections, [test] * len(chunks), [stream] * len(chunks), chunks))


def estimate_power(cfg: ExperimentConfig, reps: int, stream: RngStream, workers: int = 1) -> ExperimentResult:
    rejections = count_rejections(cfg, reps, stream, workers)
    return ExperimentResult.from_counts(cfg, reps, rejections, stream.master_seed)


# ---------------------------------------------------------------------------
# Separation search
# ---------------------------------------------------------------------------

@dataclass
class SeparationSearch:
    gamma_star: float
    probes: list[tuple[float, float]] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.probes)


def search_depth(delta: float) -> int:
    return math.ceil(2 * math.log2(1 / delta) - 1e-12)


def binary_search_separation(delta: float, r: int, rejection_rate: Callable[[float, int, RngStream], float],
                             stream: RngStream) -> SeparationSearch:
    """Bisect on gamma for the point where the estimated type-II error is 1/2.

    ``rejection_rate(gamma, r, stream)`` estimates power from ``r`` fresh
    tests. Stops early once the estimate is within ``delta`` of 1/2.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if r < 1:
        raise ValueError("r must be at least 1")
    lo, hi = 0.0, 1.0
    result = SeparationSearch(gamma_star=0.5)
    for j in range(1, search_depth(delta) + 1):
        gamma = (lo + hi) / 2
        beta_hat = 1.0 - rejection_rate(gamma, r, stream.derive(j))
        result.probes.append((gamma, beta_hat))
        result.gamma_star = gamma
        if abs(beta_hat - 0.5) <= delta:
            break
        # too little power: the separation point lies above gamma
        if beta_hat > 0.5:
            lo = gamma
        else:
            hi = gamma
    return result


def config_rejection_rate(cfg: ExperimentConfig, workers: int = 1) -> Callable[[float, int, RngStream], float]:
    """Power estimator over gamma for a fixed configuration."""
    if cfg.method == "stub_coin":
        def stub(gamma: float, r: int, stream: RngStream) -> float:
            return float(np.mean(bernoulli(stream, gamma, size=r)))
        return stub

    def rate(gamma: float, r: int, stream: RngStream) -> float:
        return count_rejections(replace(cfg, gamma=gamma), r, stream, workers) / r
    return rate


# ---------------------------------------------------------------------------
# Brute-force permutation oracle
# ---------------------------------------------------------------------------

@dataclass
class ExhaustiveResult:
    statistics: np.ndarray  # one entry per permutation, in itertools order
    observed: float
    p_value: float


def exhaustive_permutation_oracle(pool: PooledSample, kind: str, max_n: int = 8) -> ExhaustiveResult:
    """Statistic under every permutation of the pool and the exact p-value of the identity labelling."""
    if pool.n > max_n:
        raise ValueError(f"refusing to enumerate {pool.n}! permutations (limit n <= {max_n})")
    perms = np.array(list(itertools.permutations(range(pool.n))))
    stats = batch_statistics(pool, kind, perms)
    observed = statistic(pool, kind)
    slack = 1e-9 * max(abs(observed), float(np.max(np.abs(stats))))
    p = float(np.mean(observed <= stats + slack))
    return ExhaustiveResult(stats, observed, p)
