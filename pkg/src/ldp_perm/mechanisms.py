"""Locally private release mechanisms.

All samplers are vectorised over users: the leading axis of every input
array indexes users and each user's output depends only on their own row
and the stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import RngStream, bernoulli, laplace_std, uniform01

# tolerance used when checking that an input lies inside [-t, t]; products of
# basis functions overshoot 2^{d/2} by a few ulps.
_BOUND_RTOL = 1e-9


@dataclass(frozen=True)
class PrivacyBudget:
    """Privacy level ``eps`` together with its derived constants.

    ``omega_half`` is the unary-encoding keep probability
    ``e^{eps/2} / (e^{eps/2} + 1)`` and ``c_eps`` the randomised-response
    debiasing factor ``(e^eps + 1) / (e^eps - 1)``.
    """

    eps: float
    omega_half: float = field(init=False, repr=False)
    c_eps: float = field(init=False, repr=False)
    c_half: float = field(init=False, repr=False)

    def __post_init__(self):
        eps = float(self.eps)
        if not eps > 0 or math.isnan(eps):
            raise ValueError(f"eps must be positive, got {self.eps}")
        object.__setattr__(self, "eps", eps)
        if math.isinf(eps):
            omega, c_eps, c_half = 1.0, 1.0, 1.0
        else:
            # logistic / coth forms stay finite for large eps
            omega = 1.0 / (1.0 + math.exp(-eps / 2))
            c_eps = 1.0 / math.tanh(eps / 2)
            c_half = 1.0 / math.tanh(eps / 4)
        object.__setattr__(self, "omega_half", omega)
        object.__setattr__(self, "c_eps", c_eps)
        object.__setattr__(self, "c_half", c_half)

    @property
    def rr_keep(self) -> float:
        """``e^eps / (e^eps + 1)``, the bias of the vertex samplers' coin."""
        return 1.0 / (1.0 + math.exp(-self.eps)) if math.isfinite(self.eps) else 1.0


def _as_budget(budget) -> PrivacyBudget:
    return budget if isinstance(budget, PrivacyBudget) else PrivacyBudget(budget)


# ---------------------------------------------------------------------------
# Unary encoding
# ---------------------------------------------------------------------------

def unary_encode(x, d: int, budget, stream: RngStream) -> np.ndarray:
    """Privatise categories in ``{1, ..., d}`` by unary encoding.

    Bit ``j`` of the output equals ``1{x = j}`` with probability
    ``omega_half`` and is flipped otherwise, independently across bits.
    A scalar ``x`` gives a length-``d`` vector, an array of ``n`` categories
    an ``(n, d)`` matrix.
    """
    budget = _as_budget(budget)
    xs = np.asarray(x)
    if not np.issubdtype(xs.dtype, np.integer):
        if np.any(xs != np.round(xs)):
            raise ValueError("categories must be integers")
        xs = xs.astype(np.int64)
    if np.any((xs < 1) | (xs > d)):
        raise ValueError(f"categories must lie in [1, {d}]")
    flat = np.atleast_1d(xs)
    onehot = flat[:, None] == np.arange(1, d + 1)[None, :]
    keep = uniform01(stream, onehot.shape) <= budget.omega_half
    bits = np.where(keep, onehot, ~onehot).astype(np.int8)
    return bits[0] if xs.ndim == 0 else bits


def unary_encode_prob(z, x: int, budget) -> float:
    """Exact probability that ``unary_encode(x)`` outputs the bit vector ``z``."""
    budget = _as_budget(budget)
    z = np.asarray(z)
    onehot = np.arange(1, len(z) + 1) == x
    agree = int(np.sum(z == onehot))
    return budget.omega_half ** agree * (1.0 - budget.omega_half) ** (len(z) - agree)


# ---------------------------------------------------------------------------
# Binary randomised response
# ---------------------------------------------------------------------------

def rr_truncated(x, t: float, budget, stream: RngStream):
    """Randomised response on the projection of ``x`` onto ``[-t, t]``.

    Returns ``+t*c_eps`` with probability ``(1 + clip(x)/(t*c_eps))/2`` and
    ``-t*c_eps`` otherwise, so the output is unbiased for ``clip(x, -t, t)``.
    """
    if not t > 0:
        raise ValueError(f"truncation width must be positive, got {t}")
    budget = _as_budget(budget)
    x = np.asarray(x, dtype=float)
    mag = t * budget.c_eps
    p_plus = 0.5 * (1.0 + np.clip(x, -t, t) / mag)
    u = uniform01(stream, x.shape)
    out = np.where(u <= p_plus, mag, -mag)
    return float(out) if out.ndim == 0 else out


def rr_truncated_prob(sign: int, x: float, t: float, budget) -> float:
    """Exact probability that ``rr_truncated`` returns ``sign * t * c_eps``."""
    budget = _as_budget(budget)
    p_plus = 0.5 * (1.0 + min(max(x, -t), t) / (t * budget.c_eps))
    return p_plus if sign > 0 else 1.0 - p_plus


def rr_round_bounded(x, t: float, stream: RngStream):
    """Round ``x`` in ``[-t, t]`` to a random sign with ``E[t * sign] = x``."""
    if not t > 0:
        raise ValueError(f"bound must be positive, got {t}")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > t * (1.0 + _BOUND_RTOL)):
        raise ValueError(f"inputs must lie in [-{t}, {t}]")
    p_plus = 0.5 * (1.0 + np.clip(x / t, -1.0, 1.0))
    u = uniform01(stream, x.shape)
    out = np.where(u < p_plus, 1, -1).astype(np.int8)
    return int(out) if out.ndim == 0 else out


def laplace_mechanism(x, scale: float, stream: RngStream):
    """``x`` plus ``scale`` times standard Laplace noise."""
    if scale < 0:
        raise ValueError("Laplace scale must be non-negative")
    x = np.asarray(x, dtype=float)
    if scale == 0:
        return float(x) if x.ndim == 0 else x.copy()
    out = x + scale * laplace_std(stream, x.shape)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Hypercube-vertex samplers for sup-norm bounded vectors
# ---------------------------------------------------------------------------

def vertex_magnitude_odd(V: int, bound: float, budget) -> float:
    """Output magnitude A of the odd-length sampler."""
    if V < 1 or V % 2 == 0:
        raise ValueError(f"odd sampler needs odd V >= 1, got {V}")
    budget = _as_budget(budget)
    ratio = 2 ** (V - 1) / math.comb(V - 1, (V - 1) // 2)
    return bound * budget.c_eps * ratio


def vertex_magnitude_even(V: int, bound: float, budget) -> float:
    """Output magnitude A' of the even-length sampler (before the first-coordinate rescale).

    ``1 / A'`` is ``E[a_j | selected]`` for ``j >= 2`` when every sign of the
    input is +1, namely ``C(V-2, V/2) / 2^(V-2)``.
    """
    if V < 4 or V % 2:
        raise ValueError(f"even sampler needs even V >= 4, got {V}")
    budget = _as_budget(budget)
    ratio = 2 ** (V - 2) / math.comb(V - 2, V // 2)
    return bound * budget.c_eps * ratio


def even_first_scale(V: int) -> float:
    return (V - 2) / (2 * (V - 1))


def _signs(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if np.any(v == 0) or np.any(~np.isfinite(v)):
        raise ValueError("vertex samplers need a vector with non-zero finite entries")
    return np.where(v > 0, 1, -1).astype(np.int8)


def _accept(sigma: np.ndarray, s: np.ndarray, coin: np.ndarray, even: bool) -> np.ndarray:
    ip = np.einsum("ij,ij->i", sigma.astype(np.int64), s.astype(np.int64))
    if not even:
        return np.where(coin == 1, ip >= 0, ip <= 0)
    first = sigma[:, 0] == s[:, 0]
    up = (ip > 0) | ((ip == 0) & first)
    down = (ip < 0) | ((ip == 0) & ~first)
    return np.where(coin == 1, up, down)


def _sample_vertices(s: np.ndarray, budget: PrivacyBudget, stream: RngStream, even: bool) -> np.ndarray:
    """Rejection-sample sign vectors sigma conditional on the coin and ``s``."""
    n, V = s.shape
    coin = bernoulli(stream, budget.rr_keep, size=n)
    coin = np.atleast_1d(coin)
    out = np.empty((n, V), dtype=np.int8)
    todo = np.arange(n)
    gen = stream.generator
    while todo.size:
        sigma = np.where(gen.random((todo.size, V)) < 0.5, 1, -1).astype(np.int8)
        ok = _accept(sigma, s[todo], coin[todo], even)
        out[todo[ok]] = sigma[ok]
        todo = todo[~ok]
    return out


def vertex_sample_odd(v, bound: float, budget, stream: RngStream) -> np.ndarray:
    """Sampler for odd-length sign vectors.

    Draws ``T ~ Bernoulli(e^eps/(e^eps+1))`` and returns a uniform vertex of
    ``{-A, A}^V`` on the side of the hyperplane ``a.v = 0`` selected by ``T``.
    Only the sign pattern of ``v`` matters. Accepts one vector or an
    ``(n, V)`` matrix of users.
    """
    budget = _as_budget(budget)
    s = _signs(v)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    V = s.shape[1]
    if V % 2 == 0:
        raise ValueError(f"vertex_sample_odd called with even V={V}")
    A = vertex_magnitude_odd(V, bound, budget)
    out = A * _sample_vertices(s, budget, stream, even=False).astype(float)
    return out[0] if single else out


def vertex_sample_even(v, bound: float, budget, stream: RngStream) -> np.ndarray:
    """Sampler for even-length sign vectors (V >= 4).

    Ties ``a.v = 0`` go to the ``T = 1`` side when ``a_1`` has the sign of
    ``v_1`` and to the ``T = 0`` side otherwise; the first output coordinate is shrunk by ``(V-2)/(2(V-1))`` so that
    every coordinate is unbiased.
    """
    budget = _as_budget(budget)
    s = _signs(v)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    V = s.shape[1]
    if V % 2:
        raise ValueError(f"vertex_sample_even called with odd V={V}")
    if V == 2:
        raise ValueError("V = 2 must go through vertex_sample (padding to V = 3)")
    A = vertex_magnitude_even(V, bound, budget)
    out = A * _sample_vertices(s, budget, stream, even=True).astype(float)
    out[:, 0] *= even_first_scale(V)
    return out[0] if single else out


def vertex_sample(v, bound: float, budget, stream: RngStream) -> np.ndarray:
    """Dispatch on the parity of V.

    V = 2 is padded with a constant ``+bound`` coordinate, sampled with the
    odd V = 3 sampler and the pad dropped. The pad does not depend on the
    data, so privacy is unchanged and the two real coordinates stay unbiased.
    """
    v = np.asarray(v, dtype=float)
    V = v.shape[-1]
    if V % 2:
        return vertex_sample_odd(v, bound, budget, stream)
    if V >= 4:
        return vertex_sample_even(v, bound, budget, stream)
    pad = np.full(v.shape[:-1] + (1,), float(bound))
    return vertex_sample_odd(np.concatenate([v, pad], axis=-1), bound, budget, stream)[..., :2]


def privatize_bounded_vectors(values, bound: float, budget, stream: RngStream) -> np.ndarray:
    """Round each coordinate to ``+-bound`` then apply the vertex sampler.

    ``values`` is ``(n, V)`` with entries in ``[-bound, bound]``; the result
    is an unbiased, eps-private view of each row.
    """
    signs = rr_round_bounded(values, bound, stream.derive(0))
    return vertex_sample(signs * float(bound), bound, budget, stream.derive(1))


def vertex_sample_prob(sigma, v, budget) -> float:
    """Exact probability that ``vertex_sample(v)`` returns the vertex with sign pattern ``sigma``.

    Every accept set holds exactly half of the ``2^V`` vertices, so the answer
    is ``rr_keep / 2^(V-1)`` inside the ``T = 1`` set and the complement
    otherwise.
    """
    budget = _as_budget(budget)
    sigma = np.asarray(sigma, dtype=np.int8).ravel()
    s = _signs(v).ravel()
    if sigma.shape != s.shape or np.any(np.abs(sigma) != 1):
        raise ValueError("sigma must be a +-1 vector matching v")
    V = s.size
    if V == 2:
        return sum(vertex_sample_prob(np.append(sigma, pad), np.append(s, 1), budget) for pad in (-1, 1))
    keep = budget.rr_keep
    inside = bool(_accept(sigma[None, :], s[None, :], np.ones(1, dtype=np.int64), V % 2 == 0)[0])
    return (keep if inside else 1.0 - keep) / 2 ** (V - 1)
