"""Reproducible, splittable random streams.

Every stream is identified by a master seed and a path of integer labels.
The underlying generator is numpy's counter-based Philox, keyed through a
``SeedSequence`` whose spawn key is the path, so a substream can be derived
anywhere (in any process, in any order) without shared mutable state.
"""

from __future__ import annotations

import numpy as np

_U64 = (1 << 64) - 1


def _check_u64(value: int, name: str) -> int:
    value = int(value)
    if value < 0 or value > _U64:
        raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value}")
    return value


class RngStream:
    """A deterministic random stream addressed by ``(master_seed, path)``.

    Two streams built from the same seed and path produce identical
    sequences. Drawing from a stream advances its own state only; derived
    children are unaffected by draws on the parent and vice versa.
    """

    __slots__ = ("master_seed", "path", "_gen")

    def __init__(self, master_seed: int = 0, path: tuple[int, ...] = ()):
        self.master_seed = _check_u64(master_seed, "master_seed")
        self.path = tuple(_check_u64(p, "path label") for p in path)
        seq = np.random.SeedSequence(self.master_seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def __repr__(self) -> str:
        return f"RngStream(master_seed={self.master_seed}, path={self.path})"

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def derive(self, *labels: int) -> "RngStream":
        return RngStream(self.master_seed, self.path + tuple(labels))


def derive(parent: RngStream, label: int) -> RngStream:
    """Child stream whose path is ``parent.path + (label,)``."""
    return parent.derive(label)


def uniform01(stream: RngStream, size=None):
    """Uniform draws on [0, 1)."""
    return stream.generator.random(size)


def bernoulli(stream: RngStream, p, size=None):
    """Bernoulli(p) draws as integers in {0, 1}.

    ``p`` may be an array, in which case it broadcasts against ``size``.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr >= 0.0) & (p_arr <= 1.0))):
        raise ValueError("bernoulli probability must lie in [0, 1]")
    if size is None:
        size = p_arr.shape if p_arr.ndim else None
    u = stream.generator.random(size)
    out = (u < p_arr).astype(np.int64)
    return int(out) if np.ndim(out) == 0 else out


def laplace_std(stream: RngStream, size=None):
    """Standard Laplace draws (density exp(-|x|)/2) by inverse CDF."""
    u = stream.generator.random(size) - 0.5
    # 1 - 2|u| lies in (0, 1] because random() never returns exactly 1.
    return -np.sign(u) * np.log1p(-2.0 * np.abs(u))


def uniform_int(stream: RngStream, n: int, size=None):
    """Uniform integers on {0, ..., n-1}."""
    if n < 1:
        raise ValueError("uniform_int requires n >= 1")
    return stream.generator.integers(0, n, size=size)


def random_permutation(stream: RngStream, n: int) -> np.ndarray:
    """A uniform permutation of range(n) (Fisher-Yates)."""
    if n < 1:
        raise ValueError("random_permutation requires n >= 1")
    return stream.generator.permutation(n)


def random_permutations(stream: RngStream, n: int, count: int) -> np.ndarray:
    """``count`` independent uniform permutations of range(n), one per row."""
    if n < 1:
        raise ValueError("random_permutations requires n >= 1")
    base = np.broadcast_to(np.arange(n), (count, n)).copy()
    return stream.generator.permuted(base, axis=1)


def sample_without_replacement(stream: RngStream, n: int, k: int) -> np.ndarray:
    """An ordered k-tuple of distinct elements of range(n), uniformly."""
    if k < 1 or n < 1:
        raise ValueError("sample_without_replacement requires 1 <= k <= n")
    if k > n:
        raise ValueError(f"cannot draw {k} distinct items from {n}")
    return stream.generator.choice(n, size=k, replace=False)
