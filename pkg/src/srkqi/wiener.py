"""Seeded Brownian increments, truncation, and dyadic coarsening.

Increments are drawn from a counter-based Philox generator keyed by
(seed, stream), so any path in a Monte Carlo batch can be regenerated
bit-for-bit regardless of execution order or worker count.  Requesting a
longer path with the same key extends a shorter one: the first n draws are
identical (prefix property of the keyed stream).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

#: Default truncation exponent; matches a root-mean-square order-1 method.
DEFAULT_TRUNCATION_K = 2


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Wiener increments dW_0..dW_{n-1} on a uniform grid of step h."""

    h: float
    n: int
    increments: np.ndarray
    seed: int

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float)
        if inc.shape != (self.n,):
            raise ConfigError(
                f"expected {self.n} increments, got shape {inc.shape}"
            )
        if self.n and not np.all(np.isfinite(inc)):
            raise ConfigError("non-finite increment")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)


def sample_increments(seed: int, n: int, h: float, stream: int = 0) -> BrownianPath:
    """Draw n independent increments sqrt(h)*xi, xi ~ N(0,1).

    ``stream`` selects an independent sub-stream of the same base seed
    (used as the per-path index by the experiment drivers).
    """
    if n < 0:
        raise ConfigError(f"increment count must be >= 0, got {n}")
    if h <= 0:
        raise ConfigError(f"step size must be positive, got {h}")
    key = np.array([seed % 2**64, stream % 2**64], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return BrownianPath(
        h=h, n=n, increments=math.sqrt(h) * gen.standard_normal(n), seed=seed
    )


def truncation_bound(h: float, k: int) -> float:
    """A_h = sqrt(2k|ln h|); increments are clamped to +-sqrt(h)*A_h."""
    if not 0 < h < 1:
        raise ConfigError(f"truncation defined for 0 < h < 1, got h={h}")
    if k < 1:
        raise ConfigError(f"truncation exponent k must be >= 1, got {k}")
    return math.sqrt(2 * k * abs(math.log(h)))


def truncate(dw: float, h: float, k: int) -> float:
    """Clamp an increment to +-sqrt(h)*A_h with A_h = sqrt(2k|ln h|).

    Leaves |dw| <= sqrt(h)*A_h unchanged; idempotent, odd, and monotone.
    """
    bound = math.sqrt(h) * truncation_bound(h, k)
    return min(max(dw, -bound), bound)


def _halving_sums(grouped: np.ndarray) -> np.ndarray:
    # Balanced-tree reduction along axis 1: summation order is reproducible
    # and nests, so re-coarsening by a power of two reproduces a direct
    # coarsening bit-for-bit.
    m = grouped.shape[1]
    if m == 1:
        return grouped[:, 0].copy()
    half = m // 2
    return _halving_sums(grouped[:, :half]) + _halving_sums(grouped[:, half:])


def coarsen(path: BrownianPath, m: int) -> BrownianPath:
    """Merge every m consecutive increments; total displacement is preserved.

    The result has step m*h and n/m increments; m must divide n.
    """
    if m < 1:
        raise ConfigError(f"coarsening factor must be >= 1, got {m}")
    if path.n % m != 0:
        raise ConfigError(f"coarsening factor {m} does not divide n={path.n}")
    if m == 1:
        return path
    merged = _halving_sums(path.increments.reshape(path.n // m, m))
    return BrownianPath(h=m * path.h, n=path.n // m, increments=merged, seed=path.seed)


def dump_csv(path: BrownianPath, fileobj) -> None:
    """Write a path as CSV rows ``index,dW`` with a config comment header."""
    fileobj.write(f"# seed={path.seed}, h={path.h!r}, n={path.n}\n")
    fileobj.write("index,dW\n")
    for i, dw in enumerate(path.increments):
        fileobj.write(f"{i},{dw!r}\n")
