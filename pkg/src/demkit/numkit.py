"""Minimal deterministic numeric kernel.

Conventions used throughout the package:

* a *vector* is a one-dimensional ``numpy.ndarray`` of ``float64``,
* a *matrix* is a two-dimensional ``numpy.ndarray`` of ``float64`` in
  row-major layout,
* all public entry points validate that user-supplied data is finite.

Besides the small linear-algebra helpers this module provides a
numerically stable softmax / log-sum-exp pair, a central-finite-difference
gradient oracle used by the test suites of every other module, and a
seeded counter-based pseudo-random generator whose output is identical
across runs and platforms.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

__all__ = [
    "as_vector",
    "as_matrix",
    "logsumexp",
    "logsumexp_rows",
    "softmax",
    "softmax_rows",
    "tempered_softmax",
    "finite_diff_grad",
    "rel_err",
    "Rng",
]


def as_vector(data, min_len: int = 1) -> np.ndarray:
    """Validate and convert ``data`` to a 1-D float64 array.

    Raises ``ValueError`` when the input is not one-dimensional, is
    shorter than ``min_len`` or contains NaN/Inf entries.
    """
    v = np.asarray(data, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if v.shape[0] < min_len:
        raise ValueError(f"vector needs at least {min_len} entries, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector entries must be finite")
    return v


def as_matrix(data) -> np.ndarray:
    """Validate and convert ``data`` to a 2-D float64 array."""
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def logsumexp(z) -> float:
    """Stable ``log(sum(exp(z)))`` via the max-shift trick.

    Finite for every finite input, including entries far outside the
    range where ``exp`` alone would overflow.
    """
    z = as_vector(z)
    m = float(np.max(z))
    return m + math.log(float(np.sum(np.exp(z - m))))


def logsumexp_rows(Z: np.ndarray) -> np.ndarray:
    """Row-wise stable log-sum-exp for an ``n x C`` matrix."""
    m = np.max(Z, axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(Z - m), axis=1, keepdims=True)))[:, 0]


def softmax(z) -> np.ndarray:
    """Probability simplex projection of the logits.

    Computed as ``exp(z - max z) / sum(exp(z - max z))``: algebraically
    ``exp(z - logsumexp(z))`` and just as overflow-safe, but at equal
    logits every entry becomes the correctly rounded ``1/C`` (the
    explicit-log path drifts a couple of ulps there, which matters to
    the exactness guarantees of the delta normalizer).
    """
    z = as_vector(z)
    e = np.exp(z - np.max(z))
    return e / np.sum(e)


def softmax_rows(Z: np.ndarray) -> np.ndarray:
    """Row-wise softmax for an ``n x C`` matrix (same path as softmax)."""
    e = np.exp(Z - np.max(Z, axis=1, keepdims=True))
    return e / np.sum(e, axis=1, keepdims=True)


def tempered_softmax(z, tau: float) -> np.ndarray:
    """``softmax(z / tau)`` for a temperature ``tau > 0``."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = as_vector(z)
    return softmax(z / tau)


def finite_diff_grad(f: Callable[[np.ndarray], float], z, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient oracle ``(f(z+h*e_i) - f(z-h*e_i)) / 2h``.

    ``f`` must return a finite scalar; a non-finite value raises
    ``FloatingPointError`` so broken integrands fail loudly instead of
    silently contaminating a gradient check.
    """
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    z = as_vector(z)
    grad = np.empty_like(z)
    for i in range(z.shape[0]):
        step = np.zeros_like(z)
        step[i] = h
        hi = float(f(z + step))
        lo = float(f(z - step))
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise FloatingPointError(f"non-finite objective at coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * h)
    return grad


def rel_err(a, b) -> float:
    """Relative error ``|a - b| / max(1, |a|, |b|)``, elementwise max."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64


def _mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on an array of uint64."""
    x = (x ^ (x >> _U64(30))) * _MIX1
    x = (x ^ (x >> _U64(27))) * _MIX2
    return x ^ (x >> _U64(31))


class Rng:
    """Counter-based SplitMix64 generator.

    The n-th raw output is ``mix64(seed + (n + 1) * GOLDEN)`` where
    ``mix64`` is the SplitMix64 finalizer and ``GOLDEN`` is the 64-bit
    golden-ratio constant.  Because outputs are a pure function of
    ``(seed, counter)`` the stream is reproducible byte-for-byte across
    runs and platforms, and blocks of any size can be generated with
    vectorized integer arithmetic.

    Instances are single-owner: share nothing, derive independent
    generators for parallel work with :meth:`split` or :meth:`derive`.
    """

    def __init__(self, seed: int):
        self.seed = _U64(seed & 0xFFFFFFFFFFFFFFFF)
        self.counter = 0

    def _raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw uint64 outputs, advancing the counter."""
        if n < 0:
            raise ValueError("block size must be non-negative")
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64(self.seed + idx * _GOLDEN)

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` doubles uniform on [0, 1), 53-bit resolution."""
        return (self._raw(n) >> _U64(11)).astype(np.float64) * (2.0 ** -53)

    def normals(self, n: int) -> np.ndarray:
        """``n`` standard normal draws via Box-Muller."""
        pairs = (n + 1) // 2
        # u1 lives in (0, 1] so the log below is always finite.
        u1 = ((self._raw(pairs) >> _U64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)
        u2 = self.uniforms(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return out[:n]

    def integers(self, n: int, lo: int, hi: int) -> np.ndarray:
        """``n`` integers uniform on [lo, hi)."""
        if hi <= lo:
            raise ValueError("empty integer range")
        span = hi - lo
        return lo + np.minimum((self.uniforms(n) * span).astype(np.int64), span - 1)

    def categorical(self, p, n: int) -> np.ndarray:
        """``n`` class indices drawn from the simplex vector ``p``."""
        p = as_vector(p)
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        return np.minimum(
            np.searchsorted(cdf, self.uniforms(n), side="right"), p.shape[0] - 1
        ).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """A uniformly random permutation of ``range(n)``."""
        return np.argsort(self.uniforms(n), kind="stable")

    def split(self, stream_id: int) -> "Rng":
        """Independent child generator for a numbered parallel stream.

        The child seed passes the parent seed and the stream id through
        the finalizer, so child 0 never aliases the parent stream.
        """
        with np.errstate(over="ignore"):
            salt = _mix64(np.asarray(_U64(stream_id & 0xFFFFFFFFFFFFFFFF) + _GOLDEN))
            child = _mix64(np.asarray(self.seed ^ salt))
        return Rng(int(child))

    def derive(self, label: str) -> "Rng":
        """Independent child generator keyed by a string label.

        The label is folded with FNV-1a so equal labels always map to the
        same child stream regardless of call order.
        """
        h = 0xCBF29CE484222325
        for byte in label.encode("utf8"):
            h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
        return self.split(h)
