"""Random streams, log-domain weight algebra and multinomial resampling.

Every estimator in the package draws its randomness from a
:class:`numpy.random.Generator` built by :func:`rng_stream`.  Streams are
PCG64 generators keyed by a ``SeedSequence`` whose spawn key is the
stream id, so ``(seed, stream_id)`` pins the whole draw sequence and
different stream ids give independent sub-streams.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator
from scipy.special import expit, logsumexp

__all__ = [
    "AllWeightsDegenerate",
    "rng_stream",
    "normalize_log_weights",
    "effective_sample_size",
    "categorical_draw",
    "multinomial_resample",
    "draw_rows",
]


class AllWeightsDegenerate(ValueError):
    """Raised when every log-weight is ``-inf`` (total likelihood collapse)."""


def rng_stream(seed: int, *stream_id: int) -> Generator:
    """Return the generator for sub-stream ``stream_id`` of ``seed``.

    Several integers may be given to address nested streams, e.g.
    ``rng_stream(seed, run, algo)``.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream_id))
    return Generator(np.random.PCG64(ss))


def normalize_log_weights(log_weights, axis: int = -1) -> np.ndarray:
    """Exponentiate and normalize log-domain weights with log-sum-exp.

    Works along ``axis`` so a 2-D array is normalized row by row.

    Raises:
        ValueError: if any entry is NaN.
        AllWeightsDegenerate: if every entry (of some row) is ``-inf``.
    """
    lw = np.asarray(log_weights, dtype=float)
    if np.isnan(lw).any():
        raise ValueError("log-weights contain NaN")
    top = np.max(lw, axis=axis, keepdims=True)
    if np.any(top == -np.inf):
        raise AllWeightsDegenerate("all log-weights are -inf")
    # the largest entry maps to exp(0) = 1, so the sum cannot underflow
    w = np.exp(lw - top)
    return w / w.sum(axis=axis, keepdims=True)


def log_sum_sigmoid(d, axis: int = -1) -> np.ndarray:
    """``log sum expit(d)`` along ``axis``, i.e. ``log sum 1 / (1 + exp(-d))``.

    Summed in the linear domain (each term lies in ``[0, 1]``); slices whose
    sum underflows are recomputed with log-sum-exp.
    """
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(expit(d).sum(axis=axis))
    under = np.isneginf(out) & ~np.all(np.isneginf(d), axis=axis)
    if under.any():
        exact = logsumexp(-np.logaddexp(0.0, -d), axis=axis)
        out = np.where(under, exact, out)
    return out


def effective_sample_size(w) -> float:
    """Return ``1 / sum(w**2)`` for a probability vector ``w``."""
    w = np.asarray(w, dtype=float)
    return float(1.0 / np.dot(w, w))


def _inverse_cdf(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    # side="right" guarantees zero-probability entries are never selected
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    return np.minimum(idx, len(cdf) - 1)


def categorical_draw(w, rng: Generator) -> int:
    """Draw one index with probability ``w[l]`` from a single uniform."""
    cdf = np.cumsum(np.asarray(w, dtype=float))
    return int(_inverse_cdf(cdf, np.asarray(rng.random()))[()])


def multinomial_resample(w, m: int, rng: Generator) -> np.ndarray:
    """Return ``m`` i.i.d. categorical draws from the probability vector ``w``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    cdf = np.cumsum(np.asarray(w, dtype=float))
    return _inverse_cdf(cdf, rng.random(m))


def draw_rows(w: np.ndarray, rng: Generator) -> np.ndarray:
    """Draw one index per row of a row-stochastic matrix (one uniform per row)."""
    w = np.asarray(w, dtype=float)
    cdf = np.cumsum(w, axis=1)
    u = rng.random(w.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, w.shape[1] - 1)
