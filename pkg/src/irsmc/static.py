"""Static importance sampling and resampling estimators.

Estimators of ``E_p[f(X)]`` for a target ``p`` known up to a constant,
from draws of a proposal ``q``:

* ``IS``       self-normalized importance sampling on ``N`` draws;
* ``SIR``      ``N`` draws, multinomial resampling of ``M`` atoms;
* ``I_SIR``    ``M`` independent SIR replicates of ``N`` candidates, one
               atom kept per replicate, so the atoms are i.i.d.;
* ``I_SIR_W``  the I-SIR atoms reweighted by ``p_u / q_tilde_N``, where the
               compound density ``q_tilde_N`` is estimated by recycling the
               replicate candidates;
* ``SIR_2``    SIR with ``M**2`` intermediates (same budget as I-SIR);
* ``SIR_W``    SIR atoms reweighted like I-SIR-w, using extra rows.

All weights stay in the log domain.  Self-normalization makes the
normalizing constants of ``p_u`` and ``q_tilde_N`` irrelevant, so targets
never need to be normalized.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.random import Generator
from scipy.special import logsumexp

from . import sampling
from .sampling import normalize_log_weights

__all__ = [
    "StaticTarget",
    "EstimatorKind",
    "StaticEstimate",
    "ReplicateRows",
    "SupportTooLarge",
    "discrete_target",
    "estimate_is",
    "estimate_sir",
    "sample_independent_sir",
    "estimate_isir",
    "estimate_h_hat",
    "estimate_isir_w",
    "estimate_sir_w",
    "qtilde_exact_discrete",
    "exact_estimator_moments",
]

MAX_ENUMERATION = 10**6


class SupportTooLarge(ValueError):
    """The requested enumeration exceeds :data:`MAX_ENUMERATION` outcomes."""


@dataclass(frozen=True)
class StaticTarget:
    """A static estimation problem.

    All callables are vectorized over the leading (sample) axis.

    Attributes:
        log_p_u: unnormalized log target.
        proposal_sample: ``(rng, n) -> states`` drawn i.i.d. from ``q``.
        proposal_logpdf: log density (or pmf) of ``q``.
        f: test function; returns shape ``(n,)`` or ``(n, k)``.
        log_ratio: optional shortcut for ``log_p_u - proposal_logpdf``,
            useful when the two share terms that cancel.
    """

    log_p_u: Callable[[np.ndarray], np.ndarray]
    proposal_sample: Callable[[Generator, int], np.ndarray]
    proposal_logpdf: Callable[[np.ndarray], np.ndarray]
    f: Callable[[np.ndarray], np.ndarray]
    log_ratio: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def log_weights(self, x: np.ndarray) -> np.ndarray:
        if self.log_ratio is not None:
            return np.asarray(self.log_ratio(x), dtype=float)
        return np.asarray(self.log_p_u(x), dtype=float) - np.asarray(
            self.proposal_logpdf(x), dtype=float
        )


class EstimatorKind(str, enum.Enum):
    IS = "IS"
    SIR = "SIR"
    I_SIR = "I_SIR"
    I_SIR_W = "I_SIR_W"
    SIR_2 = "SIR_2"
    SIR_W = "SIR_W"


@dataclass(frozen=True)
class StaticEstimate:
    value: np.ndarray
    kind: EstimatorKind
    n_intermediate: int
    n_final: int
    sampling_ops: int


@dataclass(frozen=True)
class ReplicateRows:
    """The ``M x N`` candidate table of the independent SIR sampler.

    Row ``i`` holds the ``N`` fresh candidates of replicate ``i``, their
    log importance ratios and the index of the candidate kept.
    """

    candidates: np.ndarray
    log_ratios: np.ndarray
    chosen: np.ndarray

    @property
    def n_candidates(self) -> int:
        return self.log_ratios.shape[1]

    @property
    def n_replicates(self) -> int:
        return self.log_ratios.shape[0]

    @property
    def chosen_states(self) -> np.ndarray:
        return self.candidates[np.arange(self.n_replicates), self.chosen]

    @property
    def chosen_log_ratios(self) -> np.ndarray:
        return self.log_ratios[np.arange(self.n_replicates), self.chosen]

    def __len__(self) -> int:
        return self.n_replicates


def discrete_target(p, q, f=None) -> StaticTarget:
    """Target on the finite support ``{0, ..., S-1}``.

    ``p`` may be unnormalized; ``q`` must be a pmf.  ``f`` defaults to the
    state index itself.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("p and q must share the support")
    with np.errstate(divide="ignore"):
        log_p, log_q = np.log(p), np.log(q)
    if np.any((p > 0) & (q == 0)):
        raise ValueError("q must be positive wherever p is")
    cdf = np.cumsum(q)
    fvals = np.arange(len(p), dtype=float) if f is None else np.asarray(f, dtype=float)

    def sample(rng: Generator, n: int) -> np.ndarray:
        return np.minimum(np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right"), len(q) - 1)

    return StaticTarget(
        log_p_u=lambda x: log_p[x],
        proposal_sample=sample,
        proposal_logpdf=lambda x: log_q[x],
        f=lambda x: fvals[x],
    )


def _mean_f(t: StaticTarget, x: np.ndarray, w: Optional[np.ndarray] = None) -> np.ndarray:
    fx = np.asarray(t.f(x), dtype=float)
    if w is None:
        return np.atleast_1d(fx.mean(axis=0))
    return np.atleast_1d(np.tensordot(w, fx, axes=(0, 0)))


def estimate_is(t: StaticTarget, n: int, rng: Generator) -> StaticEstimate:
    """Self-normalized importance sampling estimate from ``n`` proposals."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = t.proposal_sample(rng, n)
    w = normalize_log_weights(t.log_weights(x))
    return StaticEstimate(_mean_f(t, x, w), EstimatorKind.IS, n, n, n)


def _sir_atoms(t: StaticTarget, n: int, m: int, rng: Generator) -> np.ndarray:
    x = t.proposal_sample(rng, n)
    w = normalize_log_weights(t.log_weights(x))
    return x[sampling.multinomial_resample(w, m, rng)]


def estimate_sir(
    t: StaticTarget, n: int, m: int, rng: Generator, kind: EstimatorKind = EstimatorKind.SIR
) -> StaticEstimate:
    """Rubin's SIR: ``n`` proposals, ``m`` multinomially resampled atoms.

    Pass ``n = m**2`` and ``kind=EstimatorKind.SIR_2`` for the budget-matched
    dependent baseline.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    atoms = _sir_atoms(t, n, m, rng)
    return StaticEstimate(_mean_f(t, atoms), kind, n, m, n + m)


def sample_independent_sir(t: StaticTarget, n: int, m: int, rng: Generator) -> ReplicateRows:
    """Run ``m`` independent SIR replicates of ``n`` candidates each.

    All ``m * n`` candidates are drawn first (replicate-major), then one
    uniform per replicate selects its atom.  The kept atoms are i.i.d. from
    the compound density ``q_tilde_n``.

    Raises:
        AllWeightsDegenerate: if some replicate has only ``-inf`` ratios.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    x = t.proposal_sample(rng, m * n)
    lr = t.log_weights(x).reshape(m, n)
    w = normalize_log_weights(lr, axis=1)
    chosen = sampling.draw_rows(w, rng)
    return ReplicateRows(x.reshape((m, n) + x.shape[1:]), lr, chosen)


def isir_sampling_ops(n: int, m: int) -> int:
    return n * m + m


def estimate_isir(rows: ReplicateRows, f: Callable[[np.ndarray], np.ndarray]) -> StaticEstimate:
    """Crude (unweighted) mean of ``f`` over the independent atoms."""
    fx = np.asarray(f(rows.chosen_states), dtype=float)
    n, m = rows.n_candidates, rows.n_replicates
    return StaticEstimate(
        np.atleast_1d(fx.mean(axis=0)), EstimatorKind.I_SIR, n, m, isir_sampling_ops(n, m)
    )


def _co_log_sums(log_ratios: np.ndarray) -> np.ndarray:
    # co-candidates are the first N-1 slots of every row (slot N dropped)
    if log_ratios.shape[1] < 2:
        return np.full(log_ratios.shape[0], -np.inf)
    return logsumexp(log_ratios[:, :-1], axis=1)


def _log_h_hat(log_r_x: np.ndarray, co: np.ndarray) -> np.ndarray:
    # r / (r + c) = expit(log r - log c); a zero ratio contributes nothing
    a = np.asarray(log_r_x, dtype=float)[:, None]
    with np.errstate(invalid="ignore"):
        d = a - co[None, :]
    if np.isneginf(a).any():
        d = np.where(np.isneginf(a), -np.inf, d)
    return sampling.log_sum_sigmoid(d, axis=1)


def estimate_h_hat(x: np.ndarray, rows: ReplicateRows, t: StaticTarget) -> np.ndarray:
    """Recycled Monte Carlo estimate of ``h_N`` at the states ``x``.

    Sums, over the replicate rows, the normalized weight ``x`` would get
    against the row's first ``N - 1`` candidates.  Values lie in ``(0, M]``
    (zero where ``p_u(x) = 0``).
    """
    return np.exp(_log_h_hat(t.log_weights(x), _co_log_sums(rows.log_ratios)))


def estimate_isir_w(
    rows: ReplicateRows, t: StaticTarget, f: Optional[Callable] = None
) -> StaticEstimate:
    """I-SIR atoms reweighted by ``p_u / (h_hat * q)``."""
    f = t.f if f is None else f
    x = rows.chosen_states
    a = rows.chosen_log_ratios
    w = normalize_log_weights(a - _log_h_hat(a, _co_log_sums(rows.log_ratios)))
    fx = np.asarray(f(x), dtype=float)
    n, m = rows.n_candidates, rows.n_replicates
    return StaticEstimate(
        np.atleast_1d(np.tensordot(w, fx, axes=(0, 0))),
        EstimatorKind.I_SIR_W,
        n,
        m,
        isir_sampling_ops(n, m),
    )


def estimate_sir_w(t: StaticTarget, n: int, m: int, rng: Generator) -> StaticEstimate:
    """Dependent SIR atoms reweighted like I-SIR-w.

    ``m`` extra rows of ``n - 1`` proposals are drawn solely to form ``h_hat``.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    atoms = _sir_atoms(t, n, m, rng)
    if n > 1:
        extra = t.proposal_sample(rng, m * (n - 1))
        co = logsumexp(t.log_weights(extra).reshape(m, n - 1), axis=1)
    else:
        co = np.full(m, -np.inf)
    a = t.log_weights(atoms)
    w = normalize_log_weights(a - _log_h_hat(a, co))
    value = np.atleast_1d(np.tensordot(w, np.asarray(t.f(atoms), dtype=float), axes=(0, 0)))
    return StaticEstimate(value, EstimatorKind.SIR_W, n, m, n + m + m * (n - 1))


def qtilde_exact_discrete(p, q, n: int) -> np.ndarray:
    """Exact law of one resampled atom for a finite support.

    ``q_tilde_N(x) = N * h_N(x) * q(x)`` where ``h_N(x)`` is the expected
    normalized weight of ``x`` against ``N - 1`` co-samples from ``q``; the
    expectation is computed by enumerating every co-sample tuple.

    Raises:
        SupportTooLarge: if ``len(p) ** (n - 1)`` exceeds ``MAX_ENUMERATION``.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    s = len(q)
    if n < 1:
        raise ValueError("n must be >= 1")
    if s ** (n - 1) > MAX_ENUMERATION:
        raise SupportTooLarge(f"{s}**{n - 1} co-sample tuples")
    r = np.divide(p, q, out=np.zeros_like(p), where=q > 0)
    if n == 1:
        return q.copy()
    tuples = np.array(list(itertools.product(range(s), repeat=n - 1)))
    prob = np.prod(q[tuples], axis=1)
    co = r[tuples].sum(axis=1)
    denom = r[:, None] + co[None, :]
    ratio = np.divide(r[:, None], denom, out=np.zeros_like(denom), where=denom > 0)
    h = ratio @ prob
    return n * h * q


def exact_estimator_moments(p, q, fvals, n: int, m: int) -> dict:
    """Exact mean and variance of the IS, SIR and I-SIR estimators.

    Brute force over every outcome: the ``S**n`` intermediate sets, the
    ``n**m`` resampling index tuples for SIR, and for I-SIR the ``S**n * n``
    outcomes of a single replicate combined over ``m`` replicates.  No
    closed-form identity is used, so the result can check them.

    Returns:
        ``{"IS": (mean, var), "SIR": (mean, var), "I_SIR": (mean, var)}``
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    fvals = np.asarray(fvals, dtype=float)
    s = len(q)
    if s**n * n**m > MAX_ENUMERATION:
        raise SupportTooLarge("outcome space too large to enumerate")
    r = p / q

    def moments(pairs):
        mean = sum(pr * v for pr, v in pairs)
        var = sum(pr * (v - mean) ** 2 for pr, v in pairs)
        return float(mean), float(var)

    is_out, sir_out = [], []
    atom_law = np.zeros(s)
    for xs in itertools.product(range(s), repeat=n):
        xs = np.array(xs)
        pr = np.prod(q[xs])
        w = r[xs] / r[xs].sum()
        is_out.append((pr, w @ fvals[xs]))
        for idx in itertools.product(range(n), repeat=m):
            idx = np.array(idx)
            sir_out.append((pr * np.prod(w[idx]), fvals[xs[idx]].mean()))
        for j in range(n):
            atom_law[xs[j]] += pr * w[j]
    isir_out = []
    for atoms in itertools.product(range(s), repeat=m):
        atoms = np.array(atoms)
        isir_out.append((np.prod(atom_law[atoms]), fvals[atoms].mean()))
    return {
        "IS": moments(is_out),
        "SIR": moments(sir_out),
        "I_SIR": moments(isir_out),
    }
