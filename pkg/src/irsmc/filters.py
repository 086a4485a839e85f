"""Sequential filters: classical SIR, independent-resampling SIR, APF, FA-APF.

A filter is driven one step at a time on a :class:`ParticleCloud`.  Start
from :func:`initial_cloud`; at ``step == -1`` the step functions use the
model's initial view, so the first step samples the prior and weights by
``g(y_0 | x_0)``.

Independent resampling (:func:`independent_sir_step`) runs ``M``
replicates; in each, candidate ``j`` extends trajectory ``j`` of the
previous cloud and one candidate survives.  Candidate log-weights include
``log w_{k-1}^j`` so that a weighted input cloud is handled correctly.
The survivors are conditionally i.i.d. and the output cloud is unweighted.
:func:`second_stage_weights` turns them into the weighted I-SIR-w estimate
by recycling the candidate table.

Only ``(x_{k-1}, x_k)`` are stored: all proposals and weights are Markov.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.random import Generator
from scipy.special import logsumexp

from . import sampling
from .models import ModelLacksClosedForms, StateSpaceModel
from .sampling import AllWeightsDegenerate, effective_sample_size, normalize_log_weights

__all__ = [
    "ParticleCloud",
    "CandidateTable",
    "ApfSpec",
    "Always",
    "EssBelow",
    "ALWAYS",
    "initial_cloud",
    "sir_step",
    "independent_sir_step",
    "second_stage_weights",
    "apf_step",
    "fa_apf_step",
    "sir_apf_spec",
    "optimal_first_stage_spec",
    "fully_adapted_spec",
    "theta_sis",
    "theta_sir",
    "theta_isir",
    "theta_isir_w",
    "normalized_ess",
    "FilterRun",
    "run_filter",
]


@dataclass(frozen=True)
class ParticleCloud:
    """Per-step particle approximation of the filtering law.

    ``log_weights`` are the normalized weights in log domain (``-inf`` where a
    weight underflows), ``normalized`` their exponential.

    ``pre_states``/``pre_weights`` keep the weighted cloud before resampling
    (used by :func:`theta_sis`); they are ``None`` when no resampling step
    intervened.  ``degenerate`` flags a uniform-weight fallback at this step.
    """

    states: np.ndarray
    prev_states: np.ndarray
    log_weights: np.ndarray
    normalized: np.ndarray
    step: int
    sampling_ops: int
    pre_states: Optional[np.ndarray] = None
    pre_weights: Optional[np.ndarray] = None
    degenerate: bool = False

    def __len__(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class CandidateTable:
    """Everything an independent resampling step drew.

    Attributes:
        candidates: ``(M, N, dim_x)``; ``candidates[i, j]`` extends trajectory ``j``.
        log_ratios: ``(M, N)`` unnormalized log candidate weights
            ``log w_{k-1}^j + log f + log g - log q``.
        ancestors: ``(M,)`` chosen trajectory index ``l^i``.
        chosen: ``(M, dim_x)`` surviving states.
    """

    candidates: np.ndarray
    log_ratios: np.ndarray
    ancestors: np.ndarray
    chosen: np.ndarray


@dataclass(frozen=True)
class ApfSpec:
    """First-stage log-weight and proposal of an auxiliary particle filter.

    ``log_first_stage(prev_states, prev_log_w, y)`` returns unnormalized
    ``log mu`` per trajectory (it normally includes ``prev_log_w``).
    """

    log_first_stage: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    proposal_sample: Callable[[np.ndarray, np.ndarray, Generator], np.ndarray]
    proposal_logpdf: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


class Always:
    """Resample at every step."""

    def triggers(self, w: np.ndarray) -> bool:
        return True

    def __repr__(self) -> str:
        return "Always()"


ALWAYS = Always()


@dataclass(frozen=True)
class EssBelow:
    """Resample when ``ESS / N < fraction``."""

    fraction: float

    def triggers(self, w: np.ndarray) -> bool:
        return effective_sample_size(w) < self.fraction * len(w)


def _normalize_or_uniform(lw: np.ndarray) -> tuple[np.ndarray, bool]:
    try:
        return normalize_log_weights(lw), False
    except AllWeightsDegenerate:
        return np.full(lw.shape, 1.0 / lw.shape[-1]), True


def _log_normalized(lw: np.ndarray, w: np.ndarray, degenerate: bool) -> np.ndarray:
    if degenerate:
        return np.log(w)
    return lw - logsumexp(lw)


def _view(cloud: ParticleCloud, model: StateSpaceModel) -> StateSpaceModel:
    return model.initial_view() if cloud.step < 0 else model


def initial_cloud(model: StateSpaceModel, n: int) -> ParticleCloud:
    """Placeholder cloud at ``step = -1``; the first step draws from the prior."""
    states = np.zeros((n, model.dim_x))
    w = np.full(n, 1.0 / n)
    return ParticleCloud(states, states, np.log(w), w, -1, 0)


def sir_step(
    cloud: ParticleCloud, model: StateSpaceModel, y, rng: Generator, policy=ALWAYS
) -> ParticleCloud:
    """One step of the classical SIR filter (dependent resampling).

    Propagates every particle through the proposal, multiplies in the
    incremental weight, then resamples ``N`` indices if ``policy`` triggers.
    RNG order: proposal draws, then resampling uniforms.
    """
    m = _view(cloud, model)
    n = len(cloud)
    x = m.proposal_sample(cloud.states, y, rng)
    lw = cloud.log_weights + m.log_incremental_weight(x, cloud.states, y)
    w, degenerate = _normalize_or_uniform(lw)
    ops = cloud.sampling_ops + n
    if policy.triggers(w):
        idx = sampling.multinomial_resample(w, n, rng)
        u = np.full(n, 1.0 / n)
        return ParticleCloud(
            x[idx], cloud.states[idx], np.log(u), u, cloud.step + 1, ops + n, x, w, degenerate
        )
    lw = _log_normalized(lw, w, degenerate)
    return ParticleCloud(x, cloud.states, lw, w, cloud.step + 1, ops, x, w, degenerate)


def independent_sir_step(
    cloud: ParticleCloud, model: StateSpaceModel, y, m: int, rng: Generator
) -> tuple[ParticleCloud, CandidateTable]:
    """One step of SIR with independent resampling.

    For every replicate ``i < m`` one candidate per trajectory ``j`` is drawn
    from ``q(. | x_{k-1}^j)``, the row is weighted and normalized, and one
    index ``l^i`` is drawn.  RNG order: all ``m * N`` proposal draws
    (replicate-major), then one uniform per replicate.  A row whose weights
    all vanish falls back to uniform and sets ``degenerate``.
    """
    mod = _view(cloud, model)
    n = len(cloud)
    prev = np.tile(cloud.states, (m, 1))
    x = mod.proposal_sample(prev, y, rng)
    lr = cloud.log_weights[None, :] + mod.log_incremental_weight(x, prev, y).reshape(m, n)
    degenerate = False
    try:
        w = normalize_log_weights(lr, axis=1)
    except AllWeightsDegenerate:
        dead = np.all(np.isneginf(lr), axis=1)
        safe = np.where(dead[:, None], 0.0, lr)
        w = normalize_log_weights(safe, axis=1)
        degenerate = True
    anc = sampling.draw_rows(w, rng)
    cand = x.reshape(m, n, -1)
    chosen = cand[np.arange(m), anc]
    u = np.full(m, 1.0 / m)
    out = ParticleCloud(
        chosen,
        cloud.states[anc],
        np.log(u),
        u,
        cloud.step + 1,
        cloud.sampling_ops + n * m + m,
        degenerate=degenerate,
    )
    return out, CandidateTable(cand, lr, anc, chosen)


def _exclusive_logsumexp(lr: np.ndarray) -> np.ndarray:
    """``out[i, l] = logsumexp_{j != l} lr[i, j]``, computed without cancellation."""
    m, n = lr.shape
    pad = np.full((m, 1), -np.inf)
    prefix = np.concatenate([pad, np.logaddexp.accumulate(lr, axis=1)[:, :-1]], axis=1)
    suffix = np.concatenate(
        [np.logaddexp.accumulate(lr[:, ::-1], axis=1)[:, ::-1][:, 1:], pad], axis=1
    )
    return np.logaddexp(prefix, suffix)


def log_h_hat(table: CandidateTable) -> np.ndarray:
    """Recycled estimate of ``log h_{l^i}(x^i)`` for every survivor ``i``.

    For survivor ``i`` with ancestor ``l`` and ratio ``a = r_l(x^i)``, sums over
    all replicate rows ``a / (a + sum_{j != l} r_{row, j})``; the row's own slot
    ``l`` is the one excluded.
    """
    lr = table.log_ratios
    m = lr.shape[0]
    loo = _exclusive_logsumexp(lr)
    a = lr[np.arange(m), table.ancestors]
    co = loo[:, table.ancestors]  # (rows, survivors)
    with np.errstate(invalid="ignore"):
        d = a[None, :] - co
    if np.isneginf(a).any():
        d = np.where(np.isneginf(a)[None, :], -np.inf, d)
    return sampling.log_sum_sigmoid(d, axis=0)


def second_stage_weights(table: CandidateTable, cloud_prev=None, model=None, y=None):
    """Post-resampling weights of the independent survivors.

    ``w^i`` is proportional to ``r_{l^i}(x^i) / h_hat_{l^i}(x^i)`` where
    ``r_l = w_{k-1}^l f g / q``; the ratios were stored in the table, so the
    previous cloud, model and observation are accepted only for symmetry with
    the other step functions.

    Returns:
        ``(weights, degenerate)``; on total collapse the weights are uniform.
    """
    lr = table.log_ratios
    a = lr[np.arange(lr.shape[0]), table.ancestors]
    return _normalize_or_uniform(a - log_h_hat(table))


def apf_step(
    cloud: ParticleCloud, model: StateSpaceModel, y, spec: ApfSpec, rng: Generator
) -> ParticleCloud:
    """One auxiliary particle filter step.

    ``spec`` is an :class:`ApfSpec` or a factory ``model -> ApfSpec`` such as
    :func:`fully_adapted_spec`; a factory also covers the initial step.
    RNG order: ``N`` ancestor uniforms drawn from the first-stage weights,
    then the proposal draws.  Output weights are the second-stage weights.
    """
    mod = _view(cloud, model)
    spec = _bind(spec, mod)
    n = len(cloud)
    prev_lw = cloud.log_weights
    log_mu = spec.log_first_stage(cloud.states, prev_lw, y)
    mu, degenerate = _normalize_or_uniform(log_mu)
    idx = sampling.multinomial_resample(mu, n, rng)
    anc = cloud.states[idx]
    x = spec.proposal_sample(anc, y, rng)
    log_mu_n = _log_normalized(log_mu, mu, degenerate)[idx]
    lw = (prev_lw[idx] + mod.transition_logpdf(x, anc) + mod.likelihood_logpdf(y, x)
          - log_mu_n - spec.proposal_logpdf(x, anc, y))
    w, degenerate2 = _normalize_or_uniform(lw)
    return ParticleCloud(
        x, anc, _log_normalized(lw, w, degenerate2), w, cloud.step + 1, cloud.sampling_ops + 2 * n,
        degenerate=degenerate or degenerate2,
    )


def _bind(spec, mod: StateSpaceModel) -> ApfSpec:
    # a spec factory is re-bound to the model view so it follows the initial step
    return spec if isinstance(spec, ApfSpec) else spec(mod)


def sir_apf_spec(model: StateSpaceModel) -> ApfSpec:
    """``mu`` proportional to ``w_{k-1}``, ``tau`` = the model proposal."""
    return ApfSpec(
        lambda xp, lw, y: lw,
        model.proposal_sample,
        model.proposal_logpdf,
    )


def optimal_first_stage_spec(model: StateSpaceModel) -> ApfSpec:
    """``mu`` proportional to ``w_{k-1} p(y_k | x_{k-1})``, ``tau`` = transition."""
    return ApfSpec(
        lambda xp, lw, y: lw + model.predictive_loglik(y, xp),
        lambda xp, y, rng: model.transition_sample(xp, rng),
        lambda x, xp, y: model.transition_logpdf(x, xp),
    )


def fully_adapted_spec(model: StateSpaceModel) -> ApfSpec:
    """``mu`` proportional to ``w_{k-1} p(y_k | x_{k-1})``, ``tau`` = optimal proposal."""
    return ApfSpec(
        lambda xp, lw, y: lw + model.predictive_loglik(y, xp),
        model.optimal_proposal_sample,
        model.optimal_proposal_logpdf,
    )


def fa_apf_step(cloud: ParticleCloud, model: StateSpaceModel, y, rng: Generator) -> ParticleCloud:
    """Fully adapted APF step; the second-stage weights come out uniform.

    Raises:
        ModelLacksClosedForms: if the model has no predictive likelihood.
    """
    if not model.has_closed_forms:
        raise ModelLacksClosedForms(type(model).__name__)
    return apf_step(cloud, model, y, fully_adapted_spec, rng)


def theta_sis(cloud: ParticleCloud) -> np.ndarray:
    """Weighted mean of the pre-resampling cloud."""
    if cloud.pre_states is not None:
        return cloud.pre_weights @ cloud.pre_states
    return cloud.normalized @ cloud.states


def theta_sir(cloud: ParticleCloud) -> np.ndarray:
    """Unweighted mean of the (resampled) particles."""
    return cloud.states.mean(axis=0)


theta_isir = theta_sir


def theta_isir_w(cloud: ParticleCloud, weights: np.ndarray) -> np.ndarray:
    """Mean of the independent survivors under their second-stage weights."""
    return weights @ cloud.states


def normalized_ess(w) -> float:
    """``ESS / N``, in ``(0, 1]``."""
    return effective_sample_size(w) / len(w)


@dataclass(frozen=True)
class FilterRun:
    """Output of :func:`run_filter` over ``y_{0:T}``.

    ``estimates`` maps an estimator name to a ``(T+1, dim_x)`` track;
    ``ess_norm`` is the per-step normalized ESS of the weights the weighted
    estimator uses.
    """

    estimates: dict
    ess_norm: np.ndarray
    degenerate_steps: int
    sampling_ops: int


FILTERS = ("sir", "independent", "apf", "fa_apf")


def run_filter(model: StateSpaceModel, ys, kind: str, n: int, rng: Generator) -> FilterRun:
    """Run one filter over all observations.

    ``kind`` selects the filter and the estimates it reports:

    * ``"sir"``: classical SIR resampling every step; ``sis`` and ``sir``;
    * ``"independent"``: independent resampling with ``M = N = n``; ``isir``
      and ``isir_w``;
    * ``"apf"``: optimal first-stage weights, transition proposal; ``apf``;
    * ``"fa_apf"``: fully adapted APF; ``fa``.
    """
    if kind not in FILTERS:
        raise ValueError(f"unknown filter {kind!r}; expected one of {FILTERS}")
    ys = np.asarray(ys, dtype=float)
    T1 = len(ys)
    cloud = initial_cloud(model, n)
    names = {"sir": ("sis", "sir"), "independent": ("isir", "isir_w"),
             "apf": ("apf",), "fa_apf": ("fa",)}[kind]
    est = {name: np.empty((T1, model.dim_x)) for name in names}
    ess = np.empty(T1)
    degenerate = 0
    for k, y in enumerate(ys):
        if kind == "sir":
            cloud = sir_step(cloud, model, y, rng)
            est["sis"][k] = theta_sis(cloud)
            est["sir"][k] = theta_sir(cloud)
            ess[k] = normalized_ess(cloud.pre_weights)
            flag = cloud.degenerate
        elif kind == "independent":
            cloud, table = independent_sir_step(cloud, model, y, n, rng)
            w, flag2 = second_stage_weights(table)
            est["isir"][k] = theta_isir(cloud)
            est["isir_w"][k] = theta_isir_w(cloud, w)
            ess[k] = normalized_ess(w)
            flag = cloud.degenerate or flag2
        else:
            if kind == "apf":
                cloud = apf_step(cloud, model, y, optimal_first_stage_spec, rng)
            else:
                cloud = fa_apf_step(cloud, model, y, rng)
            est[names[0]][k] = cloud.normalized @ cloud.states
            ess[k] = normalized_ess(cloud.normalized)
            flag = cloud.degenerate
        degenerate += bool(flag)
    return FilterRun(est, ess, degenerate, cloud.sampling_ops)
