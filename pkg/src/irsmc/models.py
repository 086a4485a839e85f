"""Hidden Markov models used by the filters, with exact oracles.

States are handled as ``(n, dim_x)`` arrays and every density method is
vectorized over the leading particle axis.  The default importance
distribution of every model is its transition density; models with a
closed-form predictive likelihood ``p(y_k | x_{k-1})`` also expose the
optimal proposal ``p(x_k | x_{k-1}, y_k)``.

Initial priors are not part of the benchmark definitions and are chosen
here: ARCH starts from ``N(0, beta0)`` (a transition from ``x = 0``), the
tracking models from ``N(0, diag(100, 1, 100, 1))`` per position/velocity
block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Generator
from scipy.linalg import block_diag, solve_triangular

from .static import StaticTarget

__all__ = [
    "StateSpaceModel",
    "LinearGaussianSSM",
    "ArchModel",
    "RangeBearingModel",
    "Trajectory",
    "CovarianceNotPD",
    "ModelLacksClosedForms",
    "simulate",
    "kalman_filter",
    "arch_predictive_loglik",
    "arch_optimal_proposal",
    "static_gaussian_target",
    "constant_velocity",
    "highdim_model",
    "tracking_model",
    "wrap_angle",
]

LOG_2PI = np.log(2.0 * np.pi)


class CovarianceNotPD(np.linalg.LinAlgError):
    """A covariance lost positive definiteness."""


class ModelLacksClosedForms(NotImplementedError):
    """The model has no closed-form predictive likelihood / optimal proposal."""


def wrap_angle(a):
    """Map angles to ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


class _Gaussian:
    """Fixed-covariance Gaussian noise with cached Cholesky factor."""

    def __init__(self, cov):
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        try:
            self.chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise CovarianceNotPD("covariance is not positive definite") from exc
        self.dim = self.cov.shape[0]
        self._log_norm = -0.5 * self.dim * LOG_2PI - np.log(np.diag(self.chol)).sum()

    def sample(self, rng: Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.dim)) @ self.chol.T

    def logpdf(self, resid: np.ndarray) -> np.ndarray:
        resid = np.atleast_2d(resid)
        z = solve_triangular(self.chol, resid.T, lower=True)
        return self._log_norm - 0.5 * np.einsum("ij,ij->j", z, z)


class StateSpaceModel:
    """Base class: ``x_0 ~ init``, ``x_k ~ f(.|x_{k-1})``, ``y_k ~ g(.|x_k)``.

    Subclasses implement the ``init_*``, ``transition_*``, ``likelihood_logpdf``
    and ``observation_sample`` methods.  The proposal defaults to the
    transition; ``has_closed_forms`` models also implement
    ``predictive_loglik`` and ``optimal_proposal_sample/logpdf``.
    """

    dim_x: int
    dim_y: int
    has_closed_forms = False
    proposal_is_transition = True

    def init_sample(self, rng: Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def init_logpdf(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def transition_sample(self, x_prev: np.ndarray, rng: Generator) -> np.ndarray:
        raise NotImplementedError

    def transition_logpdf(self, x: np.ndarray, x_prev: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def likelihood_logpdf(self, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def observation_sample(self, x: np.ndarray, rng: Generator) -> np.ndarray:
        raise NotImplementedError

    def proposal_sample(self, x_prev: np.ndarray, y: np.ndarray, rng: Generator) -> np.ndarray:
        return self.transition_sample(x_prev, rng)

    def proposal_logpdf(self, x: np.ndarray, x_prev: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.transition_logpdf(x, x_prev)

    def predictive_loglik(self, y: np.ndarray, x_prev: np.ndarray) -> np.ndarray:
        raise ModelLacksClosedForms(type(self).__name__)

    def optimal_proposal_sample(self, x_prev, y, rng: Generator) -> np.ndarray:
        raise ModelLacksClosedForms(type(self).__name__)

    def optimal_proposal_logpdf(self, x, x_prev, y) -> np.ndarray:
        raise ModelLacksClosedForms(type(self).__name__)

    def log_incremental_weight(self, x, x_prev, y) -> np.ndarray:
        """``log f(x|x_prev) + log g(y|x) - log q(x|x_prev, y)``."""
        lik = self.likelihood_logpdf(y, x)
        if self.proposal_is_transition:
            return lik
        return lik + self.transition_logpdf(x, x_prev) - self.proposal_logpdf(x, x_prev, y)

    def initial_view(self) -> "StateSpaceModel":
        """Model seen by a filter at ``k = 0``: the transition is the prior."""
        return _InitialView(self)


class _InitialView(StateSpaceModel):
    def __init__(self, model: StateSpaceModel):
        self.model = model
        self.dim_x, self.dim_y = model.dim_x, model.dim_y

    def transition_sample(self, x_prev, rng):
        return self.model.init_sample(rng, len(x_prev))

    def transition_logpdf(self, x, x_prev):
        return self.model.init_logpdf(x)

    def likelihood_logpdf(self, y, x):
        return self.model.likelihood_logpdf(y, x)

    def initial_view(self):
        return self


class _FixedPreviousView(StateSpaceModel):
    """Initial view for models whose prior is a transition from a fixed state."""

    def __init__(self, model: StateSpaceModel, x0: np.ndarray):
        self.model = model
        self.x0 = np.asarray(x0, dtype=float)
        self.dim_x, self.dim_y = model.dim_x, model.dim_y
        self.has_closed_forms = model.has_closed_forms
        self.proposal_is_transition = model.proposal_is_transition

    def _prev(self, x_prev):
        return np.broadcast_to(self.x0, np.shape(x_prev))

    def transition_sample(self, x_prev, rng):
        return self.model.transition_sample(self._prev(x_prev), rng)

    def transition_logpdf(self, x, x_prev):
        return self.model.transition_logpdf(x, self._prev(x_prev))

    def likelihood_logpdf(self, y, x):
        return self.model.likelihood_logpdf(y, x)

    def proposal_sample(self, x_prev, y, rng):
        return self.model.proposal_sample(self._prev(x_prev), y, rng)

    def proposal_logpdf(self, x, x_prev, y):
        return self.model.proposal_logpdf(x, self._prev(x_prev), y)

    def predictive_loglik(self, y, x_prev):
        return self.model.predictive_loglik(y, self._prev(x_prev))

    def optimal_proposal_sample(self, x_prev, y, rng):
        return self.model.optimal_proposal_sample(self._prev(x_prev), y, rng)

    def optimal_proposal_logpdf(self, x, x_prev, y):
        return self.model.optimal_proposal_logpdf(x, self._prev(x_prev), y)

    def initial_view(self):
        return self


class LinearGaussianSSM(StateSpaceModel):
    """``x_k = F x_{k-1} + c + N(0, Q)``, ``y_k = H x_k + N(0, R)``, ``x_0 ~ N(m0, P0)``.

    The drift ``c`` defaults to zero.
    """

    has_closed_forms = True

    def __init__(self, F, Q, H, R, m0=None, P0=None, c=None):
        self.F = np.atleast_2d(np.asarray(F, dtype=float))
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.dim_x, self.dim_y = self.F.shape[0], self.H.shape[0]
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        self.m0 = np.zeros(self.dim_x) if m0 is None else np.asarray(m0, dtype=float)
        self.P0 = np.eye(self.dim_x) if P0 is None else np.atleast_2d(np.asarray(P0, dtype=float))
        self.c = np.zeros(self.dim_x) if c is None else np.asarray(c, dtype=float)
        self._q = _Gaussian(self.Q)
        self._r = _Gaussian(self.R)
        self._p0 = _Gaussian(self.P0)
        # closed forms of the one-step predictive and the optimal proposal
        S = self.H @ self.Q @ self.H.T + self.R
        self._s = _Gaussian(S)
        self._gain = np.linalg.solve(S, self.H @ self.Q).T
        opt = (np.eye(self.dim_x) - self._gain @ self.H) @ self.Q
        self._opt = _Gaussian(0.5 * (opt + opt.T))

    def init_sample(self, rng, n):
        return self.m0 + self._p0.sample(rng, n)

    def init_logpdf(self, x):
        return self._p0.logpdf(np.atleast_2d(x) - self.m0)

    def transition_sample(self, x_prev, rng):
        x_prev = np.atleast_2d(x_prev)
        return x_prev @ self.F.T + self.c + self._q.sample(rng, len(x_prev))

    def transition_logpdf(self, x, x_prev):
        return self._q.logpdf(np.atleast_2d(x) - np.atleast_2d(x_prev) @ self.F.T - self.c)

    def likelihood_logpdf(self, y, x):
        return self._r.logpdf(np.asarray(y, dtype=float) - np.atleast_2d(x) @ self.H.T)

    def observation_sample(self, x, rng):
        return self.H @ x + self._r.sample(rng, 1)[0]

    def predictive_loglik(self, y, x_prev):
        pred = np.atleast_2d(x_prev) @ self.F.T + self.c
        return self._s.logpdf(np.asarray(y, dtype=float) - pred @ self.H.T)

    def _opt_mean(self, x_prev, y):
        pred = np.atleast_2d(x_prev) @ self.F.T + self.c
        return pred + (np.asarray(y, dtype=float) - pred @ self.H.T) @ self._gain.T

    def optimal_proposal_sample(self, x_prev, y, rng):
        mean = self._opt_mean(x_prev, y)
        return mean + self._opt.sample(rng, len(mean))

    def optimal_proposal_logpdf(self, x, x_prev, y):
        return self._opt.logpdf(np.atleast_2d(x) - self._opt_mean(x_prev, y))

    def initial_view(self):
        # the prior is a transition with F = 0, drift m0 and noise P0
        zero = np.zeros_like(self.F)
        return LinearGaussianSSM(zero, self.P0, self.H, self.R, self.m0, self.P0, c=self.m0)


def constant_velocity(tau: float = 1.0, sigma_q2: float = 1.0):
    """``(F, Q)`` of the 2-D constant-velocity model, state ``[px, vx, py, vy]``."""
    f1 = np.array([[1.0, tau], [0.0, 1.0]])
    q1 = sigma_q2 * np.array([[tau**3 / 3.0, tau**2 / 2.0], [tau**2 / 2.0, tau]])
    return block_diag(f1, f1), block_diag(q1, q1)


CV_PRIOR_DIAG = (100.0, 1.0, 100.0, 1.0)


def highdim_model(
    n_blocks: int = 1,
    sigma_q2: float = 25.0,
    sigma_x2: float = 4.0,
    sigma_y2: float = 4.0,
    tau: float = 1.0,
) -> LinearGaussianSSM:
    """``n_blocks`` independent constant-velocity targets with position
    measurements; state dimension ``4 * n_blocks``."""
    F1, Q1 = constant_velocity(tau, sigma_q2)
    H1 = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    R1 = np.diag([sigma_x2, sigma_y2])
    return LinearGaussianSSM(
        F=block_diag(*[F1] * n_blocks),
        Q=block_diag(*[Q1] * n_blocks),
        H=block_diag(*[H1] * n_blocks),
        R=block_diag(*[R1] * n_blocks),
        m0=np.zeros(4 * n_blocks),
        P0=np.diag(np.tile(CV_PRIOR_DIAG, n_blocks)),
    )


@dataclass(frozen=True)
class ArchModel(StateSpaceModel):
    """``x_k ~ N(0, beta0 + beta1 x_{k-1}^2)``, ``y_k ~ N(x_k, R)``, ``x_0 ~ N(0, beta0)``."""

    beta0: float = 3.0
    beta1: float = 0.75
    R: float = 1.0

    dim_x = 1
    dim_y = 1
    has_closed_forms = True

    def __post_init__(self):
        if self.beta0 <= 0 or self.beta1 <= 0 or self.R <= 0:
            raise ValueError("ARCH parameters must be positive")

    def _var(self, x_prev):
        return self.beta0 + self.beta1 * np.asarray(x_prev, dtype=float)[:, 0] ** 2

    @staticmethod
    def _normal_logpdf(x, mean, var):
        return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)

    def init_sample(self, rng, n):
        return self.transition_sample(np.zeros((n, 1)), rng)

    def init_logpdf(self, x):
        return self.transition_logpdf(x, np.zeros_like(np.atleast_2d(x)))

    def transition_sample(self, x_prev, rng):
        x_prev = np.atleast_2d(x_prev)
        return (np.sqrt(self._var(x_prev)) * rng.standard_normal(len(x_prev)))[:, None]

    def transition_logpdf(self, x, x_prev):
        return self._normal_logpdf(np.atleast_2d(x)[:, 0], 0.0, self._var(np.atleast_2d(x_prev)))

    def likelihood_logpdf(self, y, x):
        return self._normal_logpdf(np.atleast_2d(x)[:, 0], float(np.ravel(y)[0]), self.R)

    def observation_sample(self, x, rng):
        return np.atleast_1d(x[0] + np.sqrt(self.R) * rng.standard_normal())

    def predictive_loglik(self, y, x_prev):
        return self._normal_logpdf(float(np.ravel(y)[0]), 0.0, self.R + self._var(np.atleast_2d(x_prev)))

    def _opt_moments(self, x_prev, y):
        v = self._var(np.atleast_2d(x_prev))
        gain = v / (self.R + v)
        return gain * float(np.ravel(y)[0]), self.R * gain

    def optimal_proposal_sample(self, x_prev, y, rng):
        mean, var = self._opt_moments(x_prev, y)
        return (mean + np.sqrt(var) * rng.standard_normal(len(mean)))[:, None]

    def optimal_proposal_logpdf(self, x, x_prev, y):
        mean, var = self._opt_moments(x_prev, y)
        return self._normal_logpdf(np.atleast_2d(x)[:, 0], mean, var)

    def initial_view(self):
        return _FixedPreviousView(self, np.zeros(1))


def arch_predictive_loglik(m: ArchModel, y, x_prev) -> np.ndarray:
    """``log N(y; 0, R + beta0 + beta1 x_prev^2)``."""
    return m.predictive_loglik(np.atleast_1d(y), np.reshape(np.asarray(x_prev, dtype=float), (-1, 1)))


def arch_optimal_proposal(m: ArchModel, y, x_prev, rng: Generator):
    """Draw from ``p(x_k | x_prev, y_k)``; returns ``(samples, logpdf)``."""
    x_prev = np.reshape(np.asarray(x_prev, dtype=float), (-1, 1))
    y = np.atleast_1d(y)
    x = m.optimal_proposal_sample(x_prev, y, rng)
    return x, m.optimal_proposal_logpdf(x, x_prev, y)


class RangeBearingModel(StateSpaceModel):
    """Constant-velocity target observed through range and bearing.

    The bearing is ``atan2(py, px)`` and residuals are wrapped to
    ``(-pi, pi]``.
    """

    dim_x = 4
    dim_y = 2

    def __init__(
        self,
        sigma_q2: float = 10.0,
        sigma_rho: float = 0.25,
        sigma_theta: float = np.pi / 720,
        tau: float = 1.0,
        prior_diag=CV_PRIOR_DIAG,
    ):
        if sigma_rho <= 0 or sigma_theta <= 0:
            raise ValueError("measurement standard deviations must be positive")
        self.sigma_rho, self.sigma_theta = float(sigma_rho), float(sigma_theta)
        self.F, self.Q = constant_velocity(tau, sigma_q2)
        self._q = _Gaussian(self.Q)
        self._p0 = _Gaussian(np.diag(prior_diag))
        self._log_norm = -LOG_2PI - np.log(self.sigma_rho * self.sigma_theta)

    @staticmethod
    def measure(x: np.ndarray) -> np.ndarray:
        """Noise-free ``(range, bearing)`` of each state."""
        x = np.atleast_2d(x)
        return np.stack([np.hypot(x[:, 0], x[:, 2]), np.arctan2(x[:, 2], x[:, 0])], axis=1)

    def init_sample(self, rng, n):
        return self._p0.sample(rng, n)

    def init_logpdf(self, x):
        return self._p0.logpdf(np.atleast_2d(x))

    def transition_sample(self, x_prev, rng):
        x_prev = np.atleast_2d(x_prev)
        return x_prev @ self.F.T + self._q.sample(rng, len(x_prev))

    def transition_logpdf(self, x, x_prev):
        return self._q.logpdf(np.atleast_2d(x) - np.atleast_2d(x_prev) @ self.F.T)

    def likelihood_logpdf(self, y, x):
        h = self.measure(x)
        y = np.asarray(y, dtype=float)
        d_rho = (y[0] - h[:, 0]) / self.sigma_rho
        d_theta = wrap_angle(y[1] - h[:, 1]) / self.sigma_theta
        return self._log_norm - 0.5 * (d_rho**2 + d_theta**2)

    def observation_sample(self, x, rng):
        h = self.measure(x)[0]
        noise = rng.standard_normal(2) * (self.sigma_rho, self.sigma_theta)
        return np.array([h[0] + noise[0], wrap_angle(h[1] + noise[1])])


def tracking_model(informative: bool = False, **overrides) -> RangeBearingModel:
    """Range-bearing benchmark; ``informative`` selects the sharp likelihood."""
    params = dict(sigma_q2=10.0, sigma_rho=0.25, sigma_theta=np.pi / 720)
    if informative:
        params.update(sigma_rho=0.05, sigma_theta=np.pi / 3600)
    params.update(overrides)
    return RangeBearingModel(**params)


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    observations: np.ndarray

    def __post_init__(self):
        if len(self.states) != len(self.observations):
            raise ValueError("states and observations must have equal length")

    def __len__(self) -> int:
        return len(self.states)


def simulate(model: StateSpaceModel, T: int, rng: Generator) -> Trajectory:
    """Draw ``x_{0:T}`` and ``y_{0:T}`` jointly from the model."""
    if T < 0:
        raise ValueError("T must be >= 0")
    xs = np.empty((T + 1, model.dim_x))
    ys = np.empty((T + 1, model.dim_y))
    xs[0] = model.init_sample(rng, 1)[0]
    ys[0] = model.observation_sample(xs[0], rng)
    for k in range(1, T + 1):
        xs[k] = model.transition_sample(xs[k - 1 : k], rng)[0]
        ys[k] = model.observation_sample(xs[k], rng)
    return Trajectory(xs, ys)


def _check_pd(P: np.ndarray, what: str, tol: float = 1e-10):
    sym = 0.5 * (P + P.T)
    if np.min(np.linalg.eigvalsh(sym)) < -tol * max(1.0, np.abs(sym).max()):
        raise CovarianceNotPD(f"{what} is not positive definite")
    return sym


def kalman_filter(m: LinearGaussianSSM, ys):
    """Exact filtering means and covariances ``E(x_k | y_{0:k})``.

    Returns:
        ``(means, covs)`` with shapes ``(T+1, dim_x)`` and ``(T+1, dim_x, dim_x)``.
    """
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    n = len(ys)
    means = np.empty((n, m.dim_x))
    covs = np.empty((n, m.dim_x, m.dim_x))
    x, P = m.m0.copy(), m.P0.copy()
    I = np.eye(m.dim_x)
    for k in range(n):
        if k > 0:
            x = m.F @ x + m.c
            P = m.F @ P @ m.F.T + m.Q
        S = _check_pd(m.H @ P @ m.H.T + m.R, "innovation covariance")
        K = np.linalg.solve(S, m.H @ P).T
        x = x + K @ (ys[k] - m.H @ x)
        A = I - K @ m.H
        P = _check_pd(A @ P @ A.T + K @ m.R @ K.T, "posterior covariance")
        means[k], covs[k] = x, P
    return means, covs


def static_gaussian_target(sigma_x2: float = 10.0, sigma_y2: float = 3.0, y: float = 0.0) -> StaticTarget:
    """Gaussian prior ``N(0, sigma_x2)``, likelihood ``N(y; x, sigma_y2)``, ``q`` = prior.

    States are 1-D arrays; ``f`` is the identity.
    """
    if sigma_x2 <= 0 or sigma_y2 <= 0:
        raise ValueError("variances must be positive")
    sx = np.sqrt(sigma_x2)
    log_prior_norm = -0.5 * (LOG_2PI + np.log(sigma_x2))
    log_lik_norm = -0.5 * (LOG_2PI + np.log(sigma_y2))

    def log_prior(x):
        return log_prior_norm - 0.5 * np.asarray(x) ** 2 / sigma_x2

    def log_lik(x):
        return log_lik_norm - 0.5 * (y - np.asarray(x)) ** 2 / sigma_y2

    return StaticTarget(
        log_p_u=lambda x: log_prior(x) + log_lik(x),
        proposal_sample=lambda rng, n: sx * rng.standard_normal(n),
        proposal_logpdf=log_prior,
        f=lambda x: np.asarray(x, dtype=float),
        log_ratio=log_lik,
    )
