from dataclasses import dataclass

import numpy as np
import pytest
from scipy import stats

from irsmc import filters, sampling
from irsmc.filters import (
    ApfSpec,
    EssBelow,
    apf_step,
    fa_apf_step,
    fully_adapted_spec,
    independent_sir_step,
    initial_cloud,
    log_h_hat,
    normalized_ess,
    optimal_first_stage_spec,
    run_filter,
    second_stage_weights,
    sir_apf_spec,
    sir_step,
    theta_isir_w,
    theta_sir,
    theta_sis,
)
from irsmc.models import ArchModel, ModelLacksClosedForms, highdim_model, simulate, tracking_model
from irsmc.sampling import rng_stream
from irsmc.static import StaticTarget, estimate_is


@dataclass(frozen=True)
class OptimalProposalArch(ArchModel):
    """ARCH filtered with the locally optimal proposal."""

    proposal_is_transition = False

    def proposal_sample(self, x_prev, y, rng):
        return self.optimal_proposal_sample(x_prev, y, rng)

    def proposal_logpdf(self, x, x_prev, y):
        return self.optimal_proposal_logpdf(x, x_prev, y)


class FlatLikelihood(ArchModel):
    def likelihood_logpdf(self, y, x):
        return np.zeros(len(np.atleast_2d(x)))


def frozen_cloud(states, weights, step=3):
    states = np.asarray(states, dtype=float).reshape(len(weights), -1)
    w = np.asarray(weights, dtype=float)
    return filters.ParticleCloud(states, states, np.log(w), w, step, 0)


def mixture_cdf(model, cloud, y):
    """CDF of the fully adapted one-step law for a 1-D ARCH cloud."""
    mix = cloud.normalized * np.exp(model.predictive_loglik(np.atleast_1d(y), cloud.states))
    mix /= mix.sum()
    mean, var = model._opt_moments(cloud.states, np.atleast_1d(y))
    return lambda x: np.sum(mix * stats.norm.cdf((np.asarray(x)[:, None] - mean) / np.sqrt(var)), axis=1)


class TestSirStep:
    def test_flat_likelihood_keeps_uniform_weights(self, rng):
        m = FlatLikelihood()
        cloud = sir_step(initial_cloud(m, 20), m, [0.0], rng)
        np.testing.assert_allclose(cloud.pre_weights, 1 / 20)
        assert set(map(float, cloud.states[:, 0])) <= set(map(float, cloud.pre_states[:, 0]))

    def test_first_step_is_importance_sampling(self):
        m, y = ArchModel(), np.array([1.7])
        target = StaticTarget(
            log_p_u=lambda x: m.init_logpdf(x[:, None]) + m.likelihood_logpdf(y, x[:, None]),
            proposal_sample=lambda rng, n: m.init_sample(rng, n)[:, 0],
            proposal_logpdf=lambda x: m.init_logpdf(x[:, None]),
            f=lambda x: x,
        )
        est = estimate_is(target, 500, rng_stream(8))
        cloud = sir_step(initial_cloud(m, 500), m, y, rng_stream(8))
        assert theta_sis(cloud)[0] == pytest.approx(est.value[0], abs=1e-10)

    def test_policy_skips_resampling(self, rng):
        m = ArchModel()
        c = sir_step(initial_cloud(m, 30), m, [0.5], rng, policy=EssBelow(0.0))
        assert c.sampling_ops == 30
        np.testing.assert_allclose(c.normalized, c.pre_weights)
        c2 = sir_step(c, m, [0.1], rng)
        assert c2.sampling_ops == 30 + 60
        np.testing.assert_allclose(c2.normalized, 1 / 30)

    def test_degenerate_falls_back_to_uniform(self, rng):
        class Impossible(ArchModel):
            def likelihood_logpdf(self, y, x):
                return np.full(len(np.atleast_2d(x)), -np.inf)

        c = sir_step(initial_cloud(ArchModel(), 10), Impossible(), [0.0], rng)
        assert c.degenerate
        np.testing.assert_allclose(c.pre_weights, 0.1)


class TestIndependentStep:
    def test_single_trajectory_draws_from_proposal(self, rng):
        m = ArchModel()
        cloud = frozen_cloud([2.0], [1.0])
        out, table = independent_sir_step(cloud, m, [0.0], 50_000, rng)
        assert (table.ancestors == 0).all()
        # proposal = transition from x=2: N(0, 3 + 0.75 * 4)
        assert stats.kstest(out.states[:, 0], stats.norm(0, np.sqrt(6.0)).cdf).pvalue > 0.001

    def test_optimal_proposal_matches_fully_adapted_law(self, rng):
        m = OptimalProposalArch()
        cloud = frozen_cloud([-2.0, 0.5, 3.0], [0.2, 0.5, 0.3])
        y = np.array([1.2])
        out, table = independent_sir_step(cloud, m, y, 100_000, rng)
        # row weights do not depend on the candidates
        assert np.allclose(np.ptp(table.log_ratios, axis=0), 0.0, atol=1e-9)
        assert stats.kstest(out.states[:, 0], mixture_cdf(m, cloud, y)).pvalue > 0.001

    def test_output_and_ops(self, rng):
        m = ArchModel()
        cloud = sir_step(initial_cloud(m, 6), m, [0.0], rng)
        out, table = independent_sir_step(cloud, m, [0.3], 4, rng)
        assert len(out) == 4
        assert table.candidates.shape == (4, 6, 1)
        assert out.sampling_ops == cloud.sampling_ops + 6 * 4 + 4
        np.testing.assert_array_equal(out.prev_states, cloud.states[table.ancestors])

    def test_candidate_j_extends_trajectory_j(self, rng):
        m = FlatLikelihood(beta0=1e-12, beta1=1.0)
        cloud = frozen_cloud([1.0, -5.0, 3.0], [1 / 3] * 3)
        _, table = independent_sir_step(cloud, m, [0.0], 5, rng)
        # variance beta1 x_prev^2 makes |candidate| scale with its trajectory
        scale = np.abs(table.candidates[..., 0]) / np.abs(cloud.states[:, 0])
        assert np.median(scale) < 5


class TestSecondStageWeights:
    def test_brute_force_h_hat(self, rng):
        m = ArchModel()
        cloud = sir_step(initial_cloud(m, 5), m, [0.4], rng, policy=EssBelow(0.0))
        _, table = independent_sir_step(cloud, m, [1.1], 4, rng)
        r = np.exp(table.log_ratios)
        h = np.zeros(4)
        for i, l in enumerate(table.ancestors):
            a = r[i, l]
            h[i] = sum(a / (a + r[row].sum() - r[row, l]) for row in range(4))
        np.testing.assert_allclose(np.exp(log_h_hat(table)), h, rtol=1e-12)
        w, _ = second_stage_weights(table)
        expected = r[np.arange(4), table.ancestors] / h
        np.testing.assert_allclose(w, expected / expected.sum(), rtol=1e-12)

    def test_single_trajectory_gives_ratio_weights(self, rng):
        # empty co-candidate sums: h_hat = M, so weights are the plain ratios
        m = ArchModel()
        _, table = independent_sir_step(frozen_cloud([0.5], [1.0]), m, [0.8], 7, rng)
        np.testing.assert_allclose(np.exp(log_h_hat(table)), 7.0)
        w, _ = second_stage_weights(table)
        np.testing.assert_allclose(w, sampling.normalize_log_weights(table.log_ratios[:, 0]))

    def test_single_trajectory_flat_ratios_uniform(self, rng):
        m = FlatLikelihood()
        _, table = independent_sir_step(frozen_cloud([0.5], [1.0]), m, [0.8], 7, rng)
        np.testing.assert_allclose(second_stage_weights(table)[0], 1 / 7)

    def test_optimal_proposal_weights_near_uniform(self, rng):
        m = OptimalProposalArch()
        cloud = frozen_cloud(rng.normal(size=200), np.full(200, 1 / 200))
        _, table = independent_sir_step(cloud, m, [0.7], 200, rng)
        assert normalized_ess(second_stage_weights(table)[0]) > 0.99

    def test_ess_grows_with_size(self):
        model = ArchModel()
        traj = simulate(model, 30, rng_stream(4))
        ess = [run_filter(model, traj.observations, "independent", n, rng_stream(5, n)).ess_norm.mean()
               for n in (5, 50)]
        assert ess[0] < ess[1]


class TestApf:
    def test_sir_spec_equals_resample_then_move(self):
        m = highdim_model(1)
        ys = simulate(m, 4, rng_stream(1)).observations
        cloud = initial_cloud(m, 40)
        rng = rng_stream(2)
        for y in ys[:2]:
            cloud = sir_step(cloud, m, y, rng, policy=EssBelow(0.0))
        a = apf_step(cloud, m, ys[2], sir_apf_spec, rng_stream(3))
        rng = rng_stream(3)
        idx = sampling.multinomial_resample(cloud.normalized, 40, rng)
        u = np.full(40, 1 / 40)
        moved = sir_step(filters.ParticleCloud(cloud.states[idx], cloud.states[idx], np.log(u), u, 1, 0),
                         m, ys[2], rng, policy=EssBelow(0.0))
        np.testing.assert_array_equal(a.states, moved.states)
        np.testing.assert_allclose(a.normalized, moved.normalized, atol=1e-12)

    @pytest.mark.parametrize("model", [ArchModel(), highdim_model(2)], ids=["arch", "linear"])
    def test_fully_adapted_weights_uniform(self, model, rng):
        traj = simulate(model, 10, rng)
        cloud = initial_cloud(model, 25)
        for y in traj.observations:
            cloud = fa_apf_step(cloud, model, y, rng)
            np.testing.assert_allclose(cloud.normalized, 1 / 25, atol=1e-12)

    def test_optimal_first_stage_runs(self, rng):
        m = ArchModel()
        run = run_filter(m, simulate(m, 10, rng).observations, "apf", 30, rng)
        assert np.isfinite(run.estimates["apf"]).all()
        assert run.sampling_ops == 11 * 60

    def test_explicit_spec_object(self, rng):
        m = ArchModel()
        c = sir_step(initial_cloud(m, 10), m, [0.0], rng)
        spec = fully_adapted_spec(m)
        assert isinstance(spec, ApfSpec)
        np.testing.assert_allclose(apf_step(c, m, [1.0], spec, rng).normalized, 0.1, atol=1e-12)

    def test_fa_requires_closed_forms(self, rng):
        m = tracking_model()
        with pytest.raises(ModelLacksClosedForms):
            fa_apf_step(initial_cloud(m, 5), m, [10.0, 0.0], rng)
        with pytest.raises(ModelLacksClosedForms):
            apf_step(initial_cloud(m, 5), m, [10.0, 0.0], optimal_first_stage_spec, rng)


class TestEstimates:
    def test_uniform_weights(self):
        c = frozen_cloud([[1.0], [2.0], [6.0]], [1 / 3] * 3)
        np.testing.assert_allclose(theta_sis(c), theta_sir(c))

    def test_one_hot(self):
        c = frozen_cloud([[1.0, 0.0], [2.0, 5.0]], [1e-300, 1.0])
        np.testing.assert_allclose(theta_sis(c), [2.0, 5.0])
        np.testing.assert_allclose(theta_isir_w(c, np.array([0.0, 1.0])), [2.0, 5.0])

    @pytest.mark.parametrize("w, expected", [([0.25] * 4, 1.0), ([1, 0, 0], 1 / 3), ([0.5, 0.25, 0.25], 8 / 9)])
    def test_normalized_ess(self, w, expected):
        assert normalized_ess(np.array(w)) == pytest.approx(expected)

    def test_sis_tracks_kalman(self):
        from irsmc.models import kalman_filter

        m = highdim_model(1)
        traj = simulate(m, 15, rng_stream(6))
        run = run_filter(m, traj.observations, "sir", 3000, rng_stream(7))
        kf, covs = kalman_filter(m, traj.observations)
        err = np.linalg.norm(run.estimates["sis"] - kf, axis=1).mean()
        spread = np.sqrt(np.trace(covs, axis1=1, axis2=2)).mean()
        assert err < 0.15 * spread


class TestRunFilter:
    @pytest.mark.parametrize("kind, names", [("sir", {"sis", "sir"}), ("independent", {"isir", "isir_w"}),
                                             ("apf", {"apf"}), ("fa_apf", {"fa"})])
    def test_outputs(self, kind, names, rng):
        m = ArchModel()
        ys = simulate(m, 5, rng).observations
        run = run_filter(m, ys, kind, 8, rng)
        assert set(run.estimates) == names
        assert all(v.shape == (6, 1) for v in run.estimates.values())
        assert ((run.ess_norm > 0) & (run.ess_norm <= 1 + 1e-12)).all()

    def test_budget_ledger(self, rng):
        m = ArchModel()
        ys = simulate(m, 9, rng).observations
        for mm in (3, 10):
            ind = run_filter(m, ys, "independent", mm, rng)
            sir = run_filter(m, ys, "sir", (mm * mm + mm) // 2, rng)
            assert ind.sampling_ops == sir.sampling_ops == 10 * (mm * mm + mm)

    def test_unknown_kind(self, rng):
        with pytest.raises(ValueError):
            run_filter(ArchModel(), [[0.0]], "smoother", 5, rng)

    def test_deterministic(self):
        m = tracking_model()
        ys = simulate(m, 5, rng_stream(1)).observations
        a = run_filter(m, ys, "independent", 6, rng_stream(2)).estimates["isir_w"]
        b = run_filter(m, ys, "independent", 6, rng_stream(2)).estimates["isir_w"]
        assert np.array_equal(a, b)
