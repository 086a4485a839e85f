"""Self-checks run by ``irsmc verify``.

Each check returns ``(name, passed, detail)``.  The checks call the library
through module attributes (``sampling.multinomial_resample`` and so on), so
a patched primitive is exercised by every check that depends on it.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from . import filters, sampling, static
from .bench import ExperimentConfig, budget_matched_n, run_bench
from .models import ArchModel, highdim_model, simulate

SEED = 20240611


def check_normalization():
    rng = sampling.rng_stream(SEED, 1)
    worst = 0.0
    for _ in range(200):
        lw = rng.normal(scale=rng.uniform(0.1, 500.0), size=rng.integers(1, 50))
        w = sampling.normalize_log_weights(lw)
        with np.errstate(divide="ignore"):  # underflowed weights map to -inf
            again = sampling.normalize_log_weights(np.log(w))
        worst = max(worst, abs(w.sum() - 1.0), np.abs(again - w).max())
        if (w < 0).any():
            return "weight normalization", False, "negative weight"
    return "weight normalization", worst <= 1e-12, f"max deviation {worst:.2e}"


def check_ess_bounds():
    rng = sampling.rng_stream(SEED, 2)
    for n in (1, 2, 7, 50):
        for _ in range(100):
            w = rng.dirichlet(np.full(n, rng.uniform(0.05, 5.0)))
            ess = sampling.effective_sample_size(w)
            if not (1.0 - 1e-9 <= ess <= n + 1e-9):
                return "ESS bounds", False, f"ESS {ess} outside [1, {n}]"
        one_hot = np.eye(n)[0]
        if abs(sampling.effective_sample_size(one_hot) - 1.0) > 1e-12:
            return "ESS bounds", False, "one-hot ESS != 1"
        if abs(sampling.effective_sample_size(np.full(n, 1.0 / n)) - n) > 1e-9:
            return "ESS bounds", False, "uniform ESS != N"
    return "ESS bounds", True, "1 <= ESS <= N, equality at one-hot / uniform"


def check_resampling_unbiased(reps: int = 10_000):
    w = np.array([0.05, 0.1, 0.15, 0.3, 0.4])
    m = 20
    rng = sampling.rng_stream(SEED, 3)
    counts = np.zeros(len(w))
    for _ in range(reps):
        idx = np.asarray(sampling.multinomial_resample(w, m, rng))
        if idx.shape != (m,) or idx.min() < 0 or idx.max() >= len(w):
            return "resampling unbiasedness", False, "invalid index vector"
        counts += np.bincount(idx, minlength=len(w))
    mean = counts / reps
    bound = 4.0 * np.sqrt(m * w * (1 - w) / reps)
    dev = np.abs(mean - m * w)
    return "resampling unbiasedness", bool((dev <= bound).all()), f"max |dev|/bound {np.max(dev / bound):.2f}"


def check_qtilde_oracle(draws: int = 100_000):
    p, q = np.array([1.0, 3.0]), np.array([0.5, 0.5])
    t = static.discrete_target(p, q)
    for n in (2, 3, 4):
        rows = static.sample_independent_sir(t, n, draws, sampling.rng_stream(SEED, 4, n))
        obs = np.bincount(rows.chosen_states, minlength=2)
        exp = draws * static.qtilde_exact_discrete(p, q, n)
        pval = stats.chisquare(obs, exp).pvalue
        if pval < 0.01:
            return "compound density oracle", False, f"N={n} p={pval:.3g}"
    return "compound density oracle", True, "chi-square p >= 0.01 at N=2,3,4"


def check_fa_apf_uniform():
    model = ArchModel()
    traj = simulate(model, 20, sampling.rng_stream(SEED, 5))
    rng = sampling.rng_stream(SEED, 6)
    cloud = filters.initial_cloud(model, 50)
    worst = 0.0
    for y in traj.observations:
        cloud = filters.fa_apf_step(cloud, model, y, rng)
        worst = max(worst, np.abs(cloud.normalized - 1.0 / len(cloud)).max())
    return "FA-APF weight uniformity", worst <= 1e-12, f"max |w - 1/N| {worst:.2e}"


def check_apf_reduces_to_sir():
    model = highdim_model(1)
    traj = simulate(model, 5, sampling.rng_stream(SEED, 7))
    cloud = filters.initial_cloud(model, 64)
    rng = sampling.rng_stream(SEED, 8)
    for y in traj.observations[:3]:
        cloud = filters.sir_step(cloud, model, y, rng, policy=filters.EssBelow(0.0))
    y = traj.observations[3]
    apf = filters.apf_step(cloud, model, y, filters.sir_apf_spec, sampling.rng_stream(SEED, 9))
    # same stream: resample by w_{k-1} first, then a SIR move without resampling
    rng = sampling.rng_stream(SEED, 9)
    idx = sampling.multinomial_resample(cloud.normalized, len(cloud), rng)
    u = np.full(len(cloud), 1.0 / len(cloud))
    resampled = filters.ParticleCloud(cloud.states[idx], cloud.prev_states[idx], np.log(u), u, cloud.step, 0)
    sir = filters.sir_step(resampled, model, y, rng, policy=filters.EssBelow(0.0))
    ok = np.array_equal(apf.states, sir.states) and np.allclose(apf.normalized, sir.normalized, atol=1e-12)
    return "APF-to-SIR reduction", bool(ok), "identical states and weights" if ok else "mismatch"


def check_budget_ledger():
    model = ArchModel()
    T, m = 6, 7
    traj = simulate(model, T - 1, sampling.rng_stream(SEED, 10))
    n = budget_matched_n(m)
    ind = filters.run_filter(model, traj.observations, "independent", m, sampling.rng_stream(SEED, 11))
    sir = filters.run_filter(model, traj.observations, "sir", n, sampling.rng_stream(SEED, 12))
    ok = ind.sampling_ops == T * (m * m + m) and sir.sampling_ops == T * 2 * n == ind.sampling_ops
    t = static.discrete_target([1.0, 3.0], [0.5, 0.5])
    rng = sampling.rng_stream(SEED, 13)
    rows = static.sample_independent_sir(t, 5, 4, rng)
    ok &= static.estimate_is(t, 5, rng).sampling_ops == 5
    ok &= static.estimate_sir(t, 5, 4, rng).sampling_ops == 9
    ok &= static.estimate_isir(rows, t.f).sampling_ops == 24
    ok &= static.estimate_isir_w(rows, t).sampling_ops == 24
    return "budget ledger", bool(ok), f"{T} steps: {ind.sampling_ops} ops each"


def check_determinism():
    a = sampling.multinomial_resample(np.full(10, 0.1), 100, sampling.rng_stream(SEED, 14))
    b = sampling.multinomial_resample(np.full(10, 0.1), 100, sampling.rng_stream(SEED, 14))
    cfg = ExperimentConfig("arch", sizes=(5,), runs=3, horizon=5, seed=SEED)
    ok = np.array_equal(a, b) and run_bench(cfg).to_csv() == run_bench(cfg).to_csv()
    return "determinism", bool(ok), "bit-identical indices and CSV" if ok else "outputs differ"


CHECKS = (
    check_normalization,
    check_ess_bounds,
    check_resampling_unbiased,
    check_qtilde_oracle,
    check_fa_apf_uniform,
    check_apf_reduces_to_sir,
    check_budget_ledger,
    check_determinism,
)


def run_checks(echo=print) -> bool:
    """Run every check, print one line each, return overall success."""
    ok = True
    for check in CHECKS:
        try:
            name, passed, detail = check()
        except Exception as exc:  # a crashing check is a failing check
            name, passed, detail = check.__name__, False, f"{type(exc).__name__}: {exc}"
        ok &= passed
        echo(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return ok
