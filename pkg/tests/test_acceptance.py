"""Acceptance criteria, one test each.

Every test prints a single ``criterion N: PASS|FAIL ...`` line.  Criterion 9
needs the MovieLens 1M ``ratings.dat``; point ``GASR_MOVIELENS`` at it.
"""

import math
import os
import time

import numpy as np
import pytest
from scipy import special as sps

from gasr import RunConfig, fit, read_ratings, split
from gasr.evaluation import evaluate
from gasr.gibbs import sample_d, sample_uv
from gasr.mcem import update_a, update_b
from gasr.runner import ExperimentCell, run_missing_rate_experiment
from gasr.special import RngStream, sample_gamma_dist, sample_truncated_normal
from gasr.synthetic import SyntheticSpec, generate
from gasr.theory import run_trials

from oracles import conditional_instance, grid_tv, log_density_of, upper_support
from test_mcem import gamma_stats, grid_argmax, profile
from test_special import KS_CRIT, TN_CASES, _tn_cdf, ks_stat, moments


@pytest.fixture
def report(request, capsys):
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        with capsys.disabled():
            if reporter is not None:
                reporter.write_line("")
                reporter.write_line(line)
            else:
                print(line)
        assert ok, line
    return emit


def test_criterion_1_nuclear_norm_bound(report):
    t0 = time.perf_counter()
    s = run_trials(trials=1000, m=20, n=20, r=5, seed=0)
    elapsed = time.perf_counter() - t0
    ok = s.passed and s.strict >= 990 and elapsed < 10
    report(1, ok, f"bound {s.bound_holds}/{s.trials} (strict {s.strict}), "
                  f"equality {s.equality_holds}/{s.equality_cases} (gap {s.max_equality_gap:.1e}), "
                  f"{elapsed:.1f}s")


def _conditional_draws(step, record, draws=100_000):
    state, hp, data = conditional_instance()
    gen = RngStream(2024)
    out = np.empty(draws)
    for t in range(draws):
        probe = state.copy()
        step(probe, hp, data, gen)
        out[t] = record(probe)
    return state, hp, data, out


def test_criterion_2_conditional_oracles(report):
    t0 = time.perf_counter()
    state, hp, data, d_draws = _conditional_draws(sample_d, lambda s: s.d[0])
    logd = log_density_of(state, hp, data, lambda s, x: s.d.__setitem__(0, x))
    tv_d = grid_tv(d_draws, logd, 0.0, upper_support(logd))
    _, _, _, u_draws = _conditional_draws(sample_uv, lambda s: s.U[0, 0])
    rho = math.sqrt(1 - np.sum(state.U[0, 1:] ** 2))
    logu = log_density_of(state, hp, data, lambda s, x: s.U.__setitem__((0, 0), x))
    tv_u = grid_tv(u_draws, logu, -rho, rho)
    elapsed = time.perf_counter() - t0
    report(2, tv_d < 0.02 and tv_u < 0.02 and elapsed < 60,
           f"TV(d_1) {tv_d:.4f}, TV(u_11) {tv_u:.4f}, {elapsed:.1f}s")


def _rank_run(m, q, r, sweeps, last, seed):
    obs, _ = generate(SyntheticSpec(m, m, q, 0.0, 1.0, seed))
    return fit(obs, RunConfig(r=r, sweeps=sweeps, averaging=f"last_k({last})", seed=seed))


def test_criterion_3_scaled_rank_recovery(report):
    t0 = time.perf_counter()
    ranks = [_rank_run(50, 5, 20, 500, 100, seed).report.recovered_rank for seed in range(3)]
    elapsed = time.perf_counter() - t0
    report(3, sum(r == 5 for r in ranks) >= 2 and elapsed < 120, f"ranks {ranks}, {elapsed:.1f}s")


def test_criterion_4_full_scale_rank_recovery(report):
    t0 = time.perf_counter()
    rank = _rank_run(200, 20, 100, 1000, 200, 0).report.recovered_rank
    elapsed = time.perf_counter() - t0
    report(4, rank == 20 and elapsed < 3600, f"rank {rank}, {elapsed:.1f}s")


def test_criterion_5_missing_rates(report):
    t0 = time.perf_counter()
    cells = [ExperimentCell(500, 500, 30, 5, 0.9), ExperimentCell(500, 500, 30, 5, 0.0)]
    high, full = run_missing_rate_experiment(cells, seeds=(0, 1, 2), sweeps=100)
    elapsed = time.perf_counter() - t0
    ok = high["mean_rmse"] <= 0.27 and full["mean_rmse"] <= 0.09 and elapsed < 900
    report(5, ok, f"RMSE vs Z: 90% {high['mean_rmse']:.4f}±{high['std_rmse']:.4f}, "
                  f"0% {full['mean_rmse']:.4f}±{full['std_rmse']:.4f}; "
                  f"relative: 90% {high['mean_relative']:.4f}, 0% {full['mean_relative']:.4f}; "
                  f"{elapsed:.1f}s")


def test_criterion_6_orthonormalization(report):
    rows = []
    for seed in range(3):
        obs, _ = generate(SyntheticSpec(50, 50, 5, 0.0, 1.0, seed))
        rows.append(fit(obs, RunConfig(r=20, sweeps=5, seed=seed)).report.trace[4])
    inner = max(row["inner_u"] for row in rows)
    norms = [row["norm_u"] for row in rows]
    ok = inner < 0.1 and all(0.85 <= v <= 1.0 for v in norms)
    report(6, ok, f"sweep 5 mean |<u_i,u_j>| {[round(r['inner_u'], 4) for r in rows]}, "
                  f"mean ||u_k|| {[round(v, 4) for v in norms]}")


def test_criterion_7_mcem_recovery(report):
    t0 = time.perf_counter()
    stats = gamma_stats(2.5, 1.7, r=1000, window=1000, seed=7)
    a = update_a(1.0, stats)
    b = update_b(a, stats)
    gap = abs(profile(a, stats) - profile(grid_argmax(stats), stats))
    elapsed = time.perf_counter() - t0
    ok = abs(a / 2.5 - 1) < 0.05 and abs(b / 1.7 - 1) < 0.05 and gap < 1e-4 and elapsed < 30
    report(7, ok, f"a {a:.4f}, b {b:.4f}, objective gap to grid oracle {gap:.1e}, {elapsed:.1f}s")


def test_criterion_8_sampler_statistics(report):
    n = 100_000
    failures = []
    for shape, rate in [(3.0, 4.0), (2.0, 1.0), (1.7, 2.3), (0.4, 1.5)]:
        x = sample_gamma_dist(shape, rate, RngStream(8), size=n)
        mean, var, m4 = moments(lambda t: t ** (shape - 1) * math.exp(-rate * t), 0, math.inf)
        ks = ks_stat(x, lambda t: sps.gammainc(shape, rate * t))
        if (abs(x.mean() - mean) > 4 * math.sqrt(var / n)
                or abs(x.var() - var) > 4 * math.sqrt((m4 - var ** 2) / n) or ks > KS_CRIT):
            failures.append(f"gamma({shape},{rate})")
    for mu, var0, lo, hi, _ in TN_CASES:
        x = sample_truncated_normal(mu, var0, lo, hi, RngStream(8), size=n)
        s = math.sqrt(var0)
        c = np.clip(mu, lo, hi)
        top = hi if math.isfinite(hi) else max(lo, mu) + 40 * s
        mean, var, m4 = moments(lambda t: math.exp(-0.5 * ((t - mu) / s) ** 2 + 0.5 * ((c - mu) / s) ** 2),
                                lo, top)
        ks = ks_stat(x, _tn_cdf(mu, var0, lo, hi))
        if (np.any((x < lo) | (x > hi)) or abs(x.mean() - mean) > 4 * math.sqrt(var / n)
                or abs(x.var() - var) > 4 * math.sqrt((m4 - var ** 2) / n) or ks > KS_CRIT):
            failures.append(f"truncnorm({mu},{var0},[{lo},{hi}])")
    report(8, not failures, f"4 gamma and {len(TN_CASES)} truncated-normal configurations; "
                            f"failures: {failures or 'none'}")


@pytest.mark.skipif(not os.environ.get("GASR_MOVIELENS"), reason="set GASR_MOVIELENS to ratings.dat")
def test_criterion_9_movielens(report):
    data = read_ratings(os.environ["GASR_MOVIELENS"], "movielens")
    train, test = split(data, (0.8, 0.2), 0)
    result = fit(train, RunConfig(r=30, sweeps=100, seed=0, diagnostics=False), targets=test)
    metrics = evaluate(result.accumulator.mean(), test, (1.0, 5.0))
    rank = result.report.recovered_rank
    ok = metrics.rmse <= 0.88 and metrics.nmae <= 0.175 and abs(rank - 10) <= 3
    report(9, ok, f"RMSE {metrics.rmse:.4f}, NMAE {metrics.nmae:.4f}, rank {rank}")
