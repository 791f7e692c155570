import math

import numpy as np
import pytest

from gasr import FactorState, Hyperparameters, ObservedMatrix, RunConfig, fit, log_joint
from gasr.errors import NumericalError
from gasr.gibbs import (d_conditional_stats, gibbs_sweep, init_state, residual_sq_norm, run_chain,
                        sample_d, sample_gamma_coeffs, sample_uv, uv_conditional_stats)
from gasr.special import RngStream
from gasr.synthetic import SyntheticSpec, generate

from oracles import (conditional_instance, dense_log_joint, grid_tv, log_density_of,
                     log_marginal_d_2x2, naive_d_stats, naive_u_stats, transpose_state,
                     upper_support)


def random_instance(m, n, r, seed, density=0.7):
    gen = np.random.default_rng(seed)
    X = gen.normal(size=(m, n))
    mask = gen.random((m, n)) < density
    mask[0, 0] = True
    hp = Hyperparameters(gen.uniform(0.5, 3), gen.uniform(0.5, 3), gen.uniform(0.1, 2))
    state = init_state(m, n, r, hp, gen)
    state.d[:] = gen.exponential(size=r)
    # some rows on the unit sphere, some well inside the ball
    state.U *= gen.uniform(0.3, 1.2, size=(r, 1))
    state.U /= np.maximum(1.0, np.linalg.norm(state.U, axis=1, keepdims=True))
    return state, hp, X, mask, ObservedMatrix.from_dense(X, mask)


# --- log joint and residuals ----------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_log_joint_matches_dense_oracle(seed):
    state, hp, X, mask, data = random_instance(3, 3, 2, seed)
    assert log_joint(state, hp, data) == pytest.approx(dense_log_joint(state, hp, X, mask), rel=1e-12)
    dense = state.dense()
    assert residual_sq_norm(state, data) == pytest.approx(np.sum(((X - dense) * mask) ** 2), rel=1e-12)


def test_log_joint_zero_prediction_single_entry():
    data = ObservedMatrix(1, 1, [0], [0], [2.0])
    hp = Hyperparameters(1.5, 2.0, 0.5)
    state = FactorState([0.0], [[0.3]], [[0.4]], [1.3])
    prior = 1.5 * math.log(2.0) - math.lgamma(1.5) + 1.5 * math.log(1.3) - 2.0 * 1.3
    expected = -0.5 * math.log(2 * 0.5 * math.pi) - 4.0 / (2 * 0.5) + prior
    assert log_joint(state, hp, data) == pytest.approx(expected, rel=1e-14)


def test_residual_exact_fit_is_zero():
    state, hp, X, mask, _ = random_instance(4, 3, 2, 1)
    data = ObservedMatrix.from_dense(state.dense(), mask)
    assert residual_sq_norm(state, data) == pytest.approx(0.0, abs=1e-25)
    state.d[:] = 0
    assert residual_sq_norm(state, data) == pytest.approx(np.sum(data.vals ** 2), rel=1e-14)


@pytest.mark.parametrize("mutate", [
    lambda s: s.d.__setitem__(0, -1e-3),
    lambda s: s.U.__setitem__((0, 0), 1.5),
    lambda s: s.V.__setitem__((1, 0), -1.5),
    lambda s: s.gamma.__setitem__(1, 0.0),
])
def test_log_joint_outside_support(mutate):
    state, hp, _, _, data = random_instance(3, 3, 2, 0)
    mutate(state)
    assert log_joint(state, hp, data) == -math.inf


def test_dimension_mismatch():
    state, hp, _, _, data = random_instance(3, 3, 2, 0)
    other = ObservedMatrix(4, 3, [0], [0], [1.0])
    with pytest.raises(ValueError):
        log_joint(state, hp, other)


# --- conditional statistics -----------------------------------------------------

def test_d_stats_hand_example():
    data = ObservedMatrix(1, 1, [0], [0], [1.0])
    state = FactorState([0.4], [[1.0]], [[1.0]], [1.0])
    st = d_conditional_stats(state, Hyperparameters(1, 1, 1.0), data, 0)
    assert (st.A, st.B) == (1.0, 0.0)


def test_u_stats_hand_example():
    data = ObservedMatrix(1, 1, [0], [0], [1.0])
    state = FactorState([1.0], [[0.5]], [[1.0]], [1.0])
    st = uv_conditional_stats(state, Hyperparameters(1, 1, 1.0), data, 0, 0)
    assert (st.C, st.D, st.rho) == (1.0, -1.0, 1.0)


@pytest.mark.parametrize("m,n,r,seed", [(2, 2, 2, 0), (4, 3, 2, 1), (6, 6, 3, 2), (5, 6, 3, 3), (6, 4, 1, 4)])
def test_conditional_stats_match_loop_oracles(m, n, r, seed):
    state, hp, X, mask, data = random_instance(m, n, r, seed)
    for alpha in range(r):
        st = d_conditional_stats(state, hp, data, alpha)
        A, B = naive_d_stats(state, hp, X, mask, alpha)
        assert st.A == pytest.approx(A, rel=1e-12, abs=1e-12)
        assert st.B == pytest.approx(B, rel=1e-12, abs=1e-12)
        for beta in range(m):
            st = uv_conditional_stats(state, hp, data, alpha, beta, "U")
            C, D, rho = naive_u_stats(state, X, mask, alpha, beta)
            assert (st.C, st.D, st.rho) == pytest.approx((C, D, rho), rel=1e-12, abs=1e-12)
        flipped = transpose_state(state)
        for beta in range(n):
            st = uv_conditional_stats(state, hp, data, alpha, beta, "V")
            C, D, rho = naive_u_stats(flipped, X.T, mask.T, alpha, beta)
            assert (st.C, st.D, st.rho) == pytest.approx((C, D, rho), rel=1e-12, abs=1e-12)


def test_uv_stats_reject_broken_state():
    state, hp, _, _, data = random_instance(3, 3, 2, 0)
    state.U[0] = [1.0, 0.5, 0.0]
    with pytest.raises(NumericalError):
        uv_conditional_stats(state, hp, data, 0, 2)
    with pytest.raises(ValueError):
        uv_conditional_stats(state, hp, data, 0, 0, side="W")


# --- conditional samplers -------------------------------------------------------

def repeated(state, step, record, draws, seed=0):
    gen = RngStream(seed)
    out = np.empty(draws)
    for t in range(draws):
        probe = state.copy()
        step(probe, gen)
        out[t] = record(probe)
    return out


def test_d_conditional_matches_grid_density():
    state, hp, data = conditional_instance()
    draws = repeated(state, lambda s, g: sample_d(s, hp, data, g), lambda s: s.d[0], 20_000)
    assert np.all(draws >= 0)
    logdens = log_density_of(state, hp, data, lambda s, x: s.d.__setitem__(0, x))
    assert grid_tv(draws, logdens, 0.0, upper_support(logdens), bins=25) < 0.03


def test_u_conditional_matches_grid_density():
    state, hp, data = conditional_instance()
    rho = math.sqrt(1 - np.sum(state.U[0, 1:] ** 2))
    draws = repeated(state, lambda s, g: sample_uv(s, hp, data, g), lambda s: s.U[0, 0], 20_000)
    assert np.all(np.abs(draws) <= rho)
    logdens = log_density_of(state, hp, data, lambda s, x: s.U.__setitem__((0, 0), x))
    assert logdens(rho * (1 + 1e-9) + 1e-9) == -math.inf
    assert grid_tv(draws, logdens, -rho, rho, bins=25) < 0.03


def test_d_without_data_term_is_exponential():
    state, hp, data = conditional_instance()
    state.U[0] = 0.0
    draws = repeated(state, lambda s, g: sample_d(s, hp, data, g), lambda s: s.d[0], 20_000)
    g = state.gamma[0]
    assert abs(draws.mean() - 1 / g) < 4 / g / math.sqrt(len(draws))
    assert abs(draws.var() - 1 / g ** 2) < 4 * math.sqrt(8) / g ** 2 / math.sqrt(len(draws))


def test_element_without_data_term_is_uniform():
    state, hp, data = conditional_instance()
    state.d[0] = 0.0
    rho = math.sqrt(1 - np.sum(state.U[0, 1:] ** 2))
    draws = repeated(state, lambda s, g: sample_uv(s, hp, data, g), lambda s: s.U[0, 0], 20_000)
    n = len(draws)
    assert abs(draws.mean()) < 4 * rho / math.sqrt(3 * n)
    assert abs(draws.var() - rho ** 2 / 3) < 4 * rho ** 2 * math.sqrt(4 / 45) / math.sqrt(n)


def test_element_with_zero_radius_is_zero():
    state, hp, data = conditional_instance()
    state.U[0] = [0.0, 1.0, 0.0]
    sample_uv(state, hp, data, 0)
    assert state.U[0, 0] == 0.0


@pytest.mark.parametrize("a,b,d,mean", [(1.0, 1.0, 0.0, 2.0), (2.0, 3.0, 1.0, 0.75)])
def test_gamma_coefficients(a, b, d, mean):
    state = FactorState(np.full(2, d), np.zeros((2, 1)), np.zeros((2, 1)), np.ones(2))
    hp = Hyperparameters(a, b, 1.0)
    gen = RngStream(4)
    draws = np.empty((20_000, 2))
    for t in range(len(draws)):
        draws[t] = sample_gamma_coeffs(state, hp, gen).gamma
    sd = math.sqrt(a + 1) / (b + d)
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * sd / math.sqrt(len(draws)))
    assert abs(np.corrcoef(draws.T)[0, 1]) < 4 / math.sqrt(len(draws))


# --- sweeps ---------------------------------------------------------------------

def test_invariants_over_many_sweeps():
    state, hp, X, mask, data = random_instance(8, 6, 3, 7, density=0.6)
    gen = RngStream(1)
    for _ in range(1000):
        gibbs_sweep(state, hp, data, gen)
        assert state.is_valid()
        assert math.isfinite(log_joint(state, hp, data))


def test_sweep_is_deterministic():
    state, hp, _, _, data = random_instance(5, 4, 2, 3)
    a, b = state.copy(), state.copy()
    for _ in range(10):
        gibbs_sweep(a, hp, data, RngStream(9, 1))
        gibbs_sweep(b, hp, data, RngStream(9, 1))
    assert np.array_equal(a.U, b.U) and np.array_equal(a.d, b.d)


def test_operation_count_is_linear_in_r():
    # the cached residual makes each coordinate update O(row nnz), so a sweep is O(|Omega| r)
    gen = np.random.default_rng(0)
    rows, cols = np.divmod(gen.choice(100 * 100, size=1000, replace=False), 100)
    data = ObservedMatrix(100, 100, rows, cols, gen.normal(size=1000))
    hp = Hyperparameters(1, 1, 1)
    ops = {}
    for r in (10, 20):
        state = init_state(100, 100, r, hp, gen)
        _, ops[r] = gibbs_sweep(state, hp, data, gen, count_ops=True)
    assert ops[10] == 6 * 1000 * 10
    assert ops[20] / ops[10] == pytest.approx(2.0)


def test_chain_matches_numerical_marginal_of_d():
    X = 3 * np.array([[1.0, 0.5], [0.3, 0.8]])
    hp = Hyperparameters(3.0, 1.0, 0.1)
    data = ObservedMatrix.from_dense(X)
    state = FactorState([0.0], [[0.6, 0.0]], [[0.0, 0.6]], [1.0])
    trace = run_chain(state, hp, data, RngStream(0), 1_001_000)[1000:, 0]

    cut = 12.0
    grid = np.concatenate([np.linspace(0, cut, 241), np.geomspace(cut, 5000, 161)[1:]])
    p = np.exp(log_marginal_d_2x2(X, hp.a, hp.b, hp.sigma2, grid))
    seg = 0.5 * (p[1:] + p[:-1]) * np.diff(grid)
    seg /= seg.sum()
    edges = np.linspace(0, cut, 61)
    # oracle mass per bin: trapezoid segments of the uniform part map 4-to-1 onto bins
    ref = np.append(seg[:240].reshape(60, 4).sum(axis=1), seg[240:].sum())
    emp = np.append(np.histogram(trace, edges)[0], np.sum(trace > cut)) / len(trace)
    assert 0.5 * np.abs(emp - ref).sum() < 0.05


def test_orthonormalization_emerges_on_large_matrix():
    obs, _ = generate(SyntheticSpec(200, 200, 5, 0.0, 1.0, 0))
    _, report = fit(obs, RunConfig(r=20, sweeps=5, seed=0))
    row = report.trace[4]
    assert row["inner_u"] < 0.1 and row["inner_v"] < 0.1
    assert 0.85 <= row["norm_u"] <= 1.0 and 0.85 <= row["norm_v"] <= 1.0
