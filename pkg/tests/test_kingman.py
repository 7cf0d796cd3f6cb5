import numpy as np
import pytest
from scipy import stats

from coalcoag import (
    CRITICAL,
    coupled_simulate,
    kingman_moment_bound,
    kingman_simulate,
    make_params,
    rate_bounds_check,
    replicate_rng,
    simulate_emigration_bound,
)
from coalcoag.errors import TooFewBlocksError
from coalcoag.kingman import write_coupled_csv, write_emigrant_csv
from coalcoag.params import ModelParams


def test_rate_bounds_hand_values():
    assert rate_bounds_check([3, 3], [1, 1]) == pytest.approx((7.5, 12.0, 30.0))


def test_rate_bounds_d1_collapse():
    for n in (2, 5, 9):
        lo, mid, hi = rate_bounds_check([n], [1.7])
        assert lo == pytest.approx(mid) == pytest.approx(hi) == pytest.approx(1.7 * n * (n - 1))


def test_rate_bounds_too_few_blocks():
    with pytest.raises(TooFewBlocksError):
        rate_bounds_check([1, 1], [1, 1])


def test_rate_bounds_ordering_random():
    rng = np.random.default_rng(3)
    for _ in range(200):
        d = int(rng.integers(1, 6))
        ell = rng.integers(0, 20, size=d)
        if ell.sum() <= d:
            ell[0] += d + 1
        alpha = rng.uniform(0.1, 4.0, size=d)
        lo, mid, hi = rate_bounds_check(ell, alpha)
        tol = 1e-12 * max(1.0, hi)
        assert lo <= mid + tol
        assert mid <= hi + tol


def test_moment_bound_values():
    assert kingman_moment_bound(100, 2.0, 1.0, 1) == pytest.approx(1 / 0.51)
    assert kingman_moment_bound(100, 2.0, 0.0, 1) == pytest.approx(100.0)
    assert kingman_moment_bound(100, 2.0, 1.0, 2) == pytest.approx(0.35**-2)


def test_kingman_simulate_degenerate():
    path = kingman_simulate(5, 0.0, 10.0, np.random.default_rng(0))
    assert path.value_at(10.0) == 5
    path1 = kingman_simulate(1, 2.0, 10.0, np.random.default_rng(0))
    assert path1.value_at(3.0) == 1


def test_kingman_two_blocks_single_exponential_holding():
    rng = np.random.default_rng(5)
    times = []
    for _ in range(1500):
        p = kingman_simulate(2, 3.0, 50.0, rng)
        assert p.counts[-1] == 1
        times.append(p.times[-1])
    pval = stats.kstest(times, stats.expon(scale=1 / 3.0).cdf).pvalue
    assert pval > 0.01


def test_kingman_mc_mean_respects_bound():
    vals = np.array([
        kingman_simulate(300, 2.0, 1.0, replicate_rng(77, r)).value_at(1.0)
        for r in range(1000)
    ], dtype=float)
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert vals.mean() <= kingman_moment_bound(300, 2.0, 1.0, 1) + 3 * se


def sym2(K=20, N=60):
    return make_params(
        2, [[0, 1], [1, 0]], [1.0, 1.0], K=K, N_K=N, L0=[N // 2, N - N // 2],
        regime=CRITICAL,
    )


def test_coupled_invariant_every_record():
    p = sym2()
    for rep in range(50):
        cp = coupled_simulate(p, 1.0, replicate_rng(13, rep))
        assert cp.invariant_ok()
        tot = cp.l_total()
        assert cp.lhat[0] == tot[0] == cp.ltilde[0] == p.N_K
        # all three block counts are nonincreasing
        assert np.all(np.diff(cp.lhat) <= 0)
        assert np.all(np.diff(cp.ltilde) <= 0)


def test_coupled_d1_pathwise_equality():
    p1 = make_params(1, [[0.0]], [2.0], K=10, N_K=40, L0=[40], regime=CRITICAL)
    cp = coupled_simulate(p1, 3.0, np.random.default_rng(4))
    np.testing.assert_array_equal(cp.lhat, cp.l_total())
    np.testing.assert_array_equal(cp.lhat, cp.ltilde)


def test_coupled_zero_alpha_constant():
    p = ModelParams(
        d=2, W=np.array([[0.0, 1.0], [1.0, 0.0]]), alpha=np.zeros(2), K=5.0,
        N_K=10, L0=np.array([5, 5]), regime=CRITICAL, c=2.0,
        beta=np.array([0.5, 0.5]), gamma_K=2.0, s_K=1.0, b=2.0,
    )
    cp = coupled_simulate(p, 1.0, np.random.default_rng(1))
    assert np.all(cp.lhat == 10) and np.all(cp.ltilde == 10)
    np.testing.assert_array_equal(cp.l_total(), np.full(len(cp.times), 10))


def test_coupled_lhat_marginal_matches_kingman():
    p = sym2(K=20, N=60)
    finals = []
    for rep in range(800):
        cp = coupled_simulate(p, 1.0, replicate_rng(21, rep))
        finals.append(int(cp.lhat[-1]))
    orng = np.random.default_rng(22)
    oracle = [kingman_simulate(60, 1.0, 1.0 / 20, orng).value_at(1.0 / 20) for _ in range(800)]
    assert stats.ks_2samp(finals, oracle, method="asymp").pvalue > 0.01


def test_coupled_ltilde_first_jump_distribution():
    p = sym2(K=20, N=60)
    first = []
    for rep in range(800):
        cp = coupled_simulate(p, 2.0, replicate_rng(31, rep))
        drops = np.flatnonzero(np.diff(cp.ltilde) < 0)
        if len(drops):
            first.append(cp.times[drops[0] + 1] / p.K)
    rate = p.alpha_min_d * p.N_K * (p.N_K - 1) / 2.0
    pval = stats.kstest(first, stats.expon(scale=1 / rate).cdf).pvalue
    assert pval > 0.01


def test_emigrant_bound_zero_migration():
    path = simulate_emigration_bound(50, 0.0, 1.0, 10.0, 2.0, np.random.default_rng(0))
    assert path.final() == 0
    assert np.all(path.values == 0)


def test_emigrant_bound_mean_identity():
    # exact mean w * L0 * t in rescaled time, coalescence-independent
    vals = np.array([
        simulate_emigration_bound(200, 1.0, 1.0, 50.0, 0.1, replicate_rng(8, r)).final()
        for r in range(3000)
    ], dtype=float)
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() - 20.0) <= 3 * se


def test_emigrant_bound_mean_without_coalescence():
    vals = np.array([
        simulate_emigration_bound(80, 0.5, 0.0, 20.0, 0.5, replicate_rng(18, r)).final()
        for r in range(3000)
    ], dtype=float)
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() - 0.5 * 80 * 0.5) <= 3 * se


def test_emigrant_path_nondecreasing_and_monotone_blocks():
    path = simulate_emigration_bound(100, 2.0, 1.5, 10.0, 1.0, np.random.default_rng(6))
    assert np.all(np.diff(path.values) > 0)
    assert path.values[0] == 0
    assert len(path.blocks) <= 100
    assert sum(path.blocks) == 100  # leaf conservation in the driving coalescent


def test_csv_writers(tmp_path):
    p = sym2(K=10, N=20)
    cp = coupled_simulate(p, 1.0, np.random.default_rng(2))
    f1 = tmp_path / "coupled.csv"
    write_coupled_csv(cp, f1)
    lines = f1.read_text().strip().splitlines()
    assert lines[0] == "t,lhat,l_total,ltilde"
    assert len(lines) == len(cp.times) + 1

    path = simulate_emigration_bound(30, 1.0, 1.0, 10.0, 1.0, np.random.default_rng(3))
    f2 = tmp_path / "ehat.csv"
    write_emigrant_csv(path, f2)
    elines = f2.read_text().strip().splitlines()
    assert elines[0] == "t,ehat"
    assert len(elines) == len(path.times) + 1
