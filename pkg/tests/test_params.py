import numpy as np
import pytest

from coalcoag import (
    CRITICAL,
    LARGE,
    make_params,
    params_from_dict,
    stationary_distribution,
    validate_params,
)
from coalcoag.errors import (
    InconsistentCountsError,
    NonPositiveRateError,
    NonPrimitiveMatrixError,
)
from coalcoag.params import ModelParams, is_primitive, params_to_dict

W_SYM = [[0.0, 1.0], [1.0, 0.0]]


def test_accepted_symmetric_params_derived_fields():
    p = make_params(2, W_SYM, [1, 1], K=10, N_K=10, L0=[5, 5], regime=CRITICAL)
    assert p.gamma_K == 1.0
    assert p.s_K == 1.0
    assert p.b == 1.0
    assert p.c == 1.0  # defaults to gamma_K
    np.testing.assert_allclose(p.beta, [0.5, 0.5])


def test_reducible_matrix_rejected():
    with pytest.raises(NonPrimitiveMatrixError):
        make_params(2, [[0, 1], [0, 0]], [1, 1], K=10, N_K=10, L0=[5, 5], regime=CRITICAL)


def test_inconsistent_counts_rejected():
    with pytest.raises(InconsistentCountsError):
        make_params(2, W_SYM, [1, 1], K=10, N_K=10, L0=[5, 4], regime=CRITICAL)


def test_nonpositive_rates_rejected():
    with pytest.raises(NonPositiveRateError):
        make_params(2, W_SYM, [1, 0], K=10, N_K=10, L0=[5, 5], regime=CRITICAL)
    with pytest.raises(NonPositiveRateError):
        make_params(2, W_SYM, [1, 1], K=0, N_K=10, L0=[5, 5], regime=CRITICAL)


def test_negative_migration_rejected():
    with pytest.raises(NonPositiveRateError):
        make_params(2, [[0, -1], [1, 0]], [1, 1], K=10, N_K=10, L0=[5, 5], regime=CRITICAL)


def test_large_regime_space_scale():
    p = make_params(2, W_SYM, [1, 1], K=10, N_K=40, L0=[20, 20], regime=LARGE)
    assert p.gamma_K == 4.0
    assert p.s_K == 4.0
    assert p.b == 1.0


def test_b_inequalities_random_params():
    rng = np.random.default_rng(0)
    for _ in range(50):
        d = int(rng.integers(1, 5))
        W = rng.random((d, d)) + 0.1
        K = float(rng.uniform(1, 50))
        N = int(rng.integers(d, 500))
        L0 = np.zeros(d, dtype=int)
        L0[: d - 1] = rng.integers(0, N // d + 1, size=d - 1) if d > 1 else []
        L0[-1] = N - L0.sum()
        regime = CRITICAL if rng.random() < 0.5 else LARGE
        p = make_params(d, W, rng.uniform(0.1, 3, d), K=K, N_K=N, L0=L0, regime=regime)
        assert p.b == pytest.approx(p.gamma_K / p.s_K)
        assert p.b <= p.gamma_K + 1e-12
        assert p.b <= max(p.gamma_K, 1.0) + 1e-12
        if regime == LARGE:
            assert p.b == 1.0


def test_diagonal_of_w_is_ignored():
    p = make_params(2, [[9.0, 1.0], [1.0, 9.0]], [1, 1], K=10, N_K=10, L0=[5, 5], regime=CRITICAL)
    assert p.W[0, 0] == 0.0 and p.W[1, 1] == 0.0
    np.testing.assert_allclose(p.w_out(), [1.0, 1.0])


def test_is_primitive_cases():
    assert is_primitive(np.array([[0.0]]))
    assert is_primitive(np.array(W_SYM))
    assert not is_primitive(np.array([[0.0, 1.0], [0.0, 0.0]]))
    # 3-cycle is irreducible
    assert is_primitive(np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float))


def test_stationary_symmetric():
    xi = stationary_distribution(np.array(W_SYM)).xi
    np.testing.assert_allclose(xi, [0.5, 0.5], atol=1e-12)


def test_stationary_hand_solved():
    # balance: xi_1 * 2 = xi_2 * 1 with xi_1 + xi_2 = 1
    xi = stationary_distribution(np.array([[0.0, 2.0], [1.0, 0.0]])).xi
    np.testing.assert_allclose(xi, [1 / 3, 2 / 3], atol=1e-12)


def test_stationary_reducible_rejected():
    with pytest.raises(NonPrimitiveMatrixError):
        stationary_distribution(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_stationary_balance_equations_random():
    rng = np.random.default_rng(7)
    for _ in range(25):
        d = int(rng.integers(2, 6))
        W = rng.random((d, d)) + 0.05
        np.fill_diagonal(W, 0.0)
        xi = stationary_distribution(W).xi
        assert xi.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(xi > 0)
        for i in range(d):
            inflow = sum(xi[j] * W[j, i] for j in range(d) if j != i)
            outflow = xi[i] * sum(W[i, j] for j in range(d) if j != i)
            assert inflow == pytest.approx(outflow, abs=1e-12)


def test_stationary_matches_eigen_oracle():
    rng = np.random.default_rng(21)
    W = rng.random((4, 4)) + 0.1
    np.fill_diagonal(W, 0.0)
    Q = W - np.diag(W.sum(axis=1))
    vals, vecs = np.linalg.eig(Q.T)
    k = int(np.argmin(np.abs(vals)))
    oracle = np.real(vecs[:, k])
    oracle = oracle / oracle.sum()
    np.testing.assert_allclose(stationary_distribution(W).xi, oracle, atol=1e-10)


def test_beta_defaults_to_sampling_fractions():
    p = make_params(2, W_SYM, [1, 1], K=5, N_K=10, L0=[7, 3], regime=CRITICAL)
    np.testing.assert_allclose(p.beta, [0.7, 0.3])


def test_json_round_trip():
    cfg = {
        "d": 2,
        "W": W_SYM,
        "alpha": [1.0, 2.0],
        "K": 20,
        "N_K": 30,
        "L0": [10, 20],
        "regime": "critical",
        "c": 1.5,
    }
    p = params_from_dict(cfg)
    back = params_to_dict(p)
    q = params_from_dict(back)
    assert params_to_dict(q) == back
    assert (q.d, q.K, q.N_K, q.regime, q.c) == (p.d, p.K, p.N_K, p.regime, p.c)
    np.testing.assert_array_equal(q.W, p.W)
    np.testing.assert_array_equal(q.L0, p.L0)


def test_validate_raw_instance():
    raw = ModelParams(
        d=1, W=np.array([[0.0]]), alpha=np.array([2.0]), K=4.0, N_K=8,
        L0=np.array([8]), regime=CRITICAL,
    )
    p = validate_params(raw)
    assert p.gamma_K == 2.0 and p.c == 2.0
