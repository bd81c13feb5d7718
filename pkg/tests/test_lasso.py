import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from panelpost.lasso import (SolverOptions, cluster_folds, cv_select_mu, default_mu_grid, fit_weighted_lasso,
                             kkt_violation, main_penalty_weights, mu_max, objective, soft_threshold, solve_lasso)
from panelpost.panel_core import build_design

from conftest import random_panel
from oracles import cv_select_sklearn, lasso_bruteforce


@pytest.mark.parametrize("z,t,expected", [(3.0, 1.0, 2.0), (-0.5, 1.0, 0.0), (-3.0, 0.5, -2.5)])
def test_soft_threshold_examples(z, t, expected):
    assert soft_threshold(z, t) == expected


def test_soft_threshold_rejects_negative_threshold():
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


@given(z=st.floats(-1e6, 1e6), t=st.floats(0, 1e6))
def test_soft_threshold_is_scalar_prox(z, t):
    s = soft_threshold(z, t)
    assert abs(s) <= abs(z)
    assert s == 0 or np.sign(s) == np.sign(z)
    # minimizer of 0.5 (b - z)^2 + t|b|: compare with neighbours
    f = lambda b: 0.5 * (b - z) ** 2 + t * abs(b)
    for d in (1e-3, -1e-3):
        assert f(s) <= f(s + d) + 1e-9 * (1 + abs(z))


def _dense_problem(n, p, seed):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, p))
    y = Z @ (rng.standard_normal(p) * (rng.random(p) < 0.5)) + rng.standard_normal(n)
    w = rng.uniform(0.3, 1.5, p)
    return Z, y, w


def test_mu_zero_solves_normal_equations():
    Z, y, w = _dense_problem(30, 5, 0)
    fit = solve_lasso(sp.csc_matrix(Z), y, w, 0.0)
    ols = np.linalg.lstsq(Z, y, rcond=None)[0]
    np.testing.assert_allclose(fit.eta_hat, ols, atol=1e-8)


def test_orthonormal_design_closed_form():
    rng = np.random.default_rng(1)
    Q, _ = np.linalg.qr(rng.standard_normal((20, 4)))
    y = rng.standard_normal(20) * 3
    mu = 0.8
    fit = solve_lasso(sp.csc_matrix(Q), y, np.ones(4), mu)
    expected = [soft_threshold(v, mu) for v in Q.T @ y]
    np.testing.assert_allclose(fit.eta_hat, expected, atol=1e-12)


def test_three_column_matches_bruteforce():
    Z, y, w = _dense_problem(25, 3, 2)
    w = np.ones(3)
    fit = solve_lasso(sp.csc_matrix(Z), y, w, 0.7)
    b, obj = lasso_bruteforce(Z, y, w, 0.7)
    np.testing.assert_allclose(fit.eta_hat, b, atol=1e-6)
    assert fit.objective_value <= obj + 1e-9 * (1 + abs(obj))


@pytest.mark.parametrize("seed", range(8))
def test_oracle_equivalence_small_p(seed):
    rng = np.random.default_rng(100 + seed)
    p = int(rng.integers(2, 11))
    Z, y, w = _dense_problem(int(rng.integers(p + 5, 40)), p, seed)
    mu = float(rng.uniform(0.05, 0.7)) * mu_max(Z, y, w)
    fit = solve_lasso(sp.csc_matrix(Z), y, w, mu)
    b, _ = lasso_bruteforce(Z, y, w, mu)
    np.testing.assert_allclose(fit.eta_hat, b, atol=1e-5)


def test_fit_invariants_on_panel(small_system):
    sys = small_system
    w = main_penalty_weights(sys)
    mu = 0.05 * mu_max(sys.Z, sys.Y, w)
    fit = fit_weighted_lasso(sys, w, mu)
    assert fit.converged
    r = sys.Y - sys.Z @ fit.eta_hat
    np.testing.assert_allclose(fit.residuals, r, rtol=1e-10, atol=1e-10 * np.abs(sys.Y).max())
    np.testing.assert_array_equal(fit.active_set, np.flatnonzero(fit.eta_hat))
    scale = 1 + np.abs(sys.Z.T @ sys.Y).max()
    assert kkt_violation(sys.Z, sys.Y, fit.eta_hat, w, mu) <= 1e-6 * scale
    np.testing.assert_allclose(fit.objective_value, objective(sys.Z, sys.Y, fit.eta_hat, w, mu), rtol=1e-10)


def test_objective_monotone_across_sweeps():
    sys = build_design(random_panel(N=6, M=5, T=3, seed=4))
    w = main_penalty_weights(sys)
    for frac in (0.3, 0.01, 1e-4):
        fit = fit_weighted_lasso(sys, w, frac * mu_max(sys.Z, sys.Y, w))
        tr = fit.objective_trace
        assert tr.size == fit.iterations
        assert np.all(np.diff(tr) <= 1e-12 * abs(tr[0]))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(0.1, 20.0), frac=st.floats(0.01, 0.9))
def test_homogeneity(seed, c, frac):
    Z, y, w = _dense_problem(20, 6, seed)
    Zs = sp.csc_matrix(Z)
    mu = frac * mu_max(Z, y, w)
    tight = SolverOptions(tol=1e-12, kkt_tol=1e-12)
    a = solve_lasso(Zs, y, w, mu, opts=tight).eta_hat
    b = solve_lasso(Zs, c * y, w, c * mu, opts=tight).eta_hat
    np.testing.assert_allclose(b, c * a, atol=1e-8 * c * (1 + np.abs(a).max()))


def test_zero_solution_above_mu_max(small_system):
    sys = small_system
    w = main_penalty_weights(sys)
    top = mu_max(sys.Z, sys.Y, w)
    assert not fit_weighted_lasso(sys, w, top).eta_hat.any()
    assert not fit_weighted_lasso(sys, w, 2 * top).eta_hat.any()
    assert fit_weighted_lasso(sys, w, 0.99 * top).eta_hat.any()


def test_negative_mu_rejected(small_system):
    with pytest.raises(ValueError):
        fit_weighted_lasso(small_system, None, -1.0)


def test_weights_must_match(small_system):
    with pytest.raises(ValueError):
        fit_weighted_lasso(small_system, np.ones(3), 1.0)


def test_nonconvergence_flagged_with_warning():
    sys = build_design(random_panel(N=6, M=5, T=3, seed=4))
    w = main_penalty_weights(sys)
    with pytest.warns(RuntimeWarning, match="did not converge"):
        fit = fit_weighted_lasso(sys, w, 1e-3, SolverOptions(max_sweeps=3))
    assert not fit.converged and fit.iterations == 3


def test_default_grid():
    Z, y, w = _dense_problem(20, 4, 3)
    g = default_mu_grid(Z, y, w)
    assert g.size == 50
    np.testing.assert_allclose([g[0], g[-1]], [mu_max(Z, y, w), 1e-4 * mu_max(Z, y, w)])
    assert np.all(np.diff(g) < 0)


def test_cluster_folds_partition():
    f = cluster_folds(30, 4, seed=9)
    assert sorted(np.bincount(f)) == [7, 7, 8, 8]
    assert np.array_equal(f, cluster_folds(30, 4, seed=9))
    with pytest.raises(ValueError):
        cluster_folds(3, 4, seed=0)
    with pytest.raises(ValueError):
        cluster_folds(10, 1, seed=0)


def test_cv_single_point_grid(small_system):
    assert cv_select_mu(small_system, grid=[3.5]).mu == 3.5


def test_cv_rejects_unsorted_grid(small_system):
    with pytest.raises(ValueError):
        cv_select_mu(small_system, grid=[1.0, 2.0])


def test_cv_too_many_folds(small_system):
    with pytest.raises(ValueError):
        cv_select_mu(small_system, folds=small_system.n_clusters + 1)


def test_cv_folds_never_split_clusters(small_system):
    res = cv_select_mu(small_system, grid=[1.0, 0.5], folds=3, seed=2)
    fold_of_row = res.fold_of_cluster[small_system.cluster_of_row]
    for c in range(small_system.n_clusters):
        assert np.unique(fold_of_row[small_system.cluster_of_row == c]).size == 1


def test_cv_noiseless_orthonormal_prefers_smallest_mu():
    # one cluster per row block; Y in the span of orthonormal columns
    from panelpost.lasso import cv_path_errors
    rng = np.random.default_rng(5)
    Q, _ = np.linalg.qr(rng.standard_normal((40, 3)))
    y = Q @ np.array([3.0, -2.0, 1.0])
    w = np.ones(3)
    grid = np.geomspace(mu_max(Q, y, w), 1e-3, 12)
    fold_of_row = np.arange(40) % 4
    err = cv_path_errors(Q, y, w, grid, fold_of_row, 4)
    assert np.all(np.diff(err) <= 1e-12)
    assert np.argmin(err) == grid.size - 1


def test_cv_matches_independent_fold_loop():
    sys = build_design(random_panel(N=6, M=5, T=3, seed=21, noise=2.0))
    w = main_penalty_weights(sys)
    grid = default_mu_grid(sys.Z, sys.Y, w, n=12, ratio=1e-2)
    res = cv_select_mu(sys, w, grid=grid, folds=5, seed=13, opts=SolverOptions(tol=1e-10, kkt_tol=1e-10))
    folds = cluster_folds(sys.n_clusters, 5, 13)
    mu, err = cv_select_sklearn(sys.Z, sys.Y, w, grid, folds[sys.cluster_of_row], 5)
    np.testing.assert_allclose(res.cv_error, err, rtol=1e-6)
    assert res.mu == mu
