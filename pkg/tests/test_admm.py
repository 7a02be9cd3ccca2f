import io
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spnclust import AdmmConfig, constrained_lasso, objective_value
from spnclust.admm import (
    objective_from_gram,
    project_nonneg,
    project_zero_diag,
    soft_threshold,
)
from spnclust.errors import NotConverged, NumericalFailure

from conftest import unit_columns
from oracles import lasso_objective, pgd_constrained_lasso


# --- proximal pieces ----------------------------------------------------------

def test_soft_threshold_scalar_cases():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-3.0, 1.0) == -2.0
    assert soft_threshold(0.5, 1.0) == 0.0
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


@settings(max_examples=80, deadline=None)
@given(st.floats(-10, 10), st.floats(0, 5))
def test_soft_threshold_is_prox_of_l1(a, nu):
    # prox minimizes 0.5 (x-a)^2 + nu |x|; check against a dense grid
    x = soft_threshold(a, nu)
    grid = np.linspace(-12, 12, 24001)
    f = 0.5 * (grid - a) ** 2 + nu * np.abs(grid)
    assert 0.5 * (x - a) ** 2 + nu * abs(x) <= f.min() + 1e-9
    assert abs(x) <= abs(a)


def test_zero_diag_projection():
    assert not np.any(project_zero_diag(np.eye(4)))
    M = np.array([[0.0, 2.0], [1.0, 0.0]])
    np.testing.assert_array_equal(project_zero_diag(M), M)
    P = project_zero_diag(np.array([[5.0, 2.0], [3.0, 1.0]]))
    assert P[0, 0] == 0 and P[0, 1] == 2


def test_nonneg_projection():
    assert not np.any(project_nonneg(-np.ones((3, 3))))
    M = np.abs(np.arange(9.0).reshape(3, 3))
    np.testing.assert_array_equal(project_nonneg(M), M)
    np.testing.assert_array_equal(project_nonneg(np.array([[-1.0, 2], [3, -4]])), [[0, 2], [3, 0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_projections_commute_and_idempotent(seed):
    M = np.random.default_rng(seed).normal(size=(5, 5))
    a = project_zero_diag(project_nonneg(M))
    b = project_nonneg(project_zero_diag(M))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(project_zero_diag(project_nonneg(a)), a)


# --- objective ----------------------------------------------------------------

def test_objective_at_zero_is_half_n(rng):
    X = unit_columns(rng, 30, 7)
    assert objective_value(X, np.zeros((7, 7)), 0.3) == pytest.approx(3.5, abs=1e-12)


def test_objective_exact_reconstruction_gamma_zero(rng):
    X = unit_columns(rng, 30, 4)
    X = np.column_stack([X, X[:, 0]])
    Z = np.zeros((5, 5))
    Z[4, 0] = 1.0
    Z[0, 4] = 1.0
    # columns 0 and 4 reconstruct each other; others contribute 0.5 each
    assert objective_value(X, Z, 0.0) == pytest.approx(1.5, abs=1e-12)


def test_gram_objective_matches_direct(rng):
    X = unit_columns(rng, 40, 6)
    Z = np.abs(rng.normal(size=(6, 6)))
    assert objective_from_gram(X.T @ X, Z, 0.2) == pytest.approx(objective_value(X, Z, 0.2), rel=1e-12)


# --- solver -------------------------------------------------------------------

def test_identical_columns_scalar_lasso():
    x = np.random.default_rng(1).normal(size=50)
    x /= np.linalg.norm(x)
    gamma = 0.05
    rep = constrained_lasso(np.column_stack([x, x]), AdmmConfig(gamma=gamma, epsilon=1e-10))
    # min_z 0.5||x z - x||^2 + gamma z over z >= 0 gives z = 1 - gamma
    np.testing.assert_allclose(rep.Z, [[0, 1 - gamma], [1 - gamma, 0]], atol=1e-8)


def test_large_gamma_gives_zero(rng):
    X = unit_columns(rng, 64, 8)
    G = X.T @ X
    gamma = np.abs(G - np.diag(np.diag(G))).max()
    rep = constrained_lasso(X, AdmmConfig(gamma=gamma, epsilon=1e-10))
    assert not np.any(rep.Z)
    # subgradient check at Z = 0: gradient of the fit is -G, so G_ij <= gamma off-diagonal
    assert np.all((G - np.diag(np.diag(G)))[~np.eye(8, dtype=bool)] <= gamma + 1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_matches_oracle_small(seed):
    g = np.random.default_rng(seed)
    X = unit_columns(g, 32, 6)
    gamma = 0.05
    rep = constrained_lasso(X, AdmmConfig(gamma=gamma, epsilon=1e-9, max_iters=20000))
    ref = pgd_constrained_lasso(X, gamma)
    assert objective_value(X, rep.Z, gamma) == pytest.approx(lasso_objective(X, ref, gamma), abs=1e-6)
    np.testing.assert_allclose(rep.Z, ref, atol=1e-4)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.005, 0.3))
def test_output_feasible(seed, gamma):
    X = unit_columns(np.random.default_rng(seed), 24, 5)
    rep = constrained_lasso(X, AdmmConfig(gamma=gamma))
    assert np.all(np.diag(rep.Z) == 0)
    assert rep.Z.min() >= 0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_permutation_equivariance(seed):
    g = np.random.default_rng(seed)
    X = unit_columns(g, 40, 7)
    perm = g.permutation(7)
    cfg = AdmmConfig(gamma=0.05, epsilon=1e-10, max_iters=20000)
    Z = constrained_lasso(X, cfg).Z
    Zp = constrained_lasso(X[:, perm], cfg).Z
    np.testing.assert_allclose(Zp, Z[np.ix_(perm, perm)], atol=1e-6)


def test_coefficient_order_follows_angle():
    # y is closer to X1 (10 deg from the reference) than to X2 (40 deg)
    a1, a2 = np.deg2rad(10), np.deg2rad(-40)
    x1 = np.array([np.cos(a1), np.sin(a1), 0.0])
    x2 = np.array([np.cos(a2), np.sin(a2), 0.0])
    y = np.array([1.0, 0.0, 0.3])
    y /= np.linalg.norm(y)
    Z = constrained_lasso(np.column_stack([y, x1, x2]), AdmmConfig(gamma=0.01, epsilon=1e-10)).Z
    assert Z[1, 0] > Z[2, 0] > 0


def test_gap_decreases_to_tolerance(rng):
    X = unit_columns(rng, 64, 12)
    rep = constrained_lasso(X, AdmmConfig(gamma=0.05, epsilon=1e-6))
    assert rep.converged and rep.final_gap < 1e-6
    assert rep.iterations == len(rep.gaps)


def test_not_converged_is_flagged(rng):
    X = unit_columns(rng, 64, 12)
    with pytest.warns(NotConverged):
        rep = constrained_lasso(X, AdmmConfig(gamma=0.05, epsilon=1e-12, max_iters=3))
    assert not rep.converged and rep.iterations == 3


def test_non_finite_input_raises(rng):
    X = unit_columns(rng, 16, 4)
    X[0, 0] = np.nan
    with pytest.raises(NumericalFailure):
        constrained_lasso(X, AdmmConfig(gamma=0.1))


def test_trace_rows(rng):
    buf = io.StringIO()
    rep = constrained_lasso(unit_columns(rng, 32, 5), AdmmConfig(gamma=0.05), trace=buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "iter,gap,objective"
    assert len(lines) == rep.iterations + 1


def test_block_structure_clean_set(five_cameras_clean):
    fm, labels = five_cameras_clean
    Z = constrained_lasso(fm.X, AdmmConfig(gamma=0.02)).Z
    lab = np.array(labels)
    same = lab[:, None] == lab[None, :]
    C = np.abs(fm.X.T @ fm.X)
    np.fill_diagonal(C, 0)
    assert Z[same].sum() / Z.sum() > C[same].sum() / C.sum()
