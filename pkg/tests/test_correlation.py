import numpy as np
import pytest

from src.models.correlation import (
    CorrelationSpec,
    block_correlation_matrix,
    build_hyper_grid,
    conditional_initial_belief,
    fit_loadings,
    gaussian_space,
    sample_correlated_d0,
)
from tests.helpers import equal_structure, small_paris_model


# Test CorrelationSpec validation
def test_spec_rejects_rho_of_one():
    """Test that perfect equal correlation is rejected."""
    with pytest.raises(ValueError):
        CorrelationSpec(mode="equal", n_components=3, rho_eq=1.0)


def test_spec_general_needs_matrix():
    """Test that general mode without a matrix is rejected."""
    with pytest.raises(ValueError):
        CorrelationSpec(mode="general", n_components=2, n_hyper=1)


def test_spec_rejects_asymmetric_matrix():
    """Test that an asymmetric correlation matrix is rejected."""
    matrix = np.array([[1.0, 0.3], [0.2, 1.0]])
    with pytest.raises(ValueError):
        CorrelationSpec(mode="general", n_components=2, matrix=matrix, n_hyper=1)


def test_spec_rejects_nan():
    """Test that NaN entries are rejected."""
    matrix = np.array([[1.0, np.nan], [np.nan, 1.0]])
    with pytest.raises(ValueError):
        CorrelationSpec(mode="general", n_components=2, matrix=matrix, n_hyper=1)


# Test build_hyper_grid
def test_hyper_grid_is_symmetric():
    """Test that quantile bins are symmetric with median points inside each bin."""
    grid = build_hyper_grid(6)
    assert grid.n_states == 6
    assert np.isneginf(grid.edges[0]) and np.isposinf(grid.edges[-1])
    assert np.allclose(grid.points, -grid.points[::-1])
    assert np.all(grid.points > grid.edges[:-1])
    assert np.all(grid.points < grid.edges[1:])


# Test fit_loadings
def test_fit_none():
    """Test that independent components carry no hyperparameter."""
    structure = fit_loadings(CorrelationSpec(mode="none", n_components=4))
    assert structure.n_hyper == 0
    assert structure.n_cells == 1
    assert structure.is_independent


def test_fit_equal_loadings():
    """Test that equal correlation gives loadings sqrt(rho) and hits the target."""
    structure = fit_loadings(
        CorrelationSpec(mode="equal", n_components=10, rho_eq=0.4, n_hyper_states=20)
    )
    assert np.allclose(structure.loadings, np.sqrt(0.4))
    assert structure.n_cells == 20
    assert structure.fit_residual == pytest.approx(0.0, abs=1e-12)
    off_diagonal = structure.reconstructed_correlation()[~np.eye(10, dtype=bool)]
    assert np.allclose(off_diagonal, 0.4)
    assert np.allclose(structure.residual_sd(), np.sqrt(0.6))


def test_fit_general_block_matrix():
    """Test that a rank-two block matrix is fitted with two hyperparameters."""
    target = block_correlation_matrix(
        [[0, 1, 2], [3, 4, 5]], within=[0.6, 0.4], between={(0, 1): 0.2}
    )
    structure = fit_loadings(
        CorrelationSpec(
            mode="general", n_components=6, matrix=target, n_hyper=2, n_hyper_states=5
        )
    )
    assert structure.n_hyper == 2
    assert structure.n_cells == 25
    assert structure.fit_residual < 1e-3
    assert np.all((structure.loadings**2).sum(axis=1) <= 1.0 + 1e-12)


def test_fit_general_unattainable_target_is_not_an_error():
    """Test that an infeasible target returns the best fit with a residual."""
    target = np.array(
        [[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]]
    )
    structure = fit_loadings(
        CorrelationSpec(
            mode="general", n_components=3, matrix=target, n_hyper=1, n_hyper_states=3
        )
    )
    assert structure.fit_residual > 0.1


def test_block_correlation_matrix():
    """Test within- and between-group entries and the unit diagonal."""
    r = block_correlation_matrix(
        [[0, 1], [2]], within=[0.5, 0.0], between={(1, 0): 0.1}
    )
    assert np.allclose(np.diag(r), 1.0)
    assert r[0, 1] == 0.5
    assert r[0, 2] == r[2, 1] == 0.1


def test_cell_index():
    """Test that hyperparameter values map to the cell holding them."""
    structure = equal_structure(3, 0.5, n_states=4)
    assert structure.cell_index(np.array([0.0])) == 2
    assert structure.cell_index(np.array([-5.0])) == 0
    assert structure.cell_index(np.array([5.0])) == 3


# Test conditional_initial_belief
def test_cell_average_prior_marginalizes_exactly():
    """Test that cell-averaged conditionals integrate back to the plain prior."""
    model = small_paris_model()
    structure = equal_structure(3, 0.8, n_states=10, quadrature="cell_average")
    prior = conditional_initial_belief(structure, model.grids, model.params.d0_mean)
    assert np.allclose(prior.cond.sum(axis=2), 1.0)
    assert np.allclose(prior.marginal(), model.prior[None, :], atol=1e-6)


def test_midpoint_prior_marginalizes_approximately():
    """Test that midpoint conditionals stay close to the unconditional prior."""
    model = small_paris_model()
    structure = equal_structure(2, 0.4, n_states=40)
    prior = conditional_initial_belief(structure, model.grids, model.params.d0_mean)
    assert np.allclose(prior.hyper_prior, 1.0 / 40)
    assert np.allclose(prior.marginal(), model.prior[None, :], atol=1e-2)


def test_larger_hyperparameter_means_larger_cracks():
    """Test that the expected crack bin grows with the hyperparameter under rho > 0."""
    model = small_paris_model()
    structure = equal_structure(1, 0.6, n_states=8)
    prior = conditional_initial_belief(structure, model.grids, model.params.d0_mean)
    expected_bin = prior.cond[0] @ np.arange(model.n_crack)
    assert np.all(np.diff(expected_bin) > 0)


def test_independent_prior_matches_unconditional():
    """Test that without hyperparameters the prior is the plain d0 prior."""
    model = small_paris_model()
    structure = fit_loadings(CorrelationSpec(mode="none", n_components=2))
    prior = conditional_initial_belief(structure, model.grids, model.params.d0_mean)
    assert prior.cond.shape == (2, 1, model.n_crack)
    assert np.allclose(prior.cond[:, 0, :], model.prior[None, :])


# Test correlated sampling
@pytest.mark.parametrize("rho", [0.4, 0.8])
def test_sampled_cracks_recover_correlation(rho):
    """Test that Gaussian-space correlation of sampled d0 matches rho."""
    structure = equal_structure(2, rho, n_states=10)
    d0 = sample_correlated_d0(structure, d0_mean=1.0, n_samples=20_000, seed=11)
    y = gaussian_space(d0, 1.0)
    assert np.corrcoef(y.T)[0, 1] == pytest.approx(rho, abs=0.03)
    assert d0.mean() == pytest.approx(1.0, abs=0.03)


def test_independent_sampling_is_uncorrelated():
    """Test that independent components sample uncorrelated cracks."""
    structure = fit_loadings(CorrelationSpec(mode="none", n_components=2))
    d0 = sample_correlated_d0(structure, d0_mean=1.0, n_samples=20_000, seed=12)
    y = gaussian_space(d0, 1.0)
    assert abs(np.corrcoef(y.T)[0, 1]) < 0.03


def test_sampled_cracks_recover_general_structure():
    """Test that sampling under fitted loadings reproduces the fitted correlations."""
    target = block_correlation_matrix(
        [[0, 1, 2], [3, 4, 5]], within=[0.8, 0.6], between={(0, 1): 0.4}
    )
    structure = fit_loadings(
        CorrelationSpec(
            mode="general", n_components=6, matrix=target, n_hyper=2, n_hyper_states=5
        )
    )
    d0 = sample_correlated_d0(structure, d0_mean=1.0, n_samples=100_000, seed=13)
    sampled = np.corrcoef(gaussian_space(d0, 1.0).T)
    assert np.allclose(sampled, structure.reconstructed_correlation(), atol=0.03)
