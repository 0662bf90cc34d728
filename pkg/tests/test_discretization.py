import math

import numpy as np
import pytest

from src.models.actions import Observation
from src.models.discretization import (
    FatigueParams,
    StateGrids,
    TransitionTables,
    bin_index,
    build_deterioration_model,
    build_grids,
    build_observation_model,
    deterministic_growth,
    estimate_crack_step,
    initial_depth,
    initial_prior,
    pod,
    rate_age,
    sample_within_bin,
    simulate_failure_curve,
    unmaintained_failure_curve,
)
from tests.helpers import small_paris_model, toy_model


# Test build_grids
def test_build_grids_edges():
    """Test that the crack grid starts at 0, ends at inf and is log-spaced inside."""
    grids = build_grids(FatigueParams(), n_crack=30, n_rate=31)
    edges = grids.crack_edges
    assert grids.n_crack == 30
    assert edges[0] == 0.0
    assert np.isinf(edges[-1])
    assert edges[1] == pytest.approx(1e-4)
    assert grids.d_crit == pytest.approx(20.0)
    log_steps = np.diff(np.log(edges[1:-1]))
    expected = (math.log(20.0) - math.log(1e-4)) / 28
    assert np.allclose(log_steps, expected)


def test_build_grids_rejects_too_few_bins():
    """Test that fewer than 3 crack bins is rejected."""
    with pytest.raises(ValueError):
        build_grids(FatigueParams(), n_crack=2, n_rate=31)


def test_state_grids_validation():
    """Test that malformed edge vectors are rejected."""
    with pytest.raises(ValueError):
        StateGrids(crack_edges=np.array([0.0, 1.0, 2.0]), n_rate=1)
    with pytest.raises(ValueError):
        StateGrids(crack_edges=np.array([0.0, 2.0, 1.0, np.inf]), n_rate=1)


def test_bin_index_failure_edge():
    """Test that d_crit itself falls in the failure bin."""
    grids = build_grids(FatigueParams(), n_crack=30, n_rate=31)
    assert bin_index(grids, 20.0) == grids.failure_bin
    assert bin_index(grids, 0.0) == 0
    assert bin_index(grids, np.inf) == grids.failure_bin


# Test deterministic_growth
def test_deterministic_growth_reference_value():
    """Test one year of growth from 1 mm at the mean parameters."""
    grown = deterministic_growth(1.0, FatigueParams(), c=math.exp(-35.2), s=70.0)
    assert float(grown) == pytest.approx(1.011, abs=1e-3)


def test_deterministic_growth_blow_up():
    """Test that a non-positive bracket maps to an infinite crack."""
    grown = deterministic_growth(10.0, FatigueParams(), c=1e-8, s=200.0)
    assert np.isinf(grown)


def test_deterministic_growth_rejects_non_positive_depth():
    """Test that zero crack depth is rejected."""
    with pytest.raises(ValueError):
        deterministic_growth(0.0, FatigueParams(), c=math.exp(-35.2), s=70.0)


def test_sample_within_first_bin_is_point_mass():
    """Test that the first bin is sampled at half its upper edge."""
    grids = build_grids(FatigueParams(), n_crack=10, n_rate=2)
    d = sample_within_bin(grids, 0, 5, np.random.default_rng(0))
    assert np.all(d == grids.crack_edges[1] / 2.0)


def test_sample_within_failure_bin_raises():
    """Test that the absorbing bin is never sampled."""
    grids = build_grids(FatigueParams(), n_crack=10, n_rate=2)
    with pytest.raises(ValueError):
        sample_within_bin(grids, grids.failure_bin, 5, np.random.default_rng(0))


# Test transition tables
def test_transition_tables_are_stochastic():
    """Test row sums, the absorbing failure row and monotonicity of the Paris tables."""
    model = small_paris_model()
    table = model.tables.crack_step
    assert np.allclose(table.sum(axis=2), 1.0)
    assert np.all(table[:, -1, -1] == 1.0)
    assert model.tables.is_stochastically_monotone()


def test_transition_tables_reject_bad_rows():
    """Test that rows not summing to one are rejected."""
    with pytest.raises(ValueError):
        TransitionTables(crack_step=np.array([[[0.5, 0.4], [0.0, 1.0]]]))


def test_estimate_crack_step_is_thread_independent():
    """Test that the same seed gives the same tables for any thread count."""
    params = FatigueParams(horizon_years=2)
    grids = build_grids(params, n_crack=5, n_rate=3)
    one = estimate_crack_step(grids, params, mc_samples=10_000, seed=7, threads=1)
    two = estimate_crack_step(grids, params, mc_samples=10_000, seed=7, threads=2)
    assert np.array_equal(one.crack_step, two.crack_step)


def test_initial_depth_inverts_growth():
    """Test that growing the inverted depth for the same years returns the target."""
    params = FatigueParams()
    c, s = math.exp(params.ln_c_mean), params.s_mean
    d0 = initial_depth(5.0, params, c, s, years=3)
    d = d0
    for _ in range(3):
        d = deterministic_growth(d, params, c, s)
    assert 0 < d0 < 5.0
    assert float(d) == pytest.approx(5.0)
    assert float(initial_depth(5.0, params, c, s, years=0)) == pytest.approx(5.0)
    assert float(initial_depth(0.0, params, c, s, years=3)) == 0.0


def test_rate_age():
    """Test that rates 0 and 1 both start from a fresh crack."""
    assert [rate_age(tau) for tau in range(4)] == [0, 0, 1, 2]


def test_transition_rows_depend_on_age():
    """Test that an old component in a deep bin fails faster than a young one."""
    params = FatigueParams()
    grids = build_grids(params, n_crack=12, n_rate=21)
    table = estimate_crack_step(grids, params, mc_samples=10_000, seed=1).crack_step
    deep, failure = grids.failure_bin - 1, grids.failure_bin
    assert table[20, deep, failure] > table[1, deep, failure] + 0.03
    # rates 0 and 1 both step a fresh crack
    assert table[0, deep, failure] == pytest.approx(table[1, deep, failure], abs=0.02)


def test_estimate_crack_step_rejects_small_sample():
    """Test the minimum Monte Carlo sample size."""
    params = FatigueParams(horizon_years=2)
    grids = build_grids(params, n_crack=5, n_rate=3)
    with pytest.raises(ValueError):
        estimate_crack_step(grids, params, mc_samples=100, seed=0)


def test_next_rate():
    """Test the age step: +1 capped at the last state, reset to 0 on repair."""
    tables = TransitionTables(crack_step=np.tile(np.eye(2), (3, 1, 1)))
    rate = tables.next_rate(np.array([0, 2, 1]), np.array([False, False, True]))
    assert rate.tolist() == [1, 2, 0]


# Test observation model
def test_pod_at_mean():
    """Test that PoD equals 1 - 1/e at its mean."""
    assert float(pod(8.0, 8.0)) == pytest.approx(0.6321, abs=1e-4)


def test_detection_probabilities_are_ordered():
    """Test that detection rises with crack size and is certain at failure."""
    grids = build_grids(FatigueParams(), n_crack=30, n_rate=31)
    observation = build_observation_model(grids, pod_mean=8.0)
    assert np.all(np.diff(observation.detect_prob) >= 0)
    assert observation.detect_prob[-1] == 1.0


def test_likelihood_by_observation():
    """Test the likelihood vectors of the three observation outcomes."""
    observation = toy_model().observation
    assert np.allclose(observation.likelihood(Observation.NONE), 1.0)
    assert np.allclose(observation.likelihood(Observation.DETECTION), [0.05, 0.7, 1.0])
    assert np.allclose(
        observation.likelihood(Observation.NO_DETECTION), [0.95, 0.3, 0.0]
    )
    stacked = observation.likelihood_matrix(np.array([0, 1, 2]))
    assert stacked.shape == (3, 3)
    assert np.allclose(stacked[2], [0.95, 0.3, 0.0])


def test_initial_prior_sums_to_one():
    """Test the discretized exponential prior."""
    grids = build_grids(FatigueParams(), n_crack=30, n_rate=31)
    prior = initial_prior(grids, d0_mean=1.0)
    assert prior.sum() == pytest.approx(1.0)
    assert prior[-1] == pytest.approx(math.exp(-20.0))


# Test failure curves
def test_unmaintained_failure_curve_toy():
    """Test the failure curve of the hand-set model against hand propagation."""
    curve = unmaintained_failure_curve(toy_model(), 2)
    assert curve[0] == 0.0
    assert curve[1] == pytest.approx(0.03)
    assert curve[2] == pytest.approx(0.105)


def test_unmaintained_failure_curve_is_non_decreasing():
    """Test that an absorbing failure bin makes the curve non-decreasing."""
    curve = unmaintained_failure_curve(small_paris_model(), 3)
    assert np.all(np.diff(curve) >= -1e-15)


@pytest.mark.slow
def test_unmaintained_curve_matches_simulation():
    """Test the discretized failure curve against fixed-(C, S) Monte Carlo paths."""
    params = FatigueParams()
    model = build_deterioration_model(params, mc_samples=100_000, seed=3)
    discrete = unmaintained_failure_curve(model, 30)
    continuous = simulate_failure_curve(params, n_paths=200_000, years=30, seed=4)
    assert np.max(np.abs(discrete - continuous)) < 0.05
