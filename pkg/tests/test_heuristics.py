import os

import numpy as np
import pytest

from src.environment.episode import AgentView, IndividualCosts
from src.environment.evaluation import evaluate_policy
from src.environment.factory import build_env_config
from src.heuristics.rules import (
    SEARCH_COLUMNS,
    HeuristicRule,
    SearchProtocol,
    grid_search,
    heuristic_actions,
    heuristic_policy,
    is_inspection_year,
    rule_grid,
    save_search,
)
from src.models.actions import Action, Observation
from src.models.model_store import build_models
from src.utils.artifacts import read_csv
from src.utils.experiment_config import load_experiment_config
from tests.helpers import toy_env

DN_NI, DN_I, R_NI = int(Action.DN_NI), int(Action.DN_I), int(Action.R_NI)
CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def _view(p_fail: list[float], t: int, last: list[int] | None = None) -> AgentView:
    p = np.asarray(p_fail, dtype=float)
    marginals = np.stack([1.0 - p, p], axis=1)
    n = p.size
    return AgentView(
        marginals=marginals,
        rate=np.zeros(n, dtype=int),
        t=t,
        last_observation=np.asarray(last if last is not None else [0] * n),
    )


# Test HeuristicRule
def test_rule_validation():
    """Test that intervals and counts below one are rejected."""
    with pytest.raises(ValueError):
        HeuristicRule(0, 1)
    with pytest.raises(ValueError):
        HeuristicRule(3, 0)
    assert str(HeuristicRule(6, 10)) == "(delta_ins=6, n_ins=10)"


def test_search_protocol_validation():
    """Test that stage 2 must use at least as many realizations as stage 1."""
    with pytest.raises(ValueError):
        SearchProtocol(stage1_realizations=100, shortlist=2, stage2_realizations=50)
    assert SearchProtocol().stage2_realizations == 10_000


# Test heuristic_actions
def test_inspection_years_for_six_year_interval():
    """Test that an interval of 6 inspects every component in years 6, 12, ..., 30."""
    rule = HeuristicRule(6, 10)
    inspected = []
    for t in range(30):
        actions = heuristic_actions(_view([0.01] * 10, t), rule)
        if np.all(actions == DN_I):
            inspected.append(t + 1)
        else:
            assert np.all(actions == DN_NI)
    assert inspected == [6, 12, 18, 24, 30]


def test_interval_beyond_horizon_never_acts():
    """Test that a rule whose interval exceeds the horizon never acts."""
    rule = HeuristicRule(31, 2)
    for t in range(30):
        assert np.all(heuristic_actions(_view([0.1, 0.2], t), rule) == DN_NI)


def test_highest_failure_probability_first():
    """Test that the components with the largest p_F are inspected."""
    actions = heuristic_actions(_view([0.1, 0.4, 0.2, 0.3], t=1), HeuristicRule(2, 2))
    assert actions.tolist() == [DN_NI, DN_I, DN_NI, DN_I]


def test_ties_go_to_the_lower_index():
    """Test that equal failure probabilities favor the lower component index."""
    actions = heuristic_actions(_view([0.2, 0.2, 0.2], t=0), HeuristicRule(1, 1))
    assert actions.tolist() == [DN_I, DN_NI, DN_NI]


def test_repair_follows_detection():
    """Test that a detected component is repaired next step and not inspected."""
    view = _view([0.9, 0.1, 0.2], t=1, last=[Observation.DETECTION, 0, 0])
    actions = heuristic_actions(view, HeuristicRule(2, 1))
    assert actions.tolist() == [R_NI, DN_NI, DN_I]


def test_repair_outside_inspection_years():
    """Test that a detection triggers a repair even in a non-inspection year."""
    view = _view([0.1, 0.1], t=0, last=[0, Observation.DETECTION])
    actions = heuristic_actions(view, HeuristicRule(5, 1))
    assert actions.tolist() == [DN_NI, R_NI]


def test_no_detection_does_not_trigger_repair():
    """Test that a clean inspection result leaves the component alone."""
    view = _view([0.1, 0.1], t=0, last=[Observation.NO_DETECTION, 0])
    assert heuristic_actions(view, HeuristicRule(5, 1)).tolist() == [DN_NI, DN_NI]


def test_too_many_inspections_rejected():
    """Test that n_ins above the component count is rejected."""
    with pytest.raises(ValueError):
        heuristic_actions(_view([0.1, 0.2], t=0), HeuristicRule(1, 3))


def test_heuristic_policy_is_pure():
    """Test that the policy ignores its random generator."""
    policy = heuristic_policy(HeuristicRule(2, 1))
    view = _view([0.3, 0.5], t=1)
    a = policy(view, np.random.default_rng(0))
    b = policy(view, np.random.default_rng(99))
    assert np.array_equal(a, b)


def test_is_inspection_year():
    """Test the year arithmetic of the inspection calendar."""
    assert is_inspection_year(5, 6)
    assert not is_inspection_year(6, 6)
    assert all(is_inspection_year(t, 1) for t in range(10))


# Test rule_grid and grid_search
def test_rule_grid():
    """Test the Cartesian grid of intervals and counts."""
    rules = rule_grid([2, 1, 2], None, 2)
    assert rules == [
        HeuristicRule(1, 1),
        HeuristicRule(1, 2),
        HeuristicRule(2, 1),
        HeuristicRule(2, 2),
    ]
    with pytest.raises(ValueError):
        rule_grid([1], [3], 2)


def test_zero_cost_environment_ties_every_rule():
    """Test that all rules cost nothing when nothing costs anything."""
    env = toy_env(
        n_components=2, costs=IndividualCosts(r_ins=0.0, r_rep=0.0), r_fail=0.0
    )
    result = grid_search(
        env, SearchProtocol(10, 3, 20), seed=0, delta_grid=[1, 2, 3]
    )
    assert len(result.stage1) == 6
    assert all(r.report.mean_cost == 0.0 for r in result.stage1 + result.stage2)


def test_grid_search_on_toy():
    """Test the two-stage protocol: shortlist size, ranking and fresh stage-2 seeds."""
    env = toy_env(n_components=2, horizon=5)
    protocol = SearchProtocol(
        stage1_realizations=40, shortlist=3, stage2_realizations=80
    )
    result = grid_search(env, protocol, seed=3, delta_grid=[1, 2, 6])
    assert len(result.stage1) == 6
    assert len(result.stage2) == 3
    assert all(r.stage == 2 for r in result.stage2)
    costs = [r.report.mean_cost for r in result.stage2]
    assert costs == sorted(costs)
    assert result.best is result.stage2[0]
    assert {r.rule for r in result.stage2} == {r.rule for r in result.stage1[:3]}
    assert all(r.report.n_episodes == 80 for r in result.stage2)


def test_grid_search_is_thread_independent():
    """Test that parallel rule evaluation gives the same ranking."""
    env = toy_env(n_components=2, horizon=4)
    protocol = SearchProtocol(20, 2, 30)
    serial = grid_search(env, protocol, seed=1, delta_grid=[1, 2], threads=1)
    parallel = grid_search(env, protocol, seed=1, delta_grid=[1, 2], threads=3)
    assert serial.rows() == parallel.rows()


def test_save_search(tmp_path):
    """Test that every stage-1 and stage-2 estimate is written."""
    env = toy_env(n_components=1, horizon=3)
    result = grid_search(env, SearchProtocol(10, 2, 10), seed=0, delta_grid=[1, 3])
    path = tmp_path / "search.csv"
    save_search(str(path), result)
    rows = read_csv(str(path))
    assert len(rows) == len(result.stage1) + len(result.stage2)
    assert tuple(rows[0]) == SEARCH_COLUMNS


@pytest.mark.slow
def test_uncorrelated_nine_out_of_ten_reference_rule():
    """Test that the best rule costs within 3% of inspecting all ten every six years."""
    config = load_experiment_config(
        os.path.join(CONFIG_DIR, "k9of10_none_individual.json")
    )
    env = build_env_config(config, build_models(config, threads=4))
    h = config.heuristics
    protocol = SearchProtocol(h.stage1_realizations, h.shortlist, h.stage2_realizations)
    result = grid_search(env, protocol, seed=0, delta_grid=h.delta_grid, threads=4)
    reference = evaluate_policy(
        heuristic_policy(HeuristicRule(6, 10)),
        env,
        h.stage2_realizations,
        seed=int(np.random.SeedSequence([0, 2]).generate_state(1)[0]),
        threads=4,
    )
    assert result.best.report.mean_cost <= reference.mean_cost * 1.03
