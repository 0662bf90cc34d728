"""
Equidistant-inspection heuristics and their two-stage grid search.

A rule inspects ``n_ins`` components every ``delta_ins`` years, choosing the
components with the largest marginal failure probability, and repairs a
component the year after its inspection reported a detection.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from src.environment.episode import AgentView, EnvConfig, Policy
from src.environment.evaluation import CostReport, evaluate_policy
from src.models.actions import Action, Observation
from src.utils.artifacts import write_csv

logger = logging.getLogger(__name__)

SEARCH_COLUMNS = ("delta_ins", "n_ins", "stage", "mean_cost", "stderr", "n_episodes")


@dataclass(frozen=True, order=True)
class HeuristicRule:
    delta_ins: int
    n_ins: int

    def __post_init__(self) -> None:
        if self.delta_ins < 1 or self.n_ins < 1:
            raise ValueError(f"invalid rule {self}: delta_ins and n_ins must be >= 1")

    def __str__(self) -> str:
        return f"(delta_ins={self.delta_ins}, n_ins={self.n_ins})"


@dataclass(frozen=True)
class SearchProtocol:
    stage1_realizations: int = 3_000
    shortlist: int = 5
    stage2_realizations: int = 10_000

    def __post_init__(self) -> None:
        if self.stage2_realizations < self.stage1_realizations:
            raise ValueError("stage2_realizations must be >= stage1_realizations")
        if min(self.stage1_realizations, self.shortlist) < 1:
            raise ValueError("realization counts and shortlist must be >= 1")


def is_inspection_year(t: int, delta_ins: int) -> bool:
    """Step ``t`` acts in year ``t + 1``; inspections on multiples of ``delta_ins``."""
    return (t + 1) % delta_ins == 0


def heuristic_actions(view: AgentView, rule: HeuristicRule) -> np.ndarray:
    """Actions of ``rule`` for one agent view. Pure in (marginals, t, last obs)."""
    n = view.rate.size
    if rule.n_ins > n:
        raise ValueError(f"n_ins={rule.n_ins} exceeds the {n} components")
    actions = np.full(n, int(Action.DN_NI))
    repair = np.asarray(view.last_observation) == Observation.DETECTION
    actions[repair] = Action.R_NI
    if is_inspection_year(view.t, rule.delta_ins):
        candidates = np.flatnonzero(~repair)
        # stable sort on -p_F keeps lower indices first among ties
        order = np.argsort(-view.failure_probs[candidates], kind="stable")
        actions[candidates[order[: rule.n_ins]]] = Action.DN_I
    return actions


def heuristic_policy(rule: HeuristicRule) -> Policy:
    def policy(view: AgentView, rng: np.random.Generator) -> np.ndarray:
        return heuristic_actions(view, rule)

    return policy


def rule_grid(
    delta_grid: list[int], n_ins_grid: list[int] | None, n_components: int
) -> list[HeuristicRule]:
    counts = n_ins_grid if n_ins_grid is not None else range(1, n_components + 1)
    bad = [c for c in counts if not 1 <= c <= n_components]
    if bad:
        raise ValueError(f"n_ins values {bad} outside 1..{n_components}")
    deltas, counts = sorted(set(delta_grid)), sorted(set(counts))
    return [HeuristicRule(d, c) for d in deltas for c in counts]


@dataclass(frozen=True)
class RuleResult:
    rule: HeuristicRule
    stage: int
    report: CostReport

    def as_row(self) -> tuple:
        return (
            self.rule.delta_ins,
            self.rule.n_ins,
            self.stage,
            self.report.mean_cost,
            self.report.stderr,
            self.report.n_episodes,
        )


@dataclass
class SearchResult:
    """Every stage-1 estimate, plus the stage-2 ranking of the shortlist."""

    stage1: list[RuleResult] = field(default_factory=list)
    stage2: list[RuleResult] = field(default_factory=list)

    @property
    def best(self) -> RuleResult:
        return self.stage2[0]

    def rows(self) -> list[tuple]:
        return [r.as_row() for r in (*self.stage1, *self.stage2)]


def _rank(results: list[RuleResult]) -> list[RuleResult]:
    return sorted(results, key=lambda r: (r.report.mean_cost, r.rule))


def _evaluate_rules(
    rules: list[HeuristicRule],
    env: EnvConfig,
    n_episodes: int,
    seed: int,
    stage: int,
    threads: int,
) -> list[RuleResult]:
    """Evaluates every rule on the same episode seeds."""

    def work(rule: HeuristicRule) -> RuleResult:
        report = evaluate_policy(heuristic_policy(rule), env, n_episodes, seed)
        logger.debug(
            f"Stage {stage} {rule}: {report.mean_cost:.4g} +/- {report.stderr:.2g}"
        )
        return RuleResult(rule, stage, report)

    if threads > 1 and len(rules) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(work, rules))
    return [work(rule) for rule in rules]


def grid_search(
    env: EnvConfig,
    protocol: SearchProtocol,
    seed: int,
    delta_grid: list[int] | None = None,
    n_ins_grid: list[int] | None = None,
    threads: int = 1,
) -> SearchResult:
    """
    Stage 1 scores every rule with ``stage1_realizations`` episodes under
    common random numbers; the ``shortlist`` best are re-scored with
    ``stage2_realizations`` episodes drawn from a fresh seed, and that score
    sets the final ranking.
    """
    rules = rule_grid(delta_grid or list(range(1, 16)), n_ins_grid, env.n_components)
    logger.info(
        f"Stage 1: {len(rules)} rules x {protocol.stage1_realizations} realizations"
    )
    stage1 = _rank(
        _evaluate_rules(rules, env, protocol.stage1_realizations, seed, 1, threads)
    )
    shortlist = [r.rule for r in stage1[: protocol.shortlist]]
    logger.info(f"Stage 2 shortlist: {', '.join(str(r) for r in shortlist)}")
    stage2_seed = int(np.random.SeedSequence([seed, 2]).generate_state(1)[0])
    stage2 = _rank(
        _evaluate_rules(
            shortlist, env, protocol.stage2_realizations, stage2_seed, 2, threads
        )
    )
    best = stage2[0]
    logger.info(
        f"Best rule {best.rule}: mean cost {best.report.mean_cost:.4g} "
        f"(stderr {best.report.stderr:.3g})"
    )
    return SearchResult(stage1=stage1, stage2=stage2)


def save_search(path: str, result: SearchResult) -> None:
    write_csv(path, SEARCH_COLUMNS, result.rows())
    logger.info(f"Grid search results written to {path}")
