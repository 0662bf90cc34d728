"""
Episode engine of the factored POMDP.

Ground truth evolves with the continuous growth law (or, for hand-set toy
models, by sampling the tables), while the agent only ever sees an
``AgentView``: marginal beliefs, deterioration rates, time and the last
observations. Rewards are negative costs.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Union

import numpy as np

from src.inference.belief import (
    SystemBelief,
    hyper_mean,
    initial_belief_for,
    update_belief,
)
from src.models.actions import N_ACTIONS, Action, Observation
from src.models.correlation import draw_correlated_d0
from src.models.discretization import deterministic_growth, pod, sample_parameters
from src.models.model_store import ModelBundle
from src.reliability.system import (
    FrameSystem,
    KOutOfN,
    SystemModel,
    annual_risk,
    frame_failure_given_elements,
    system_failure_prob,
)
from src.utils.errors import ConfigError, EpisodeDoneError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IndividualCosts:
    r_ins: float = -1.0
    r_rep: float = -20.0


@dataclass(frozen=True)
class CampaignCosts:
    r_camp: float = -5.0
    r_ins_surplus: float = -0.2
    r_rep: float = -20.0


CostModel = Union[IndividualCosts, CampaignCosts]


@dataclass(frozen=True)
class EnvConfig:
    n_components: int
    bundle: ModelBundle
    system: SystemModel
    horizon_years: int = 30
    discount: float = 0.95
    cost_model: CostModel = field(default_factory=IndividualCosts)
    r_fail: float = -10_000.0
    truth: Literal["continuous", "discrete"] = "continuous"
    failure_accounting: Literal["belief", "sampled"] = "belief"
    repair_rate: int = 0
    config_hash: str = ""

    def __post_init__(self) -> None:
        if not 0.0 < self.discount <= 1.0:
            raise ConfigError(f"discount must lie in (0, 1], got {self.discount}")
        if self.horizon_years < 1:
            raise ConfigError("horizon_years must be >= 1")
        costs = [v for v in vars(self.cost_model).values()] + [self.r_fail]
        if any(c > 0 for c in costs):
            raise ConfigError("all costs must be <= 0 (rewards are negative costs)")
        if self.bundle.structure.n_components != self.n_components:
            raise ConfigError(
                f"correlation structure covers {self.bundle.structure.n_components} "
                f"components, config has {self.n_components}"
            )
        if self.bundle.prior.cond.shape[2] != self.bundle.model.n_crack:
            raise ConfigError("conditional prior does not match the crack grid")
        if isinstance(self.system, KOutOfN) and self.system.n != self.n_components:
            raise ConfigError("k-out-of-n system size does not match n_components")
        frame = isinstance(self.system, FrameSystem)
        if frame and self.system.n_hotspots != self.n_components:
            raise ConfigError("frame hotspot count does not match n_components")
        if self.truth == "continuous" and self.bundle.model.params is None:
            raise ConfigError("continuous ground truth needs fatigue parameters")
        if self.truth == "discrete" and not self.bundle.structure.is_independent:
            raise ConfigError("discrete ground truth supports uncorrelated models only")


@dataclass(frozen=True)
class AgentView:
    """Everything a policy may look at."""

    marginals: np.ndarray  # [N][n_crack]
    rate: np.ndarray  # [N]
    t: int
    last_observation: np.ndarray  # [N]

    @property
    def failure_probs(self) -> np.ndarray:
        return self.marginals[:, -1]


Policy = Callable[[AgentView, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class CostBreakdown:
    campaign: float = 0.0
    inspection: float = 0.0
    repair: float = 0.0
    failure: float = 0.0

    @property
    def total(self) -> float:
        return self.campaign + self.inspection + self.repair + self.failure


@dataclass(frozen=True)
class StepResult:
    reward: float
    actions: np.ndarray
    observation: np.ndarray
    next_belief: SystemBelief
    breakdown: CostBreakdown
    p_sys: float


@dataclass
class EpisodeState:
    config: EnvConfig
    true_crack: np.ndarray
    true_alpha: np.ndarray
    belief: SystemBelief
    p_sys: float
    rng: np.random.Generator
    load_quantile: float
    true_c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    true_s: np.ndarray = field(default_factory=lambda: np.zeros(0))
    t: int = 0
    done: bool = False
    system_failed: bool = False
    last_observation: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def view(self) -> AgentView:
        return AgentView(
            marginals=self.belief.marginals(),
            rate=self.belief.rate.copy(),
            t=self.t,
            last_observation=self.last_observation.copy(),
        )


def _as_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    return np.random.default_rng(seed)


def reset(config: EnvConfig, seed: int | np.random.SeedSequence) -> EpisodeState:
    """
    Samples the true hyperparameters and initial cracks and returns the
    episode at t=0 with the conditional prior as belief.
    """
    rng = _as_rng(seed)
    bundle = config.bundle
    model = bundle.model
    n = config.n_components
    if config.truth == "continuous":
        alpha, d0 = draw_correlated_d0(bundle.structure, model.params.d0_mean, 1, rng)
        true_alpha, true_crack = alpha[0], np.maximum(d0[0], np.finfo(float).tiny)
        true_c, true_s = sample_parameters(model.params, n, rng)
    else:
        true_alpha = np.zeros(0)
        true_crack = rng.choice(model.n_crack, size=n, p=model.prior).astype(float)
        true_c = true_s = np.zeros(0)
    belief = initial_belief_for(model, bundle.structure, bundle.prior)
    return EpisodeState(
        config=config,
        true_crack=true_crack,
        true_alpha=true_alpha,
        belief=belief,
        p_sys=system_failure_prob(belief.failure_probs(), config.system),
        rng=rng,
        load_quantile=float(rng.random()),
        true_c=true_c,
        true_s=true_s,
        last_observation=np.zeros(n, dtype=int),
    )


def _true_failed(state: EpisodeState) -> np.ndarray:
    """Component-level failure of the ground truth."""
    model = state.config.bundle.model
    if state.config.truth == "continuous":
        return state.true_crack >= model.params.d_crit
    return state.true_crack.astype(int) == model.failure_bin


def _truth_system_failed(state: EpisodeState) -> bool:
    failed = _true_failed(state)
    system = state.config.system
    if isinstance(system, KOutOfN):
        return int((~failed).sum()) < system.k
    alive = np.array([not failed[list(h)].any() for h in system.element_map])
    return state.load_quantile < frame_failure_given_elements(alive, system)


def _advance_truth(
    state: EpisodeState, actions: np.ndarray, rate_next: np.ndarray
) -> None:
    """
    Repairs, one year of growth. Every call consumes the same random draws.
    In continuous truth a component keeps its (C, S) until it is repaired.
    """
    config = state.config
    model = config.bundle.model
    n = config.n_components
    rng = state.rng
    repaired = actions == Action.R_NI
    if config.truth == "continuous":
        params = model.params
        fresh = np.maximum(rng.exponential(params.d0_mean, n), np.finfo(float).tiny)
        c, s = sample_parameters(params, n, rng)
        crack = np.where(repaired, fresh, state.true_crack)
        state.true_c = np.where(repaired, c, state.true_c)
        state.true_s = np.where(repaired, s, state.true_s)
        grown = np.full(n, np.inf)
        finite = np.isfinite(crack)
        grown[finite] = deterministic_growth(
            crack[finite], params, state.true_c[finite], state.true_s[finite]
        )
        state.true_crack = grown
    else:
        fresh_u = rng.random(n)
        grow_u = rng.random(n)
        prior_cdf = np.cumsum(model.prior)
        bins = state.true_crack.astype(int)
        fresh_bins = np.minimum(
            np.searchsorted(prior_cdf, fresh_u, side="right"), model.n_crack - 1
        )
        bins = np.where(repaired, fresh_bins, bins)
        rows = model.tables.crack_step[rate_next, bins]  # [N][S]
        next_bins = (np.cumsum(rows, axis=1) > grow_u[:, None]).argmax(axis=1)
        state.true_crack = next_bins.astype(float)


def _sample_observations(state: EpisodeState, actions: np.ndarray) -> np.ndarray:
    config = state.config
    model = config.bundle.model
    u = state.rng.random(config.n_components)
    if config.truth == "continuous":
        detect = pod(state.true_crack, model.observation.pod_mean)
    else:
        detect = model.observation.detect_prob[state.true_crack.astype(int)]
    observations = np.where(
        u < detect, int(Observation.DETECTION), int(Observation.NO_DETECTION)
    )
    return np.where(actions == Action.DN_I, observations, int(Observation.NONE))


def action_costs(actions: np.ndarray, cost_model: CostModel) -> CostBreakdown:
    """Campaign, inspection and repair rewards of one action vector."""
    n_ins = int(np.sum(actions == Action.DN_I))
    n_rep = int(np.sum(actions == Action.R_NI))
    if isinstance(cost_model, CampaignCosts):
        active = bool(np.any(actions != Action.DN_NI))
        return CostBreakdown(
            campaign=cost_model.r_camp if active else 0.0,
            inspection=n_ins * cost_model.r_ins_surplus,
            repair=n_rep * cost_model.r_rep,
        )
    return CostBreakdown(
        inspection=n_ins * cost_model.r_ins, repair=n_rep * cost_model.r_rep
    )


def step(state: EpisodeState, actions: np.ndarray) -> StepResult:
    """
    Applies one year: repairs and growth of the ground truth, inspection
    outcomes, the belief update and the step's costs. ``state`` is advanced
    in place.
    """
    if state.done:
        raise EpisodeDoneError(f"episode already reached its horizon at t={state.t}")
    config = state.config
    model = config.bundle.model
    actions = np.asarray(actions, dtype=int)
    if actions.shape != (config.n_components,):
        raise ValueError(f"expected {config.n_components} actions, got {actions.shape}")
    if np.any((actions < 0) | (actions >= N_ACTIONS)):
        raise ValueError("actions must be DN_NI, DN_I or R_NI")

    repaired = actions == Action.R_NI
    rate_next = model.tables.next_rate(state.belief.rate, repaired)
    rate_next = np.where(repaired, min(config.repair_rate, model.n_rate - 1), rate_next)

    _advance_truth(state, actions, rate_next)
    observations = _sample_observations(state, actions)
    belief = update_belief(
        state.belief,
        actions,
        observations,
        model,
        config.bundle.structure,
        config.repair_rate,
    )
    p_sys_next = system_failure_prob(belief.failure_probs(), config.system)

    costs = action_costs(actions, config.cost_model)
    if config.failure_accounting == "belief":
        failure = annual_risk(p_sys_next, state.p_sys, config.r_fail)
    elif not state.system_failed and _truth_system_failed(state):
        state.system_failed = True
        failure = config.r_fail
    else:
        failure = 0.0
    breakdown = CostBreakdown(
        campaign=costs.campaign,
        inspection=costs.inspection,
        repair=costs.repair,
        failure=failure,
    )

    state.belief = belief
    state.p_sys = p_sys_next
    state.last_observation = observations
    state.t += 1
    state.done = state.t >= config.horizon_years
    return StepResult(
        reward=breakdown.total,
        actions=actions,
        observation=observations,
        next_belief=belief,
        breakdown=breakdown,
        p_sys=p_sys_next,
    )


@dataclass
class EpisodeOutcome:
    """Discounted costs of one realization (positive numbers) and action statistics."""

    campaign: float
    inspection: float
    repair: float
    failure: float
    inspected_per_step: np.ndarray
    action_counts: np.ndarray  # [N][n_actions]
    log_rows: list[tuple] = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.campaign + self.inspection + self.repair + self.failure


def run_episode(
    config: EnvConfig,
    policy: Policy,
    seed: int | np.random.SeedSequence,
    keep_log: bool = False,
) -> EpisodeOutcome:
    """Rolls out one episode; the policy draws from its own child stream."""
    if isinstance(seed, np.random.SeedSequence):
        root = seed
    else:
        root = np.random.SeedSequence(seed)
    env_seed, policy_seed = (
        np.random.SeedSequence(root.entropy, spawn_key=(*root.spawn_key, k))
        for k in (0, 1)
    )
    policy_rng = np.random.default_rng(policy_seed)
    state = reset(config, env_seed)
    n = config.n_components
    sums = np.zeros(4)
    inspected = np.zeros(n + 1, dtype=int)
    counts = np.zeros((n, N_ACTIONS), dtype=int)
    rows: list[tuple] = []
    discount = 1.0
    while not state.done:
        t = state.t
        actions = np.asarray(policy(state.view(), policy_rng), dtype=int)
        result = step(state, actions)
        b = result.breakdown
        sums -= discount * np.array([b.campaign, b.inspection, b.repair, b.failure])
        discount *= config.discount
        inspected[int(np.sum(actions == Action.DN_I))] += 1
        counts[np.arange(n), actions] += 1
        if keep_log:
            p_fail = result.next_belief.failure_probs()
            alpha = hyper_mean(result.next_belief, config.bundle.structure)
            alpha_mean = float(alpha[0]) if alpha.size else 0.0
            rows.extend(
                (
                    t,
                    i,
                    int(actions[i]),
                    int(result.observation[i]),
                    float(p_fail[i]),
                    result.p_sys,
                    alpha_mean,
                )
                for i in range(n)
            )
    return EpisodeOutcome(
        campaign=float(sums[0]),
        inspection=float(sums[1]),
        repair=float(sums[2]),
        failure=float(sums[3]),
        inspected_per_step=inspected,
        action_counts=counts,
        log_rows=rows,
    )


def never_act_policy(view: AgentView, rng: np.random.Generator) -> np.ndarray:
    return np.full(view.rate.size, int(Action.DN_NI))


def random_policy(view: AgentView, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, N_ACTIONS, view.rate.size)
