"""
Exact discrete Bayesian filtering of component crack beliefs.

Independent components follow the usual predict / weight / normalize forward
pass. Under hierarchical dependence every component keeps one conditional
slice per hyperparameter cell; inspections update the hyperparameter belief
through the per-cell observation likelihood, and the marginal crack belief is
the hyperparameter-weighted mixture of the slices. A repaired component drops
out of the dependence: its slices are reset to the independent prior and stay
identical across cells from then on.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from src.models.actions import Action, Observation
from src.models.correlation import ConditionalPrior, CorrelationStructure
from src.models.discretization import DeteriorationModel
from src.utils.artifacts import save_container, write_csv
from src.utils.errors import ImpossibleObservationError

logger = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-9
BELIEF_KIND = "belief-snapshot"


@dataclass(frozen=True)
class SystemBelief:
    cond: np.ndarray  # [N][n_cells][n_crack]
    hyper: np.ndarray  # [n_cells]
    hyper_shape: tuple[int, ...]
    rate: np.ndarray  # [N], observed deterioration rate (age)
    decorrelated: np.ndarray  # [N] bool
    time: int = 0
    last_log_likelihood: float = 0.0
    log_likelihood: float = 0.0

    @property
    def n_components(self) -> int:
        return self.cond.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cond.shape[1]

    @property
    def n_crack(self) -> int:
        return self.cond.shape[2]

    def marginals(self) -> np.ndarray:
        """``b(s) = sum_alpha b(s | alpha) b(alpha)`` per component, ``[N][n_crack]``"""
        return np.einsum("ncs,c->ns", self.cond, self.hyper)

    def failure_probs(self) -> np.ndarray:
        return self.marginals()[:, -1]

    def validate(self, tolerance: float = SUM_TOLERANCE) -> None:
        if abs(self.hyper.sum() - 1.0) > tolerance:
            raise ValueError("hyperparameter belief does not sum to 1")
        if np.any(np.abs(self.cond.sum(axis=2) - 1.0) > tolerance):
            raise ValueError("a conditional belief slice does not sum to 1")
        _check_decorrelated(self)


def _check_decorrelated(belief: SystemBelief) -> None:
    """Decorrelated components must carry the same slice in every cell."""
    if belief.n_cells == 1 or not belief.decorrelated.any():
        return
    slices = belief.cond[belief.decorrelated]
    if np.max(np.abs(slices - slices[:, :1, :])) > 1e-12:
        raise RuntimeError(
            "inconsistent decorrelated flags: slices differ across cells"
        )


def initial_belief(
    model: DeteriorationModel,
    n_components: int,
    prior: ConditionalPrior | None = None,
    hyper_shape: tuple[int, ...] | None = None,
) -> SystemBelief:
    """
    Belief at t=0. Without ``prior`` components are independent and share the
    unconditional discretized d0 prior.
    """
    if prior is None:
        cond = np.broadcast_to(model.prior, (n_components, 1, model.n_crack)).copy()
        hyper = np.ones(1)
        shape: tuple[int, ...] = ()
    else:
        if prior.cond.shape[0] != n_components or prior.cond.shape[2] != model.n_crack:
            raise ValueError(
                f"conditional prior {prior.cond.shape} does not match "
                f"{n_components} components x {model.n_crack} bins"
            )
        cond = prior.cond.copy()
        hyper = prior.hyper_prior.copy()
        shape = hyper_shape if hyper_shape is not None else (hyper.size,)
    return SystemBelief(
        cond=cond,
        hyper=hyper,
        hyper_shape=shape,
        rate=np.zeros(n_components, dtype=int),
        decorrelated=np.zeros(n_components, dtype=bool),
    )


def initial_belief_for(
    model: DeteriorationModel, structure: CorrelationStructure, prior: ConditionalPrior
) -> SystemBelief:
    """Initial belief for a fitted structure; independent structures get one cell."""
    if structure.n_hyper == 0:
        return initial_belief(model, structure.n_components)
    shape = (structure.grid.n_states,) * structure.n_hyper
    return initial_belief(model, structure.n_components, prior, shape)


def _check_observations(actions: np.ndarray, observations: np.ndarray) -> None:
    inspected = actions == Action.DN_I
    has_obs = observations != Observation.NONE
    if np.any(inspected != has_obs):
        bad = int(np.flatnonzero(inspected != has_obs)[0])
        raise ValueError(
            f"component {bad}: an observation is present exactly when the "
            "action is DN_I"
        )


def _update(
    belief: SystemBelief,
    actions: np.ndarray,
    observations: np.ndarray,
    model: DeteriorationModel,
    update_hyper: bool,
    repair_rate: int,
) -> SystemBelief:
    """Shared predict / weight / normalize step; hyper update when ``update_hyper``."""
    actions = np.asarray(actions, dtype=int)
    observations = np.asarray(observations, dtype=int)
    n = belief.n_components
    if actions.shape != (n,) or observations.shape != (n,):
        raise ValueError(f"action and observation vectors must have length {n}")
    _check_observations(actions, observations)

    repaired = actions == Action.R_NI
    rate_next = np.minimum(belief.rate + 1, model.n_rate - 1)
    rate_next = np.where(repaired, min(repair_rate, model.n_rate - 1), rate_next)

    cond = belief.cond
    if repaired.any():
        cond = cond.copy()
        cond[repaired] = model.prior
    transitions = model.tables.crack_step[rate_next]  # [N][S][S]
    predicted = np.einsum("ncs,nst->nct", cond, transitions)

    likelihood = model.observation.likelihood_matrix(observations)  # [N][S]
    weighted = predicted * likelihood[:, None, :]
    evidence = weighted.sum(axis=2)  # p(o_i | alpha), [N][C]
    safe = np.where(evidence > 0, evidence, 1.0)
    posterior = np.where(evidence[..., None] > 0, weighted / safe[..., None], predicted)

    decorrelated = belief.decorrelated | repaired
    hyper = belief.hyper.copy()
    log_lik = 0.0
    for i in np.flatnonzero(observations != Observation.NONE):
        if update_hyper and not decorrelated[i]:
            hyper = hyper * evidence[i]
            total = hyper.sum()
            if total <= 0:
                raise ImpossibleObservationError(int(i))
            hyper = hyper / total
            log_lik += math.log(total)
        else:
            # evidence is constant across cells for independent slices
            total = float(evidence[i] @ belief.hyper)
            if total <= 0:
                raise ImpossibleObservationError(int(i))
            log_lik += math.log(total)

    return SystemBelief(
        cond=posterior,
        hyper=hyper,
        hyper_shape=belief.hyper_shape,
        rate=rate_next.astype(int),
        decorrelated=decorrelated,
        time=belief.time + 1,
        last_log_likelihood=log_lik,
        log_likelihood=belief.log_likelihood + log_lik,
    )


def step_independent(
    belief: SystemBelief,
    actions: np.ndarray,
    observations: np.ndarray,
    model: DeteriorationModel,
    repair_rate: int = 0,
) -> SystemBelief:
    """
    One year of the independent-component filter. A repair resets the belief
    to the initial prior before propagation; the pre-normalization sums are
    accumulated as the observation log-likelihood.
    """
    if belief.n_cells > 1 and not belief.decorrelated.all():
        raise ValueError(
            "step_independent needs independent or fully decorrelated beliefs"
        )
    return _update(belief, actions, observations, model, False, repair_rate)


def step_hierarchical(
    belief: SystemBelief,
    actions: np.ndarray,
    observations: np.ndarray,
    model: DeteriorationModel,
    structure: CorrelationStructure,
    repair_rate: int = 0,
) -> SystemBelief:
    """
    One year of the hierarchical filter. Per hyperparameter cell each slice is
    propagated, weighted and normalized; the hyperparameter belief is then
    multiplied by ``p(o_i | alpha)`` for every inspected component that is
    still correlated, in component order.
    """
    if belief.n_cells != structure.n_cells:
        raise ValueError(
            f"belief has {belief.n_cells} hyperparameter cells, "
            f"structure has {structure.n_cells}"
        )
    _check_decorrelated(belief)
    return _update(belief, actions, observations, model, True, repair_rate)


def update_belief(
    belief: SystemBelief,
    actions: np.ndarray,
    observations: np.ndarray,
    model: DeteriorationModel,
    structure: CorrelationStructure | None = None,
    repair_rate: int = 0,
) -> SystemBelief:
    if structure is None or belief.n_cells == 1:
        return step_independent(belief, actions, observations, model, repair_rate)
    return step_hierarchical(
        belief, actions, observations, model, structure, repair_rate
    )


def component_failure_prob(belief: SystemBelief, component: int) -> float:
    """Marginal mass of the failure bin."""
    return float(belief.cond[component, :, -1] @ belief.hyper)


def hyper_mean(belief: SystemBelief, structure: CorrelationStructure) -> np.ndarray:
    """Posterior mean of every hyperparameter; empty when there is none."""
    if structure.n_hyper == 0 or belief.n_cells == 1:
        return np.zeros(0)
    joint = belief.hyper.reshape(belief.hyper_shape)
    means = []
    for axis in range(structure.n_hyper):
        others = tuple(a for a in range(structure.n_hyper) if a != axis)
        marginal = joint.sum(axis=others) if others else joint
        means.append(float(marginal @ structure.grid.points))
    return np.array(means)


def belief_rows(
    belief: SystemBelief, structure: CorrelationStructure | None = None
) -> list[tuple]:
    """One ``(t, component, p_fail, tau, decorrelated, alpha_mean)`` row each."""
    p_fail = belief.failure_probs()
    alpha = hyper_mean(belief, structure) if structure is not None else np.zeros(0)
    alpha_mean = float(alpha[0]) if alpha.size else 0.0
    return [
        (
            belief.time,
            i,
            float(p_fail[i]),
            int(belief.rate[i]),
            bool(belief.decorrelated[i]),
            alpha_mean,
        )
        for i in range(belief.n_components)
    ]


def export_belief_series(
    path: str,
    beliefs: list[SystemBelief],
    structure: CorrelationStructure | None = None,
) -> int:
    rows = [row for belief in beliefs for row in belief_rows(belief, structure)]
    return write_csv(
        path, ["t", "component", "p_fail", "tau", "decorrelated", "alpha_mean"], rows
    )


def save_belief_snapshot(path: str, belief: SystemBelief) -> None:
    save_container(
        path,
        BELIEF_KIND,
        {
            "time": belief.time,
            "hyper_shape": list(belief.hyper_shape),
            "log_likelihood": belief.log_likelihood,
        },
        {
            "cond": belief.cond,
            "hyper": belief.hyper,
            "rate": belief.rate,
            "decorrelated": belief.decorrelated,
        },
    )
