"""Small models and oracles shared by the test modules."""

import copy
import functools
import json
import os

import numpy as np

from src.environment.episode import EnvConfig, IndividualCosts
from src.models.correlation import (
    ConditionalPrior,
    CorrelationSpec,
    CorrelationStructure,
    conditional_initial_belief,
    fit_loadings,
)
from src.models.discretization import (
    DeteriorationModel,
    FatigueParams,
    ObservationModel,
    StateGrids,
    TransitionTables,
    build_deterioration_model,
)
from src.models.model_store import ModelBundle
from src.reliability.system import KOutOfN

TOY_STEP = [[0.8, 0.2, 0.0], [0.0, 0.7, 0.3], [0.0, 0.0, 1.0]]
TOY_DETECT = [0.05, 0.7, 1.0]
TOY_PRIOR = [0.9, 0.1, 0.0]


def toy_model(n_rate: int = 1) -> DeteriorationModel:
    """Three crack bins with hand-set tables; the last bin is failure."""
    return DeteriorationModel(
        grids=StateGrids(crack_edges=np.array([0.0, 1.0, 2.0, np.inf]), n_rate=n_rate),
        tables=TransitionTables(crack_step=np.array([TOY_STEP] * n_rate)),
        observation=ObservationModel(
            pod_mean=float("nan"), detect_prob=np.array(TOY_DETECT)
        ),
        prior=np.array(TOY_PRIOR),
    )


@functools.lru_cache(maxsize=None)
def small_paris_model(
    n_crack: int = 5, n_rate: int = 4, seed: int = 0
) -> DeteriorationModel:
    """Paris-law model on a coarse grid, cheap enough for unit tests."""
    return build_deterioration_model(
        FatigueParams(horizon_years=n_rate - 1),
        n_crack=n_crack,
        n_rate=n_rate,
        mc_samples=10_000,
        seed=seed,
    )


def independent_structure(n_components: int) -> CorrelationStructure:
    return fit_loadings(CorrelationSpec(mode="none", n_components=n_components))


def equal_structure(
    n_components: int, rho: float, n_states: int = 40, quadrature: str = "midpoint"
) -> CorrelationStructure:
    return fit_loadings(
        CorrelationSpec(
            mode="equal",
            n_components=n_components,
            rho_eq=rho,
            n_hyper_states=n_states,
            quadrature=quadrature,
        )
    )


def replicated_prior(
    model: DeteriorationModel, structure: CorrelationStructure
) -> ConditionalPrior:
    n_cells = structure.n_cells
    cond = np.broadcast_to(
        model.prior, (structure.n_components, n_cells, model.n_crack)
    ).copy()
    return ConditionalPrior(cond=cond, hyper_prior=np.full(n_cells, 1.0 / n_cells))


def make_bundle(
    model: DeteriorationModel,
    structure: CorrelationStructure,
    prior: ConditionalPrior | None = None,
) -> ModelBundle:
    if prior is None:
        if model.params is not None:
            d0_mean = model.params.d0_mean
            prior = conditional_initial_belief(structure, model.grids, d0_mean)
        else:
            prior = replicated_prior(model, structure)
    return ModelBundle(model=model, structure=structure, prior=prior, model_hash="test")


def toy_env(
    n_components: int = 1,
    horizon: int = 5,
    r_fail: float = -1000.0,
    costs=None,
    k: int | None = None,
    **kwargs,
) -> EnvConfig:
    """Environment over ``toy_model`` with discrete ground truth."""
    model = toy_model()
    bundle = make_bundle(model, independent_structure(n_components))
    return EnvConfig(
        n_components=n_components,
        bundle=bundle,
        system=KOutOfN(k=k or n_components, n=n_components),
        horizon_years=horizon,
        cost_model=costs or IndividualCosts(),
        r_fail=r_fail,
        truth="discrete",
        config_hash="toy",
        **kwargs,
    )


def paris_env(
    n_components: int = 2,
    rho: float = 0.0,
    horizon: int = 3,
    k: int | None = None,
    **kwargs,
) -> EnvConfig:
    """Environment over ``small_paris_model`` with continuous ground truth."""
    model = small_paris_model(n_rate=horizon + 1)
    structure = (
        equal_structure(n_components, rho, n_states=20)
        if rho > 0
        else independent_structure(n_components)
    )
    return EnvConfig(
        n_components=n_components,
        bundle=make_bundle(model, structure),
        system=KOutOfN(k=k or n_components, n=n_components),
        horizon_years=horizon,
        config_hash="paris",
        **kwargs,
    )


# --- Brute-force joint filter ---


def joint_prior(
    model: DeteriorationModel, rho: float, n_components: int, fine_states: int = 4000
) -> np.ndarray:
    """Joint initial crack distribution, integrated over a fine hyperparameter grid."""
    structure = equal_structure(n_components, rho, n_states=fine_states)
    prior = conditional_initial_belief(structure, model.grids, model.params.d0_mean)
    joint = np.zeros((model.n_crack,) * n_components)
    for c in range(structure.n_cells):
        term = prior.cond[0, c]
        for i in range(1, n_components):
            term = np.multiply.outer(term, prior.cond[i, c])
        joint += prior.hyper_prior[c] * term
    return joint / joint.sum()


def brute_force_filter(
    model: DeteriorationModel,
    joint: np.ndarray,
    actions: list[list[int]],
    observations: list[list[int]],
    repair_rate: int = 0,
) -> list[np.ndarray]:
    """Exact filter over the joint state space; marginals ``[N][n_crack]`` per step."""
    n = joint.ndim
    rate = np.zeros(n, dtype=int)
    out = []
    for a, o in zip(actions, observations):
        a = np.asarray(a)
        rate_next = np.minimum(rate + 1, model.n_rate - 1)
        rate_next = np.where(a == 2, min(repair_rate, model.n_rate - 1), rate_next)
        for i in np.flatnonzero(a == 2):
            others = joint.sum(axis=i, keepdims=True)
            shape = [1] * n
            shape[i] = model.n_crack
            joint = others * model.prior.reshape(shape)
        for i in range(n):
            joint = np.moveaxis(
                np.tensordot(
                    joint, model.tables.crack_step[rate_next[i]], axes=([i], [0])
                ),
                -1,
                i,
            )
        for i in range(n):
            lik = model.observation.likelihood_matrix(np.array([o[i]]))[0]
            shape = [1] * n
            shape[i] = model.n_crack
            joint = joint * lik.reshape(shape)
        joint = joint / joint.sum()
        rate = rate_next
        out.append(
            np.array(
                [joint.sum(axis=tuple(j for j in range(n) if j != i)) for i in range(n)]
            )
        )
    return out


# --- Experiment configs ---


TOY_CONFIG = {
    "schema_version": 1,
    "name": "toy",
    "n_components": 1,
    "discretization": {
        "kind": "tabular",
        "crack_step": [TOY_STEP],
        "detect_prob": TOY_DETECT,
        "prior": TOY_PRIOR,
    },
    "correlation": {"mode": "none"},
    "system": {"kind": "k_out_of_n", "k": 1},
    "environment": {
        "horizon_years": 4,
        "r_fail": -1000.0,
        "truth": "discrete",
    },
    "training": {
        "episodes": 5,
        "actor_hidden": [4],
        "critic_hidden": [4],
        "actor_lr": [0.001, 0.001],
        "critic_lr": [0.001, 0.001],
        "lr_anneal_episode": 3,
        "exploration_decay_episodes": 3,
        "priming_episodes": 1,
        "buffer_capacity": 100,
        "batch_size": 4,
        "warmup_transitions": 4,
        "divergence_lag": 100,
    },
    "heuristics": {
        "delta_grid": [1, 2, 5],
        "stage1_realizations": 20,
        "shortlist": 2,
        "stage2_realizations": 40,
        "reference_rule": {"delta_ins": 2, "n_ins": 1},
    },
    "evaluation": {"n_episodes": 10},
}


def toy_config_payload(**overrides) -> dict:
    payload = copy.deepcopy(TOY_CONFIG)
    for key, value in overrides.items():
        payload[key] = value
    return payload


def write_config(directory: str, payload: dict, name: str = "experiment.json") -> str:
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)
    return path
