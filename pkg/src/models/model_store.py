"""
Builds deterioration models and correlation structures from experiment
configs, and stores them as versioned model files.
"""

import logging
import os
from dataclasses import asdict, dataclass

import numpy as np

from src.models.correlation import (
    ConditionalPrior,
    CorrelationSpec,
    CorrelationStructure,
    build_hyper_grid,
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
from src.utils.artifacts import load_container, save_container
from src.utils.errors import ConfigError
from src.utils.experiment_config import (
    EqualCorrelation,
    ExperimentConfig,
    GeneralCorrelation,
    ParisDiscretization,
    TabularDiscretization,
)

logger = logging.getLogger(__name__)

MODEL_KIND = "deterioration-model"


@dataclass(frozen=True)
class ModelBundle:
    """Everything the belief filter and the environment need about one experiment."""

    model: DeteriorationModel
    structure: CorrelationStructure
    prior: ConditionalPrior
    model_hash: str


def fatigue_params_from_config(config: ExperimentConfig) -> FatigueParams | None:
    if not isinstance(config.discretization, ParisDiscretization):
        return None
    return FatigueParams(
        **config.discretization.params.model_dump(),
        horizon_years=config.environment.horizon_years,
    )


def correlation_spec_from_config(config: ExperimentConfig) -> CorrelationSpec:
    corr = config.correlation
    n = config.n_components
    if isinstance(corr, EqualCorrelation):
        return CorrelationSpec(
            mode="equal",
            n_components=n,
            rho_eq=corr.rho,
            n_hyper=1,
            n_hyper_states=corr.n_hyper_states,
            quadrature=corr.quadrature,
        )
    if isinstance(corr, GeneralCorrelation):
        return CorrelationSpec(
            mode="general",
            n_components=n,
            matrix=np.array(corr.matrix, dtype=float),
            n_hyper=corr.n_hyper,
            n_hyper_states=corr.n_hyper_states,
            quadrature=corr.quadrature,
            fit_seed=corr.fit_seed,
        )
    return CorrelationSpec(mode="none", n_components=n)


def _tabular_model(disc: TabularDiscretization) -> DeteriorationModel:
    """Hand-set toy model; grid edges are nominal."""
    n = len(disc.prior)
    interior = disc.interior_edges or [float(i) for i in range(1, n)]
    edges = np.array([0.0, *interior, np.inf])
    crack_step = np.array(disc.crack_step, dtype=float)
    return DeteriorationModel(
        grids=StateGrids(crack_edges=edges, n_rate=crack_step.shape[0]),
        tables=TransitionTables(crack_step=crack_step),
        observation=ObservationModel(
            pod_mean=float("nan"), detect_prob=np.array(disc.detect_prob)
        ),
        prior=np.array(disc.prior, dtype=float),
    )


def build_models(config: ExperimentConfig, threads: int = 1) -> ModelBundle:
    """Builds the deterioration model, fits the correlation and conditions the prior."""
    disc = config.discretization
    if isinstance(disc, ParisDiscretization):
        params = fatigue_params_from_config(config)
        model = build_deterioration_model(
            params,
            n_crack=disc.n_crack,
            n_rate=disc.n_rate,
            mc_samples=disc.mc_samples,
            seed=disc.seed,
            pod_mean=disc.pod_mean,
            threads=threads,
        )
        d0_mean = params.d0_mean
    else:
        model = _tabular_model(disc)
        d0_mean = None

    structure = fit_loadings(correlation_spec_from_config(config))
    if d0_mean is None:
        if not structure.is_independent:
            raise ConfigError("tabular models support uncorrelated components only")
        prior = _replicated_prior(model, structure)
    else:
        prior = conditional_initial_belief(structure, model.grids, d0_mean)
    return ModelBundle(
        model=model, structure=structure, prior=prior, model_hash=config.model_hash
    )


def _replicated_prior(
    model: DeteriorationModel, structure: CorrelationStructure
) -> ConditionalPrior:
    """The unconditional prior repeated for every component and hyperparameter cell."""
    n_cells = structure.n_cells
    cond = np.broadcast_to(
        model.prior, (structure.n_components, n_cells, model.n_crack)
    ).copy()
    return ConditionalPrior(cond=cond, hyper_prior=np.full(n_cells, 1.0 / n_cells))


def save_model_file(path: str, bundle: ModelBundle) -> None:
    model, structure = bundle.model, bundle.structure
    header = {
        "model_hash": bundle.model_hash,
        "params": asdict(model.params) if model.params is not None else None,
        "seed": model.seed,
        "mc_samples": model.mc_samples,
        "pod_mean": model.observation.pod_mean if model.params is not None else None,
        "n_crack": model.n_crack,
        "n_rate": model.n_rate,
        "n_hyper_states": structure.grid.n_states if structure.grid is not None else 0,
        "fit_residual": structure.fit_residual,
        "quadrature": structure.quadrature,
    }
    arrays = {
        "crack_edges": model.grids.crack_edges,
        "crack_step": model.tables.crack_step,
        "detect_prob": model.observation.detect_prob,
        "prior": model.prior,
        "loadings": structure.loadings,
        "cond_prior": bundle.prior.cond,
        "hyper_prior": bundle.prior.hyper_prior,
    }
    if structure.target is not None:
        arrays["target_correlation"] = structure.target
    save_container(path, MODEL_KIND, header, arrays)


def load_model_file(path: str) -> ModelBundle:
    header, arrays = load_container(path, MODEL_KIND)
    params = FatigueParams(**header["params"]) if header["params"] is not None else None
    pod_mean = header["pod_mean"] if header["pod_mean"] is not None else float("nan")
    model = DeteriorationModel(
        grids=StateGrids(crack_edges=arrays["crack_edges"], n_rate=header["n_rate"]),
        tables=TransitionTables(crack_step=arrays["crack_step"]),
        observation=ObservationModel(
            pod_mean=pod_mean, detect_prob=arrays["detect_prob"]
        ),
        prior=arrays["prior"],
        params=params,
        seed=header["seed"],
        mc_samples=header["mc_samples"],
    )
    n_states = header["n_hyper_states"]
    structure = CorrelationStructure(
        loadings=arrays["loadings"],
        grid=build_hyper_grid(n_states) if n_states else None,
        fit_residual=header["fit_residual"],
        quadrature=header["quadrature"],
        target=arrays.get("target_correlation"),
    )
    prior = ConditionalPrior(
        cond=arrays["cond_prior"], hyper_prior=arrays["hyper_prior"]
    )
    return ModelBundle(
        model=model, structure=structure, prior=prior, model_hash=header["model_hash"]
    )


def load_or_build(
    config: ExperimentConfig, cache_dir: str | None = None, threads: int = 1
) -> ModelBundle:
    """
    Returns the model bundle for ``config``, reusing a cached model file keyed
    by the config's model hash when one exists.
    """
    if cache_dir:
        cached = os.path.join(cache_dir, f"{config.model_hash}.model")
        if os.path.exists(cached):
            bundle = load_model_file(cached)
            if bundle.model_hash == config.model_hash:
                logger.info(f"Using cached model {cached}")
                return bundle
            logger.warning(f"Ignoring cached model {cached}: hash mismatch")
    bundle = build_models(config, threads=threads)
    if cache_dir:
        save_model_file(cached, bundle)
    return bundle


def check_bundle_matches(bundle: ModelBundle, config: ExperimentConfig) -> None:
    """Raises ``ConfigError`` when a model file was built from a different config."""
    if bundle.model_hash != config.model_hash:
        raise ConfigError(
            f"Model file hash {bundle.model_hash[:12]} does not match config "
            f"{config.model_hash[:12]}"
        )
    if bundle.structure.n_components != config.n_components:
        raise ConfigError("Model file component count does not match the config")
