import logging

from src.environment.episode import CampaignCosts, EnvConfig, IndividualCosts
from src.models.model_store import ModelBundle
from src.reliability.resistance import (
    ResistanceTable,
    demo_three_element_table,
    synthetic_zayas_table,
)
from src.reliability.system import (
    MAX_ENUMERATED_ELEMENTS,
    FrameSystem,
    KOutOfN,
    LoadModel,
    SystemModel,
)
from src.utils.errors import ConfigError
from src.utils.experiment_config import (
    CampaignCosts as CampaignCostsConfig,
    ExperimentConfig,
    FrameSystem as FrameSystemConfig,
)

logger = logging.getLogger(__name__)


def build_system_model(
    config: ExperimentConfig, max_elements: int = MAX_ENUMERATED_ELEMENTS
) -> SystemModel:
    """System failure evaluator described by the experiment config."""
    system = config.system
    if not isinstance(system, FrameSystemConfig):
        return KOutOfN(k=system.k, n=config.n_components)

    source = system.resistance
    if source.source == "synthetic_zayas":
        table, default_map = synthetic_zayas_table()
    elif source.source == "demo_three_element":
        table, default_map = demo_three_element_table()
    else:
        table, default_map = ResistanceTable.load(source.path), None
    element_map = system.element_map or default_map
    if element_map is None:
        raise ConfigError("a resistance table file needs an explicit element_map")
    try:
        frame = FrameSystem(
            element_map=tuple(tuple(h) for h in element_map),
            resistance=table,
            load=LoadModel(mean=system.load.mean, cov=system.load.cov),
            max_elements=max_elements,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    logger.debug(f"Frame with {table.n_elements} elements, {frame.n_hotspots} hotspots")
    return frame


def build_env_config(
    config: ExperimentConfig,
    bundle: ModelBundle,
    max_elements: int = MAX_ENUMERATED_ELEMENTS,
) -> EnvConfig:
    env = config.environment
    if isinstance(env.cost_model, CampaignCostsConfig):
        cost_model = CampaignCosts(
            r_camp=env.cost_model.r_camp,
            r_ins_surplus=env.cost_model.r_ins_surplus,
            r_rep=env.cost_model.r_rep,
        )
    else:
        cost_model = IndividualCosts(
            r_ins=env.cost_model.r_ins, r_rep=env.cost_model.r_rep
        )
    return EnvConfig(
        n_components=config.n_components,
        bundle=bundle,
        system=build_system_model(config, max_elements),
        horizon_years=env.horizon_years,
        discount=env.discount,
        cost_model=cost_model,
        r_fail=env.r_fail,
        truth=env.truth,
        failure_accounting=env.failure_accounting,
        repair_rate=env.repair_rate,
        config_hash=config.environment_hash,
    )
