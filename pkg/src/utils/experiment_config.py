"""
Experiment config schema.

One JSON document per experiment holds every module's settings. Unknown keys
are rejected and ``schema_version`` must match, so a config is validated in
full before any run starts.
"""

import json
import logging
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.utils.artifacts import canonical_hash
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# --- Discretization ---


class FatigueParamsConfig(_Strict):
    ln_c_mean: float = -35.2
    ln_c_sd: float = Field(0.5, ge=0)
    s_mean: float = 70.0
    s_sd: float = Field(10.0, ge=0)
    m: float = Field(3.5, gt=2)
    n_cycles: float = Field(1e6, gt=0)
    d0_mean: float = Field(1.0, gt=0)
    d_crit: float = Field(20.0, gt=0)


class ParisDiscretization(_Strict):
    """Tables estimated by Monte Carlo from the Paris-law growth function."""

    kind: Literal["paris"] = "paris"
    params: FatigueParamsConfig = FatigueParamsConfig()
    n_crack: int = Field(30, ge=3)
    n_rate: int = Field(31, ge=1)
    mc_samples: int = Field(100_000, ge=10_000)
    seed: int = Field(0, ge=0)
    pod_mean: float = Field(8.0, gt=0)


class TabularDiscretization(_Strict):
    """Hand-set tables for toy models; no physical parameters."""

    kind: Literal["tabular"] = "tabular"
    crack_step: list[list[list[float]]]
    detect_prob: list[float]
    prior: list[float]
    interior_edges: list[float] | None = None

    @model_validator(mode="after")
    def _check_shapes(self) -> "TabularDiscretization":
        n = len(self.prior)
        if n < 2:
            raise ValueError("tabular model needs at least 2 crack bins")
        if len(self.detect_prob) != n:
            raise ValueError("detect_prob length must equal the number of bins")
        for table in self.crack_step:
            if len(table) != n or any(len(row) != n for row in table):
                raise ValueError("crack_step must be [n_rate][n][n]")
        if self.interior_edges is not None and len(self.interior_edges) != n - 1:
            raise ValueError("interior_edges must have n - 1 entries")
        return self


DiscretizationConfig = Annotated[
    Union[ParisDiscretization, TabularDiscretization], Field(discriminator="kind")
]


# --- Correlation ---


class NoCorrelation(_Strict):
    mode: Literal["none"] = "none"


class EqualCorrelation(_Strict):
    mode: Literal["equal"] = "equal"
    rho: float = Field(..., ge=0.0, lt=1.0)
    n_hyper_states: int = Field(80, ge=1)
    quadrature: Literal["midpoint", "cell_average"] = "midpoint"


class GeneralCorrelation(_Strict):
    mode: Literal["general"] = "general"
    matrix: list[list[float]]
    n_hyper: int = Field(2, ge=1, le=2)
    n_hyper_states: int = Field(80, ge=1)
    quadrature: Literal["midpoint", "cell_average"] = "midpoint"
    fit_seed: int = Field(0, ge=0)
    description: str = ""

    @model_validator(mode="after")
    def _check_matrix(self) -> "GeneralCorrelation":
        n = len(self.matrix)
        if any(len(row) != n for row in self.matrix):
            raise ValueError("correlation matrix must be square")
        for i in range(n):
            if self.matrix[i][i] != 1.0:
                raise ValueError("correlation matrix must have a unit diagonal")
            for j in range(n):
                if abs(self.matrix[i][j]) > 1.0:
                    raise ValueError("correlations must lie in [-1, 1]")
                if self.matrix[i][j] != self.matrix[j][i]:
                    raise ValueError("correlation matrix must be symmetric")
        return self


CorrelationConfig = Annotated[
    Union[NoCorrelation, EqualCorrelation, GeneralCorrelation],
    Field(discriminator="mode"),
]


# --- System ---


class KOutOfNSystem(_Strict):
    kind: Literal["k_out_of_n"] = "k_out_of_n"
    k: int = Field(..., ge=1)


class LoadConfig(_Strict):
    mean: float = Field(70.0, gt=0)  # kN
    cov: float = Field(0.25, gt=0)


class ResistanceSource(_Strict):
    source: Literal["synthetic_zayas", "demo_three_element", "file"] = "synthetic_zayas"
    path: str | None = None

    @model_validator(mode="after")
    def _check_path(self) -> "ResistanceSource":
        if self.source == "file" and not self.path:
            raise ValueError("a file resistance source needs a path")
        return self


class FrameSystem(_Strict):
    kind: Literal["frame"] = "frame"
    element_map: list[list[int]] | None = None
    resistance: ResistanceSource = ResistanceSource()
    load: LoadConfig = LoadConfig()


SystemConfig = Annotated[
    Union[KOutOfNSystem, FrameSystem], Field(discriminator="kind")
]


# --- Environment ---


class IndividualCosts(_Strict):
    kind: Literal["individual"] = "individual"
    r_ins: float = Field(-1.0, le=0)
    r_rep: float = Field(-20.0, le=0)


class CampaignCosts(_Strict):
    kind: Literal["campaign"] = "campaign"
    r_camp: float = Field(-5.0, le=0)
    r_ins_surplus: float = Field(-0.2, le=0)
    r_rep: float = Field(-20.0, le=0)


CostModelConfig = Annotated[
    Union[IndividualCosts, CampaignCosts], Field(discriminator="kind")
]


class EnvironmentConfig(_Strict):
    horizon_years: int = Field(30, ge=1)
    discount: float = Field(0.95, gt=0.0, le=1.0)
    cost_model: CostModelConfig = IndividualCosts()
    r_fail: float = Field(-10_000.0, le=0)
    truth: Literal["continuous", "discrete"] = "continuous"
    failure_accounting: Literal["belief", "sampled"] = "belief"
    repair_rate: int = Field(0, ge=0)


# --- Training / heuristics / evaluation ---


class TrainingConfig(_Strict):
    episodes: int = Field(50_000, ge=1)
    actor_hidden: list[int] = [100, 100]
    critic_hidden: list[int] = [200, 200]
    actor_lr: tuple[float, float] = (1e-4, 1e-5)
    critic_lr: tuple[float, float] = (1e-3, 1e-4)
    lr_anneal_episode: int = Field(25_000, ge=0)
    exploration_start: float = Field(1.0, ge=0, le=1)
    exploration_end: float = Field(0.01, ge=0, le=1)
    exploration_decay_episodes: int = Field(20_000, ge=1)
    priming_episodes: int = Field(1_000, ge=0)
    priming_do_nothing_prob: float = Field(0.9, gt=0, lt=1)
    buffer_capacity: int = Field(100_000, ge=1)
    batch_size: int = Field(64, ge=1)
    warmup_transitions: int = Field(1_000, ge=0)
    is_clip: float = Field(2.0, gt=0)
    optimizer: Literal["sgd", "momentum"] = "sgd"
    momentum: float = Field(0.9, ge=0, lt=1)
    grad_clip: float | None = Field(None, gt=0)
    prioritized_replay: bool = False
    shared_trunk: bool = False
    cost_window: int = Field(100, ge=1)
    divergence_factor: float = Field(10.0, gt=1)
    divergence_lag: int = Field(5_000, ge=1)
    eval_every: int = Field(0, ge=0)
    eval_episodes: int = Field(100, ge=1)

    @model_validator(mode="after")
    def _check_schedules(self) -> "TrainingConfig":
        for name in ("actor_lr", "critic_lr"):
            start, end = getattr(self, name)
            if start <= 0 or end <= 0 or end > start:
                raise ValueError(f"{name} must be positive and non-increasing")
        if self.exploration_end > self.exploration_start:
            raise ValueError("exploration schedule must be non-increasing")
        if any(h < 1 for h in (*self.actor_hidden, *self.critic_hidden)):
            raise ValueError("hidden layer widths must be >= 1")
        return self


class RuleConfig(_Strict):
    delta_ins: int = Field(..., ge=1)
    n_ins: int = Field(..., ge=1)


class HeuristicsConfig(_Strict):
    delta_grid: list[int] = list(range(1, 16))
    n_ins_grid: list[int] | None = None
    stage1_realizations: int = Field(3_000, ge=1)
    shortlist: int = Field(5, ge=1)
    stage2_realizations: int = Field(10_000, ge=1)
    reference_rule: RuleConfig | None = None

    @model_validator(mode="after")
    def _check_protocol(self) -> "HeuristicsConfig":
        if self.stage2_realizations < self.stage1_realizations:
            raise ValueError("stage2_realizations must be >= stage1_realizations")
        if not self.delta_grid or any(d < 1 for d in self.delta_grid):
            raise ValueError("delta_grid must hold positive intervals")
        return self


class EvaluationConfig(_Strict):
    n_episodes: int = Field(10_000, ge=1)


class ExperimentConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    name: str
    description: str = ""
    n_components: int = Field(..., ge=1)
    discretization: DiscretizationConfig = ParisDiscretization()
    correlation: CorrelationConfig = NoCorrelation()
    system: SystemConfig
    environment: EnvironmentConfig = EnvironmentConfig()
    training: TrainingConfig = TrainingConfig()
    heuristics: HeuristicsConfig = HeuristicsConfig()
    evaluation: EvaluationConfig = EvaluationConfig()

    @model_validator(mode="after")
    def _check_cross_fields(self) -> "ExperimentConfig":
        n = self.n_components
        if isinstance(self.system, KOutOfNSystem) and self.system.k > n:
            raise ValueError(f"k={self.system.k} exceeds n_components={n}")
        if isinstance(self.system, FrameSystem) and self.system.element_map is not None:
            covered = sorted(h for element in self.system.element_map for h in element)
            if covered != list(range(n)):
                raise ValueError("element_map must cover every hotspot exactly once")
        if isinstance(self.correlation, GeneralCorrelation) and len(
            self.correlation.matrix
        ) != n:
            raise ValueError("correlation matrix size must equal n_components")
        if self.environment.truth == "continuous" and isinstance(
            self.discretization, TabularDiscretization
        ):
            raise ValueError("continuous ground truth needs a paris discretization")
        if self.environment.truth == "discrete" and not isinstance(
            self.correlation, NoCorrelation
        ):
            raise ValueError("discrete ground truth supports uncorrelated models only")
        n_ins_grid = self.heuristics.n_ins_grid
        if n_ins_grid is not None and any(k < 1 or k > n for k in n_ins_grid):
            raise ValueError("n_ins_grid entries must lie in 1..n_components")
        return self

    @property
    def config_hash(self) -> str:
        return canonical_hash(self.model_dump(mode="json"))

    @property
    def model_hash(self) -> str:
        """Identifies the built deterioration model and fitted correlation."""
        return canonical_hash(
            {
                "n_components": self.n_components,
                "horizon_years": self.environment.horizon_years,
                "discretization": self.discretization.model_dump(mode="json"),
                "correlation": self.correlation.model_dump(mode="json"),
            }
        )

    @property
    def environment_hash(self) -> str:
        """Identifies everything a trained policy depends on."""
        return canonical_hash(
            {
                "model": self.model_hash,
                "system": self.system.model_dump(mode="json"),
                "environment": self.environment.model_dump(mode="json"),
            }
        )


def parse_experiment_config(payload: dict) -> ExperimentConfig:
    """Validates a decoded config document. Raises ``ConfigError``."""
    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(f"Invalid experiment config: {e}") from e


def load_experiment_config(path: str) -> ExperimentConfig:
    """Reads and validates a JSON experiment config."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
    config = parse_experiment_config(payload)
    logger.info(f"Loaded experiment config '{config.name}' ({config.config_hash[:12]})")
    return config
