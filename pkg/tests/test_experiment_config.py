import glob
import json
import os

import pytest

from src.utils.errors import ConfigError
from src.utils.experiment_config import (
    EqualCorrelation,
    HeuristicsConfig,
    TrainingConfig,
    load_experiment_config,
    parse_experiment_config,
)
from tests.helpers import toy_config_payload, write_config

CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
SHIPPED_CONFIGS = sorted(glob.glob(os.path.join(CONFIG_DIR, "*.json")))


# Test shipped configs
@pytest.mark.parametrize("path", SHIPPED_CONFIGS, ids=os.path.basename)
def test_shipped_configs_validate(path):
    """Test that every config in the repository passes validation."""
    config = load_experiment_config(path)
    assert config.name == os.path.splitext(os.path.basename(path))[0]


def test_shipped_configs_exist():
    """Test that the experiment configs are present."""
    assert len(SHIPPED_CONFIGS) >= 10


# Test validation
def test_unknown_key_rejected():
    """Test that unknown keys anywhere in the document are rejected."""
    with pytest.raises(ConfigError):
        parse_experiment_config(toy_config_payload(colour="blue"))
    payload = toy_config_payload()
    payload["environment"] = {**payload["environment"], "horizon": 3}
    with pytest.raises(ConfigError):
        parse_experiment_config(payload)


def test_schema_version_must_match():
    """Test that a document from another schema version is rejected."""
    with pytest.raises(ConfigError):
        parse_experiment_config(toy_config_payload(schema_version=2))


def test_k_above_component_count_rejected():
    """Test that k may not exceed the number of components."""
    payload = toy_config_payload(system={"kind": "k_out_of_n", "k": 2})
    with pytest.raises(ConfigError):
        parse_experiment_config(payload)


def test_continuous_truth_needs_paris_model():
    """Test that hand-set tables cannot drive continuous ground truth."""
    payload = toy_config_payload()
    payload["environment"] = {**payload["environment"], "truth": "continuous"}
    with pytest.raises(ConfigError):
        parse_experiment_config(payload)


def test_correlation_matrix_size_checked():
    """Test that a general correlation matrix must match the component count."""
    payload = toy_config_payload(
        correlation={"mode": "general", "matrix": [[1.0, 0.2], [0.2, 1.0]]}
    )
    with pytest.raises(ConfigError):
        parse_experiment_config(payload)


def test_field_constraints():
    """Test single-section constraints."""
    with pytest.raises(ValueError):
        EqualCorrelation(rho=1.0)
    with pytest.raises(ValueError):
        HeuristicsConfig(stage1_realizations=100, stage2_realizations=50)
    with pytest.raises(ValueError):
        TrainingConfig(actor_lr=(1e-5, 1e-4))
    with pytest.raises(ValueError):
        TrainingConfig(exploration_start=0.1, exploration_end=0.5)


# Test hashes
def test_hashes_are_stable():
    """Test that equal documents hash equally, whatever their key order."""
    a = parse_experiment_config(toy_config_payload())
    reordered = dict(reversed(list(toy_config_payload().items())))
    b = parse_experiment_config(reordered)
    assert a.config_hash == b.config_hash
    assert a.environment_hash == b.environment_hash


def test_model_hash_ignores_training_settings():
    """Test that training and evaluation settings leave the model hash alone."""
    base = parse_experiment_config(toy_config_payload())
    payload = toy_config_payload(evaluation={"n_episodes": 99})
    changed = parse_experiment_config(payload)
    assert base.model_hash == changed.model_hash
    assert base.environment_hash == changed.environment_hash
    assert base.config_hash != changed.config_hash


def test_environment_hash_tracks_costs():
    """Test that a cost change gives a new environment hash but the same model."""
    base = parse_experiment_config(toy_config_payload())
    payload = toy_config_payload()
    payload["environment"] = {**payload["environment"], "r_fail": -500.0}
    changed = parse_experiment_config(payload)
    assert base.model_hash == changed.model_hash
    assert base.environment_hash != changed.environment_hash


# Test load_experiment_config
def test_missing_file():
    """Test that a missing file raises a config error."""
    with pytest.raises(ConfigError):
        load_experiment_config("does-not-exist.json")


def test_invalid_json(tmp_path):
    """Test that malformed JSON raises a config error."""
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_experiment_config(str(path))


def test_load_round_trip(tmp_path):
    """Test that a written payload loads with its values."""
    path = write_config(str(tmp_path), toy_config_payload())
    config = load_experiment_config(path)
    assert config.n_components == 1
    assert config.environment.horizon_years == 4
    with open(path, "r", encoding="utf-8") as f:
        assert json.load(f)["name"] == config.name
