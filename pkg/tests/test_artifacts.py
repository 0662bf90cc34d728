from unittest.mock import mock_open, patch

import numpy as np
import pytest

from src.utils.artifacts import (
    RunManifest,
    Stopwatch,
    canonical_hash,
    canonical_json,
    derive_rng,
    format_number,
    load_container,
    read_csv,
    save_container,
    spawn_seeds,
    write_csv,
)
from src.utils.errors import ConfigError


# Test canonical hashing
def test_canonical_json_ignores_key_order():
    """Test that key order does not change the canonical form or its hash."""
    a = {"b": 1, "a": [1, 2, {"y": 0.5, "x": None}]}
    b = {"a": [1, 2, {"x": None, "y": 0.5}], "b": 1}
    assert canonical_json(a) == canonical_json(b)
    assert canonical_hash(a) == canonical_hash(b)
    assert canonical_hash(a) != canonical_hash({**a, "b": 2})


def test_format_number():
    """Test round-trip float text and plain integers."""
    assert format_number(0.1) == "0.1"
    assert format_number(np.float64(1 / 3)) == repr(1 / 3)
    assert format_number(np.int64(7)) == "7"
    assert format_number(np.bool_(True)) == "True"
    assert format_number("rule") == "rule"


# Test seeding helpers
def test_derive_rng_streams():
    """Test that derived streams depend only on the seed and keys."""
    a = derive_rng(5, 1, 2).random(4)
    b = derive_rng(5, 1, 2).random(4)
    c = derive_rng(5, 2, 1).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_spawn_seeds_are_distinct():
    """Test that spawned children give different streams."""
    children = spawn_seeds(0, 3)
    draws = [np.random.default_rng(s).random() for s in children]
    assert len(set(draws)) == 3


# Test containers
def test_container_round_trip(tmp_path):
    """Test that headers and arrays come back unchanged."""
    path = str(tmp_path / "sub" / "thing.bin")
    arrays = {"b": np.arange(6.0).reshape(2, 3), "a": np.array([1, 2, 3])}
    save_container(path, "thing", {"n": 3}, arrays)
    header, loaded = load_container(path, "thing")
    assert header["n"] == 3
    assert header["kind"] == "thing"
    assert np.array_equal(loaded["b"], arrays["b"])
    assert loaded["a"].dtype == arrays["a"].dtype


def test_container_bytes_are_deterministic(tmp_path):
    """Test that identical content gives identical files."""
    arrays = {"x": np.linspace(0, 1, 5)}
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    save_container(str(a), "thing", {"n": 1}, arrays)
    save_container(str(b), "thing", {"n": 1}, arrays)
    assert a.read_bytes() == b.read_bytes()


def test_container_kind_is_checked(tmp_path):
    """Test that reading a container as another kind raises."""
    path = str(tmp_path / "thing.bin")
    save_container(path, "thing", {}, {})
    with pytest.raises(ConfigError):
        load_container(path, "other")


# Test CSV helpers
def test_write_and_read_csv(tmp_path):
    """Test that rows keep full float precision."""
    path = str(tmp_path / "rows.csv")
    count = write_csv(path, ("name", "value"), [("a", 1 / 3), ("b", np.int64(2))])
    assert count == 2
    rows = read_csv(path)
    assert float(rows[0]["value"]) == 1 / 3
    assert rows[1] == {"name": "b", "value": "2"}


@patch("time.sleep")
def test_read_csv_retries_transient_errors(mock_sleep):
    """Test that a transient OSError is retried."""
    handle = mock_open(read_data="name,value\na,1\n")()
    with patch("builtins.open", side_effect=[OSError("busy"), handle]) as mock_file:
        rows = read_csv("rows.csv")
    assert rows == [{"name": "a", "value": "1"}]
    assert mock_file.call_count == 2


@patch("time.sleep")
def test_read_csv_gives_up_after_three_attempts(mock_sleep):
    """Test that persistent errors are re-raised after three attempts."""
    with patch("builtins.open", side_effect=OSError("gone")) as mock_file:
        with pytest.raises(OSError):
            read_csv("rows.csv")
    assert mock_file.call_count == 3


@patch("time.sleep")
def test_read_csv_does_not_retry_missing_file(mock_sleep):
    """Test that a missing file fails on the first attempt."""
    with patch("builtins.open", side_effect=FileNotFoundError("rows.csv")) as mock_file:
        with pytest.raises(FileNotFoundError):
            read_csv("rows.csv")
    assert mock_file.call_count == 1
    mock_sleep.assert_not_called()


# Test RunManifest
def test_manifest_hash_ignores_timings(tmp_path):
    """Test that wall-clock timings do not enter the manifest hash."""
    common = ("evaluate", "abc", {"evaluate": 1}, ["a.csv"], "1.0.0")
    fast = RunManifest(*common, timings={"t": 1.0})
    slow = RunManifest(*common, timings={"t": 9.0})
    assert fast.manifest_hash == slow.manifest_hash
    other = RunManifest("evaluate", "abc", {"evaluate": 2}, ["a.csv"], "1.0.0")
    assert other.manifest_hash != fast.manifest_hash
    path = tmp_path / "run.manifest.json"
    fast.save(str(path))
    assert fast.manifest_hash in path.read_text()


def test_stopwatch_records_timings():
    """Test that a stopped timer is recorded under its name."""
    watch = Stopwatch()
    watch.start("build")
    elapsed = watch.stop("build")
    assert watch.timings == {"build": elapsed}
    assert elapsed >= 0.0
