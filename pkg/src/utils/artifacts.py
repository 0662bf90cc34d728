import csv
import hashlib
import io
import json
import logging
import os
import time
import zipfile
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from tenacity import (
    retry,
    retry_if_exception_type,
    retry_if_not_exception_type,
    stop_after_attempt,
    wait_fixed,
)

from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

CONTAINER_FORMAT = "detpomdp-container"
CONTAINER_VERSION = 1

# Fixed member timestamp so identical content gives identical bytes.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)

io_retry = retry(
    stop=stop_after_attempt(3),
    wait=wait_fixed(2),
    retry=retry_if_exception_type(OSError)
    & retry_if_not_exception_type(FileNotFoundError),
    reraise=True,
)


def canonical_json(obj: Any) -> str:
    """Serializes ``obj`` with sorted keys and no insignificant whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def canonical_hash(obj: Any) -> str:
    """SHA-256 of the canonical JSON form of ``obj``."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Returns a generator whose stream depends only on ``seed`` and ``keys``.
    Used to give every table cell or episode its own reproducible stream.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def spawn_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Spawns ``n`` independent child seed sequences from ``seed``."""
    return np.random.SeedSequence(int(seed)).spawn(n)


def format_number(value: Any) -> str:
    """Shortest round-trip text for floats, plain text for everything else."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer, np.bool_)):
        return str(value.item())
    return str(value)


@io_retry
def save_container(
    path: str, kind: str, header: dict, arrays: dict[str, np.ndarray]
) -> None:
    """
    Writes a versioned binary container: a zip archive with a JSON header and
    one ``.npy`` member per array. Member order and timestamps are fixed, so
    the same inputs always produce the same bytes.
    """
    full_header = {
        "format": CONTAINER_FORMAT,
        "version": CONTAINER_VERSION,
        "kind": kind,
        **header,
    }
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("header.json", date_time=_ZIP_EPOCH)
        info.compress_type = zipfile.ZIP_DEFLATED
        zf.writestr(info, canonical_json(full_header))
        for name in sorted(arrays):
            buffer = io.BytesIO()
            np.lib.format.write_array(
                buffer, np.ascontiguousarray(arrays[name]), allow_pickle=False
            )
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buffer.getvalue())
    logger.info(f"Saved {kind} container with {len(arrays)} arrays to {path}")


@io_retry
def load_container(path: str, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Reads a container written by ``save_container`` and checks its kind/version."""
    arrays: dict[str, np.ndarray] = {}
    with zipfile.ZipFile(path, "r") as zf:
        header = json.loads(zf.read("header.json").decode("utf-8"))
        if header.get("format") != CONTAINER_FORMAT:
            raise ConfigError(f"{path} is not a toolkit container")
        if header.get("version") != CONTAINER_VERSION:
            raise ConfigError(
                f"{path} has container version {header.get('version')}, "
                f"expected {CONTAINER_VERSION}"
            )
        if header.get("kind") != kind:
            raise ConfigError(f"{path} holds a {header.get('kind')}, not a {kind}")
        for member in zf.namelist():
            if member.endswith(".npy"):
                with zf.open(member) as fh:
                    arrays[member[: -len(".npy")]] = np.lib.format.read_array(
                        io.BytesIO(fh.read()), allow_pickle=False
                    )
    logger.debug(f"Loaded {kind} container {path} ({len(arrays)} arrays)")
    return header, arrays


@io_retry
def write_csv(path: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    """Writes rows with full-precision numbers. Returns the number of rows written."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_number(v) for v in row])
            count += 1
    logger.debug(f"Wrote {count} rows to {path}")
    return count


@io_retry
def read_csv(path: str) -> list[dict[str, str]]:
    """Reads a CSV written by ``write_csv`` into a list of dicts."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


@dataclass
class RunManifest:
    """Everything needed to rerun a command and check its outputs."""

    command: str
    config_hash: str
    seeds: dict[str, int]
    artifacts: list[str]
    toolkit_version: str
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def manifest_hash(self) -> str:
        # Timings are excluded: reruns must hash identically.
        return canonical_hash(
            {
                "command": self.command,
                "config_hash": self.config_hash,
                "seeds": self.seeds,
                "artifacts": sorted(self.artifacts),
                "toolkit_version": self.toolkit_version,
            }
        )

    @io_retry
    def save(self, path: str) -> None:
        payload = asdict(self)
        payload["manifest_hash"] = self.manifest_hash
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
        logger.info(f"Run manifest {self.manifest_hash[:12]} written to {path}")


class Stopwatch:
    """Collects named wall-clock timings for the run manifest."""

    def __init__(self) -> None:
        self.timings: dict[str, float] = {}
        self._started: dict[str, float] = {}

    def start(self, name: str) -> None:
        self._started[name] = time.perf_counter()

    def stop(self, name: str) -> float:
        elapsed = time.perf_counter() - self._started.pop(name)
        self.timings[name] = elapsed
        return elapsed
