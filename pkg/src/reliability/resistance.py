"""
Resistance tables: collapse load of a frame for every element survival state.

Masks list element states in element order with element 0 in the most
significant bit; a set bit means the element survives. The table file format
is a first line holding ``n_elements`` followed by one ``bitmask_hex,L_col_kN``
row per mask.
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.utils.artifacts import io_retry
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

MONOTONE_TOLERANCE = 1e-9

# Intact resistance and per-brace knock-down factors of the synthetic jacket frame.
ZAYAS_INTACT_KN = 247.0
ZAYAS_KNOCKDOWN = (
    0.75,  # 0 upper diagonal
    0.75,  # 1 upper diagonal
    0.45,  # 2 upper X-brace
    0.45,  # 3 upper X-brace
    0.95,  # 4 horizontal
    0.75,  # 5 middle diagonal
    0.45,  # 6 lower X-brace
    0.45,  # 7 lower X-brace
    0.95,  # 8 horizontal
    0.75,  # 9 lower diagonal
    0.75,  # 10 lower diagonal
    0.75,  # 11 lower diagonal
    0.95,  # 12 horizontal
)
# Hotspots per element: nine braces with two welded ends, four with one.
ZAYAS_HOTSPOTS_PER_ELEMENT = (1, 2, 2, 2, 1, 2, 2, 2, 1, 2, 2, 2, 1)

DEMO_INTACT_KN = 150.0
DEMO_KNOCKDOWN = (0.5, 0.8, 1.0)
DEMO_ELEMENT_MAP = ((0, 1), (2,), (3,))


@dataclass(frozen=True)
class ResistanceTable:
    n_elements: int
    l_col: np.ndarray  # [2^n_elements], indexed by mask

    def __post_init__(self) -> None:
        l_col = np.asarray(self.l_col, dtype=float)
        if l_col.shape != (1 << self.n_elements,):
            raise ConfigError(
                f"resistance table needs {1 << self.n_elements} entries, "
                f"got {l_col.size}"
            )
        if np.any(l_col < 0) or not np.all(np.isfinite(l_col)):
            raise ConfigError("collapse loads must be finite and non-negative")
        l_col.setflags(write=False)
        object.__setattr__(self, "l_col", l_col)
        self._check_monotone()

    def _check_monotone(self) -> None:
        """Removing an element never increases the collapse load."""
        masks = np.arange(self.l_col.size)
        for e in range(self.n_elements):
            bit = 1 << (self.n_elements - 1 - e)
            with_e = masks[(masks & bit) != 0]
            removed = self.l_col[with_e ^ bit]
            if np.any(removed > self.l_col[with_e] + MONOTONE_TOLERANCE):
                raise ConfigError(f"removing element {e} increases the collapse load")

    @property
    def intact(self) -> float:
        return float(self.l_col[-1])

    def mask_of(self, alive: np.ndarray) -> int:
        """Mask of a boolean element-survival vector."""
        mask = 0
        for flag in np.asarray(alive, dtype=bool):
            mask = (mask << 1) | int(flag)
        return mask

    @io_retry
    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"{self.n_elements}\n")
            for mask, value in enumerate(self.l_col):
                f.write(f"{mask:#x},{float(value)!r}\n")
        logger.info(f"Wrote {self.l_col.size}-entry resistance table to {path}")

    @classmethod
    @io_retry
    def load(cls, path: str) -> "ResistanceTable":
        with open(path, "r", encoding="utf-8") as f:
            lines = [line.strip() for line in f if line.strip()]
        if not lines:
            raise ConfigError(f"resistance table {path} is empty")
        try:
            n_elements = int(lines[0])
            entries: dict[int, float] = {}
            for line in lines[1:]:
                mask_text, value_text = line.split(",")
                entries[int(mask_text, 16)] = float(value_text)
        except ValueError as e:
            raise ConfigError(f"malformed resistance table {path}: {e}") from e
        missing = [m for m in range(1 << n_elements) if m not in entries]
        if missing:
            raise ConfigError(
                f"resistance table {path} misses {len(missing)} masks, "
                f"e.g. {missing[0]:#x}"
            )
        table = cls(n_elements, np.array([entries[m] for m in range(1 << n_elements)]))
        logger.info(f"Loaded resistance table {path} ({n_elements} elements)")
        return table


def knockdown_table(intact: float, factors: tuple[float, ...]) -> ResistanceTable:
    """Collapse load = intact value times the factors of every removed element."""
    n = len(factors)
    masks = np.arange(1 << n)
    l_col = np.full(masks.size, intact)
    for e, factor in enumerate(factors):
        removed = (masks & (1 << (n - 1 - e))) == 0
        l_col[removed] *= factor
    return ResistanceTable(n, l_col)


def element_map_from_counts(counts: tuple[int, ...]) -> tuple[tuple[int, ...], ...]:
    """Consecutive hotspot indices per element."""
    element_map = []
    start = 0
    for count in counts:
        element_map.append(tuple(range(start, start + count)))
        start += count
    return tuple(element_map)


def synthetic_zayas_table() -> tuple[ResistanceTable, tuple[tuple[int, ...], ...]]:
    """
    Synthetic 13-brace jacket frame with 22 fatigue hotspots. X-braces carry
    the strongest knock-down, so their hotspots rank highest by importance.
    """
    return (
        knockdown_table(ZAYAS_INTACT_KN, ZAYAS_KNOCKDOWN),
        element_map_from_counts(ZAYAS_HOTSPOTS_PER_ELEMENT),
    )


def demo_three_element_table() -> tuple[ResistanceTable, tuple[tuple[int, ...], ...]]:
    """Three elements: losing element 0 halves the collapse load; 2 is redundant."""
    return knockdown_table(DEMO_INTACT_KN, DEMO_KNOCKDOWN), DEMO_ELEMENT_MAP
