"""
System-level failure probability.

Two system kinds are supported: k-out-of-n systems of identical components,
and frames whose elements fail when any of their hotspots fails, with system
failure decided by a lognormal load exceeding the collapse load of the
current element state.
"""

import logging
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import stats

from src.reliability.resistance import ResistanceTable
from src.utils.errors import CapacityError

logger = logging.getLogger(__name__)

MAX_ENUMERATED_ELEMENTS = 22


@dataclass(frozen=True)
class LoadModel:
    """Lognormal load parameterized by its mean (kN) and coefficient of variation."""

    mean: float = 70.0
    cov: float = 0.25

    def __post_init__(self) -> None:
        if self.mean <= 0 or self.cov <= 0:
            raise ValueError("load mean and cov must be positive")

    @property
    def sigma(self) -> float:
        return math.sqrt(math.log1p(self.cov**2))

    @property
    def mu(self) -> float:
        return math.log(self.mean) - 0.5 * self.sigma**2

    def exceedance(self, resistance: np.ndarray | float) -> np.ndarray:
        """``Pr(L > resistance)``."""
        return stats.lognorm.sf(resistance, s=self.sigma, scale=math.exp(self.mu))

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.lognormal(self.mu, self.sigma, size)


@dataclass(frozen=True)
class KOutOfN:
    k: int
    n: int

    def __post_init__(self) -> None:
        if not 1 <= self.k <= self.n:
            raise ValueError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")


@dataclass(frozen=True)
class FrameSystem:
    element_map: tuple[tuple[int, ...], ...]
    resistance: ResistanceTable
    load: LoadModel
    max_elements: int = MAX_ENUMERATED_ELEMENTS

    def __post_init__(self) -> None:
        if len(self.element_map) != self.resistance.n_elements:
            raise ValueError(
                f"element map has {len(self.element_map)} elements, resistance table "
                f"{self.resistance.n_elements}"
            )
        if any(len(hotspots) == 0 for hotspots in self.element_map):
            raise ValueError("every element needs at least one hotspot")
        object.__setattr__(
            self, "element_map", tuple(tuple(h) for h in self.element_map)
        )
        # Pr(L > L_col(x)) for every element state x
        object.__setattr__(
            self, "_state_failure", self.load.exceedance(self.resistance.l_col)
        )

    @property
    def n_hotspots(self) -> int:
        return sum(len(h) for h in self.element_map)

    @property
    def state_failure(self) -> np.ndarray:
        return self._state_failure  # type: ignore[attr-defined]


SystemModel = Union[KOutOfN, FrameSystem]


def k_out_of_n_failure(p_fail: np.ndarray, k: int) -> float:
    """
    Probability that fewer than ``k`` components survive, by the exact
    recursion over the distribution of the number of survivors.
    """
    p = np.asarray(p_fail, dtype=float)
    n = p.size
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("failure probabilities must lie in [0, 1]")
    survivors = np.zeros(n + 1)
    survivors[0] = 1.0
    for i, p_i in enumerate(p):
        shifted = survivors[: i + 1] * (1.0 - p_i)
        survivors[: i + 1] *= p_i
        survivors[1 : i + 2] += shifted
    return float(min(1.0, max(0.0, math.fsum(survivors[:k]))))


def element_failure_from_hotspots(
    p_hot: np.ndarray, element_map: tuple[tuple[int, ...], ...]
) -> np.ndarray:
    """Series logic within each element: it fails when any of its hotspots fails."""
    p_hot = np.asarray(p_hot, dtype=float)
    return np.array(
        [1.0 - np.prod(1.0 - p_hot[list(hotspots)]) for hotspots in element_map]
    )


def element_state_distribution(
    p_el: np.ndarray, max_elements: int = MAX_ENUMERATED_ELEMENTS
) -> np.ndarray:
    """
    Probability of every element state, indexed by survival mask (element 0
    in the most significant bit, set bit = survives). Built as the Kronecker
    product of ``[p_i, 1 - p_i]`` over elements.
    """
    p_el = np.atleast_1d(np.asarray(p_el, dtype=float))
    if p_el.size > max_elements:
        raise CapacityError(
            f"{p_el.size} elements need 2^{p_el.size} states; "
            f"the limit is {max_elements}"
        )
    q = np.ones(1)
    for p in p_el:
        q = np.outer(q, [p, 1.0 - p]).ravel()
    return q


def frame_system_failure(
    p_hot: np.ndarray, system: FrameSystem, max_elements: int | None = None
) -> float:
    """``sum_x q(x) Pr(L > L_col(x))``; load and element states are independent."""
    p_el = element_failure_from_hotspots(p_hot, system.element_map)
    q = element_state_distribution(p_el, max_elements or system.max_elements)
    return float(q @ system.state_failure)


def frame_failure_given_elements(alive: np.ndarray, system: FrameSystem) -> float:
    """System failure probability conditional on known element states."""
    return float(system.state_failure[system.resistance.mask_of(alive)])


def system_failure_prob(p_fail: np.ndarray, system: SystemModel) -> float:
    if isinstance(system, KOutOfN):
        return k_out_of_n_failure(p_fail, system.k)
    return frame_system_failure(p_fail, system)


def annual_risk(p_sys_next: float, p_sys_now: float, r_f: float) -> float:
    """Risk reward of one year; negative differences after repairs are allowed."""
    return (p_sys_next - p_sys_now) * r_f


def single_element_importance(
    p_hot: np.ndarray, system: FrameSystem, hotspot: int
) -> float:
    """Increase in system failure probability when ``hotspot`` is forced to fail."""
    baseline = frame_system_failure(p_hot, system)
    forced = np.array(p_hot, dtype=float)
    forced[hotspot] = 1.0
    return frame_system_failure(forced, system) - baseline


def sei_ranking(p_hot: np.ndarray, system: FrameSystem) -> list[tuple[int, float]]:
    """``(hotspot, SEI)`` pairs sorted by descending importance, ties by index."""
    values = [
        (h, single_element_importance(p_hot, system, h)) for h in range(len(p_hot))
    ]
    return sorted(values, key=lambda item: (-item[1], item[0]))


def intact_failure_report(p_hot: np.ndarray, system: FrameSystem) -> dict[str, float]:
    """
    Failure probability of the intact frame from the load tail alone, next to
    the value weighted by the element-state distribution of ``p_hot``.
    """
    return {
        "intact_tail": float(system.load.exceedance(system.resistance.intact)),
        "q_weighted": frame_system_failure(p_hot, system),
    }
