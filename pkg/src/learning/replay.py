"""
Experience replay for off-policy actor-critic training.
"""

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

PRIORITY_EXPONENT = 0.6
PRIORITY_CORRECTION = 0.4
PRIORITY_FLOOR = 1e-6


@dataclass(frozen=True)
class Experience:
    """One transition with the behavior probability of every component's action."""

    input_t: np.ndarray
    actions: np.ndarray
    behavior_probs: np.ndarray
    reward: float
    input_next: np.ndarray
    terminal: bool

    def __post_init__(self) -> None:
        mu = np.asarray(self.behavior_probs)
        if np.any(mu <= 0) or np.any(mu > 1):
            raise ValueError("behavior probabilities must lie in (0, 1]")


@dataclass
class Batch:
    inputs: np.ndarray  # [B][D]
    actions: np.ndarray  # [B][N]
    behavior_probs: np.ndarray  # [B][N]
    rewards: np.ndarray  # [B]
    next_inputs: np.ndarray  # [B][D]
    terminal: np.ndarray  # [B]
    indices: np.ndarray  # [B]
    sample_weights: np.ndarray  # [B], ones for uniform sampling

    def __len__(self) -> int:
        return self.rewards.size

    @classmethod
    def from_experiences(cls, experiences: list[Experience]) -> "Batch":
        n = len(experiences)
        return cls(
            inputs=np.stack([e.input_t for e in experiences]),
            actions=np.stack([np.asarray(e.actions, dtype=int) for e in experiences]),
            behavior_probs=np.stack([e.behavior_probs for e in experiences]),
            rewards=np.array([e.reward for e in experiences], dtype=float),
            next_inputs=np.stack([e.input_next for e in experiences]),
            terminal=np.array([e.terminal for e in experiences], dtype=bool),
            indices=np.arange(n),
            sample_weights=np.ones(n),
        )


class ReplayBuffer:
    """
    FIFO experience replay with uniform sampling. With ``prioritized`` the
    sampling probability follows ``|advantage|^0.6`` and the batch carries the
    matching importance correction weights.
    """

    def __init__(
        self,
        input_dim: int,
        n_components: int,
        capacity: int,
        seed: int,
        prioritized: bool = False,
    ):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.prioritized = prioritized
        self._inputs = np.zeros((capacity, input_dim))
        self._next_inputs = np.zeros((capacity, input_dim))
        self._actions = np.zeros((capacity, n_components), dtype=int)
        self._mu = np.ones((capacity, n_components))
        self._rewards = np.zeros(capacity)
        self._terminal = np.zeros(capacity, dtype=bool)
        self._priorities = np.zeros(capacity)
        self._ptr = 0
        self._size = 0
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return self._size

    def store(self, exp: Experience) -> None:
        i = self._ptr
        self._inputs[i] = exp.input_t
        self._next_inputs[i] = exp.input_next
        self._actions[i] = exp.actions
        self._mu[i] = exp.behavior_probs
        self._rewards[i] = exp.reward
        self._terminal[i] = exp.terminal
        self._priorities[i] = self._priorities[: self._size].max(initial=1.0)
        self._ptr = (self._ptr + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int) -> Batch:
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        if self.prioritized:
            scaled = self._priorities[: self._size] ** PRIORITY_EXPONENT
            probs = scaled / scaled.sum()
            idx = self._rng.choice(self._size, size=batch_size, p=probs)
            weights = (self._size * probs[idx]) ** (-PRIORITY_CORRECTION)
            weights = weights / weights.max()
        else:
            idx = self._rng.integers(0, self._size, size=batch_size)
            weights = np.ones(batch_size)
        return Batch(
            inputs=self._inputs[idx],
            actions=self._actions[idx],
            behavior_probs=self._mu[idx],
            rewards=self._rewards[idx],
            next_inputs=self._next_inputs[idx],
            terminal=self._terminal[idx],
            indices=idx,
            sample_weights=weights,
        )

    def update_priorities(self, indices: np.ndarray, advantages: np.ndarray) -> None:
        if self.prioritized:
            self._priorities[indices] = np.abs(advantages) + PRIORITY_FLOOR
