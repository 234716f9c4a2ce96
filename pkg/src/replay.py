"""
Uniform ring-buffer replay with episode-aware segment sampling.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from src.autodiff import default_dtype

logger = logging.getLogger(__name__)


@dataclass
class TransitionRecord:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool
    # absorbing state; the built-in environments only ever truncate
    terminal: bool = False


@dataclass
class SegmentBatch:
    """
    B contiguous in-episode windows of `span` observations.

    observations: (B, span, O)   o_t .. o_{t+span-1}
    actions:      (B, span-1, A) a_t .. a_{t+span-2}
    rewards:      (B, span-1)    r_{t+1} .. r_{t+span-1}
    terminals:    (B, span-1)    absorbing flag of each transition
    """

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminals: np.ndarray
    starts: Optional[np.ndarray] = None

    @property
    def batch_size(self) -> int:
        return self.observations.shape[0]

    @property
    def span(self) -> int:
        return self.observations.shape[1]


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions; the oldest record is overwritten first."""

    def __init__(
        self,
        obs_dim: int,
        act_dim: int,
        capacity: int = 1_000_000,
        rng: Optional[np.random.Generator] = None,
        dtype=None,
    ):
        """
        Args:
            obs_dim: observation width O
            act_dim: action width |A|
            capacity: maximum number of stored transitions
            rng: generator used for segment sampling
            dtype: storage dtype for observations/actions/rewards (defaults to the active precision)
        """
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.capacity = int(capacity)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.dtype = dtype or default_dtype()
        self._obs = np.zeros((self.capacity, obs_dim), dtype=self.dtype)
        self._next_obs = np.zeros((self.capacity, obs_dim), dtype=self.dtype)
        self._action = np.zeros((self.capacity, act_dim), dtype=self.dtype)
        self._reward = np.zeros(self.capacity, dtype=self.dtype)
        self._done = np.zeros(self.capacity, dtype=bool)
        self._terminal = np.zeros(self.capacity, dtype=bool)
        self._episode = np.zeros(self.capacity, dtype=np.int64)
        self._ptr = 0
        self._size = 0
        self._episode_counter = 0

    def __len__(self) -> int:
        return self._size

    def push(self, tr: TransitionRecord) -> None:
        obs = np.asarray(tr.obs)
        next_obs = np.asarray(tr.next_obs)
        action = np.asarray(tr.action)
        if obs.shape != (self.obs_dim,) or next_obs.shape != (self.obs_dim,):
            raise ValueError(f"observation width must be {self.obs_dim}, got {obs.shape} / {next_obs.shape}")
        if action.shape != (self.act_dim,):
            raise ValueError(f"action width must be {self.act_dim}, got {action.shape}")
        i = self._ptr
        self._obs[i] = obs
        self._next_obs[i] = next_obs
        self._action[i] = action
        self._reward[i] = tr.reward
        self._done[i] = bool(tr.done)
        self._terminal[i] = bool(tr.terminal)
        self._episode[i] = self._episode_counter
        if tr.done:
            self._episode_counter += 1
        self._ptr = (self._ptr + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _order(self) -> np.ndarray:
        """Physical slots in chronological order, oldest first."""
        start = 0 if self._size < self.capacity else self._ptr
        return (np.arange(self._size) + start) % self.capacity

    def record(self, position: int) -> TransitionRecord:
        """Transition at chronological position (0 = oldest)."""
        i = self._order()[position]
        return TransitionRecord(
            obs=self._obs[i].copy(),
            action=self._action[i].copy(),
            reward=float(self._reward[i]),
            next_obs=self._next_obs[i].copy(),
            done=bool(self._done[i]),
            terminal=bool(self._terminal[i]),
        )

    def valid_starts(self, span: int) -> np.ndarray:
        """
        Chronological positions t where o_t .. o_{t+span-1} lie in one episode,
        i.e. the span-1 transitions from t never cross an episode boundary.
        """
        k = span - 2
        n = self._size
        if span < 2 or n < span - 1:
            return np.zeros(0, dtype=np.int64)
        episodes = self._episode[self._order()]
        return np.flatnonzero(episodes[: n - k] == episodes[k:])

    def sample_segments(self, batch_size: int, span: int) -> Optional[SegmentBatch]:
        """
        Uniformly sample `batch_size` windows of `span` observations.
        Returns None while fewer than `batch_size` valid windows exist.
        """
        starts = self.valid_starts(span)
        if len(starts) < batch_size:
            logger.debug("replay not ready: %d valid windows for batch %d (span %d)", len(starts), batch_size, span)
            return None
        chosen = starts[self.rng.integers(len(starts), size=batch_size)]
        order = self._order()
        slots = order[chosen[:, None] + np.arange(span - 1)[None, :]]
        observations = np.concatenate([self._obs[slots], self._next_obs[slots[:, -1]][:, None, :]], axis=1)
        return SegmentBatch(
            observations=observations,
            actions=self._action[slots],
            rewards=self._reward[slots],
            terminals=self._terminal[slots],
            starts=chosen,
        )

    def sample_observations(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform draw (with replacement) of stored observations, using the caller's generator."""
        if self._size == 0:
            return np.zeros((0, self.obs_dim), dtype=self.dtype)
        order = self._order()
        return self._obs[order[rng.integers(self._size, size=n)]].copy()

    # ---------------- persistence ----------------
    def state_arrays(self) -> Dict[str, np.ndarray]:
        n = self._size
        return {
            "replay.obs": self._obs[:n],
            "replay.next_obs": self._next_obs[:n],
            "replay.action": self._action[:n],
            "replay.reward": self._reward[:n],
            "replay.done": self._done[:n].astype(np.uint8),
            "replay.terminal": self._terminal[:n].astype(np.uint8),
            "replay.episode": self._episode[:n],
            "replay.counters": np.asarray([self._ptr, self._size, self._episode_counter, self.capacity], dtype=np.int64),
        }

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        ptr, size, counter, capacity = (int(v) for v in arrays["replay.counters"])
        if capacity != self.capacity:
            raise ValueError(f"replay capacity mismatch: stored {capacity}, buffer {self.capacity}")
        self._obs[:size] = arrays["replay.obs"]
        self._next_obs[:size] = arrays["replay.next_obs"]
        self._action[:size] = arrays["replay.action"]
        self._reward[:size] = arrays["replay.reward"]
        self._done[:size] = arrays["replay.done"].astype(bool)
        self._terminal[:size] = arrays["replay.terminal"].astype(bool)
        self._episode[:size] = arrays["replay.episode"]
        self._ptr, self._size, self._episode_counter = ptr, size, counter
