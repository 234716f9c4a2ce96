from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    act_dim: int
    episode_length: int
    reward_range: Tuple[float, float]


StepResult = Tuple[np.ndarray, float, bool]


class BaseEnv:
    """
    Fixed-length episodic environment with actions in [-1, 1]^act_dim.
    `done` only ever marks truncation at `episode_length`.
    """

    env_name: str = "base"

    def __init__(self, episode_length: int):
        self.episode_length = int(episode_length)
        self.t = 0
        self.rng = np.random.default_rng()
        self.last_debug: Dict[str, str] = {}

    @property
    def spec(self) -> EnvSpec:
        raise NotImplementedError

    def _set_debug(self, **kwargs):
        # strings only, they end up in the report Notes
        for k, v in kwargs.items():
            self.last_debug[str(k)] = str(v)

    def _check_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (self.spec.act_dim,):
            raise EnvError(f"{self.env_name}: action width must be {self.spec.act_dim}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise EnvError(f"{self.env_name}: non-finite action {a.tolist()}")
        return np.clip(a, -1.0, 1.0)

    def _reseed(self, seed: Optional[int]) -> None:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.t = 0

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        raise NotImplementedError

    def step(self, action) -> StepResult:
        raise NotImplementedError

    def get_state(self) -> Dict[str, Any]:
        raise NotImplementedError

    def set_state(self, state: Dict[str, Any]) -> None:
        raise NotImplementedError


class ActionRepeat(BaseEnv):
    """Apply each decision for k physics steps, summing rewards; stops early if the inner env is done."""

    def __init__(self, env: BaseEnv, k: int = 2):
        if k < 1:
            raise EnvError(f"action repeat must be >= 1, got {k}")
        super().__init__(max(1, env.episode_length // k))
        self.env = env
        self.k = int(k)
        self.env_name = env.env_name
        self.last_debug = env.last_debug

    @property
    def spec(self) -> EnvSpec:
        inner = self.env.spec
        lo, hi = inner.reward_range
        return replace(inner, episode_length=self.episode_length, reward_range=(lo * self.k, hi * self.k))

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        self.t = 0
        obs = self.env.reset(seed)
        self.last_debug = self.env.last_debug
        return obs

    def step(self, action) -> StepResult:
        total = 0.0
        obs, done = None, False
        for _ in range(self.k):
            obs, reward, done = self.env.step(action)
            total += reward
            if done:
                break
        self.t += 1
        self.last_debug = self.env.last_debug
        return obs, total, done

    def get_state(self) -> Dict[str, Any]:
        return {"t": self.t, "inner": self.env.get_state()}

    def set_state(self, state: Dict[str, Any]) -> None:
        self.t = int(state["t"])
        self.env.set_state(state["inner"])
