from __future__ import annotations

from typing import Any, Dict, Optional, Sequence

import numpy as np

from .base import BaseEnv, EnvSpec, StepResult

DT = 0.05
ARENA = 1.0
MAX_ACCEL = 2.0
MAX_SPEED = 1.0
REWARD_WIDTH = 0.3


class PointMass2D(BaseEnv):
    """
    2-D double integrator in the box [-1, 1]² driven toward a fixed goal.

    Observation (pos, vel, goal − pos); reward exp(−‖pos − goal‖² / σ²).
    Hitting a wall clamps the position and zeroes that velocity component.
    """

    env_name = "point_mass"

    def __init__(self, episode_length: int = 1000, goal: Sequence[float] = (0.5, 0.5)):
        super().__init__(episode_length)
        self.goal = np.asarray(goal, dtype=np.float64)
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)

    @property
    def spec(self) -> EnvSpec:
        return EnvSpec(self.env_name, obs_dim=6, act_dim=2, episode_length=self.episode_length, reward_range=(0.0, 1.0))

    def observation(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel, self.goal - self.pos])

    def reward(self) -> float:
        dist2 = float(np.sum((self.pos - self.goal) ** 2))
        return float(np.exp(-dist2 / REWARD_WIDTH ** 2))

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        self._reseed(seed)
        self.pos = self.rng.uniform(-ARENA, ARENA, size=2)
        self.vel = np.zeros(2)
        self.last_debug = {}
        return self.observation()

    def step(self, action) -> StepResult:
        a = self._check_action(action)
        self.vel = np.clip(self.vel + MAX_ACCEL * a * DT, -MAX_SPEED, MAX_SPEED)
        pos = self.pos + self.vel * DT
        hit = np.abs(pos) > ARENA
        self.pos = np.clip(pos, -ARENA, ARENA)
        self.vel = np.where(hit, 0.0, self.vel)
        self.t += 1
        self._set_debug(action=np.round(a, 4).tolist(), wall_hit=bool(hit.any()), physics_step=self.t)
        return self.observation(), self.reward(), self.t >= self.episode_length

    def get_state(self) -> Dict[str, Any]:
        return {
            "pos": self.pos.tolist(),
            "vel": self.vel.tolist(),
            "t": self.t,
            "rng": self.rng.bit_generator.state,
        }

    def set_state(self, state: Dict[str, Any]) -> None:
        self.pos = np.asarray(state["pos"], dtype=np.float64)
        self.vel = np.asarray(state["vel"], dtype=np.float64)
        self.t = int(state["t"])
        self.rng.bit_generator.state = state["rng"]
