"""
Pendulum swing-up on a rigid rod, angle 0 pointing straight up.

    θ̈ = 3g/(2l)·sin θ + 3/(m l²)·u,   u = torque_limit · a
    θ̇ ← clip(θ̇ + θ̈·dt, ±max_speed);  θ ← wrap(θ + θ̇·dt)

Reward −(θ² + 0.1·θ̇² + 0.001·u²) with θ wrapped to (−π, π], so 0 is the
best a step can score.
"""
from __future__ import annotations

from typing import Any, Dict, Optional

import numpy as np

from .base import BaseEnv, EnvSpec, StepResult

GRAVITY = 10.0
MASS = 1.0
LENGTH = 1.0
TORQUE_LIMIT = 2.0
MAX_SPEED = 8.0
DT = 0.05


def wrap_angle(theta: float) -> float:
    """Map to (−π, π]."""
    return float(-((-theta + np.pi) % (2.0 * np.pi) - np.pi))


def pendulum_energy(theta: float, theta_dot: float) -> float:
    """Conserved quantity of the unforced dynamics, per unit inertia."""
    return 0.5 * theta_dot ** 2 + 1.5 * GRAVITY / LENGTH * np.cos(theta)


class PendulumSwingup(BaseEnv):
    env_name = "pendulum_swingup"

    def __init__(self, episode_length: int = 1000):
        super().__init__(episode_length)
        self.theta = np.pi
        self.theta_dot = 0.0

    @property
    def spec(self) -> EnvSpec:
        worst = np.pi ** 2 + 0.1 * MAX_SPEED ** 2 + 0.001 * TORQUE_LIMIT ** 2
        return EnvSpec(self.env_name, obs_dim=3, act_dim=1, episode_length=self.episode_length, reward_range=(-worst, 0.0))

    def observation(self) -> np.ndarray:
        return np.array([np.cos(self.theta), np.sin(self.theta), self.theta_dot / MAX_SPEED])

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        self._reseed(seed)
        self.theta = wrap_angle(self.rng.uniform(-np.pi, np.pi))
        self.theta_dot = 0.0
        self.last_debug = {}
        return self.observation()

    def step(self, action) -> StepResult:
        a = self._check_action(action)
        u = TORQUE_LIMIT * float(a[0])
        th, thdot = self.theta, self.theta_dot
        reward = -(th ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2)

        accel = 3.0 * GRAVITY / (2.0 * LENGTH) * np.sin(th) + 3.0 / (MASS * LENGTH ** 2) * u
        thdot = float(np.clip(thdot + accel * DT, -MAX_SPEED, MAX_SPEED))
        self.theta = wrap_angle(th + thdot * DT)
        self.theta_dot = thdot
        self.t += 1
        self._set_debug(torque=f"{u:.4f}", action=f"{a[0]:.4f}", physics_step=self.t)
        return self.observation(), float(reward), self.t >= self.episode_length

    def get_state(self) -> Dict[str, Any]:
        return {"theta": self.theta, "theta_dot": self.theta_dot, "t": self.t, "rng": self.rng.bit_generator.state}

    def set_state(self, state: Dict[str, Any]) -> None:
        self.theta = float(state["theta"])
        self.theta_dot = float(state["theta_dot"])
        self.t = int(state["t"])
        self.rng.bit_generator.state = state["rng"]


def scripted_pendulum_action(obs: np.ndarray, gain: float = 0.5, kp: float = 10.0, kd: float = 2.0, catch_cos: float = 0.95) -> np.ndarray:
    """
    Energy-shaping swing-up with a PD catch near the top.

    Far from upright the torque pumps energy toward the upright level,
    u = k·(E* − E)·θ̇; once cos θ exceeds `catch_cos` a PD law holds the rod.
    Returns the normalized action u / torque_limit.
    """
    theta = float(np.arctan2(obs[1], obs[0]))
    theta_dot = float(obs[2]) * MAX_SPEED
    if np.cos(theta) > catch_cos:
        u = -(kp * theta + kd * theta_dot)
    elif abs(theta_dot) < 1e-3:
        # at rest at the bottom the pumping law has no direction; kick
        u = TORQUE_LIMIT
    else:
        target = pendulum_energy(0.0, 0.0)
        u = gain * (target - pendulum_energy(theta, theta_dot)) * theta_dot
    return np.array([np.clip(u, -TORQUE_LIMIT, TORQUE_LIMIT) / TORQUE_LIMIT])
