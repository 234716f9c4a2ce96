from __future__ import annotations

from typing import Callable, Dict

from .base import ActionRepeat, BaseEnv, EnvError, EnvSpec
from .pendulum import PendulumSwingup, scripted_pendulum_action
from .point_mass import PointMass2D

ENVS: Dict[str, Callable[..., BaseEnv]] = {
    "pendulum_swingup": PendulumSwingup,
    "point_mass": PointMass2D,
}


def make_env(name: str, episode_length: int = 500, action_repeat: int = 2) -> BaseEnv:
    """`episode_length` counts decision steps; the inner env runs episode_length × action_repeat physics steps."""
    if name not in ENVS:
        raise EnvError(f"unknown env {name!r}; available: {sorted(ENVS)}")
    env = ENVS[name](episode_length=episode_length * action_repeat)
    return ActionRepeat(env, action_repeat) if action_repeat > 1 else env


__all__ = [
    "ActionRepeat", "BaseEnv", "ENVS", "EnvError", "EnvSpec",
    "PendulumSwingup", "PointMass2D", "make_env", "scripted_pendulum_action",
]
