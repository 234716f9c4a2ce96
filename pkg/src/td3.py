"""
TD3 in the latent space: twin critics with n-step clipped double-Q targets
and policy smoothing, a delayed deterministic actor, and target networks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from src.autodiff import Tensor, as_tensor, backward, concat, minimum, no_grad
from src.layers import Mlp, MlpSpec
from src.optim import AdamW, check_finite, ema_blend
from src.replay import SegmentBatch
from src.representation import EncoderNets

logger = logging.getLogger(__name__)


@dataclass
class NoiseSchedule:
    """Linear exploration std from `start` to `end` over `duration` decision steps."""

    start: float = 1.0
    end: float = 0.1
    duration: int = 50_000
    policy_noise: float = 0.2
    noise_clip: float = 0.3

    def std(self, step: int) -> float:
        if self.duration <= 0:
            return self.end
        frac = min(max(step, 0) / self.duration, 1.0)
        return self.start + (self.end - self.start) * frac


class Actor:
    """π_η: latent → tanh-squashed action, plus its target copy π_η̄."""

    def __init__(self, width: int, act_dim: int, hidden: Sequence[int], rng: np.random.Generator):
        self.net = Mlp(MlpSpec(width, tuple(hidden), act_dim, normed=True, name="actor"), rng)
        self.target = self.net.clone("actor_target")

    def __call__(self, z, frozen: bool = False) -> Tensor:
        return self.net(z, frozen=frozen).tanh()

    def target_action(self, z) -> Tensor:
        with no_grad():
            return self.target(z).tanh()

    def parameters(self) -> list:
        return self.net.parameters()

    def blend_target(self, tau: float) -> None:
        ema_blend(self.target.params, self.net.params, tau)


class CriticPair:
    """q_ψ1, q_ψ2 on [z, a] with target copies."""

    def __init__(self, width: int, act_dim: int, hidden: Sequence[int], rng: np.random.Generator):
        self.q1 = Mlp(MlpSpec(width + act_dim, tuple(hidden), 1, normed=True, name="critic1"), rng)
        self.q2 = Mlp(MlpSpec(width + act_dim, tuple(hidden), 1, normed=True, name="critic2"), rng)
        self.q1_target = self.q1.clone("critic1_target")
        self.q2_target = self.q2.clone("critic2_target")

    def __call__(self, z, a, frozen: bool = False) -> Tuple[Tensor, Tensor]:
        za = concat([as_tensor(z), as_tensor(a)], axis=-1)
        return self.q1(za, frozen=frozen), self.q2(za, frozen=frozen)

    def target_min(self, z, a) -> np.ndarray:
        with no_grad():
            za = concat([as_tensor(z), as_tensor(a)], axis=-1)
            return np.minimum(self.q1_target(za).data, self.q2_target(za).data)[:, 0]

    def parameters(self) -> list:
        return self.q1.parameters() + self.q2.parameters()

    def blend_targets(self, tau: float) -> None:
        ema_blend(self.q1_target.params, self.q1.params, tau)
        ema_blend(self.q2_target.params, self.q2.params, tau)


@dataclass
class TD3Model:
    critics: CriticPair
    actor: Actor
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    gamma: float = 0.99
    tau: float = 0.005
    nstep: int = 3
    actor_delay: int = 2
    critic_grads_to_encoder: bool = True
    updates: int = 0
    actor_updates: int = 0

    @classmethod
    def from_config(cls, cfg, width: int, act_dim: int, rng: np.random.Generator) -> "TD3Model":
        return cls(
            critics=CriticPair(width, act_dim, cfg.mlp_dims, rng),
            actor=Actor(width, act_dim, cfg.mlp_dims, rng),
            schedule=NoiseSchedule(
                cfg.expl_noise_start, cfg.expl_noise_end, cfg.expl_noise_duration,
                policy_noise=cfg.policy_noise, noise_clip=cfg.noise_clip,
            ),
            gamma=cfg.gamma,
            tau=cfg.tau,
            nstep=cfg.nstep,
            actor_delay=cfg.actor_delay,
            critic_grads_to_encoder=cfg.critic_grads_to_encoder,
        )

    def blend_targets(self) -> None:
        self.critics.blend_targets(self.tau)
        self.actor.blend_target(self.tau)


def smoothing_noise(rng: np.random.Generator, sigma: float, clip: float, shape) -> np.ndarray:
    """clip(N(0, σ²), −c, c), elementwise."""
    return np.clip(rng.normal(0.0, sigma, size=shape), -clip, clip)


def select_action(
    encoders: EncoderNets,
    actor: Actor,
    obs: np.ndarray,
    std: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    Exploit when std is 0: clip(π_η(encode(o)), −1, 1).
    Explore otherwise: Gaussian noise of the given std is added before the clip.
    """
    single = np.ndim(obs) == 1
    z = encoders.encode_numpy(obs)
    with no_grad():
        action = actor(z).data.astype(np.float64)
    if std > 0.0:
        if rng is None:
            raise ValueError("exploration needs an rng")
        action = action + rng.normal(0.0, std, size=action.shape)
    action = np.clip(action, -1.0, 1.0)
    return action[0] if single else action


def nstep_returns(rewards: np.ndarray, terminals: np.ndarray, gamma: float, nstep: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Discounted sum of the first `nstep` rewards, cut after the first absorbing
    transition, and the mask (1 = bootstrap allowed) for the tail value.
    """
    rewards = np.asarray(rewards, dtype=np.float64)[:, :nstep]
    alive_after = np.cumprod(1.0 - np.asarray(terminals, dtype=np.float64)[:, :nstep], axis=1)
    alive_before = np.concatenate([np.ones((rewards.shape[0], 1)), alive_after[:, :-1]], axis=1)
    discounts = gamma ** np.arange(nstep)
    return (rewards * alive_before * discounts).sum(axis=1), alive_after[:, -1]


def critic_target(
    batch: SegmentBatch,
    encoders: EncoderNets,
    td3: TD3Model,
    rng: np.random.Generator,
) -> np.ndarray:
    """y = Σ_n γⁿ r_{t+n+1} + γᴺ·alive·min_k q_ψ̄k(z_{t+N}, π_η̄(z_{t+N}) + ε)"""
    n = td3.nstep
    if batch.span < n + 1:
        raise ValueError(f"segment span {batch.span} is too short for {n}-step targets")
    ret, alive = nstep_returns(batch.rewards, batch.terminals, td3.gamma, n)
    with no_grad():
        z = encoders.encode(batch.observations[:, n])
        a = td3.actor.target_action(z).data
        noise = smoothing_noise(rng, td3.schedule.policy_noise, td3.schedule.noise_clip, a.shape)
        a = np.clip(a + noise, -1.0, 1.0).astype(a.dtype)
        q = td3.critics.target_min(z, a)
    return ret + (td3.gamma ** n) * alive * q


def critic_loss(batch: SegmentBatch, encoders: EncoderNets, td3: TD3Model, y: np.ndarray) -> Tensor:
    """mean_b (q1 − y)² + mean_b (q2 − y)²; encoder gradients only when critic_grads_to_encoder."""
    obs = batch.observations[:, 0]
    if td3.critic_grads_to_encoder:
        z = encoders.encode(obs)
    else:
        with no_grad():
            z = encoders.encode(obs)
    q1, q2 = td3.critics(z, batch.actions[:, 0])
    target = np.asarray(y).reshape(-1, 1)
    e1 = q1 - target
    e2 = q2 - target
    return (e1 * e1).mean() + (e2 * e2).mean()


def actor_loss(batch: SegmentBatch, encoders: EncoderNets, td3: TD3Model) -> Tensor:
    """−mean_b min_k q_ψk(z, π_η(z)); only η receives gradient."""
    with no_grad():
        z = encoders.encode(batch.observations[:, 0])
    q1, q2 = td3.critics(z, td3.actor(z), frozen=True)
    return -minimum(q1, q2).mean()


def update_td3(
    batch: SegmentBatch,
    encoders: EncoderNets,
    td3: TD3Model,
    critic_opt: AdamW,
    actor_opt: AdamW,
    rng: np.random.Generator,
) -> Dict[str, float]:
    """Critic step every call, actor step every `actor_delay` calls, target blend every call."""
    td3.updates += 1
    y = critic_target(batch, encoders, td3, rng)

    critic_opt.zero_grad()
    loss = critic_loss(batch, encoders, td3, y)
    metrics = {"critic_loss": check_finite("critic_loss", loss)}
    backward(loss)
    critic_opt.step()

    if td3.updates % td3.actor_delay == 0:
        actor_opt.zero_grad()
        loss = actor_loss(batch, encoders, td3)
        metrics["actor_loss"] = check_finite("actor_loss", loss)
        backward(loss)
        actor_opt.step()
        td3.actor_updates += 1

    td3.blend_targets()
    logger.debug("td3 update %d: %s", td3.updates, metrics)
    return metrics
