"""
Self-predictive latent representation.

The online encoder maps observations to quantized latents; a residual
dynamics net rolls them forward H steps under the logged actions, and the
rollout is pulled toward the momentum (EMA) encoder's latents of the real
future observations by a discounted cosine objective. Rewards never enter
that objective, so the representation is task-agnostic; the reward,
reconstruction and projection heads exist only as ablations.

Sign convention: the loss is the NEGATIVE discounted cosine sum, so
minimizing it aligns predictions with targets.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.autodiff import Tensor, as_tensor, backward, concat, no_grad
from src.fsq import FsqError, FsqSpec, is_valid_latent, quantize, quantize_ste
from src.layers import Mlp, MlpSpec
from src.optim import AdamW, check_finite, ema_blend
from src.replay import SegmentBatch

logger = logging.getLogger(__name__)

COSINE_EPS = 1e-8


class HeadDisabledError(RuntimeError):
    pass


class EncoderNets:
    """
    Online encoder e_θ plus its momentum copy e_θ̄.

    In "stop_gradient" target mode there is no copy: targets come from the
    online encoder with recording disabled. In identity mode (the plain TD3
    baseline) observations are the latents and there are no parameters.
    """

    def __init__(
        self,
        obs_dim: int,
        width: int,
        hidden: Sequence[int],
        fsq: Optional[FsqSpec],
        rng: np.random.Generator,
        target_mode: str = "ema",
        identity: bool = False,
    ):
        self.obs_dim = obs_dim
        self.target_mode = target_mode
        self.identity = identity
        self.fsq = None if identity else fsq
        self.online: Optional[Mlp] = None
        self.ema: Optional[Mlp] = None
        if identity:
            self.width = obs_dim
            return
        self.width = width
        if self.fsq is not None:
            if self.fsq.width != width:
                raise FsqError(f"encoder width {width} does not match FSQ layout {self.fsq.groups}x{self.fsq.channels}")
            if self.fsq.literal_bound:
                logger.warning("FSQ literal bound in use: even levels reach L+1 values")
        spec = MlpSpec(obs_dim, tuple(hidden), width, normed=True, orthogonal=True, name="encoder")
        self.online = Mlp(spec, rng)
        if target_mode == "ema":
            self.ema = self.online.clone("encoder_target")

    def latent(self, h: Tensor) -> Tensor:
        """f(·): straight-through FSQ, or identity when quantization is off."""
        return quantize_ste(h, self.fsq) if self.fsq is not None else h

    def encode(self, obs, frozen: bool = False) -> Tensor:
        if self.identity:
            return as_tensor(obs)
        return self.latent(self.online(obs, frozen=frozen))

    def target_network(self) -> Optional[Mlp]:
        return self.ema if self.ema is not None else self.online

    def encode_target(self, obs) -> Tensor:
        """Regression targets; never part of any gradient path."""
        with no_grad():
            if self.identity:
                return as_tensor(obs)
            return self.latent(self.target_network()(obs))

    def encode_numpy(self, obs: np.ndarray) -> np.ndarray:
        """Hard-quantized latents for acting and diagnostics."""
        obs = np.atleast_2d(obs)
        if self.identity:
            return as_tensor(obs).data
        with no_grad():
            h = self.online(obs).data
        return quantize(h, self.fsq)[0] if self.fsq is not None else h

    def parameters(self) -> list:
        return self.online.parameters() if self.online is not None else []

    def blend_target(self, tau: float) -> None:
        if self.ema is not None:
            ema_blend(self.ema.params, self.online.params, tau)


class DynamicsNet:
    """Residual latent dynamics: ẑ' = f(z + d_φ(z, a))."""

    def __init__(self, width: int, act_dim: int, hidden: Sequence[int], fsq: Optional[FsqSpec], rng: np.random.Generator):
        self.fsq = fsq
        self.net = Mlp(MlpSpec(width + act_dim, tuple(hidden), width, normed=True, name="dynamics"), rng)

    def predict_next(self, z: Tensor, a) -> Tensor:
        nxt = z + self.net(concat([z, as_tensor(a)], axis=-1))
        return quantize_ste(nxt, self.fsq) if self.fsq is not None else nxt

    def parameters(self) -> list:
        return self.net.parameters()


class AblationHeads:
    """Optional reward head g_ξ, decoder h_κ and projection head (with its momentum copy)."""

    def __init__(
        self,
        width: int,
        obs_dim: int,
        act_dim: int,
        rng: np.random.Generator,
        hidden: Sequence[int] = (512, 512),
        decoder_hidden: Sequence[int] = (256,),
        reward: bool = False,
        decoder: bool = False,
        projection: bool = False,
        projection_width: int = 512,
        target_mode: str = "ema",
    ):
        self.reward_head = Mlp(MlpSpec(width + act_dim, tuple(hidden), 1, name="reward_head"), rng) if reward else None
        self.decoder = Mlp(MlpSpec(width, tuple(decoder_hidden), obs_dim, name="decoder"), rng) if decoder else None
        self.projection = None
        self.projection_target = None
        if projection:
            self.projection = Mlp(MlpSpec(width, (projection_width,), projection_width, name="projection"), rng)
            if target_mode == "ema":
                self.projection_target = self.projection.clone("projection_target")

    def project_target(self, z: Tensor) -> Tensor:
        with no_grad():
            net = self.projection_target if self.projection_target is not None else self.projection
            return net(z)

    def parameters(self) -> list:
        nets = (self.reward_head, self.decoder, self.projection)
        return [p for net in nets if net is not None for p in net.parameters()]

    def blend_target(self, tau: float) -> None:
        if self.projection_target is not None:
            ema_blend(self.projection_target.params, self.projection.params, tau)


@dataclass
class RepresentationModel:
    encoders: EncoderNets
    dynamics: Optional[DynamicsNet]
    heads: AblationHeads
    horizon: int = 5
    gamma_rep: float = 0.9
    enc_tau: float = 0.005
    reward_weight: float = 1.0
    reconstruction_weight: float = 1.0

    @classmethod
    def from_config(cls, cfg, obs_dim: int, act_dim: int, rng: np.random.Generator) -> "RepresentationModel":
        identity = cfg.latent_encoder == "identity"
        _, width = cfg.latent_layout()
        encoders = EncoderNets(
            obs_dim, width, cfg.enc_dims, None if identity else cfg.fsq_spec(), rng,
            target_mode=cfg.target_mode, identity=identity,
        )
        dynamics = None if identity else DynamicsNet(encoders.width, act_dim, cfg.mlp_dims, encoders.fsq, rng)
        heads = AblationHeads(
            encoders.width, obs_dim, act_dim, rng,
            hidden=cfg.mlp_dims,
            decoder_hidden=tuple(reversed(cfg.enc_dims)),
            reward=cfg.ablate_reward_head and not identity,
            decoder=cfg.ablate_reconstruction and not identity,
            projection=cfg.ablate_projection and not identity,
            projection_width=cfg.projection_width,
            target_mode=cfg.target_mode,
        )
        return cls(
            encoders, dynamics, heads,
            horizon=cfg.horizon, gamma_rep=cfg.gamma_rep, enc_tau=cfg.enc_tau,
            reward_weight=cfg.reward_loss_weight, reconstruction_weight=cfg.reconstruction_loss_weight,
        )

    @property
    def trainable(self) -> bool:
        return self.dynamics is not None

    def parameters(self) -> list:
        out = self.encoders.parameters()
        if self.dynamics is not None:
            out += self.dynamics.parameters()
        return out + self.heads.parameters()

    def blend_targets(self) -> None:
        self.encoders.blend_target(self.enc_tau)
        self.heads.blend_target(self.enc_tau)

    def discounts(self) -> np.ndarray:
        return self.gamma_rep ** np.arange(self.horizon)


def cosine_similarity(a: Tensor, b: Tensor, eps: float = COSINE_EPS) -> Tensor:
    """Row-wise cosine with both norms guarded by eps; two zero rows give 0."""
    num = (a * b).sum(axis=-1)
    norm_a = ((a * a).sum(axis=-1) + eps * eps).sqrt()
    norm_b = ((b * b).sum(axis=-1) + eps * eps).sqrt()
    return num / (norm_a * norm_b)


def rollout(model: RepresentationModel, batch: SegmentBatch) -> List[Tensor]:
    """[z_t, ẑ_{t+1}, .., ẑ_{t+H}], seeded from the online encoder at o_t."""
    if batch.span < model.horizon + 1:
        raise ValueError(f"segment span {batch.span} is too short for horizon {model.horizon}")
    z = model.encoders.encode(batch.observations[:, 0])
    latents = [z]
    for h in range(model.horizon):
        z = model.dynamics.predict_next(z, batch.actions[:, h])
        latents.append(z)
    return latents


def assert_valid_latents(latents: Sequence[Tensor], spec: Optional[FsqSpec]) -> None:
    if spec is None:
        return
    for h, z in enumerate(latents):
        if not is_valid_latent(z.data, spec):
            raise FsqError(f"rollout step {h} produced a latent outside the FSQ level sets")


def representation_loss(batch: SegmentBatch, model: RepresentationModel, latents: Optional[List[Tensor]] = None) -> Tensor:
    """-(1/B) Σ_b Σ_h γ_rep^h cos(ẑ_{t+h+1}, z̄_{t+h+1})"""
    latents = latents if latents is not None else rollout(model, batch)
    heads = model.heads
    total: Optional[Tensor] = None
    for h, weight in enumerate(model.discounts()):
        pred = latents[h + 1]
        target = model.encoders.encode_target(batch.observations[:, h + 1])
        if heads.projection is not None:
            pred = heads.projection(pred)
            target = heads.project_target(target)
        term = cosine_similarity(pred, target).mean() * float(weight)
        total = term if total is None else total + term
    return -total


def reward_loss(batch: SegmentBatch, model: RepresentationModel, latents: Optional[List[Tensor]] = None) -> Tensor:
    """Σ_h γ_rep^h · mean_b (g_ξ(ẑ_{t+h}, a_{t+h}) − r_{t+h+1})²"""
    head = model.heads.reward_head
    if head is None:
        raise HeadDisabledError("reward_loss called with the reward head disabled (set ablate_reward_head)")
    latents = latents if latents is not None else rollout(model, batch)
    total: Optional[Tensor] = None
    for h, weight in enumerate(model.discounts()):
        pred = head(concat([latents[h], as_tensor(batch.actions[:, h])], axis=-1))
        err = pred - batch.rewards[:, h : h + 1]
        term = (err * err).mean() * float(weight)
        total = term if total is None else total + term
    return total


def reconstruction_loss(batch: SegmentBatch, model: RepresentationModel, latents: Optional[List[Tensor]] = None) -> Tensor:
    """Mean squared error of h_κ(ẑ_{t+h}) against o_{t+h}, averaged over the H+1 rollout steps."""
    decoder = model.heads.decoder
    if decoder is None:
        raise HeadDisabledError("reconstruction_loss called with the decoder disabled (set ablate_reconstruction)")
    latents = latents if latents is not None else rollout(model, batch)
    total: Optional[Tensor] = None
    for h, z in enumerate(latents):
        err = decoder(z) - batch.observations[:, h]
        term = (err * err).mean()
        total = term if total is None else total + term
    return total * (1.0 / len(latents))


def total_loss(batch: SegmentBatch, model: RepresentationModel):
    """Summed enabled objectives and their scalar parts."""
    latents = rollout(model, batch)
    assert_valid_latents(latents, model.encoders.fsq)
    loss = representation_loss(batch, model, latents)
    parts: Dict[str, float] = {"rep_loss": check_finite("rep_loss", loss)}
    if model.heads.reward_head is not None:
        rew = reward_loss(batch, model, latents)
        parts["reward_loss"] = check_finite("reward_loss", rew)
        loss = loss + rew * model.reward_weight
    if model.heads.decoder is not None:
        rec = reconstruction_loss(batch, model, latents)
        parts["reconstruction_loss"] = check_finite("reconstruction_loss", rec)
        loss = loss + rec * model.reconstruction_weight
    return loss, parts


def apply_target_mode(model: RepresentationModel) -> None:
    """Post-step target maintenance: EMA blend in "ema" mode, nothing in "stop_gradient" mode."""
    if model.encoders.target_mode == "ema":
        model.blend_targets()


def update_representation(batch: SegmentBatch, model: RepresentationModel, optimizer: AdamW) -> Dict[str, float]:
    """One AdamW step on encoder, dynamics and enabled heads, then the target blend."""
    optimizer.zero_grad()
    loss, parts = total_loss(batch, model)
    backward(loss)
    optimizer.step()
    apply_target_mode(model)
    logger.debug("representation update: %s", parts)
    return parts
