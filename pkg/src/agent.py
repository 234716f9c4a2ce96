from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from src.autodiff import Parameter
from src.layers import Mlp
from src.optim import AdamW, ParamGroup, ParameterMismatchError
from src.replay import SegmentBatch
from src.representation import EncoderNets, RepresentationModel, update_representation
from src.td3 import Actor, TD3Model, select_action, update_td3

logger = logging.getLogger(__name__)

OPTIMIZER_SLOTS = ("representation", "critic", "actor")


@dataclass
class AgentSnapshot:
    """Detached copy of the acting path (online encoder and actor), safe to share across threads."""

    encoders: EncoderNets
    actor: Actor

    def act(self, obs: np.ndarray, std: float = 0.0, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return select_action(self.encoders, self.actor, obs, std=std, rng=rng)

    def encode(self, obs: np.ndarray) -> np.ndarray:
        return self.encoders.encode_numpy(obs)


class IQRLAgent:
    """
    Every network of the method plus its optimizers.

    Three AdamW instances, each keeping its own moments on the parameters it
    steps: "representation" (encoder, dynamics, enabled heads), "critic"
    (both critics, plus the encoder when critic gradients reach it) and "actor".
    """

    def __init__(self, cfg, obs_dim: int, act_dim: int, rng: np.random.Generator):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.rep = RepresentationModel.from_config(cfg, obs_dim, act_dim, rng)
        self.td3 = TD3Model.from_config(cfg, self.rep.encoders.width, act_dim, rng)
        self.rep_updates = 0

        opt_kw = dict(betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
        encoder_params = self.rep.encoders.parameters()
        self.rep_opt: Optional[AdamW] = None
        if self.rep.trainable:
            self.rep_opt = AdamW([ParamGroup(self.rep.parameters(), cfg.enc_lr)], slot="representation", **opt_kw)
        critic_groups = [ParamGroup(self.td3.critics.parameters(), cfg.lr)]
        if cfg.critic_grads_to_encoder and encoder_params:
            critic_groups.append(ParamGroup(encoder_params, cfg.enc_lr))
        self.critic_opt = AdamW(critic_groups, slot="critic", **opt_kw)
        self.actor_opt = AdamW([ParamGroup(self.td3.actor.parameters(), cfg.lr)], slot="actor", **opt_kw)
        logger.info(
            "agent built: latent width %d, %d parameters, encoder=%s, fsq=%s",
            self.rep.encoders.width, sum(p.data.size for p in self.parameters()),
            cfg.latent_encoder, self.rep.encoders.fsq.levels if self.rep.encoders.fsq else None,
        )

    # ---------------- acting ----------------
    def act(self, obs: np.ndarray, std: float = 0.0, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return select_action(self.rep.encoders, self.td3.actor, obs, std=std, rng=rng)

    def exploration_std(self, step: int) -> float:
        return self.td3.schedule.std(step)

    def snapshot(self) -> AgentSnapshot:
        encoders = copy.copy(self.rep.encoders)
        if encoders.online is not None:
            encoders.online = encoders.online.clone(encoders.online.spec.name)
        encoders.ema = None
        actor = copy.copy(self.td3.actor)
        actor.net = actor.net.clone(actor.net.spec.name)
        actor.target = None
        return AgentSnapshot(encoders, actor)

    # ---------------- learning ----------------
    def update(self, batch: SegmentBatch, rng: np.random.Generator) -> Dict[str, float]:
        metrics: Dict[str, float] = {}
        if self.rep_opt is not None:
            metrics.update(update_representation(batch, self.rep, self.rep_opt))
            self.rep_updates += 1
        metrics.update(update_td3(batch, self.rep.encoders, self.td3, self.critic_opt, self.actor_opt, rng))
        return metrics

    # ---------------- parameters ----------------
    def networks(self) -> List[Mlp]:
        enc, heads = self.rep.encoders, self.rep.heads
        nets = [
            enc.online, enc.ema,
            self.rep.dynamics.net if self.rep.dynamics is not None else None,
            heads.reward_head, heads.decoder, heads.projection, heads.projection_target,
            self.td3.critics.q1, self.td3.critics.q2, self.td3.critics.q1_target, self.td3.critics.q2_target,
            self.td3.actor.net, self.td3.actor.target,
        ]
        return [n for n in nets if n is not None]

    def parameters(self) -> List[Parameter]:
        return [p for net in self.networks() for p in net.parameters()]

    def named_parameters(self) -> Dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    # ---------------- persistence ----------------
    def state_arrays(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for p in self.parameters():
            out[f"param/{p.name}"] = p.data
            for slot, st in p.state.items():
                out[f"adam/{slot}/{p.name}/m"] = st["m"]
                out[f"adam/{slot}/{p.name}/v"] = st["v"]
                out[f"adam/{slot}/{p.name}/step"] = np.asarray([st["step"]], dtype=np.int64)
        out["agent/counters"] = np.asarray([self.td3.updates, self.td3.actor_updates, self.rep_updates], dtype=np.int64)
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        stored = {k[len("param/"):] for k in arrays if k.startswith("param/")}
        if stored != set(params):
            raise ParameterMismatchError(f"checkpoint parameters differ from this agent: {sorted(stored ^ set(params))[:5]}")
        for name, p in params.items():
            value = arrays[f"param/{name}"]
            if value.shape != p.data.shape:
                raise ParameterMismatchError(f"{name}: stored shape {value.shape}, agent shape {p.data.shape}")
            p.data[...] = value
            for slot in OPTIMIZER_SLOTS:
                key = f"adam/{slot}/{name}"
                if f"{key}/m" in arrays:
                    p.state[slot] = {
                        "m": arrays[f"{key}/m"].astype(p.data.dtype, copy=True),
                        "v": arrays[f"{key}/v"].astype(p.data.dtype, copy=True),
                        "step": int(arrays[f"{key}/step"][0]),
                    }
        self.td3.updates, self.td3.actor_updates, self.rep_updates = (int(v) for v in arrays["agent/counters"])
