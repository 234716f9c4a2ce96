from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import yaml

from src.agent import IQRLAgent
from src.autodiff import set_precision
from src.checkpoint import CheckpointError, load_records, save_records
from src.config import ConfigError, TrainConfig, build_config, save_config
from src.diagnostics import CodebookTracker, MetricsRow, ProbeResult, collapse_probe
from src.envs import BaseEnv, make_env, scripted_pendulum_action
from src.fsq import codebook_size
from src.metrics_writer import MetricsSink
from src.optim import NonFiniteLossError
from src.replay import ReplayBuffer, TransitionRecord

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.iqrl"
NAN_SNAPSHOT_NAME = "nan_snapshot.iqrl"
NOTES_NAME = "notes.yaml"

Policy = Callable[[np.ndarray], np.ndarray]


@dataclass
class EvalResult:
    mean: float
    returns: List[float]


@dataclass
class RunState:
    cfg: TrainConfig
    env: BaseEnv
    agent: IQRLAgent
    replay: ReplayBuffer
    env_rng: np.random.Generator
    learner_rng: np.random.Generator
    tracker: Optional[CodebookTracker]
    obs: np.ndarray
    env_step: int = 0
    episode: int = 0
    episode_return: float = 0.0
    eval_count: int = 0
    update_calls: int = 0
    elapsed_s: float = 0.0
    last_losses: Dict[str, float] = field(default_factory=dict)

    @property
    def random_steps(self) -> int:
        return self.cfg.random_episodes * self.cfg.episode_length

    @property
    def end_step(self) -> int:
        return self.random_steps + self.cfg.total_env_steps


# ---------------- seeding ----------------
def _seed_int(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def episode_seeds(seed: int, episodes: int) -> List[int]:
    """Reset seed of every evaluation episode; a pure function of (seed, index)."""
    return [_seed_int(seed, i) for i in range(episodes)]


def eval_seed_for(cfg: TrainConfig, eval_index: int) -> int:
    return _seed_int(cfg.resolved_eval_seed, eval_index)


def probe_rng_for(cfg: TrainConfig, eval_index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, eval_index, 7])


def build_state(cfg: TrainConfig) -> RunState:
    set_precision(cfg.precision)
    env_ss, learner_ss, init_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    env_rng = np.random.default_rng(env_ss)
    learner_rng = np.random.default_rng(learner_ss)
    env = make_env(cfg.env, cfg.episode_length, cfg.action_repeat)
    spec = env.spec
    agent = IQRLAgent(cfg, spec.obs_dim, spec.act_dim, np.random.default_rng(init_ss))
    replay = ReplayBuffer(spec.obs_dim, spec.act_dim, cfg.buffer_capacity, rng=learner_rng)
    fsq = agent.rep.encoders.fsq
    tracker = CodebookTracker(fsq) if fsq is not None else None
    obs = env.reset(seed=int(env_rng.integers(2**31)))
    return RunState(cfg, env, agent, replay, env_rng, learner_rng, tracker, obs)


# ---------------- evaluation ----------------
def run_episode(policy: Policy, cfg: TrainConfig, seed: int) -> float:
    env = make_env(cfg.env, cfg.episode_length, cfg.action_repeat)
    obs = env.reset(seed=seed)
    total, done = 0.0, False
    while not done:
        obs, reward, done = env.step(policy(obs))
        total += reward
    return total


def evaluate(policy: Policy, cfg: TrainConfig, episodes: int = 10, seed: int = 0, workers: int = 1) -> EvalResult:
    """
    Exploit-mode returns over `episodes` fresh environments. Pure: nothing
    outside the policy's snapshot is read, and results do not depend on
    the worker count.
    """
    seeds = episode_seeds(seed, episodes)
    returns: List[float]
    if workers > 1 and episodes > 1:
        try:
            with ThreadPoolExecutor(max_workers=min(workers, episodes)) as pool:
                returns = list(pool.map(lambda s: run_episode(policy, cfg, s), seeds))
        except RuntimeError as e:
            logger.warning("evaluation fan-out failed (%s); running serially", e)
            returns = [run_episode(policy, cfg, s) for s in seeds]
    else:
        returns = [run_episode(policy, cfg, s) for s in seeds]
    return EvalResult(mean=float(np.mean(returns)), returns=returns)


def probe(state: RunState, eval_index: int) -> Optional[ProbeResult]:
    if len(state.replay) < 2:
        return None
    obs = state.replay.sample_observations(state.cfg.probe_size, probe_rng_for(state.cfg, eval_index))
    snapshot = state.agent.snapshot()
    return collapse_probe(snapshot.encode, obs, state.agent.rep.encoders.fsq)


def _evaluation_fields(state: RunState) -> Dict[str, float]:
    cfg = state.cfg
    snapshot = state.agent.snapshot()
    result = evaluate(snapshot.act, cfg, cfg.num_eval_episodes, eval_seed_for(cfg, state.eval_count), cfg.eval_workers)
    fields_: Dict[str, float] = {"eval_return_mean": result.mean}
    pr = probe(state, state.eval_count)
    if pr is not None:
        fields_["latent_rank"] = float(pr.rank)
        fields_["latent_rank_max"] = float(pr.rank_max)
        if state.tracker is not None:
            state.tracker.update(pr.codes)
            fields_["codebook_active_frac"] = state.tracker.active_fraction()
        if pr.constant:
            logger.warning("step %d: every probe latent is identical (complete collapse)", state.env_step)
    state.eval_count += 1
    logger.info(
        "eval %d @ step %d: return %.2f, rank %s/%s, active %.3f",
        state.eval_count, state.env_step, result.mean,
        fields_.get("latent_rank"), fields_.get("latent_rank_max"), fields_.get("codebook_active_frac", float("nan")),
    )
    return fields_


# ---------------- persistence ----------------
def _rng_state(rng: np.random.Generator) -> Dict:
    return rng.bit_generator.state


def save_state(state: RunState, path: Union[str, Path]) -> Path:
    meta = {
        "config": state.cfg.to_dict(),
        "env_step": state.env_step,
        "episode": state.episode,
        "episode_return": state.episode_return,
        "eval_count": state.eval_count,
        "update_calls": state.update_calls,
        "elapsed_s": state.elapsed_s,
        "last_losses": state.last_losses,
        "env": state.env.get_state(),
        "env_rng": _rng_state(state.env_rng),
        "learner_rng": _rng_state(state.learner_rng),
    }
    records: Dict[str, np.ndarray] = {"run/meta": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    records["run/obs"] = np.asarray(state.obs, dtype=np.float64)
    records.update(state.agent.state_arrays())
    records.update(state.replay.state_arrays())
    if state.tracker is not None:
        records.update(state.tracker.state_arrays())
    out = save_records(path, records)
    logger.info("checkpoint written: %s (step %d)", out, state.env_step)
    return out


def load_state(path: Union[str, Path], cfg: Optional[TrainConfig] = None) -> RunState:
    """
    Rebuild a RunState from a checkpoint. `cfg` may change run-length or
    output keys; the stored config is used when it is omitted.
    """
    records = load_records(path)
    if "run/meta" not in records:
        raise CheckpointError(f"{path}: no run metadata record")
    meta = json.loads(records["run/meta"].tobytes().decode("utf-8"))
    if cfg is None:
        cfg = build_config(meta["config"])
    state = build_state(cfg)
    try:
        state.agent.load_state_arrays(records)
        state.replay.load_state_arrays(records)
        if state.tracker is not None:
            state.tracker.load_state_arrays(records)
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: checkpoint does not match this configuration: {e}") from e
    state.env.set_state(meta["env"])
    state.env_rng.bit_generator.state = meta["env_rng"]
    state.learner_rng.bit_generator.state = meta["learner_rng"]
    state.obs = records["run/obs"].copy()
    state.env_step = int(meta["env_step"])
    state.episode = int(meta["episode"])
    state.episode_return = float(meta["episode_return"])
    state.eval_count = int(meta["eval_count"])
    state.update_calls = int(meta["update_calls"])
    state.elapsed_s = float(meta["elapsed_s"])
    state.last_losses = {k: float(v) for k, v in meta["last_losses"].items()}
    return state


# ---------------- training ----------------
def _row(state: RunState, started: float, values: Dict[str, float]) -> MetricsRow:
    policy_steps = state.env_step - state.random_steps
    losses = state.last_losses
    return MetricsRow(
        env_step=state.env_step,
        episode=state.episode,
        rep_loss=losses.get("rep_loss", float("nan")),
        critic_loss=losses.get("critic_loss", float("nan")),
        actor_loss=losses.get("actor_loss", float("nan")),
        expl_noise_std=state.agent.exploration_std(policy_steps) if policy_steps >= 0 else float("nan"),
        wall_time_s=state.elapsed_s + (time.perf_counter() - started),
        **values,
    )


def _eval_due(state: RunState) -> bool:
    every = state.cfg.eval_every
    done_policy = state.env_step - state.random_steps
    return every > 0 and done_policy >= 0 and done_policy % every == 0


def _step(state: RunState) -> Dict[str, float]:
    cfg, agent = state.cfg, state.agent
    if state.env_step < state.random_steps:
        action = state.env_rng.uniform(-1.0, 1.0, size=agent.act_dim)
    else:
        std = agent.exploration_std(state.env_step - state.random_steps)
        action = agent.act(state.obs, std=std, rng=state.env_rng)
    next_obs, reward, done = state.env.step(action)
    state.replay.push(TransitionRecord(state.obs, action, reward, next_obs, done, terminal=False))
    state.env_step += 1
    state.episode_return += reward

    if state.env_step > state.random_steps:
        for _ in range(cfg.utd):
            batch = state.replay.sample_segments(cfg.batch_size, cfg.segment_span)
            if batch is None:
                break
            state.last_losses.update(agent.update(batch, state.learner_rng))
            state.update_calls += 1

    values: Dict[str, float] = {}
    if done:
        values["episodic_return"] = state.episode_return
        state.episode += 1
        state.episode_return = 0.0
        state.obs = state.env.reset(seed=int(state.env_rng.integers(2**31)))
    else:
        state.obs = next_obs
    return values


def _write_notes(state: RunState, out_dir: Path, source: str) -> None:
    notes = {
        "config source": source or "(defaults)",
        "env": state.cfg.env,
        "decision steps": state.env_step,
        "episodes": state.episode,
        "update calls": state.update_calls,
        "actor updates": state.agent.td3.actor_updates,
        "env debug (last step)": dict(state.env.last_debug),
        "wall time (s)": round(state.elapsed_s, 3),
    }
    with open(out_dir / NOTES_NAME, "w", encoding="utf-8") as f:
        yaml.safe_dump(notes, f, default_flow_style=False, sort_keys=False)


def train(
    cfg: TrainConfig,
    resume: Optional[Union[str, Path]] = None,
    raw_config: str = "",
    config_name: str = "config.toml",
) -> RunState:
    """
    Seed episodes with uniform random actions, then one update block per
    decision step; evaluation, the collapse probe and codebook activity are
    recorded every `eval_every` policy steps (and once before learning starts).
    """
    out_dir = Path(cfg.out_dir)
    save_config(cfg, out_dir, raw_config, config_name)
    state = load_state(resume, cfg) if resume else build_state(cfg)
    sink = MetricsSink(out_dir, resume_step=state.env_step if resume else None)
    started = time.perf_counter()
    logger.info(
        "training %s seed %d: %d random + %d policy decision steps -> %s",
        cfg.env, cfg.seed, state.random_steps, cfg.total_env_steps, out_dir,
    )

    try:
        if state.env_step == 0 and state.random_steps == 0 and _eval_due(state):
            sink.record(_row(state, started, _evaluation_fields(state)))
        while state.env_step < state.end_step:
            values = _step(state)
            if _eval_due(state):
                values.update(_evaluation_fields(state))
            if values:
                sink.record(_row(state, started, values))
            if cfg.checkpoint_every and state.env_step % cfg.checkpoint_every == 0:
                state.elapsed_s += time.perf_counter() - started
                started = time.perf_counter()
                save_state(state, out_dir / CHECKPOINT_NAME)
    except NonFiniteLossError as e:
        logger.error("non-finite loss at step %d: %s; writing %s", state.env_step, e, NAN_SNAPSHOT_NAME)
        save_state(state, out_dir / NAN_SNAPSHOT_NAME)
        raise

    state.elapsed_s += time.perf_counter() - started
    save_state(state, out_dir / CHECKPOINT_NAME)
    _write_notes(state, out_dir, config_name if raw_config else "")
    logger.info(
        "done: %d steps, %d episodes, %d updates (%d actor) in %.1fs",
        state.env_step, state.episode, state.update_calls, state.agent.td3.actor_updates, state.elapsed_s,
    )
    return state


# ---------------- scripted reference ----------------
def scripted_baseline(cfg: TrainConfig, episodes: int = 10, seed: Optional[int] = None) -> Tuple[List[float], float]:
    """Returns of the energy-shaping controller and their 90th percentile."""
    if cfg.env != "pendulum_swingup":
        raise ConfigError(f"the scripted controller only drives pendulum_swingup, not {cfg.env!r}", key="env")
    set_precision(cfg.precision)
    result = evaluate(scripted_pendulum_action, cfg, episodes, cfg.resolved_eval_seed if seed is None else seed, cfg.eval_workers)
    return result.returns, float(np.percentile(result.returns, 90))


def load_notes(run_dir: Union[str, Path]) -> Dict:
    path = Path(run_dir) / NOTES_NAME
    if not path.exists():
        return {}
    with open(path, encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def eval_checkpoint(path: Union[str, Path], episodes: int, workers: int = 1) -> EvalResult:
    state = load_state(path)
    snapshot = state.agent.snapshot()
    return evaluate(snapshot.act, state.cfg, episodes, state.cfg.resolved_eval_seed, workers)


def diag_checkpoint(path: Union[str, Path]) -> Dict[str, object]:
    state = load_state(path)
    out: Dict[str, object] = {
        "env_step": state.env_step,
        "latent_width": state.agent.rep.encoders.width,
        "replay_size": len(state.replay),
    }
    pr = probe(state, state.eval_count)
    if pr is not None:
        out.update(latent_rank=pr.rank, latent_rank_max=pr.rank_max, constant=pr.constant)
    fsq = state.agent.rep.encoders.fsq
    if fsq is not None:
        out["fsq_levels"] = list(fsq.levels)
        out["codebook_size"] = codebook_size(fsq)
        out["groups"] = fsq.groups
        if state.tracker is not None:
            out["active_fraction"] = state.tracker.active_fraction()
            if pr is not None:
                out["probe_distinct_codes"] = int(len(np.unique(pr.codes)))
    return out
