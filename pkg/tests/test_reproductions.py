"""
Long learning runs on the pendulum. Skipped unless pytest is given --runslow.
"""
import numpy as np
import pytest

from src.config import build_config
from src.metrics_writer import read_metrics
from src.runner import scripted_baseline, train

pytestmark = pytest.mark.slow

SEEDS = (1, 2, 3)


def _cfg(out_dir, **overrides):
    values = dict(
        env="pendulum_swingup",
        total_env_steps=50_000,
        eval_every=5_000,
        latent_width=64,
        mlp_dims=[256, 256],
        batch_size=128,
        out_dir=str(out_dir),
    )
    values.update(overrides)
    return build_config(values)


def _first_step_reaching(frame, threshold):
    hit = frame[frame["codebook_active_frac"] >= threshold]
    return int(hit["env_step"].iloc[0]) if len(hit) else np.inf


def test_quantized_latents_keep_their_rank(tmp_path):
    wins = 0
    for seed in SEEDS:
        fsq = read_metrics(train(_cfg(tmp_path / f"fsq{seed}", seed=seed)).cfg.out_dir)
        plain = read_metrics(train(_cfg(tmp_path / f"plain{seed}", seed=seed, use_fsq=False)).cfg.out_dir)
        evals = fsq.dropna(subset=["latent_rank"])
        assert (evals["latent_rank"] >= 0.9 * evals["latent_rank_max"]).all()
        final_fsq = evals["latent_rank"].iloc[-1]
        final_plain = plain.dropna(subset=["latent_rank"])["latent_rank"].iloc[-1]
        wins += final_fsq >= final_plain
    assert wins >= 2


def test_smaller_codebooks_activate_faster(tmp_path):
    small = read_metrics(train(_cfg(tmp_path / "c16", seed=1, fsq_levels=[5, 3], latent_width=32, eval_every=1_000)).cfg.out_dir)
    large = read_metrics(train(_cfg(tmp_path / "c512", seed=1, fsq_levels=[8, 8, 8], latent_width=48, eval_every=1_000)).cfg.out_dir)
    for frame in (small, large):
        activity = frame["codebook_active_frac"].dropna()
        assert activity.is_monotonic_increasing
    for threshold in (0.05, 0.1, 0.2):
        assert _first_step_reaching(small, threshold) <= _first_step_reaching(large, threshold)


def test_learns_to_swing_up(tmp_path):
    cfg = _cfg(tmp_path / "scripted", total_env_steps=100_000, eval_every=10_000)
    _, r_star = scripted_baseline(cfg, episodes=20)
    finals = []
    for seed in SEEDS:
        state = train(_cfg(tmp_path / f"iqrl{seed}", seed=seed, total_env_steps=100_000, eval_every=10_000))
        evals = read_metrics(state.cfg.out_dir)["eval_return_mean"].dropna()
        assert evals.max() >= r_star
        finals.append(evals.iloc[-1])
    baseline = train(_cfg(tmp_path / "td3", seed=SEEDS[0], total_env_steps=100_000, eval_every=10_000, latent_encoder="identity"))
    baseline_final = read_metrics(baseline.cfg.out_dir)["eval_return_mean"].dropna().iloc[-1]
    assert finals[0] >= baseline_final


@pytest.mark.parametrize("overrides", [
    {"latent_width": 64},
    {"latent_width": 512},
    {"latent_width": 1024},
    {"fsq_levels": [5, 3], "latent_width": 64},
    {"fsq_levels": [8, 8, 8], "latent_width": 63},
    {"ablate_reward_head": True},
    {"ablate_reconstruction": True},
    {"ablate_projection": True},
    {"target_mode": "stop_gradient"},
    {"use_fsq": False},
])
def test_ablation_matrix_runs_clean(tmp_path, overrides):
    cfg = _cfg(tmp_path, seed=1, total_env_steps=2_000, eval_every=1_000, random_episodes=1, **overrides)
    train(cfg)
    frame = read_metrics(tmp_path)
    losses = frame[["rep_loss", "critic_loss", "actor_loss"]].dropna(how="all")
    assert np.isfinite(losses.fillna(0.0).to_numpy()).all()
    assert frame["env_step"].is_monotonic_increasing
