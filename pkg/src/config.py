from __future__ import annotations

import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import yaml

from src.fsq import FsqSpec

ENV_NAMES = ("pendulum_swingup", "point_mass")
TARGET_MODES = ("ema", "stop_gradient")
LATENT_ENCODERS = ("mlp", "identity")

# exploration-noise durations (decision steps) and latent width per difficulty
PRESETS: Dict[str, Dict[str, Any]] = {
    "easy": {"expl_noise_duration": 50_000},
    "medium": {"expl_noise_duration": 150_000},
    "hard": {"expl_noise_duration": 500_000, "latent_width": 1024},
}


class ConfigError(ValueError):
    def __init__(self, message: str, key: Optional[str] = None, location: Optional[str] = None):
        super().__init__(message)
        self.key = key
        self.location = location


def _default_out_dir() -> str:
    return os.environ.get("IQRL_OUT", "runs/iqrl")


@dataclass
class TrainConfig:
    # run
    env: str = "pendulum_swingup"
    seed: int = 1
    total_env_steps: int = 100_000
    eval_every: int = 10_000
    num_eval_episodes: int = 10
    random_episodes: int = 10
    out_dir: str = field(default_factory=_default_out_dir)
    utd: int = 1
    episode_length: int = 500
    action_repeat: int = 2
    precision: str = "float32"
    preset: str = "easy"
    eval_seed: Optional[int] = None
    eval_workers: int = 1
    checkpoint_every: int = 0
    probe_size: int = 512

    # TD3
    gamma: float = 0.99
    tau: float = 0.005
    actor_delay: int = 2
    policy_noise: float = 0.2
    noise_clip: float = 0.3
    nstep: int = 3
    lr: float = 3e-4
    batch_size: int = 256
    expl_noise_start: float = 1.0
    expl_noise_end: float = 0.1
    expl_noise_duration: int = 50_000
    mlp_dims: List[int] = field(default_factory=lambda: [512, 512])
    critic_grads_to_encoder: bool = True

    # representation
    horizon: int = 5
    gamma_rep: float = 0.9
    enc_lr: float = 1e-4
    enc_tau: float = 0.005
    enc_dims: List[int] = field(default_factory=lambda: [256])
    fsq_levels: List[int] = field(default_factory=lambda: [8, 8])
    latent_width: int = 512
    latent_groups: Optional[int] = None
    use_fsq: bool = True
    fsq_literal_bound: bool = False
    latent_encoder: str = "mlp"
    target_mode: str = "ema"
    ablate_reward_head: bool = False
    ablate_reconstruction: bool = False
    ablate_projection: bool = False
    projection_width: int = 512
    reward_loss_weight: float = 1.0
    reconstruction_loss_weight: float = 1.0

    # optimizer
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01

    # replay
    buffer_capacity: int = 1_000_000

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.env not in ENV_NAMES:
            raise ConfigError(f"env must be one of {ENV_NAMES}, got {self.env!r}", key="env")
        if self.target_mode not in TARGET_MODES:
            raise ConfigError(f"target_mode must be one of {TARGET_MODES}, got {self.target_mode!r}", key="target_mode")
        if self.latent_encoder not in LATENT_ENCODERS:
            raise ConfigError(f"latent_encoder must be one of {LATENT_ENCODERS}, got {self.latent_encoder!r}", key="latent_encoder")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}", key="precision")
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {sorted(PRESETS)}, got {self.preset!r}", key="preset")
        if self.nstep < 1 or self.horizon < 1:
            raise ConfigError("nstep and horizon must be >= 1", key="nstep" if self.nstep < 1 else "horizon")
        for key in ("utd", "episode_length", "action_repeat", "batch_size", "actor_delay", "buffer_capacity", "num_eval_episodes", "eval_workers", "probe_size"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key} must be >= 1", key=key)
        for key in ("total_env_steps", "random_episodes", "checkpoint_every", "eval_every", "expl_noise_duration"):
            if int(getattr(self, key)) < 0:
                raise ConfigError(f"{key} must be >= 0", key=key)
        if any(int(v) < 2 for v in self.fsq_levels):
            raise ConfigError(f"fsq_levels entries must be >= 2, got {self.fsq_levels}", key="fsq_levels")
        if self.latent_groups is None and self.use_fsq and self.latent_encoder == "mlp" and self.latent_width % len(self.fsq_levels):
            raise ConfigError(
                f"latent_width {self.latent_width} is not divisible by {len(self.fsq_levels)} FSQ channels; set latent_groups instead",
                key="latent_width",
            )

    # ---------------- derived ----------------
    @property
    def segment_span(self) -> int:
        """Observations per sampled segment: covers both the rollout horizon and the n-step target."""
        return max(self.horizon, self.nstep) + 1

    def latent_layout(self) -> Tuple[int, int]:
        """(groups d, total width W)"""
        c = len(self.fsq_levels)
        if self.latent_groups:
            return int(self.latent_groups), int(self.latent_groups) * c
        return self.latent_width // c, self.latent_width

    def fsq_spec(self) -> Optional[FsqSpec]:
        if not self.use_fsq:
            return None
        groups, _ = self.latent_layout()
        return FsqSpec(tuple(self.fsq_levels), groups=groups, literal_bound=self.fsq_literal_bound)

    @property
    def resolved_eval_seed(self) -> int:
        return self.eval_seed if self.eval_seed is not None else self.seed + 1_000_003

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


FIELD_NAMES = tuple(f.name for f in fields(TrainConfig))
_DEFAULTS = TrainConfig()


def _coerce(key: str, value: Any) -> Any:
    default = getattr(_DEFAULTS, key)
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(default, int) or key in ("latent_groups", "eval_seed"):
            if value is None:
                return None
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if not isinstance(value, (list, tuple)):
                raise ValueError(value)
            return [int(v) for v in value]
        if isinstance(default, str):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key!r}: {value!r} (expected {type(default).__name__})", key=key) from None
    return value


def flatten_sections(doc: Dict[str, Any]) -> Dict[str, Any]:
    """
    Sections are cosmetic: [td3] nstep = 3 and top-level nstep = 3 mean the same.
    A key may only be set once across the whole document.
    """
    flat: Dict[str, Any] = {}
    for key, value in doc.items():
        items = value.items() if isinstance(value, dict) else [(key, value)]
        for k, v in items:
            if isinstance(v, dict):
                raise ConfigError(f"nested section {key}.{k} is not supported", key=k)
            if k in flat:
                raise ConfigError(f"config key {k!r} set more than once", key=k)
            flat[k] = v
    return flat


def read_config_file(path: str | Path) -> Tuple[Dict[str, Any], str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".yaml", ".yml"):
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown location"
            raise ConfigError(f"{path}: malformed YAML at {where}: {e}", location=where) from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping", location="line 1")
    else:
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: malformed config: {e}", location=str(e)) from None
    return flatten_sections(doc), text


def parse_overrides(pairs: Iterable[str]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        key, raw = key.strip(), raw.strip()
        try:
            out[key] = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            out[key] = raw
    return out


def build_config(values: Dict[str, Any]) -> TrainConfig:
    unknown = [k for k in values if k not in FIELD_NAMES]
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}", key=unknown[0])
    merged: Dict[str, Any] = {}
    preset = str(values.get("preset", _DEFAULTS.preset))
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {sorted(PRESETS)}, got {preset!r}", key="preset")
    merged.update(PRESETS[preset])
    merged.update(values)
    return TrainConfig(**{k: _coerce(k, v) for k, v in merged.items()})


def load_config(path: Optional[str | Path] = None, overrides: Iterable[str] = (), **explicit: Any) -> Tuple[TrainConfig, str]:
    """
    Layering, lowest to highest precedence: defaults, preset, file, explicit
    keyword values (CLI flags such as --seed), then --set overrides.
    Returns the config and the raw file text (empty without a file).
    """
    values: Dict[str, Any] = {}
    raw = ""
    if path is not None:
        values, raw = read_config_file(path)
    values.update({k: v for k, v in explicit.items() if v is not None})
    values.update(parse_overrides(overrides))
    return build_config(values), raw


def save_config(cfg: TrainConfig, out_dir: str | Path, raw_text: str = "", source_name: str = "config.toml") -> Path:
    """Echo the raw file verbatim and dump the effective config next to it."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if raw_text:
        (out / f"source_{Path(source_name).name}").write_text(raw_text, encoding="utf-8")
    path = out / "config.yaml"
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(cfg.to_dict(), f, default_flow_style=False, sort_keys=False)
    return path
