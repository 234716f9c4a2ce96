"""
Representation-collapse diagnostics: numerical rank of a latent batch,
the complete-collapse probe, and cumulative codebook activity.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import Callable, Dict, Optional

import numpy as np

from src.fsq import FsqSpec, active_fraction, codebook_size, codes_from_latent

logger = logging.getLogger(__name__)


class LatentRankError(ValueError):
    pass


def latent_rank(z: np.ndarray, rel_tol: Optional[float] = None) -> int:
    """
    #{σ_i > rel_tol · max(B, W) · σ_max}. rel_tol defaults to the machine
    epsilon of the input's float width.
    """
    z = np.asarray(z)
    if z.ndim != 2 or z.shape[0] < 1:
        raise LatentRankError(f"latent_rank needs a non-empty B x W matrix, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise LatentRankError("latent matrix has non-finite entries")
    if rel_tol is None:
        rel_tol = float(np.finfo(z.dtype).eps) if np.issubdtype(z.dtype, np.floating) else float(np.finfo(np.float64).eps)
    s = np.linalg.svd(z.astype(np.float64), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * max(z.shape) * s[0]))


@dataclass
class ProbeResult:
    rank: int
    rank_max: int
    constant: bool
    codes: Optional[np.ndarray] = None


def collapse_probe(
    encode: Callable[[np.ndarray], np.ndarray],
    observations: np.ndarray,
    fsq: Optional[FsqSpec] = None,
    rel_tol: Optional[float] = None,
) -> ProbeResult:
    """
    Encode a probe batch with a parameter snapshot and report its rank, the
    attainable maximum min(B, W), and whether every latent is identical.
    """
    observations = np.asarray(observations)
    if observations.shape[0] < 2:
        raise ValueError(f"collapse_probe needs at least 2 observations, got {observations.shape[0]}")
    z = np.asarray(encode(observations))
    rank = latent_rank(z, rel_tol)
    constant = bool(np.all(z == z[0]))
    codes = codes_from_latent(z, fsq) if fsq is not None else None
    return ProbeResult(rank=rank, rank_max=int(min(z.shape)), constant=constant, codes=codes)


class CodebookTracker:
    """Per-group record of every codebook index seen so far during a run."""

    def __init__(self, spec: FsqSpec):
        self.spec = spec
        self.seen = np.zeros((spec.groups, codebook_size(spec)), dtype=bool)

    def update(self, codes: np.ndarray) -> None:
        codes = np.asarray(codes, dtype=np.int64).reshape(-1, self.spec.groups)
        self.seen[np.arange(self.spec.groups)[None, :], codes] = True

    def active_fraction(self) -> float:
        return active_fraction([np.flatnonzero(row) for row in self.seen], self.spec)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {"codebook.seen": self.seen.astype(np.uint8)}

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        seen = arrays["codebook.seen"].astype(bool)
        if seen.shape != self.seen.shape:
            raise ValueError(f"codebook history shape {seen.shape} does not match {self.seen.shape}")
        self.seen = seen


@dataclass
class MetricsRow:
    env_step: int
    episode: int
    episodic_return: float = float("nan")
    eval_return_mean: float = float("nan")
    rep_loss: float = float("nan")
    critic_loss: float = float("nan")
    actor_loss: float = float("nan")
    latent_rank: float = float("nan")
    latent_rank_max: float = float("nan")
    codebook_active_frac: float = float("nan")
    expl_noise_std: float = float("nan")
    wall_time_s: float = float("nan")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


METRICS_COLUMNS = tuple(f.name for f in fields(MetricsRow))
