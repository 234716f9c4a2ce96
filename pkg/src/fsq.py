"""
Finite scalar quantization with an implicit codebook.

Channel i with L_i levels is bounded to scale_i * tanh(v) where
scale_i = (L_i - 1) / 2, shifted by offset_i = 1/2 for even L_i, rounded, and
shifted back. Odd levels therefore produce the integers {-(L-1)/2 .. (L-1)/2};
even levels produce the half-integers {-(L-1)/2 .. (L-1)/2} in unit steps.
Either way channel i takes exactly L_i values and digit = z + (L_i - 1)/2 is
an integer in [0, L_i).

With `literal_bound` the bound is floor(L_i/2) * tanh(v) with no shift, which
reaches L_i + 1 integers for even L_i; it exists for comparison only.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from src.autodiff import Tensor, stop_gradient

logger = logging.getLogger(__name__)

# level sets that approximate 2^4, 2^6, 2^8, 2^9, 2^10 codewords
TABLE_LEVELS = {
    16: (5, 3),
    64: (8, 8),
    256: (8, 6, 5),
    512: (8, 8, 8),
    1024: (8, 5, 5, 5),
}


class FsqError(ValueError):
    pass


@dataclass(frozen=True)
class FsqSpec:
    levels: Tuple[int, ...]
    groups: int = 1
    literal_bound: bool = False

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))
        if not self.levels or any(v < 2 for v in self.levels):
            raise FsqError(f"FSQ levels must all be >= 2, got {list(self.levels)}")
        if self.groups < 1:
            raise FsqError(f"FSQ groups must be >= 1, got {self.groups}")

    @property
    def channels(self) -> int:
        return len(self.levels)

    @property
    def width(self) -> int:
        return self.groups * self.channels

    @property
    def effective_levels(self) -> Tuple[int, ...]:
        if self.literal_bound:
            return tuple(2 * (v // 2) + 1 for v in self.levels)
        return self.levels

    def scale(self) -> np.ndarray:
        lv = np.asarray(self.levels, dtype=np.float64)
        if self.literal_bound:
            return np.floor(lv / 2.0)
        return (lv - 1.0) / 2.0

    def offset(self) -> np.ndarray:
        if self.literal_bound:
            return np.zeros(self.channels)
        return np.where(np.asarray(self.levels) % 2 == 0, 0.5, 0.0)

    def half_range(self) -> np.ndarray:
        """Largest codeword magnitude per channel; digit = value + half_range."""
        return (np.asarray(self.effective_levels, dtype=np.float64) - 1.0) / 2.0


def codebook_size(spec: FsqSpec) -> int:
    return int(np.prod(spec.effective_levels, dtype=np.int64))


def _tiled(values: np.ndarray, width: int, dtype) -> np.ndarray:
    return np.tile(values, width // len(values)).astype(dtype)


def _check_width(width: int, spec: FsqSpec) -> None:
    if width != spec.width:
        raise FsqError(f"latent width {width} does not match {spec.groups} groups x {spec.channels} channels = {spec.width}")


def bound(v: np.ndarray, spec: FsqSpec) -> np.ndarray:
    """scale_i * tanh(v) per channel, before the even-level shift."""
    v = np.asarray(v, dtype=np.result_type(v, np.float32))
    if v.shape[-1] % spec.channels:
        raise FsqError(f"width {v.shape[-1]} is not a multiple of {spec.channels} channels")
    return np.tanh(v) * _tiled(spec.scale(), v.shape[-1], v.dtype)


def quantize(x: np.ndarray, spec: FsqSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    Hard quantization of (..., W) inputs.
    Returns the codeword values z (same shape) and (..., d) codebook indices.
    """
    x = np.asarray(x)
    _check_width(x.shape[-1], spec)
    scale = _tiled(spec.scale(), spec.width, x.dtype)
    offset = _tiled(spec.offset(), spec.width, x.dtype)
    z = np.round(np.tanh(x) * scale + offset) - offset
    return z, codes_from_latent(z, spec)


def quantize_ste(x: Tensor, spec: FsqSpec) -> Tensor:
    """
    Quantize with straight-through gradients: the forward value equals
    quantize(x); the backward pass sees only the smooth bound.
    """
    _check_width(x.shape[-1], spec)
    scale = _tiled(spec.scale(), spec.width, x.data.dtype)
    offset = _tiled(spec.offset(), spec.width, x.data.dtype)
    shifted = x.tanh() * scale + offset
    return round_ste(shifted) - offset


def round_ste(x: Tensor) -> Tensor:
    """x + sg(round(x) - x)"""
    return x + stop_gradient(x.round() - x)


def codes_from_latent(z: np.ndarray, spec: FsqSpec) -> np.ndarray:
    """Mixed-radix index of every c-channel group, first channel fastest."""
    z = np.asarray(z)
    _check_width(z.shape[-1], spec)
    grouped = z.reshape(*z.shape[:-1], spec.groups, spec.channels)
    digits = np.rint(grouped + spec.half_range()).astype(np.int64)
    return digits @ _radix_weights(spec)


def _radix_weights(spec: FsqSpec) -> np.ndarray:
    levels = np.asarray(spec.effective_levels, dtype=np.int64)
    return np.concatenate([[1], np.cumprod(levels[:-1])]).astype(np.int64)


def codeword_to_index(w: Sequence[float], spec: FsqSpec) -> int:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (spec.channels,):
        raise FsqError(f"codeword must have {spec.channels} channels, got shape {w.shape}")
    digits = w + spec.half_range()
    levels = np.asarray(spec.effective_levels)
    if np.any(np.abs(digits - np.rint(digits)) > 1e-9) or np.any(digits < 0) or np.any(digits > levels - 1):
        raise FsqError(f"{w.tolist()} is not a codeword of levels {list(spec.levels)}")
    return int(np.rint(digits).astype(np.int64) @ _radix_weights(spec))


def index_to_codeword(index: int, spec: FsqSpec) -> np.ndarray:
    size = codebook_size(spec)
    if not 0 <= int(index) < size:
        raise FsqError(f"codebook index {index} out of range [0, {size})")
    digits = []
    rest = int(index)
    for level in spec.effective_levels:
        digits.append(rest % level)
        rest //= level
    return np.asarray(digits, dtype=np.float64) - spec.half_range()


def enumerate_codebook(spec: FsqSpec) -> np.ndarray:
    """All codewords as a (|C|, c) array, in index order."""
    return np.stack([index_to_codeword(i, spec) for i in range(codebook_size(spec))])


def is_valid_latent(z: np.ndarray, spec: FsqSpec) -> bool:
    z = np.asarray(z)
    if z.shape[-1] != spec.width:
        return False
    grouped = z.reshape(-1, spec.groups, spec.channels)
    digits = grouped + spec.half_range()
    levels = np.asarray(spec.effective_levels)
    return bool(np.all(np.abs(digits - np.rint(digits)) < 1e-6) and np.all(digits > -0.5) and np.all(digits < levels - 0.5))


def active_fraction(history: Sequence[Iterable[int]], spec: FsqSpec) -> float:
    """
    Share of the codebook seen so far: distinct indices per group over |C|,
    averaged across groups. An empty history is 0.
    """
    if not history:
        return 0.0
    size = codebook_size(spec)
    fractions = [len(set(int(i) for i in group)) / size for group in history]
    return float(np.mean(fractions)) if fractions else 0.0


def levels_for_size(target: int) -> Tuple[int, ...]:
    if target not in TABLE_LEVELS:
        raise FsqError(f"no recommended levels for codebook size {target}; known: {sorted(TABLE_LEVELS)}")
    return TABLE_LEVELS[target]
