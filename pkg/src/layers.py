from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.autodiff import Parameter, ShapeError, Tensor, as_tensor

LAYER_NORM_EPS = 1e-5


def mish(x: Tensor) -> Tensor:
    """x * tanh(softplus(x))"""
    return x * x.softplus().tanh()


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    if gain.shape[-1] != x.shape[-1] or bias.shape[-1] != x.shape[-1]:
        raise ShapeError(f"layer_norm: gain/bias width {gain.shape[-1]} vs input width {x.shape[-1]}")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * gain + bias


def orthogonal_init(shape: Tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """
    Orthogonal matrix of the given 2-D shape: orthonormal columns when
    rows >= cols, orthonormal rows otherwise.
    """
    if len(shape) != 2:
        raise ShapeError(f"orthogonal_init needs a 2-D shape, got {shape}")
    rows, cols = shape
    big, small = max(rows, cols), min(rows, cols)
    q, r = np.linalg.qr(rng.standard_normal((big, small)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    return q if rows >= cols else q.T


def uniform_fan_in(shape: Tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass(frozen=True)
class MlpSpec:
    """
    Stack of linear layers. Every hidden layer is Linear→LayerNorm→Mish when
    `normed` (Linear→Mish otherwise); the last layer is a plain Linear.
    Weights are stored (in, out) so a layer is x @ W + b.
    """

    in_dim: int
    hidden: Tuple[int, ...]
    out_dim: int
    normed: bool = True
    orthogonal: bool = False
    name: str = "mlp"

    def __post_init__(self):
        widths = [self.in_dim, *self.hidden, self.out_dim]
        if any(int(w) <= 0 for w in widths):
            raise ShapeError(f"{self.name}: widths must be positive, got {widths}")

    @property
    def widths(self) -> List[int]:
        return [self.in_dim, *self.hidden, self.out_dim]

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1


def init_mlp_params(spec: MlpSpec, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    widths = spec.widths
    for i in range(spec.n_layers):
        fan_in, fan_out = widths[i], widths[i + 1]
        if spec.orthogonal:
            out[f"{i}.weight"] = orthogonal_init((fan_in, fan_out), rng)
            out[f"{i}.bias"] = np.zeros(fan_out)
        else:
            out[f"{i}.weight"] = uniform_fan_in((fan_in, fan_out), fan_in, rng)
            out[f"{i}.bias"] = uniform_fan_in((fan_out,), fan_in, rng)
        if spec.normed and i < spec.n_layers - 1:
            out[f"{i}.ln_gain"] = np.ones(fan_out)
            out[f"{i}.ln_bias"] = np.zeros(fan_out)
    return out


def mlp_forward(spec: MlpSpec, params: Dict[str, Parameter], x, frozen: bool = False) -> Tensor:
    """
    Run the stacked layers. `params` is keyed by local name ("0.weight").
    With `frozen`, parameter values are used but no gradient reaches them.
    """
    h = as_tensor(x)
    if h.ndim != 2 or h.shape[1] != spec.in_dim:
        raise ShapeError(f"{spec.name}.0: expected input width {spec.in_dim}, got shape {h.shape}")

    def p(key: str) -> Tensor:
        param = params[key]
        return param.frozen() if frozen else param

    last = spec.n_layers - 1
    for i in range(spec.n_layers):
        h = h @ p(f"{i}.weight") + p(f"{i}.bias")
        if i < last:
            if spec.normed:
                h = layer_norm(h, p(f"{i}.ln_gain"), p(f"{i}.ln_bias"))
            h = mish(h)
    return h


class Mlp:
    """Parameter container for one MlpSpec; parameter names are `<spec.name>.<local>`."""

    def __init__(self, spec: MlpSpec, rng: Optional[np.random.Generator] = None, values: Optional[Dict[str, np.ndarray]] = None):
        self.spec = spec
        if values is None:
            values = init_mlp_params(spec, rng if rng is not None else np.random.default_rng(0))
        self.params: Dict[str, Parameter] = {
            local: Parameter(f"{spec.name}.{local}", value) for local, value in values.items()
        }

    def __call__(self, x, frozen: bool = False) -> Tensor:
        return mlp_forward(self.spec, self.params, x, frozen=frozen)

    def parameters(self) -> List[Parameter]:
        return list(self.params.values())

    def named_parameters(self) -> Dict[str, Parameter]:
        return {p.name: p for p in self.params.values()}

    def clone(self, name: str) -> "Mlp":
        """Exact copy under a new name (used for target / EMA networks)."""
        spec = MlpSpec(
            self.spec.in_dim, self.spec.hidden, self.spec.out_dim,
            normed=self.spec.normed, orthogonal=self.spec.orthogonal, name=name,
        )
        return Mlp(spec, values={k: p.data.copy() for k, p in self.params.items()})

    def zero_(self) -> "Mlp":
        for p in self.params.values():
            p.data[...] = 0.0
        return self
