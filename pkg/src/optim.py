from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.autodiff import Parameter


class ParameterMismatchError(ValueError):
    pass


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = None


@dataclass
class ParamGroup:
    params: List[Parameter]
    lr: float


class AdamW:
    """
    Adam with decoupled weight decay. Moments are kept on each Parameter under
    this optimizer's `slot`, so one parameter may belong to several optimizers.
    Parameters whose grad is None are skipped for that step.
    """

    def __init__(
        self,
        groups: Sequence[ParamGroup],
        slot: str,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.groups = list(groups)
        self.slot = slot
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        for group in self.groups:
            for p in group.params:
                p.state.setdefault(slot, {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "step": 0})

    @property
    def params(self) -> List[Parameter]:
        return [p for g in self.groups for p in g.params]

    def zero_grad(self) -> None:
        zero_grad(self.params)

    def step(self) -> None:
        for group in self.groups:
            for p in group.params:
                if p.grad is not None:
                    adamw_step(p, self.slot, group.lr, self.betas[0], self.betas[1], self.eps, self.weight_decay)


def adamw_step(p: Parameter, slot: str, lr: float, beta1: float, beta2: float, eps: float, weight_decay: float) -> None:
    state = p.state.setdefault(slot, {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "step": 0})
    grad = p.grad if p.grad is not None else np.zeros_like(p.data)
    state["step"] = int(state["step"]) + 1
    t = state["step"]

    if weight_decay:
        p.data *= 1.0 - lr * weight_decay
    m = state["m"] = beta1 * state["m"] + (1.0 - beta1) * grad
    v = state["v"] = beta2 * state["v"] + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)


def ema_blend(target: Mapping[str, Parameter], online: Mapping[str, Parameter], tau: float) -> None:
    """target ← (1−τ)·target + τ·online, matched by local parameter name."""
    if set(target) != set(online):
        missing = sorted(set(target) ^ set(online))
        raise ParameterMismatchError(f"ema_blend: parameter names differ: {missing}")
    for key, t in target.items():
        t.data[...] = (1.0 - tau) * t.data + tau * online[key].data


class NonFiniteLossError(RuntimeError):
    def __init__(self, name: str, value: float):
        super().__init__(f"{name} is not finite ({value})")
        self.name = name
        self.value = value


def check_finite(name: str, loss) -> float:
    """Scalar value of `loss`; raises NonFiniteLossError on NaN or inf."""
    value = float(np.asarray(getattr(loss, "data", loss)).reshape(-1)[0])
    if not np.isfinite(value):
        raise NonFiniteLossError(name, value)
    return value
