"""Adam with bias correction, kept as explicit per-parameter state."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from misf_inpaint.lib.errors import ContractError
from misf_inpaint.lib.tensor import Parameter


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ContractError(f"learning rate must be > 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")


@dataclass
class AdamState:
    """First/second moments keyed by parameter name, plus the step counter."""

    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def moments(self, param: Parameter) -> tuple[np.ndarray, np.ndarray]:
        if param.name not in self.first:
            self.first[param.name] = np.zeros_like(param.data)
            self.second[param.name] = np.zeros_like(param.data)
        m, v = self.first[param.name], self.second[param.name]
        if m.shape != param.shape:
            raise ContractError(
                f"moment shape {m.shape} does not match {param.name} {param.shape}"
            )
        return m, v


def adam_step(params: Sequence[Parameter], state: AdamState, config: AdamConfig) -> None:
    """One bias-corrected Adam update of every parameter; gradients are zeroed after."""
    missing = [p.name for p in params if p.grad is None]
    if missing:
        raise ContractError(f"no gradient for {', '.join(missing)}")

    state.step += 1
    correction1 = 1.0 - config.beta1**state.step
    correction2 = 1.0 - config.beta2**state.step
    step_size = config.lr / correction1
    for p in params:
        assert p.grad is not None
        g = p.grad
        m, v = state.moments(p)
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        denom = np.sqrt(v / correction2) + config.eps
        p.data -= (step_size * m / denom).astype(p.dtype)
        p.zero_grad()
