"""Adam with elementwise gradient clipping, decoupled weight decay and a
linearly decayed learning rate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter


class ConfigError(ValueError):
    """Invalid optimizer or run configuration."""


@dataclass
class AdamState:
    """Optimizer hyperparameters plus per-parameter moment accumulators."""

    total_steps: int
    base_lr: float = 1e-4
    beta1: float = 0.99
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    clip_range: tuple[float, float] = (-5.0, 5.0)
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.total_steps == 0:
            raise ConfigError("AdamState: total_steps must be nonzero")

    def lr_at(self, step: int) -> float:
        return self.base_lr * max(0.0, 1.0 - step / self.total_steps)


class Adam:
    """Applies one update per call to ``step`` over a fixed parameter list."""

    def __init__(self, params: list[Parameter], state: AdamState):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ConfigError("Adam: parameter names must be unique")
        self.params = params
        self.state = state
        for p in params:
            if p.name not in state.m:
                state.m[p.name] = np.zeros_like(p.data)
                state.v[p.name] = np.zeros_like(p.data)
            elif state.m[p.name].shape != p.data.shape:
                raise ConfigError(
                    f"Adam: moment shape {state.m[p.name].shape} != parameter "
                    f"{p.name} shape {p.data.shape}"
                )

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> float:
        """Clip gradients, update moments, apply the AdamW-style update.

        Returns the effective learning rate that was used.
        """
        s = self.state
        lr = s.lr_at(s.step)
        t = s.step + 1
        bc1 = 1.0 - s.beta1 ** t
        bc2 = 1.0 - s.beta2 ** t
        lo, hi = s.clip_range
        for p in self.params:
            g = np.clip(p.grad, lo, hi)
            m = s.m[p.name]
            v = s.v[p.name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + s.epsilon)
            p.data = p.data * (1.0 - lr * s.weight_decay) - lr * update
        s.step = t
        return lr
