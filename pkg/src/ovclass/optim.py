"""Decoupled-weight-decay Adam (AdamW) over a ParamSet."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamSet
from .errors import ShapeError


@dataclass
class AdamWConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class AdamWState:
    """First/second moment estimates plus the shared step counter."""

    config: AdamWConfig = field(default_factory=AdamWConfig)
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamSet, config: AdamWConfig | None = None) -> "AdamWState":
        state = cls(config=config or AdamWConfig())
        for name, t in params.items():
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        return state


def adamw_step(params: ParamSet, state: AdamWState,
               gradients: dict[str, np.ndarray] | None = None) -> None:
    """Apply one AdamW update in place.

    ``gradients`` defaults to the gradients currently stored on the
    parameters; a parameter without one is a structural error.
    """
    cfg = state.config
    state.step += 1
    t = state.step
    bias1 = 1.0 - cfg.beta1 ** t
    bias2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        if gradients is not None:
            if name not in gradients:
                raise ShapeError(f"no gradient supplied for parameter {name!r}")
            g = gradients[name]
        else:
            if p.grad is None:
                raise ShapeError(f"parameter {name!r} has no accumulated gradient")
            g = p.grad
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        p.data = p.data - cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p.data)
