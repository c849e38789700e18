"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = ["AdamState", "adam_step", "Adam"]


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray | None],
    state: AdamState,
    t: int,
    lr: float = 2e-4,
    beta1: float = 0.5,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> dict[str, np.ndarray]:
    """One Adam update at step ``t`` (1-based). Updates ``params`` arrays in place and returns them."""
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if weight_decay:
            g = g + weight_decay * p
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        step = (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
        p -= step.astype(p.dtype, copy=False)
    state.t = t
    return params


class Adam:
    """Adam over a name -> Tensor parameter map."""

    def __init__(self, params, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params: dict[str, Tensor] = dict(params)
        self.lr, self.beta1, self.beta2, self.eps, self.weight_decay = lr, beta1, beta2, eps, weight_decay
        self.state = AdamState()

    def step(self) -> None:
        t = self.state.t + 1
        adam_step(
            {k: p.data for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items()},
            self.state,
            t,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
            self.weight_decay,
        )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
