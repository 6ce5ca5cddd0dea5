"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Update ``params`` (numpy arrays) in place from ``grads``.

    ``None`` gradients are treated as zero. Moment buffers are created lazily on
    the first call.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeError(f"Adam state tracks {len(state.m)} arrays but got {len(params)} params")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.shape:
            raise ShapeError(f"Adam state shape {m.shape} does not match parameter {p.shape}")
        if g is None:
            g = np.zeros_like(p)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return state


class Adam:
    """Optimizer over a list of :class:`~trendgcn.autodiff.Tensor` parameters."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state,
                  lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)
