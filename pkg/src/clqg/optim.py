"""Adam with bias correction, keeping one moment state per parameter group."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState,
              lr: float, group: str = "params") -> None:
    """Apply one in-place Adam update to ``params``.

    Missing gradients count as zeros. A non-finite gradient aborts the whole
    update before anything is mutated.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    for p, g in zip(params, grads):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} in {group}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter group {group!r} ({p.name})")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            g = np.zeros_like(p.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (lr / bc1) * m / (np.sqrt(v / bc2) + state.epsilon)
        p.data -= update.astype(p.data.dtype, copy=False)


class Adam:
    """Adam over named parameter groups; only groups passed to :meth:`step` move."""

    def __init__(self, groups: dict[str, list[Tensor]], lr: float = 1e-5,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.groups = groups
        self.lr = lr
        self.states = {
            name: AdamState(beta1=beta1, beta2=beta2, epsilon=epsilon) for name in groups
        }

    def step(self, group_names) -> None:
        for name in sorted(group_names):
            params = self.groups[name]
            adam_step(params, [p.grad for p in params], self.states[name], self.lr, group=name)

    def zero_grad(self) -> None:
        for params in self.groups.values():
            for p in params:
                p.grad = None

    def reset(self) -> None:
        for state in self.states.values():
            state.step_count = 0
            state.first_moment = []
            state.second_moment = []
